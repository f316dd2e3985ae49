"""Property checkers over traces, message-complexity metering and the scenario runner."""

from __future__ import annotations

import bisect
import hashlib
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

from .crypto import GuiltReport, KeyRegistry, NotFullyCertified, NotInconsistent, extract_guilt, verify_guilt
from .ledger import Log, TxKind
from .permissioned import Behavior, ExecutionRecord, Violation, validate_execution
from .simnet import Trace, departure_durability


class ScopeError(Exception):
    pass


class NotComposable(Exception):
    pass


class InsufficientRuns(Exception):
    pass


class NoViolation:
    """Returned by the accountability check when no two correct logs conflict."""

    def __repr__(self):
        return "NoViolation"

    def __eq__(self, other):
        return isinstance(other, NoViolation)

    def __hash__(self):
        return 0


# -- timelines ----------------------------------------------------------------

class _Timeline:
    def __init__(self, trace: Trace):
        self.slots = {p: [s for s, _ in seq] for p, seq in trace.logs.items()}
        self.logs = {p: [l for _, l in seq] for p, seq in trace.logs.items()}
        self.genesis = trace.genesis

    def at(self, p, slot: int) -> Log:
        i = bisect.bisect_right(self.slots[p], slot) - 1
        return self.logs[p][i] if i >= 0 else self.genesis


def _timeline(trace: Trace) -> _Timeline:
    tl = trace.extra.get("_timeline")
    if tl is None:
        tl = _Timeline(trace)
        trace.extra["_timeline"] = tl
    return tl


# -- consistency ----------------------------------------------------------------

def check_consistency(trace: Trace) -> list[Violation]:
    out = []
    correct = sorted(trace.correct, key=str)
    for p in correct:
        seq = trace.logs.get(p, [])
        for (s1, l1), (s2, l2) in zip(seq, seq[1:]):
            if not l2.extends(l1):
                out.append(Violation("NoRollbacks", p, s2, f"log at slot {s2} does not extend the log at slot {s1}"))
    events = sorted({s for p in correct for s, _ in trace.logs.get(p, [])})
    tl = _timeline(trace)
    for i, a in enumerate(correct):
        for b in correct[i + 1:]:
            if tl.at(a, trace.horizon).consistent_with(tl.at(b, trace.horizon)) and not out:
                continue
            for s in events:
                if not tl.at(a, s).consistent_with(tl.at(b, s)):
                    out.append(Violation("NoDivergence", (a, b), s, f"{a} and {b} hold inconsistent logs"))
                    break
    return out


# -- liveness ---------------------------------------------------------------------

@dataclass
class LivenessLedger:
    received: dict = field(default_factory=dict)    # tx digest -> first correct receipt slot
    included: dict = field(default_factory=dict)    # (tx digest, process) -> first slot in the log

    @classmethod
    def from_trace(cls, trace: Trace) -> "LivenessLedger":
        led = cls()
        for d, (slot, _) in trace.injections.items():
            led.received[d] = trace.first_receipt.get(d, slot)
        wanted = set(led.received)
        for p in sorted(trace.correct, key=str):
            seen = 0
            for slot, log in trace.logs.get(p, []):
                for k in range(seen + 1, log.length + 1):
                    d = log[k].digest
                    if d in wanted:
                        led.included.setdefault((d, p), slot)
                seen = max(seen, log.length)
        return led

    def latency(self, digest: bytes, p, gst: int) -> int | None:
        inc = self.included.get((digest, p))
        return None if inc is None else inc - max(self.received[digest], gst)


def _first_active(trace: Trace, p, slot: int) -> int:
    while trace.is_waiting(p, slot):
        slot += 1
    return slot


def check_liveness(trace: Trace, ell_star: int) -> list[Violation]:
    out = []
    led = LivenessLedger.from_trace(trace)
    tl = _timeline(trace)
    gst = trace.net.gst
    for d in sorted(led.received):
        tau = led.received[d]
        due = max(tau, gst) + ell_star
        tx = trace.injections[d][1]
        for p in sorted(trace.correct, key=str):
            at = _first_active(trace, p, due)
            if at > trace.horizon:
                continue
            if not tl.at(p, at).contains(tx):
                out.append(Violation("Liveness", p, at, f"{tx!r} received at {tau} missing at {at} (ell*={ell_star})"))
    return out


def check_responsiveness(trace: Trace, ell_or: int, delta_actual: int | None = None) -> list[Violation]:
    if trace.correct != frozenset(trace.processes):
        raise ScopeError("responsiveness is defined for runs without faults")
    delta = delta_actual or trace.net.delta_actual
    return check_liveness(trace, 2 * delta + 2 * ell_or)


def latencies(trace: Trace) -> list[int]:
    """Inclusion latency of every injected transaction at every correct process (``None`` dropped)."""
    led = LivenessLedger.from_trace(trace)
    out = []
    for d in sorted(led.received):
        for p in sorted(trace.correct, key=str):
            lat = led.latency(d, p, trace.net.gst)
            if lat is not None:
                out.append(lat)
    return out


# -- accountability ---------------------------------------------------------------

@dataclass
class AccountabilityVerdict:
    result: object                       # GuiltReport or NoViolation
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def check_accountability(trace: Trace, registry: KeyRegistry, rho: Fraction, owned: dict) -> AccountabilityVerdict:
    """Find conflicting certified outputs of correct processes and extract a proof of guilt."""
    records = {p: trace.certs.get(p, []) for p in sorted(trace.correct, key=str)}
    final = {p: recs[-1] for p, recs in records.items() if recs}
    names = sorted(final, key=str)
    honest_ids = frozenset(i for p in trace.correct for i in owned.get(p, ()))
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            la, lb = final[a][1], final[b][1]
            if la.consistent_with(lb):
                continue
            ev_a = _earliest_conflicting(records[a], lb)
            ev_b = _earliest_conflicting(records[b], ev_a[1])
            try:
                report = extract_guilt((ev_a[1], ev_a[2]), (ev_b[1], ev_b[2]), registry)
            except (NotInconsistent, NotFullyCertified) as exc:
                return AccountabilityVerdict(NoViolation(), [Violation("Accountability", (a, b), None, str(exc))])
            problems = []
            total = la.model.total
            if report.stake_weight < (1 - 2 * rho) * total:
                problems.append(Violation("Accountability", (a, b), None,
                                          f"guilty stake {report.stake_weight} below (1-2rho)T"))
            named = sorted(report.culprits & honest_ids)
            if named:
                problems.append(Violation("Accountability", (a, b), None, f"correct identifiers named: {named}"))
            if not verify_guilt(report, registry):
                problems.append(Violation("Accountability", (a, b), None, "evidence does not verify"))
            return AccountabilityVerdict(report, problems)
    return AccountabilityVerdict(NoViolation())


def _earliest_conflicting(records, other: Log):
    for rec in records:
        if not rec[1].consistent_with(other):
            return rec
    return records[-1]


# -- composable safety ------------------------------------------------------------

class LogSetProperty:
    """A safety property that holds for a set of logs iff it holds for each log."""

    name = "property"
    composable = True

    def holds_for(self, log: Log) -> bool:
        raise NotImplementedError

    def holds(self, logs: Iterable[Log]) -> bool:
        return all(self.holds_for(l) for l in logs)


class AllTransactionsSigned(LogSetProperty):
    name = "AllTransactionsSigned"

    def __init__(self, registry: KeyRegistry):
        self.registry = registry
        self._ok: dict[bytes, bool] = {}

    def holds_for(self, log: Log) -> bool:
        for tx in log:
            ok = self._ok.get(tx.digest)
            if ok is None:
                ok = self._ok[tx.digest] = self.registry.verify_tx(tx)
            if not ok:
                return False
        return True


class NoReservedKindsFromEnvironment(LogSetProperty):
    """No start or quit markers in logs, and FINISH only from the epoch's validators."""

    name = "NoReservedKindsFromEnvironment"

    def holds_for(self, log: Log) -> bool:
        for k in range(1, log.length + 1):
            tx = log[k]
            if tx.kind in (TxKind.START, TxKind.QUIT):
                return False
            if tx.kind == TxKind.FINISH and tx.issuer not in log.prefix(k).validators:
                return False
        return True


def composability_self_check(prop: LogSetProperty, samples: Sequence[Log], trials: int = 50, seed: int = 0) -> None:
    """Raise ``NotComposable`` if a union of satisfying sets has a failing subset."""
    if not getattr(prop, "composable", False):
        raise NotComposable(f"{prop.name} is not declared composable")
    rng = random.Random(seed)
    good = [l for l in samples if prop.holds([l])]
    if not good:
        return
    for _ in range(trials):
        a = rng.sample(good, rng.randint(1, len(good)))
        b = rng.sample(good, rng.randint(1, len(good)))
        if not (prop.holds(a) and prop.holds(b)):
            continue
        union = list({l.digest: l for l in a + b}.values())
        sub = rng.sample(union, rng.randint(1, len(union)))
        if not prop.holds(sub):
            raise NotComposable(f"{prop.name} fails on a subset of a union of satisfying sets")


def output_logs(trace: Trace) -> list[Log]:
    seen = {}
    for p in sorted(trace.correct, key=str):
        for _, l in trace.logs.get(p, []):
            seen.setdefault(l.digest, l)
    return list(seen.values())


def check_composable_safety(trace: Trace, prop: LogSetProperty, self_check: bool = True) -> bool:
    logs = output_logs(trace)
    if self_check:
        composability_self_check(prop, logs)
    return prop.holds(logs)


# -- epoch overlap ------------------------------------------------------------------

def epoch_genesis_of(log: Log, e: int) -> Log | None:
    if e - 1 < log.epoch:
        return log.ep_prefix(e - 1)
    if log.completed and log.epoch == e - 1:
        return log
    return None


def check_epoch_overlap(trace: Trace, epoch_duration: int, owned: dict) -> list[Violation]:
    out = []
    gst, delta = trace.net.gst, trace.net.delta_actual
    entries: dict[int, dict] = {}
    for p in sorted(trace.correct, key=str):
        for slot, e, _ in trace.epochs.get(p, []):
            entries.setdefault(e, {}).setdefault(p, slot)
    longest = max((trace.final_log(p) for p in trace.correct), key=lambda l: l.length, default=trace.genesis)
    for e in sorted(entries):
        first = min(entries[e].values())
        if first < gst:
            continue
        genesis = epoch_genesis_of(longest, e)
        if genesis is None:
            continue
        validators = genesis.current_ids
        members = [p for p in sorted(trace.correct, key=str) if validators & set(owned.get(p, ()))]
        if first + delta <= trace.horizon:
            for p in members:
                at = entries[e].get(p)
                if at is None or at > first + delta:
                    out.append(Violation("EpochEntry", p, at, f"epoch {e} entered at {at}, first entry {first}"))
        if e + 1 in entries:
            nxt = min(entries[e + 1].values())
            if nxt < first + epoch_duration:
                out.append(Violation("EpochSpacing", None, nxt,
                                     f"epoch {e + 1} began {nxt - first} slots after epoch {e} (ed={epoch_duration})"))
    return out


# -- behaviours ---------------------------------------------------------------------

def check_execution(trace: Trace, proto, rho: Fraction | None = None) -> list[Violation]:
    if not trace.fragments:
        return [Violation("Validity", None, None, "no fragments recorded")]
    behaviors = {p: Behavior(p, list(frags)) for p, frags in trace.fragments.items()}
    faulty = frozenset(p for p in trace.processes if p not in trace.correct)
    record = ExecutionRecord(faulty, trace.net.gst, behaviors, trace.net.delta_actual, rho)
    return validate_execution(record, proto)


def output_fingerprint(trace: Trace) -> bytes:
    """Digest of everything the processes emitted: output logs with their slots and every sent message."""
    h = hashlib.sha256()
    for p in sorted(trace.processes, key=str):
        h.update(b"P" + str(p).encode())
        for slot, log in trace.logs.get(p, []):
            h.update(b"L%d:" % slot + log.digest)
        for f in trace.fragments.get(p, []):
            for m in f.sent_msgs:
                h.update(b"M%d:" % f.slot + str(m.receiver).encode() + b":" + m.body.encode())
    for d in trace.deliveries:
        h.update(repr((d.uid, d.sender, d.receiver, d.sent, d.delivered, d.bits)).encode())
    return h.digest()


# -- message complexity -------------------------------------------------------------

@dataclass
class ComplexityMeter:
    """Per-slot bit counts of correct processes, summarised as average and peak complexity."""

    window: int
    total: int = 0
    peak: int = 0
    cert_total: int = 0
    cert_peak: int = 0

    @classmethod
    def from_trace(cls, trace: Trace, window: int | None = None) -> "ComplexityMeter":
        j = window if window is not None else trace.horizon + 1
        m = cls(j)
        for p in sorted(trace.correct, key=str):
            for slot, tx_in, msg_in, msg_out, cert_in, cert_out in trace.bits.get(p, []):
                if slot >= j:
                    continue
                s = tx_in + msg_in + msg_out
                m.total += s
                m.peak = max(m.peak, s)
                m.cert_total += cert_in + cert_out
                m.cert_peak = max(m.cert_peak, cert_in + cert_out)
        return m

    @property
    def average(self) -> float:
        return self.total / self.window

    @property
    def cert_average(self) -> float:
        return self.cert_total / self.window

    def to_json(self) -> dict:
        return {"window": self.window, "AC": self.average, "PC": self.peak,
                "cert_AC": self.cert_average, "cert_PC": self.cert_peak}


def _fit_n2(ns: Sequence[int], ys: Sequence[float]) -> float:
    num = sum(y * n * n for n, y in zip(ns, ys))
    den = sum((n * n) ** 2 for n in ns)
    return num / den


def measure_complexity(pairs: dict[int, tuple[Trace, Trace]], window: int | None = None) -> dict:
    """Compare bare (AC, PC) with compiled (AC', PC') across ``n``.

    The term ``c * n^2`` is fitted by least squares on the compiled runs'
    certification bits (signatures, certificates and epoch-ending
    transactions), once for averages and once for peaks.
    """
    if len(pairs) < 2:
        raise InsufficientRuns("need runs at two or more values of n")
    ns = sorted(pairs)
    rows = {}
    for n in ns:
        bare, compiled = pairs[n]
        mb, mc = ComplexityMeter.from_trace(bare, window), ComplexityMeter.from_trace(compiled, window)
        rows[n] = (mb, mc)
    c_avg = _fit_n2(ns, [rows[n][1].cert_average for n in ns])
    c_peak = _fit_n2(ns, [rows[n][1].cert_peak for n in ns])
    report = {"n": ns, "c_average": c_avg, "c_peak": c_peak, "rows": {}}
    ac_ratios, pc_ratios = [], []
    for n in ns:
        mb, mc = rows[n]
        ac_r = (mc.average - c_avg * n * n) / mb.average if mb.average else float("inf")
        pc_r = (mc.peak - c_peak * n * n) / mb.peak if mb.peak else float("inf")
        ac_ratios.append(ac_r)
        pc_ratios.append(pc_r)
        report["rows"][n] = {"AC": mb.average, "PC": mb.peak, "AC'": mc.average, "PC'": mc.peak,
                             "ratio_AC": ac_r, "ratio_PC": pc_r}
    report["spread_AC"] = _spread(ac_ratios)
    report["spread_PC"] = _spread(pc_ratios)
    report["note"] = "finite-horizon averages approximate the limit superior in the definition"
    return report


def _spread(xs: Sequence[float]) -> float:
    lo, hi = min(xs), max(xs)
    return (hi - lo) / lo if lo > 0 else float("inf")


# -- runner ---------------------------------------------------------------------------

@dataclass
class RunResult:
    cfg: object
    trace: Trace
    verdicts: dict
    complexity: dict
    assembled: object = None

    @property
    def passed(self) -> bool:
        return all(v["pass"] for v in self.verdicts.values())


def _v(violations) -> dict:
    return {"pass": not violations, "violations": [v.to_json() for v in violations]}


def evaluate(cfg, trace: Trace, registry: KeyRegistry, checks: Iterable[str] | None = None,
             protocol=None) -> dict:
    """Run the selected checkers; pure over the trace."""
    from .adversary import check_rho_bound
    from .refbft import RefBft

    owned = cfg.owned()
    verdicts = {}
    for name in checks if checks is not None else cfg.checks:
        if name == "consistency":
            verdicts[name] = _v(check_consistency(trace))
        elif name == "liveness":
            # a bare permissioned run is held to its own bound, a compiled one to the compiled bound
            bound = cfg.ell_value if cfg.mode == "Permissioned" else cfg.ell_star
            res = _v(check_liveness(trace, bound))
            res["bound"] = bound
            verdicts[name] = res
        elif name == "responsiveness":
            ell_or = 6 * trace.net.delta_actual
            try:
                res = _v(check_responsiveness(trace, ell_or))
            except ScopeError as exc:
                res = {"pass": False, "violations": [], "error": str(exc)}
            res["bound"] = 2 * trace.net.delta_actual + 2 * ell_or
            lats = latencies(trace)
            res["max_latency"] = max(lats) if lats else None
            verdicts[name] = res
        elif name == "accountability":
            acc = check_accountability(trace, registry, cfg.rho, owned)
            res = _v(acc.violations)
            if isinstance(acc.result, GuiltReport):
                res["report"] = acc.result.to_json()
                res["divergent"] = True
            else:
                res["divergent"] = False
            verdicts[name] = res
        elif name == "safety":
            props = [AllTransactionsSigned(registry), NoReservedKindsFromEnvironment()]
            res = {p.name: check_composable_safety(trace, p) for p in props}
            verdicts[name] = {"pass": all(res.values()), "violations": [k for k, ok in res.items() if not ok]}
        elif name == "overlap":
            verdicts[name] = _v(check_epoch_overlap(trace, cfg.epoch_duration, owned))
        elif name == "rho_bound":
            ok = check_rho_bound(cfg.plan(), trace, owned)
            verdicts[name] = {"pass": ok if not cfg.over_threshold else not ok, "violations": [],
                              "bound_held": ok, "over_threshold": cfg.over_threshold}
        elif name == "durability":
            probs = departure_durability(trace)
            verdicts[name] = {"pass": not probs, "violations": probs[:20]}
        elif name == "execution":
            proto = protocol if protocol is not None else RefBft(cfg.ref_config(), registry)
            verdicts[name] = _v(check_execution(trace, getattr(proto, "inner", proto), cfg.rho))
    return verdicts


def run_scenario(cfg) -> RunResult:
    from .scenario import assemble

    a = assemble(cfg)
    trace = a.world.run()
    trace.extra["owned"] = a.owned
    verdicts = evaluate(cfg, trace, a.registry, protocol=a.protocol)
    complexity = ComplexityMeter.from_trace(trace).to_json()
    return RunResult(cfg, trace, verdicts, complexity, a)
