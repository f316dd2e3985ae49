"""Scenario descriptions: JSON schema, validation, generators and world assembly."""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from typing import Any, Callable

from .adversary import (BEHAVIORS, CRASH, CUSTOM, DELAY_MAX, DOUBLE_SIGN, EQUIVOCATE, SILENT, BehaviorSpec, CorruptionPlan,
                        DoubleSignCoalition, build_filters)
from .compiler import CompilerNode, EpochParams
from .crypto import KeyRegistry
from .ledger import CompletionThreshold, Log, StakeModel, Transaction, payload_tx, quit_tx, sorted_ids, transfer_payload
from .permissioned import quit_enhance
from .refbft import RefBft, RefBftConfig, ref_liveness_bound, safe_view_duration
from .simnet import NetworkParams, PermissionedNode, World

PERMISSIONED, QP = "Permissioned", "QuasiPermissionless"
SCHEMA_VERSION = 1
CHECKS = ("consistency", "liveness", "responsiveness", "accountability", "safety", "overlap", "rho_bound",
          "durability", "execution")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class ProcessSpec:
    name: str
    identifiers: tuple = ()


@dataclass(frozen=True)
class RefSettings:
    view_duration: int | None = None
    batch_size: int = 32
    fast_commit: bool = False
    accept_unsigned: bool = False


@dataclass(frozen=True)
class EnvTx:
    slot: int
    issuer: str
    payload: str = ""
    transfer_to: str = ""
    amount: int = 0
    nonce: int = 0

    def build(self) -> Transaction:
        if self.transfer_to:
            return payload_tx(self.issuer, transfer_payload(self.transfer_to, self.amount, self.nonce))
        return payload_tx(self.issuer, self.payload.encode())


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    mode: str = QP
    processes: tuple = ()                       # ProcessSpec
    stake: tuple = ()                           # (identifier, amount)
    rho: Fraction = Fraction(1, 5)
    network: NetworkParams = field(default_factory=NetworkParams)
    ref: RefSettings = field(default_factory=RefSettings)
    ell: int | None = None
    completion_threshold: CompletionThreshold = CompletionThreshold.STRICT_RHO
    adversary: tuple = ()                       # (process, BehaviorSpec)
    over_threshold: bool = False
    environment: tuple = ()                     # EnvTx
    quits: tuple = ()                           # (process, slot), permissioned mode only
    seed: int = 0
    checks: tuple = ("consistency", "liveness", "safety", "overlap", "rho_bound", "durability")
    record_fragments: bool = False
    wrap_quit: bool = False

    # -- derived ------------------------------------------------------------
    @property
    def total(self) -> int:
        return sum(a for _, a in self.stake)

    @property
    def delta(self) -> int:
        return self.network.delta_known

    @property
    def view_duration(self) -> int:
        return self.ref.view_duration or safe_view_duration(self.delta)

    def ref_config(self, n: int | None = None) -> RefBftConfig:
        return RefBftConfig(n=n or self.total, rho=self.rho, view_duration=self.view_duration,
                            batch_size=self.ref.batch_size, fast_commit=self.ref.fast_commit,
                            delta_known=self.delta, accept_unsigned=self.ref.accept_unsigned)

    @property
    def ell_value(self) -> int:
        return self.ell if self.ell is not None else ref_liveness_bound(self.ref_config())

    @property
    def ell_star(self) -> int:
        return 2 * self.delta + 2 * self.ell_value

    @property
    def epoch_duration(self) -> int:
        return self.ell_value + self.delta

    def stake_model(self) -> StakeModel:
        return StakeModel.from_table(dict(self.stake), rho=self.rho, threshold=self.completion_threshold,
                                     label=self.name)

    def plan(self) -> CorruptionPlan:
        return CorruptionPlan(dict(self.adversary), self.rho, self.over_threshold)

    def owned(self) -> dict:
        return {p.name: tuple(p.identifiers) for p in self.processes}

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, seed=seed)

    # -- JSON ---------------------------------------------------------------
    def to_json(self) -> dict:
        d = {
            "schema": SCHEMA_VERSION,
            "name": self.name,
            "mode": self.mode,
            "processes": [{"name": p.name, "identifiers": list(p.identifiers)} for p in self.processes],
            "stake": {i: a for i, a in self.stake},
            "rho": str(self.rho),
            "network": asdict(self.network),
            "ref": asdict(self.ref),
            "ell": self.ell,
            "completion_threshold": self.completion_threshold.value,
            "adversary": {p: asdict(b) for p, b in self.adversary},
            "over_threshold": self.over_threshold,
            "environment": [{k: v for k, v in asdict(t).items() if v not in ("", 0) or k == "slot"}
                            for t in self.environment],
            "quits": [list(q) for q in self.quits],
            "seed": self.seed,
            "checks": list(self.checks),
            "record_fragments": self.record_fragments,
            "wrap_quit": self.wrap_quit,
        }
        return d

    @classmethod
    def from_json(cls, d: Any) -> "ScenarioConfig":
        return parse_config(d)


def _need(d: dict, key: str, path: str, kind, default=Ellipsis):
    if key not in d:
        if default is Ellipsis:
            raise ConfigError(f"{path}{key}", "missing")
        return default
    v = d[key]
    if kind is int and (isinstance(v, bool) or not isinstance(v, int)):
        raise ConfigError(f"{path}{key}", f"expected an integer, got {v!r}")
    if kind is bool and not isinstance(v, bool):
        raise ConfigError(f"{path}{key}", f"expected a boolean, got {v!r}")
    if kind is str and not isinstance(v, str):
        raise ConfigError(f"{path}{key}", f"expected a string, got {v!r}")
    if kind is dict and not isinstance(v, dict):
        raise ConfigError(f"{path}{key}", "expected an object")
    if kind is list and not isinstance(v, list):
        raise ConfigError(f"{path}{key}", "expected a list")
    return v


def parse_config(d: Any) -> ScenarioConfig:
    if not isinstance(d, dict):
        raise ConfigError("$", "config must be a JSON object")
    if "generator" in d:
        gen = d["generator"]
        if gen not in GENERATORS:
            raise ConfigError("generator", f"unknown generator {gen!r}")
        params = _need(d, "params", "", dict, {})
        try:
            cfg = GENERATORS[gen](seed=_need(d, "seed", "", int, 0), **params)
        except TypeError as exc:
            raise ConfigError("params", str(exc)) from None
        if "checks" in d:
            cfg = replace(cfg, checks=tuple(_need(d, "checks", "", list)))
        validate(cfg)
        return cfg
    schema = d.get("schema", SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        raise ConfigError("schema", f"unsupported schema version {schema!r}")
    mode = _need(d, "mode", "", str, QP)
    if mode not in (PERMISSIONED, QP):
        raise ConfigError("mode", f"unknown mode {mode!r}")
    stake_d = _need(d, "stake", "", dict)
    stake = []
    for ident, amount in stake_d.items():
        if isinstance(amount, bool) or not isinstance(amount, int) or amount < 0:
            raise ConfigError(f"stake.{ident}", "stake must be a non-negative integer")
        if amount:
            stake.append((ident, amount))
    try:
        rho = Fraction(str(_need(d, "rho", "", object, "1/5")))
    except (ValueError, ZeroDivisionError):
        raise ConfigError("rho", "not a rational number") from None
    procs = []
    for k, p in enumerate(_need(d, "processes", "", list, [])):
        if not isinstance(p, dict):
            raise ConfigError(f"processes[{k}]", "expected an object")
        ids = _need(p, "identifiers", f"processes[{k}].", list, [])
        procs.append(ProcessSpec(_need(p, "name", f"processes[{k}].", str), tuple(ids)))
    nd = _need(d, "network", "", dict, {})
    net_kw = {}
    for key, kind in (("gst", int), ("delta_known", int), ("delta_actual", int), ("horizon", int),
                      ("pre_gst_policy", str)):
        if key in nd:
            net_kw[key] = _need(nd, key, "network.", kind)
    if "wait_prob" in nd:
        wp = nd["wait_prob"]
        if not isinstance(wp, (int, float)) or isinstance(wp, bool):
            raise ConfigError("network.wait_prob", "expected a number")
        net_kw["wait_prob"] = float(wp)
    dk = net_kw.get("delta_known", 1)
    da = net_kw.get("delta_actual", 1)
    if da > dk:
        raise ConfigError("network.delta_actual", f"delta_actual={da} exceeds delta_known={dk}")
    try:
        network = NetworkParams(**net_kw)
    except ValueError as exc:
        raise ConfigError("network", str(exc)) from None
    rd = _need(d, "ref", "", dict, {})
    vd = rd.get("view_duration")
    if vd is not None and (isinstance(vd, bool) or not isinstance(vd, int)):
        raise ConfigError("ref.view_duration", "expected an integer or null")
    ref = RefSettings(vd, _need(rd, "batch_size", "ref.", int, 32), _need(rd, "fast_commit", "ref.", bool, False),
                      _need(rd, "accept_unsigned", "ref.", bool, False))
    ell = d.get("ell")
    if ell is not None and (isinstance(ell, bool) or not isinstance(ell, int)):
        raise ConfigError("ell", "expected an integer or null")
    try:
        threshold = CompletionThreshold(_need(d, "completion_threshold", "", str, "StrictRho"))
    except ValueError:
        raise ConfigError("completion_threshold", "expected StrictRho or QuorumOneMinusRho") from None
    adv = []
    for p, spec in _need(d, "adversary", "", dict, {}).items():
        if not isinstance(spec, dict):
            raise ConfigError(f"adversary.{p}", "expected an object")
        kind = _need(spec, "kind", f"adversary.{p}.", str)
        if kind not in BEHAVIORS:
            raise ConfigError(f"adversary.{p}.kind", f"unknown behaviour {kind!r}")
        adv.append((p, BehaviorSpec(kind, _need(spec, "crash_slot", f"adversary.{p}.", int, 0),
                                    _need(spec, "script", f"adversary.{p}.", str, ""),
                                    _need(spec, "attack_slot", f"adversary.{p}.", int, 2))))
    env = []
    for k, t in enumerate(_need(d, "environment", "", list, [])):
        path = f"environment[{k}]."
        if not isinstance(t, dict):
            raise ConfigError(f"environment[{k}]", "expected an object")
        env.append(EnvTx(_need(t, "slot", path, int), _need(t, "issuer", path, str),
                         _need(t, "payload", path, str, ""), _need(t, "transfer_to", path, str, ""),
                         _need(t, "amount", path, int, 0), _need(t, "nonce", path, int, 0)))
    quits = []
    for k, q in enumerate(_need(d, "quits", "", list, [])):
        if not (isinstance(q, list) and len(q) == 2 and isinstance(q[1], int)):
            raise ConfigError(f"quits[{k}]", "expected [process, slot]")
        quits.append((q[0], q[1]))
    checks = tuple(_need(d, "checks", "", list, list(ScenarioConfig.checks)))
    cfg = ScenarioConfig(
        name=_need(d, "name", "", str, "scenario"), mode=mode, processes=tuple(procs), stake=tuple(stake),
        rho=rho, network=network, ref=ref, ell=ell, completion_threshold=threshold,
        adversary=tuple(adv), over_threshold=_need(d, "over_threshold", "", bool, False),
        environment=tuple(env), quits=tuple(quits), seed=_need(d, "seed", "", int, 0), checks=checks,
        record_fragments=_need(d, "record_fragments", "", bool, False), wrap_quit=_need(d, "wrap_quit", "", bool, False))
    validate(cfg)
    return cfg


def validate(cfg: ScenarioConfig) -> None:
    net = cfg.network
    if net.delta_actual > net.delta_known:
        raise ConfigError("network.delta_actual", "delta_actual exceeds delta_known")
    if cfg.total <= 0:
        raise ConfigError("stake", "total stake must be positive")
    if not 0 <= cfg.rho < 1:
        raise ConfigError("rho", "rho must lie in [0, 1)")
    if cfg.rho >= Fraction(1, 3) and not cfg.over_threshold:
        raise ConfigError("rho", "rho >= 1/3 is only allowed for scenarios flagged over_threshold")
    for c in cfg.checks:
        if c not in CHECKS:
            raise ConfigError("checks", f"unknown check {c!r}")
    vd = cfg.view_duration
    if vd % cfg.delta or vd <= 2 * cfg.delta:
        raise ConfigError("ref.view_duration", "must be a multiple of delta_known and exceed 2 * delta_known")
    names = [p.name for p in cfg.processes]
    if len(set(names)) != len(names):
        raise ConfigError("processes", "process names must be unique")
    if cfg.mode == QP:
        if not cfg.processes:
            raise ConfigError("processes", "a quasi-permissionless scenario needs a roster")
        seen = {}
        for p in cfg.processes:
            for i in p.identifiers:
                if i in seen:
                    raise ConfigError("processes", f"identifier {i} owned by {seen[i]} and {p.name}")
                seen[i] = p.name
        for i, _ in cfg.stake:
            if i not in seen:
                raise ConfigError(f"stake.{i}", "identifier has no owner in the roster")
    else:
        if any(a != 1 for _, a in cfg.stake):
            raise ConfigError("stake", "permissioned scenarios use unit stakes, one per process")
    known = set(names) if cfg.mode == QP else {str(i) for i in range(1, cfg.total + 1)}
    for p, _ in cfg.adversary:
        if str(p) not in known:
            raise ConfigError(f"adversary.{p}", "unknown process")
    for k, t in enumerate(cfg.environment):
        if not 0 <= t.slot <= net.horizon:
            raise ConfigError(f"environment[{k}].slot", "outside the horizon")


# -- assembly ---------------------------------------------------------------

@dataclass
class Assembled:
    cfg: ScenarioConfig
    world: World
    registry: KeyRegistry
    genesis: Log
    plan: CorruptionPlan
    owned: dict
    coalition: Any = None
    protocol: Any = None


def make_registry(cfg: ScenarioConfig) -> KeyRegistry:
    reg = KeyRegistry(cfg.seed)
    if cfg.mode == QP:
        for p in cfg.processes:
            for i in p.identifiers:
                reg.register(i, owner=p.name)
    else:
        for i, _ in cfg.stake:
            reg.register(i)
    for t in cfg.environment:
        if not reg.known(t.issuer):
            reg.register(t.issuer)
    return reg


def environment_schedule(cfg: ScenarioConfig, reg: KeyRegistry) -> dict[int, list[Transaction]]:
    sched: dict[int, list[Transaction]] = {}
    for t in cfg.environment:
        sched.setdefault(t.slot, []).append(reg.sign_tx(t.build()))
    return sched


def assemble(cfg: ScenarioConfig) -> Assembled:
    validate(cfg)
    reg = make_registry(cfg)
    model = cfg.stake_model()
    genesis = model.genesis()
    plan = cfg.plan()
    sched = environment_schedule(cfg, reg)
    if cfg.mode == PERMISSIONED:
        proto = RefBft(cfg.ref_config(), reg)
        runner = quit_enhance(proto) if cfg.wrap_quit or cfg.quits else proto
        nodes = [PermissionedNode(i, runner, genesis, cfg.record_fragments) for i in range(1, cfg.total + 1)]
        plan = CorruptionPlan({int(p): s for p, s in plan.corrupt.items()}, plan.declared_rho, plan.over_threshold)
        filters = build_filters(plan, [n.name for n in nodes], cfg.delta, cfg.seed)
        private = {}
        for p, slot in cfg.quits:
            private.setdefault((int(p), slot), []).append(quit_tx())
        world = World(nodes, cfg.network, genesis, cfg.seed, corrupt=plan.processes, filters=filters, schedule=sched,
                      private_txs=private)
        return Assembled(cfg, world, reg, genesis, plan, {}, protocol=runner)

    owned = cfg.owned()
    ref_cache: dict[bytes, RefBft] = {}

    def make_protocol(epoch_genesis: Log) -> RefBft:
        key = epoch_genesis.digest
        if key not in ref_cache:
            ref_cache[key] = RefBft(cfg.ref_config(epoch_genesis.model.total), reg)
        return ref_cache[key]

    params = EpochParams(cfg.ell_value, cfg.delta)
    nodes = [CompilerNode(p.name, p.identifiers, reg, params, genesis, make_protocol) for p in cfg.processes]
    names = [n.name for n in nodes]
    filters = build_filters(plan, names, cfg.delta, cfg.seed)
    coalition = None
    groups = None
    if any(s.kind == DOUBLE_SIGN for s in plan.corrupt.values()):
        correct = [n for n in names if n not in plan.corrupt]
        half = (len(correct) + 1) // 2
        groups = (correct[:half], correct[half:])
        attack = min(s.attack_slot for s in plan.corrupt.values() if s.kind == DOUBLE_SIGN)
        coalition = DoubleSignCoalition(plan, reg, owned, genesis, groups, attack)
        groups = [groups[0] + [p for p in names if p in plan.corrupt], groups[1]]
    world = World(nodes, cfg.network, genesis, cfg.seed, corrupt=plan.processes, filters=filters,
                  coalition=coalition, schedule=sched, groups=groups)
    return Assembled(cfg, world, reg, genesis, plan, owned, coalition)


# -- generators ---------------------------------------------------------------

def _roster(n: int, listeners: int = 0) -> tuple[tuple, tuple]:
    procs = [ProcessSpec(f"p{k:02d}", (f"v{k:02d}",)) for k in range(1, n + 1)]
    procs += [ProcessSpec(f"q{k:02d}", (f"w{k:02d}",)) for k in range(1, listeners + 1)]
    stake = tuple((f"v{k:02d}", 1) for k in range(1, n + 1))
    return tuple(procs), stake


def _payloads(start: int, stop: int, every: int, rng: random.Random, prefix: str = "tx") -> list[EnvTx]:
    out = []
    s = start
    k = 0
    while s <= stop:
        out.append(EnvTx(s, f"c{k % 3 + 1}", f"{prefix}-{s}-{k}"))
        k += 1
        s += rng.randint(1, 2 * every - 1)
    return out


def consistency_sweep(seed: int = 0, n: int | None = None, kind: str | None = None, gst: int | None = None,
                      delta_known: int | None = None, shifts: bool = True) -> ScenarioConfig:
    """One member of the under-threshold sweep: Byzantine behaviour, GST and stake shifts vary with the seed."""
    rng = random.Random(seed * 7919 + 17)
    n = n or (4, 7, 10)[seed % 3]
    kind = kind or (EQUIVOCATE, DELAY_MAX, CRASH)[(seed // 3) % 3]
    gst = gst if gst is not None else (0, 40, 120)[(seed // 9) % 3]
    dk = delta_known or rng.choice((1, 2))
    da = rng.randint(1, dk)
    rho = Fraction(1, 5)
    procs, stake = _roster(n, listeners=2)
    bad = int(rho * n)
    validators = [p.name for p in procs[:n]]
    corrupt = rng.sample(validators, bad)
    adversary = tuple((p, BehaviorSpec(kind, crash_slot=rng.randint(0, gst + 30))) for p in sorted(corrupt))
    cfg = ScenarioConfig(name=f"sweep-n{n}-{kind}-gst{gst}", mode=QP, processes=procs, stake=stake, rho=rho,
                         network=NetworkParams(gst, dk, da, 0, rng.choice(("uniform", "max-delay", "targeted")),
                                               0.1 if gst else 0.0),
                         adversary=adversary, seed=seed)
    ell_star, ed = cfg.ell_star, cfg.epoch_duration
    horizon = gst + ell_star + ed
    env = _payloads(0, horizon - 5, 6, rng)
    if shifts:
        honest = [v for v in validators if v not in corrupt]
        ids = {p.name: p.identifiers[0] for p in procs}
        giver = ids[rng.choice(honest)]
        t1 = rng.randint(5, max(6, ed // 2))
        env.append(EnvTx(t1, giver, transfer_to="w01", amount=1, nonce=1))
        env.append(EnvTx(t1 + ed + rng.randint(0, ed), "w01", transfer_to=giver, amount=1, nonce=2))
        if corrupt:
            bad_id = ids[corrupt[0]]
            t2 = rng.randint(5, ed)
            env.append(EnvTx(t2, bad_id, transfer_to="w02", amount=1, nonce=3))
            env.append(EnvTx(t2 + ed + rng.randint(0, ed), "w02", transfer_to=bad_id, amount=1, nonce=4))
    env.sort(key=lambda t: (t.slot, t.issuer, t.payload))
    net = replace(cfg.network, horizon=horizon)
    return replace(cfg, network=net, environment=tuple(env))


def responsiveness_scenario(seed: int = 0, delta_known: int = 50, delta_actual: int = 1, n: int = 4,
                            horizon: int = 120) -> ScenarioConfig:
    rng = random.Random(seed)
    procs, stake = _roster(n)
    env = _payloads(3, horizon - 30, 5, rng)
    return ScenarioConfig(name=f"responsive-d{delta_known}", mode=QP, processes=procs, stake=stake,
                          rho=Fraction(1, 5), network=NetworkParams(0, delta_known, delta_actual, horizon, "uniform"),
                          ref=RefSettings(fast_commit=True), environment=tuple(env), seed=seed,
                          checks=("consistency", "responsiveness", "safety"))


def accountability_scenario(seed: int = 0, total: int | None = None) -> ScenarioConfig:
    """Corrupt stake of ``(1 - rho) T`` with ``rho = 1/3`` double-signs two conflicting logs."""
    total = total or (3, 6, 9)[seed % 3]
    rho = Fraction(1, 3)
    procs, stake = _roster(total, listeners=2)
    corrupt = [p.name for p in procs[: total - total // 3]]
    adversary = tuple((p, BehaviorSpec(DOUBLE_SIGN, attack_slot=2 + seed % 3)) for p in corrupt)
    horizon = 30
    return ScenarioConfig(name=f"double-sign-T{total}", mode=QP, processes=procs, stake=stake, rho=rho,
                          network=NetworkParams(0, 1, 1, horizon, "uniform"), adversary=adversary,
                          over_threshold=True, seed=seed,
                          environment=tuple(EnvTx(s, "c1", f"acc-{s}") for s in range(0, horizon, 4)),
                          checks=("accountability", "rho_bound"))


def mutation_scenario(seed: int = 0, accept_unsigned: bool = True, n: int = 7) -> ScenarioConfig:
    """The first leader is Byzantine and slips an unsigned transaction into each proposal."""
    procs, stake = _roster(n)
    bad = procs[0].name
    base = ScenarioConfig(name=f"unsigned-{'accepting' if accept_unsigned else 'strict'}", mode=QP, processes=procs,
                          stake=stake, rho=Fraction(1, 5), network=NetworkParams(0, 1, 1, 0, "uniform"),
                          ref=RefSettings(accept_unsigned=accept_unsigned),
                          adversary=((bad, BehaviorSpec(CUSTOM, script="inject_unsigned")),), seed=seed,
                          checks=("consistency", "safety"))
    horizon = 3 * base.view_duration * n
    env = tuple(EnvTx(s, "c1", f"m-{s}") for s in range(0, horizon, 4))
    return replace(base, network=replace(base.network, horizon=horizon), environment=env)


def quit_scenario(seed: int = 0, n: int = 4, horizon: int = 80, quits: bool = True) -> ScenarioConfig:
    rng = random.Random(seed + 1000)
    stake = tuple((f"v{k:02d}", 1) for k in range(1, n + 1))
    q = ()
    if quits:
        q = tuple((p, rng.randint(1, horizon)) for p in range(1, n + 1) if rng.random() < 0.5)
    env = _payloads(0, horizon - 10, 4, rng)
    return ScenarioConfig(name="quit-injection", mode=PERMISSIONED, stake=stake, rho=Fraction(1, 5),
                          network=NetworkParams(rng.choice((0, 20)), 2, rng.randint(1, 2), horizon, "uniform"),
                          environment=tuple(env), quits=q, seed=seed, record_fragments=not quits,
                          wrap_quit=True, checks=("consistency", "execution") if not quits else ("consistency",))


def ref_sweep(seed: int = 0, n: int | None = None, kind: str | None = None) -> ScenarioConfig:
    """Bare ref-bft with ``f`` Byzantine replicas; the first corrupt replica leads early views."""
    rng = random.Random(seed * 31 + 5)
    n = n or (4, 7, 10)[seed % 3]
    kind = kind or (SILENT, EQUIVOCATE, DELAY_MAX, CRASH)[(seed // 3) % 4]
    rho = Fraction(1, 5)
    stake = tuple((f"v{k:02d}", 1) for k in range(1, n + 1))
    dk = rng.choice((1, 2))
    base = ScenarioConfig(name=f"ref-n{n}-{kind}", mode=PERMISSIONED, stake=stake, rho=rho,
                          network=NetworkParams(rng.choice((0, 15, 40)), dk, rng.randint(1, dk), 0,
                                                rng.choice(("uniform", "max-delay", "targeted")), 0.1),
                          seed=seed, checks=("consistency", "liveness"))
    f = base.ref_config().f
    corrupt = sorted(rng.sample(range(1, n + 1), f))
    adversary = tuple((str(p), BehaviorSpec(kind, crash_slot=rng.randint(0, 20))) for p in corrupt)
    horizon = base.network.gst + 2 * base.ell_value
    env = _payloads(0, horizon - base.ell_value, 4, rng, prefix="ref")
    return replace(base, network=replace(base.network, horizon=horizon), adversary=adversary, environment=tuple(env))


def complexity_scenario(seed: int = 0, n: int = 4, mode: str = QP, epochs: int = 3, every: int = 3,
                        ell: int | None = None) -> ScenarioConfig:
    """Steady load over a few epochs; ``ell`` grows with ``n`` so epoch-ending traffic amortises."""
    procs, stake = _roster(n)
    base = ScenarioConfig(name=f"complexity-{mode}-n{n}", mode=mode, processes=procs if mode == QP else (),
                          stake=stake, rho=Fraction(1, 5), network=NetworkParams(0, 1, 1, 0, "uniform"),
                          ell=ell if ell is not None else 10 * n, seed=seed, checks=("consistency",))
    horizon = epochs * base.epoch_duration
    env = tuple(EnvTx(s, "c1", f"load-{seed}-{s}") for s in range(0, horizon, every))
    return replace(base, network=replace(base.network, horizon=horizon), environment=env)


def handover_scenario(seed: int = 0, n: int = 4, epochs: int = 3) -> ScenarioConfig:
    """Every epoch-1 validator hands its whole stake to a listener, so epoch 2 has a disjoint validator set."""
    rng = random.Random(seed + 3000)
    procs, stake = _roster(n, listeners=n)
    base = ScenarioConfig(name=f"handover-n{n}", mode=QP, processes=procs, stake=stake, rho=Fraction(1, 5),
                          network=NetworkParams(0, 1, 1, 0, "uniform"), seed=seed,
                          checks=("consistency", "liveness", "safety", "overlap", "durability"))
    horizon = epochs * base.epoch_duration
    env = [EnvTx(3, f"v{k:02d}", transfer_to=f"w{k:02d}", amount=1, nonce=k) for k in range(1, n + 1)]
    env += _payloads(0, horizon - base.ell_star, 5, rng, prefix="handover")
    env.sort(key=lambda t: (t.slot, t.issuer, t.payload))
    return replace(base, network=replace(base.network, horizon=horizon), environment=tuple(env))


def smoke_scenario(seed: int = 0) -> ScenarioConfig:
    """Four validators, all correct, long enough for two epoch changes."""
    procs, stake = _roster(4)
    base = ScenarioConfig(name="smoke", mode=QP, processes=procs, stake=stake, rho=Fraction(1, 5),
                          network=NetworkParams(0, 1, 1, 0, "uniform"), seed=seed)
    horizon = 2 * base.epoch_duration + base.ell_star
    env = tuple(EnvTx(s, "c1", f"smoke-{s}") for s in range(0, horizon - base.ell_star, 5))
    return replace(base, network=replace(base.network, horizon=horizon), environment=env)


GENERATORS: dict[str, Callable[..., ScenarioConfig]] = {
    "consistency_sweep": consistency_sweep,
    "responsiveness": responsiveness_scenario,
    "accountability": accountability_scenario,
    "quit_injection": quit_scenario,
    "ref_sweep": ref_sweep,
    "mutation": mutation_scenario,
    "complexity": complexity_scenario,
    "handover": handover_scenario,
    "smoke": smoke_scenario,
}


def load_config(path: str) -> ScenarioConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"invalid JSON: {exc}") from None
    return parse_config(data)
