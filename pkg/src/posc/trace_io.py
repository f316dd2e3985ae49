"""JSON-lines encoding of a run trace.

One JSON object per line, each tagged by ``"t"``.  The header carries the
scenario config, so a reader can rebuild the genesis log and key registry.
Transactions and logs are interned: a ``tx`` line defines transaction ``i``
by its wire bytes, and a ``log`` line defines log ``i`` as a prefix of an
earlier log extended by a list of transaction ids.  Every later record
refers to them by id.  The footer holds a sha256 over all preceding lines.
Writing is deterministic: the same trace always yields the same bytes.
"""

from __future__ import annotations

import hashlib
import json
from typing import IO, Iterable, Iterator

from .crypto import Certificate
from .ledger import DecodeError, Log, Transaction, decode_transaction
from .permissioned import Fragment, Message
from .refbft import decode_refmsg
from .simnet import Delivery, Trace

FORMAT = "posc-trace"
VERSION = 1


class TraceSchemaError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


def _dump(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _common_prefix(a: Log, b: Log) -> int:
    lo, hi = 0, min(a.length, b.length)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if a.digest_at(mid) == b.digest_at(mid):
            lo = mid
        else:
            hi = mid - 1
    return lo


class _Writer:
    def __init__(self, genesis: Log):
        self.lines: list[str] = []
        self.tx_ids: dict[bytes, int] = {}
        self.log_ids: dict[bytes, int] = {genesis.digest: 0}
        self.logs: list[Log] = [genesis]

    def emit(self, rec: dict) -> None:
        self.lines.append(_dump(rec))

    def tx(self, tx: Transaction) -> int:
        i = self.tx_ids.get(tx.digest)
        if i is None:
            if tx.log is not None:
                self.log(tx.log)
            i = self.tx_ids[tx.digest] = len(self.tx_ids)
            self.emit({"t": "tx", "i": i, "hex": tx.encoded.hex()})
        return i

    def log(self, log: Log, hint: int | None = None) -> int:
        i = self.log_ids.get(log.digest)
        if i is not None:
            return i
        base_id = hint if hint is not None else 0
        base = self.logs[base_id]
        keep = _common_prefix(base, log) if base.model.digest == log.model.digest else 0
        if keep == 0:
            base_id = 0
        txs = [self.tx(log[k]) for k in range(keep + 1, log.length + 1)]
        i = self.log_ids[log.digest] = len(self.logs)
        self.logs.append(log)
        self.emit({"t": "log", "i": i, "base": base_id, "keep": keep, "append": txs, "d": log.digest.hex()})
        return i

    def msg(self, m: Message) -> list:
        return [m.sender, m.receiver, list(m.uid), m.body.encode().hex()]


def trace_lines(trace: Trace, config: dict) -> list[str]:
    w = _Writer(trace.genesis)
    w.emit({"t": "header", "format": FORMAT, "version": VERSION, "config": config,
            "processes": list(trace.processes), "correct": [p for p in trace.processes if p in trace.correct]})
    for p in trace.processes:
        last = 0
        for slot, log in trace.logs.get(p, ()):
            last = w.log(log, last)
            w.emit({"t": "out", "p": p, "slot": slot, "log": last})
        if trace.waiting.get(p):
            w.emit({"t": "wait", "p": p, "slots": list(trace.waiting[p])})
        for slot, epoch, validating in trace.epochs.get(p, ()):
            w.emit({"t": "epoch", "p": p, "slot": slot, "epoch": epoch, "validating": bool(validating)})
        for slot, log, certs in trace.certs.get(p, ()):
            i = w.log(log, last)
            w.emit({"t": "cert", "p": p, "slot": slot, "log": i,
                    "certs": [[e, c.to_json()] for e, c in sorted(certs.items())]})
        if trace.bits.get(p):
            w.emit({"t": "bits", "p": p, "rows": [list(r) for r in trace.bits[p]]})
    for digest, (slot, tx) in trace.injections.items():
        w.emit({"t": "inject", "slot": slot, "tx": w.tx(tx)})
    for digest, slot in trace.first_receipt.items():
        i = w.tx_ids.get(digest)
        if i is not None:
            w.emit({"t": "receipt", "tx": i, "slot": slot})
    for p, slot, epoch, entered, clock in trace.finishes:
        w.emit({"t": "finish", "p": p, "slot": slot, "epoch": epoch, "entered": entered, "clock": clock})
    by_slot: dict[int, list] = {}
    for d in trace.deliveries:
        by_slot.setdefault(d.sent, []).append([list(d.uid), d.sender, d.receiver, d.delivered, d.bits, d.kind])
    for slot in sorted(by_slot):
        w.emit({"t": "deliveries", "sent": slot, "rows": by_slot[slot]})
    for p in trace.processes:
        for f in trace.fragments.get(p, ()):
            state = f.state.digest().hex() if f.state is not None else (
                f.state_digest.hex() if f.state_digest is not None else None)
            w.emit({"t": "fragment", "p": p, "slot": f.slot, "waiting": f.waiting,
                    "in": [w.msg(m) for m in f.received_msgs], "txs": [w.tx(tx) for tx in f.received_txs],
                    "out": [w.msg(m) for m in f.sent_msgs], "state": state})
    h = hashlib.sha256()
    for line in w.lines:
        h.update(line.encode() + b"\n")
    w.emit({"t": "end", "lines": len(w.lines), "sha256": h.hexdigest()})
    return w.lines


def write_trace(trace: Trace, config: dict, fh: IO[str]) -> None:
    for line in trace_lines(trace, config):
        fh.write(line + "\n")


# -- reading -------------------------------------------------------------------

def _records(lines: Iterable[str]) -> Iterator[tuple[int, dict]]:
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceSchemaError(n, f"invalid JSON ({exc.msg})") from None
        if not isinstance(rec, dict) or "t" not in rec:
            raise TraceSchemaError(n, "record lacks a type tag")
        yield n, rec


def read_trace(lines: Iterable[str]):
    """Parse trace lines into ``(config, trace)``; raises ``TraceSchemaError`` on malformed input."""
    from .scenario import ConfigError, parse_config

    recs = list(_records(lines))
    if not recs:
        raise TraceSchemaError(0, "empty trace")
    n0, head = recs[0]
    if head["t"] != "header" or head.get("format") != FORMAT:
        raise TraceSchemaError(n0, "first record is not a trace header")
    if head.get("version") != VERSION:
        raise TraceSchemaError(n0, f"unsupported trace version {head.get('version')!r}")
    n_end, foot = recs[-1]
    if foot["t"] != "end":
        raise TraceSchemaError(n_end, "trace is truncated (no end record)")
    h = hashlib.sha256()
    for _, rec in recs[:-1]:
        h.update((_dump(rec) + "\n").encode())
    if foot.get("lines") != len(recs) - 1 or foot.get("sha256") != h.hexdigest():
        raise TraceSchemaError(n_end, "checksum mismatch")
    try:
        cfg = parse_config(head["config"])
    except ConfigError as exc:
        raise TraceSchemaError(n0, f"bad config: {exc}") from None

    genesis = cfg.stake_model().genesis()
    procs = [tuple(p) if isinstance(p, list) else p for p in head.get("processes", [])]
    trace = Trace(procs, frozenset(head.get("correct", [])), cfg.network, genesis)
    trace.extra["owned"] = cfg.owned()
    txs: list[Transaction] = []
    logs: list[Log] = [genesis]
    by_digest: dict[bytes, Log] = {genesis.digest: genesis}

    def tx_at(n: int, i) -> Transaction:
        if not isinstance(i, int) or not 0 <= i < len(txs):
            raise TraceSchemaError(n, f"unknown transaction id {i!r}")
        return txs[i]

    def log_at(n: int, i) -> Log:
        if not isinstance(i, int) or not 0 <= i < len(logs):
            raise TraceSchemaError(n, f"unknown log id {i!r}")
        return logs[i]

    def msg(n: int, row) -> Message:
        try:
            sender, receiver, uid, body = row
            return Message(sender, receiver, decode_refmsg(bytes.fromhex(body)), _uid(uid))
        except (ValueError, TypeError, DecodeError) as exc:
            raise TraceSchemaError(n, f"bad message: {exc}") from None

    for n, rec in recs[1:-1]:
        t = rec["t"]
        try:
            if t == "tx":
                if rec["i"] != len(txs):
                    raise TraceSchemaError(n, "transaction ids out of order")
                txs.append(decode_transaction(bytes.fromhex(rec["hex"]), by_digest))
            elif t == "log":
                if rec["i"] != len(logs):
                    raise TraceSchemaError(n, "log ids out of order")
                base = log_at(n, rec["base"])
                log = base.prefix(rec["keep"]).extend(tx_at(n, i) for i in rec["append"])
                if log.digest.hex() != rec["d"]:
                    raise TraceSchemaError(n, "log digest mismatch")
                logs.append(log)
                by_digest[log.digest] = log
            elif t == "out":
                trace.logs.setdefault(rec["p"], []).append((rec["slot"], log_at(n, rec["log"])))
            elif t == "wait":
                trace.waiting[rec["p"]] = list(rec["slots"])
            elif t == "epoch":
                trace.epochs.setdefault(rec["p"], []).append((rec["slot"], rec["epoch"], rec["validating"]))
            elif t == "cert":
                certs = {e: Certificate.from_json(c) for e, c in rec["certs"]}
                trace.certs.setdefault(rec["p"], []).append((rec["slot"], log_at(n, rec["log"]), certs))
            elif t == "bits":
                trace.bits[rec["p"]] = [tuple(r) for r in rec["rows"]]
            elif t == "inject":
                tx = tx_at(n, rec["tx"])
                trace.injections.setdefault(tx.digest, (rec["slot"], tx))
            elif t == "receipt":
                trace.first_receipt.setdefault(tx_at(n, rec["tx"]).digest, rec["slot"])
            elif t == "finish":
                trace.finishes.append((rec["p"], rec["slot"], rec["epoch"], rec["entered"], rec["clock"]))
            elif t == "deliveries":
                for uid, sender, receiver, delivered, bits, kind in rec["rows"]:
                    trace.deliveries.append(Delivery(_uid(uid), sender, receiver, rec["sent"], delivered, bits, kind))
            elif t == "fragment":
                state = rec.get("state")
                trace.fragments.setdefault(rec["p"], []).append(Fragment(
                    rec["p"], rec["slot"], rec["waiting"],
                    tuple(msg(n, m) for m in rec["in"]), tuple(tx_at(n, i) for i in rec["txs"]),
                    tuple(msg(n, m) for m in rec["out"]),
                    state_digest=bytes.fromhex(state) if state is not None else None))
            else:
                raise TraceSchemaError(n, f"unknown record type {t!r}")
        except TraceSchemaError:
            raise
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise TraceSchemaError(n, f"malformed {t!r} record: {exc!r}") from None
    for p in procs:
        trace.logs.setdefault(p, [(0, genesis)])
        trace.waiting.setdefault(p, [])
        trace.bits.setdefault(p, [])
    return cfg, trace


def _uid(u) -> tuple:
    return tuple(tuple(x) if isinstance(x, list) else x for x in u)


def load_trace(path: str):
    with open(path) as fh:
        return read_trace(fh)
