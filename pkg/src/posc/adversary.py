"""Static corruption plans and the Byzantine behaviours used in tests.

Corrupt processes run the honest code; a behaviour rewrites what they send.
``DoubleSignLogs`` additionally acts as a coalition: all corrupt identifiers
sign two conflicting logs and each half of the correct processes is shown one.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable

from .compiler import CERTIFIED_LOG, INNER, Envelope
from .crypto import Certificate, log_message
from .ledger import Log, payload_tx
from .permissioned import GOSSIP, Message
from .refbft import PROPOSE, VOTE1, VOTE2, RefMsg, propose, vote
from .simnet import Trace

CRASH, SILENT, EQUIVOCATE, DOUBLE_SIGN, DELAY_MAX, CUSTOM = (
    "Crash", "Silent", "Equivocate", "DoubleSignLogs", "DelayMax", "Custom")
BEHAVIORS = (CRASH, SILENT, EQUIVOCATE, DOUBLE_SIGN, DELAY_MAX, CUSTOM)


class NotCorrupt(Exception):
    pass


@dataclass(frozen=True)
class BehaviorSpec:
    kind: str
    crash_slot: int = 0
    script: str = ""
    attack_slot: int = 2

    def __post_init__(self):
        if self.kind not in BEHAVIORS:
            raise ValueError(f"unknown behaviour {self.kind!r}")


@dataclass
class CorruptionPlan:
    corrupt: dict = field(default_factory=dict)      # process -> BehaviorSpec
    declared_rho: Fraction = Fraction(1, 5)
    over_threshold: bool = False

    @property
    def processes(self) -> frozenset:
        return frozenset(self.corrupt)


# -- message rewriting --------------------------------------------------------

def _junk(height: int, view: int):
    return payload_tx("equivocator", b"junk/%d/%d" % (height, view))


def conflicting(body: RefMsg) -> RefMsg:
    """A same-slot alternative to ``body`` that correct replicas would treat as different."""
    if body.kind == PROPOSE:
        batch = body.batch[:-1] if body.batch else (_junk(body.height, body.view),)
        return propose(body.height, body.view, body.parent, batch, body.valid_view)
    if body.kind in (VOTE1, VOTE2):
        alt = hashlib.sha256(body.digest + b"/other").digest()
        return vote(1 if body.kind == VOTE1 else 2, body.height, body.view, alt)
    return body


def with_unsigned(body: RefMsg) -> RefMsg:
    if body.kind != PROPOSE:
        return body
    tx = payload_tx("forger", b"unsigned/%d/%d" % (body.height, body.view))
    return propose(body.height, body.view, body.parent, body.batch + (tx,), body.valid_view)


def _rewrite(msg: Message, fn) -> Message:
    body = msg.body
    if isinstance(body, Envelope):
        if body.kind != INNER or not isinstance(body.inner, RefMsg):
            return msg
        new = fn(body.inner)
        if new is body.inner:
            return msg
        return Message(msg.sender, msg.receiver, Envelope(INNER, body.epoch, body.src, body.dst, inner=new))
    if isinstance(body, RefMsg):
        new = fn(body)
        return msg if new is body else Message(msg.sender, msg.receiver, new)
    return msg


class BehaviorFilter:
    """Stateful outbox rewriter for one corrupt process."""

    def __init__(self, spec: BehaviorSpec, side_b: Iterable, delay: int = 1, seed: int = 0):
        self.spec = spec
        self.side_b = frozenset(side_b)
        self.delay = delay
        self.held: dict[int, list[Message]] = {}
        self.rng = random.Random(seed)

    def __call__(self, slot: int, outbox: list[Message]) -> list[Message]:
        k = self.spec.kind
        if k in (SILENT, DOUBLE_SIGN):
            return []  # a double-signing coalition speaks only through its fabricated logs
        if k == CRASH:
            return [] if slot > self.spec.crash_slot else outbox
        if k == EQUIVOCATE:
            return [_rewrite(m, conflicting) if m.receiver in self.side_b else m for m in outbox]
        if k == DELAY_MAX:
            self.held.setdefault(slot + self.delay, []).extend(outbox)
            return self.held.pop(slot, [])
        if k == CUSTOM:
            if self.spec.script == "inject_unsigned":
                return [_rewrite(m, with_unsigned) for m in outbox]
            if self.spec.script == "drop_random":
                return [m for m in outbox if self.rng.random() < 0.5]
            return outbox
        return outbox


def apply_behavior(plan: CorruptionPlan, process, slot: int, outbox: list[Message],
                   filters: dict | None = None) -> list[Message]:
    if process not in plan.corrupt:
        raise NotCorrupt(process)
    f = (filters or {}).get(process) or BehaviorFilter(plan.corrupt[process], ())
    return f(slot, outbox)


def build_filters(plan: CorruptionPlan, processes: list, delay: int, seed: int = 0) -> dict:
    half = (len(processes) + 1) // 2
    side_b = processes[half:]
    return {p: BehaviorFilter(spec, side_b, delay, seed + i)
            for i, (p, spec) in enumerate(sorted(plan.corrupt.items(), key=lambda kv: str(kv[0])))}


class DoubleSignCoalition:
    """Corrupt identifiers certify two conflicting logs and split the correct processes."""

    def __init__(self, plan: CorruptionPlan, registry, owned: dict, genesis: Log, groups: tuple[list, list],
                 attack_slot: int = 2):
        self.plan = plan
        self.registry = registry
        self.owned = owned
        self.genesis = genesis
        self.groups = groups
        self.attack_slot = attack_slot
        self.done = False
        self.signed: list = []

    def _certify(self, log: Log, sender) -> Envelope:
        msg = log_message(log)
        sigs = []
        for p in sorted(self.plan.corrupt, key=str):
            for ident in sorted(self.owned.get(p, ())):
                if ident in log.validators:
                    sigs.append(self.registry.sign(ident, msg, p))
        cert = Certificate(log.digest, tuple(sigs))
        self.signed.append((log, cert))
        return Envelope(CERTIFIED_LOG, log.epoch, log=log, certs=((log.epoch, cert),))

    def __call__(self, slot: int, world) -> list[Message]:
        if self.done or slot < self.attack_slot:
            return []
        self.done = True
        sender = sorted(self.plan.corrupt, key=str)[0]
        base = world.by_name[sender].log
        out = []
        for tag, group in zip((b"left", b"right"), self.groups):
            issuer = sorted(self.owned[sender])[0]
            tx = self.registry.sign_tx(payload_tx(issuer, b"double-sign/" + tag), sender)
            env = self._certify(base.append(tx), sender)
            out.extend(Message(sender, r, env) for r in group)
        return out


# -- the bound check ------------------------------------------------------------

def corrupt_identifiers(plan: CorruptionPlan, owned: dict) -> frozenset:
    return frozenset(i for p in plan.corrupt for i in owned.get(p, ()))


def check_rho_bound(plan: CorruptionPlan, trace: Trace, owned: dict) -> bool:
    """Corrupt stake stays within ``rho * T`` at every prefix of every correct output log."""
    bad = corrupt_identifiers(plan, owned)
    rho = plan.declared_rho
    seen: set[bytes] = set()
    for p in trace.correct:
        log = trace.final_log(p)
        total = log.model.total
        for k in range(log.length + 1):
            d = log.digest_at(k)
            if d in seen:
                continue
            seen.add(d)
            table = log.prefix(k).stake_table
            if sum(table.get(i, 0) for i in bad) > rho * total:
                return False
    return True
