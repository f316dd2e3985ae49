"""Formal model of permissioned protocols: states, fragments, behaviors, executions.

Protocols expose a pure ``transition(state, waiting, msgs, txs)``; the model's
axioms (waiting freezes, quitting is absorbing, the initial state waits for a
start transaction) are checked here rather than trusted.
"""

from __future__ import annotations

import hashlib
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Sequence

from .ledger import Log, Transaction

GOSSIP = "*"


class NotStandard(Exception):
    pass


@dataclass(frozen=True)
class Message:
    """A message with its addressing; ``uid`` is stamped by the network."""

    sender: Any
    receiver: Any
    body: Any
    uid: tuple = ()

    def key(self) -> tuple:
        return (self.receiver, self.body.encode())

    @property
    def size_bits(self) -> int:
        return self.body.size_bits


class ProtocolState(ABC):
    process: Any
    log: Log | None
    quit: bool

    @abstractmethod
    def digest(self) -> bytes:
        ...


class PermissionedProtocol(ABC):
    n: int
    rho: Fraction
    supports_quit: bool = False

    @abstractmethod
    def initial_state(self, pid) -> ProtocolState:
        ...

    @abstractmethod
    def transition(self, state: ProtocolState, waiting: bool, msgs_in: Sequence[Message],
                   txs_in: Sequence[Transaction]) -> tuple[ProtocolState, tuple[Message, ...]]:
        ...

    def is_initial(self, state: ProtocolState) -> bool:
        return state.log is None and not state.quit

    def processes(self) -> range:
        return range(1, self.n + 1)


# -- quit enhancement -------------------------------------------------------

class QuitState(ProtocolState):
    __slots__ = ("inner", "quit")

    def __init__(self, inner: ProtocolState, quit: bool = False):
        self.inner = inner
        self.quit = quit

    @property
    def process(self):
        return self.inner.process

    @property
    def log(self):
        return self.inner.log

    def digest(self) -> bytes:
        d = self.inner.digest()
        return hashlib.sha256(d + b"/quit").digest() if self.quit else d

    def __repr__(self):
        return f"QuitState({self.inner!r}, quit={self.quit})"


class QuitEnhanced(PermissionedProtocol):
    supports_quit = True

    def __init__(self, inner: PermissionedProtocol):
        if getattr(inner, "supports_quit", False):
            raise NotStandard("protocol already handles quit transactions")
        self.inner = inner
        self.n = inner.n
        self.rho = inner.rho

    def initial_state(self, pid) -> QuitState:
        return QuitState(self.inner.initial_state(pid))

    def is_initial(self, state) -> bool:
        return not state.quit and self.inner.is_initial(state.inner)

    def transition(self, state, waiting, msgs_in, txs_in):
        if waiting or state.quit:
            return state, ()
        if any(tx.is_quit for tx in txs_in):
            return QuitState(state.inner, True), ()
        inner, out = self.inner.transition(state.inner, waiting, msgs_in, txs_in)
        return QuitState(inner), out

    def __getattr__(self, name):
        return getattr(self.__dict__["inner"], name)


def quit_enhance(p: PermissionedProtocol) -> QuitEnhanced:
    return QuitEnhanced(p)


# -- fragments, behaviors, executions ---------------------------------------

@dataclass
class Fragment:
    process: Any
    slot: int
    waiting: bool
    received_msgs: tuple = ()
    received_txs: tuple = ()
    sent_msgs: tuple = ()
    state: ProtocolState | None = None
    state_digest: bytes | None = None

    @property
    def quit(self) -> bool:
        return bool(self.state is not None and self.state.quit)


@dataclass
class Behavior:
    process: Any
    fragments: list[Fragment] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.fragments) - 1

    def fragment(self, i: int) -> Fragment:
        return self.fragments[i]

    def state(self, i: int):
        return self.fragments[i].state

    def log(self, i: int):
        s = self.fragments[i].state
        return None if s is None else s.log

    def waiting(self, i: int) -> bool:
        return self.fragments[i].waiting

    def quit(self, i: int) -> bool:
        return self.fragments[i].quit

    def prefix(self, i: int) -> "Behavior":
        return Behavior(self.process, self.fragments[: i + 1])


@dataclass(frozen=True)
class Violation:
    clause: str
    process: Any = None
    slot: int | None = None
    message: str = ""

    def to_json(self) -> dict:
        return {"clause": self.clause, "process": self.process, "slot": self.slot, "message": self.message}


def _structural(f: Fragment) -> list[str]:
    out = []
    if any(m.receiver != f.process for m in f.received_msgs):
        out.append("received message addressed elsewhere")
    if any(m.sender != f.process for m in f.sent_msgs):
        out.append("sent message with foreign sender")
    if f.waiting and (f.received_msgs or f.received_txs or f.sent_msgs):
        out.append("waiting fragment carries messages or transactions")
    return out


def _same_outputs(produced: Sequence[Message], recorded: Sequence[Message]) -> bool:
    return [m.key() for m in produced] == [m.key() for m in recorded]


def fragment_violations(f: Fragment, proto: PermissionedProtocol, state: ProtocolState | None = None):
    """Clauses of fragment validity that ``f`` breaks, plus the successor state."""
    s = state if state is not None else f.state
    problems = _structural(f)
    initial = proto.initial_state(f.process)
    is_init = s.digest() == initial.digest() if s is not None else False
    if f.slot == 0 and not is_init:
        problems.append("slot-0 state is not initial")
    starts = [tx for tx in f.received_txs if tx.is_start]
    quits = [tx for tx in f.received_txs if tx.is_quit]
    if starts and quits:
        problems.append("start and quit in one fragment")
    if is_init:
        if f.waiting:
            problems.append("initial state while waiting")
        inputs = list(f.received_msgs) + list(f.received_txs)
        if inputs and not (len(inputs) == 1 and len(starts) == 1):
            problems.append("initial state receives more than a start transaction")
        if not f.received_txs and f.sent_msgs:
            problems.append("initial state sends without a start transaction")
    nxt, out = proto.transition(s, f.waiting, f.received_msgs, f.received_txs)
    if not _same_outputs(out, f.sent_msgs):
        problems.append("recorded sends differ from the transition")
    return problems, nxt


def validate_fragment(f: Fragment, proto: PermissionedProtocol) -> bool:
    if f.state is None:
        return False
    problems, _ = fragment_violations(f, proto)
    return not problems


def behavior_violations(b: Behavior, proto: PermissionedProtocol) -> list[Violation]:
    out: list[Violation] = []
    starts = sum(1 for f in b.fragments for tx in f.received_txs if tx.is_start)
    quits = sum(1 for f in b.fragments for tx in f.received_txs if tx.is_quit)
    if starts > 1:
        out.append(Violation("Composition", b.process, None, "more than one start transaction"))
    if quits > 1:
        out.append(Violation("Composition", b.process, None, "more than one quit transaction"))
    current = proto.initial_state(b.process)
    for i, f in enumerate(b.fragments):
        if f.slot != i:
            out.append(Violation("Validity", b.process, f.slot, f"fragment {i} carries slot {f.slot}"))
            break
        if f.state is not None and f.state.digest() != current.digest():
            out.append(Violation("Validity", b.process, f.slot, "state does not follow from the previous fragment"))
            break
        if f.state is None and f.state_digest is not None and f.state_digest != current.digest():
            out.append(Violation("Validity", b.process, f.slot, "state digest does not follow from the previous fragment"))
            break
        problems, current = fragment_violations(f, proto, current)
        if problems:
            out.append(Violation("Validity", b.process, f.slot, "; ".join(problems)))
            break
    return out


def validate_behavior(b: Behavior, proto: PermissionedProtocol) -> bool:
    return not behavior_violations(b, proto)


@dataclass
class ExecutionRecord:
    faulty: frozenset
    gst: int
    behaviors: dict
    delta: int = 1
    rho: Fraction | None = None

    @property
    def k(self) -> int:
        return max((b.k for b in self.behaviors.values()), default=-1)


def validate_execution(e: ExecutionRecord, proto: PermissionedProtocol) -> list[Violation]:
    out: list[Violation] = []
    n = len(e.behaviors)
    rho = e.rho if e.rho is not None else proto.rho
    if len(e.faulty) > rho * n:
        out.append(Violation("FaultyBound", None, None, f"{len(e.faulty)} faulty of {n} exceeds rho*n"))
    for p in sorted(e.behaviors, key=str):
        b = e.behaviors[p]
        for f in b.fragments:
            for msg in _structural(f):
                out.append(Violation("Composition", p, f.slot, msg))
        if p not in e.faulty:
            out.extend(behavior_violations(b, proto))
            for f in b.fragments:
                if f.slot >= e.gst and f.waiting:
                    out.append(Violation("GSTValidity", p, f.slot, "correct process waits after GST"))
    sent: dict[tuple, tuple[int, Message]] = {}
    for p, b in e.behaviors.items():
        for f in b.fragments:
            for m in f.sent_msgs:
                sent[m.uid] = (f.slot, m)
    received: dict[tuple, dict] = {}
    for p, b in e.behaviors.items():
        for f in b.fragments:
            for m in f.received_msgs:
                origin = sent.get(m.uid)
                if origin is None or origin[0] >= f.slot or origin[1].sender != m.sender:
                    out.append(Violation("ReceiveValidity", p, f.slot, f"message {m.uid} was not sent earlier"))
                received.setdefault(m.uid, {}).setdefault(p, f.slot)
    k = e.k
    for uid in sorted(sent, key=repr):
        slot, m = sent[uid]
        deadline = max(slot, e.gst) + e.delta
        if k < deadline:
            continue
        targets = sorted(e.behaviors, key=str) if m.receiver == GOSSIP else [m.receiver]
        for r in targets:
            if m.receiver == GOSSIP and r == m.sender:
                continue
            got = received.get(uid, {}).get(r)
            if got is None or got > deadline:
                out.append(Violation("SendValidity", r, slot, f"message {uid} not received by slot {deadline}"))
    return out
