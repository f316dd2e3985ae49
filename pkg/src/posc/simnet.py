"""Discrete-timeslot network kernel with partial synchrony.

A ``World`` owns a fixed roster of nodes.  Each slot it delivers due messages
and environment transactions, steps every node in roster order, then
schedules the outboxes.  Delivery honours ``max(send, GST) + δ`` and never
happens earlier than ``send + 1``.  All randomness comes from one seeded
generator consumed in a fixed order, so a seed pins the whole run.
"""

from __future__ import annotations

import random
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Sequence

from .ledger import Log, Transaction, start_tx
from .permissioned import GOSSIP, Fragment, Message, PermissionedProtocol

UNIFORM, MAX_DELAY, TARGETED = "uniform", "max-delay", "targeted"


@dataclass(frozen=True)
class NetworkParams:
    gst: int = 0
    delta_known: int = 1
    delta_actual: int = 1
    horizon: int = 100
    pre_gst_policy: str = TARGETED
    wait_prob: float = 0.0

    def __post_init__(self):
        if self.delta_known < 1 or self.delta_actual < 1:
            raise ValueError("delays are at least one slot")
        if self.delta_actual > self.delta_known:
            raise ValueError("delta_actual must not exceed delta_known")
        if self.pre_gst_policy not in (UNIFORM, MAX_DELAY, TARGETED):
            raise ValueError(f"unknown pre-GST policy {self.pre_gst_policy!r}")
        if not 0.0 <= self.wait_prob < 1.0:
            raise ValueError("wait_prob must lie in [0, 1)")

    def deadline(self, sent: int) -> int:
        return max(sent, self.gst) + self.delta_actual


class Node:
    """What the world drives.  Subclasses implement ``step``."""

    name: Any

    def step(self, slot: int, waiting: bool, msgs: Sequence[Message], txs: Sequence[Transaction]) -> list[Message]:
        raise NotImplementedError

    @property
    def log(self) -> Log | None:
        raise NotImplementedError


class PermissionedNode(Node):
    """A bare permissioned process; gets its start transaction at slot 0."""

    def __init__(self, name, proto: PermissionedProtocol, genesis: Log, record_fragments: bool = False):
        self.name = name
        self.proto = proto
        self.state = proto.initial_state(name)
        self.genesis = genesis
        self.record = record_fragments
        self.fragments: list[Fragment] = []
        self._carry: list = []

    def step(self, slot, waiting, msgs, txs):
        if slot == 0:
            # the start fragment admits nothing else; hold inputs for the next slot
            self._carry = list(txs)
            txs, msgs = [start_tx(self.genesis)], []
        elif self._carry and not waiting:
            txs, self._carry = self._carry + list(txs), []
        prev = self.state
        self.state, out = self.proto.transition(self.state, waiting, msgs, txs)
        if self.record:
            self.fragments.append(Fragment(self.name, slot, waiting, tuple(msgs), tuple(txs), tuple(out), prev))
        return list(out)

    @property
    def log(self):
        return self.state.log


@dataclass
class Delivery:
    uid: tuple
    sender: Any
    receiver: Any
    sent: int
    delivered: int
    bits: int
    kind: str = ""


@dataclass
class Trace:
    """Everything the checkers need, independent of the nodes that produced it."""

    processes: list
    correct: frozenset
    net: NetworkParams
    genesis: Log
    logs: dict = field(default_factory=dict)               # p -> [(slot, Log)]
    waiting: dict = field(default_factory=dict)            # p -> sorted slots
    injections: dict = field(default_factory=dict)         # tx digest -> (slot, tx)
    first_receipt: dict = field(default_factory=dict)      # tx digest -> slot
    deliveries: list = field(default_factory=list)
    bits: dict = field(default_factory=dict)               # p -> [(slot, tx_in, msg_in, msg_out, cert_in, cert_out)]
    epochs: dict = field(default_factory=dict)             # p -> [(slot, epoch, validating)]
    finishes: list = field(default_factory=list)           # (p, slot, epoch, entry slot, local slots in epoch)
    certs: dict = field(default_factory=dict)              # p -> [(slot, Log, {epoch: Certificate})]
    fragments: dict = field(default_factory=dict)          # p -> [Fragment]
    extra: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.net.horizon

    def log_at(self, p, slot: int) -> Log:
        current = self.genesis
        for s, l in self.logs.get(p, ()):
            if s > slot:
                break
            current = l
        return current

    def final_log(self, p) -> Log:
        seq = self.logs.get(p)
        return seq[-1][1] if seq else self.genesis

    def is_waiting(self, p, slot: int) -> bool:
        return slot in self._waiting_sets().get(p, ())

    def _waiting_sets(self):
        cached = self.extra.get("_wait_sets")
        if cached is None:
            cached = {p: frozenset(v) for p, v in self.waiting.items()}
            self.extra["_wait_sets"] = cached
        return cached


class World:
    """Steps nodes slot by slot under a partially synchronous scheduler.

    ``filters`` maps a corrupt process to a callable ``(slot, outbox) ->
    outbox``; ``coalition`` is called once per slot and may return extra
    messages from corrupt senders.  ``groups`` splits processes for the
    targeted pre-GST policy.
    """

    def __init__(self, nodes: Sequence[Node], net: NetworkParams, genesis: Log, seed: int = 0,
                 corrupt: Iterable = (), filters: dict | None = None, coalition: Callable | None = None,
                 schedule: dict[int, list[Transaction]] | None = None, groups: Sequence[Iterable] | None = None,
                 size_of: Callable[[Message], int] | None = None, private_txs: dict | None = None):
        self.nodes = list(nodes)
        self.by_name = {n.name: n for n in self.nodes}
        self.net = net
        self.rng = random.Random(seed)
        self.corrupt = frozenset(corrupt)
        self.filters = filters or {}
        self.coalition = coalition
        self.schedule = schedule or {}
        self.private_txs = dict(private_txs or {})   # (process, slot) -> txs for that process only
        self.size_of = size_of or (lambda m: m.size_bits)
        names = [n.name for n in self.nodes]
        if groups is None:
            half = (len(names) + 1) // 2
            groups = [names[:half], names[half:]]
        self.group_of = {p: i for i, g in enumerate(groups) for p in g}
        self.slot = 0
        self.inbox: dict[int, dict[Any, list[Message]]] = defaultdict(lambda: defaultdict(list))
        self.tx_backlog: dict[Any, list[Transaction]] = defaultdict(list)
        self.held: dict[Any, list[Message]] = defaultdict(list)
        self._seq = 0
        self.trace = Trace(names, frozenset(p for p in names if p not in self.corrupt), net, genesis)
        for p in names:
            self.trace.logs[p] = [(0, genesis)]
            self.trace.waiting[p] = []
            self.trace.bits[p] = []
        self._last_log = {p: genesis for p in names}
        for node in self.nodes:
            bind = getattr(node, "bind", None)
            if bind is not None:
                bind(self.trace)

    # -- scheduling ---------------------------------------------------------
    def _delay(self, sender, receiver, sent: int) -> int:
        net = self.net
        deadline = net.deadline(sent)
        if sent >= net.gst:
            return sent + self.rng.randint(1, net.delta_actual)
        if net.pre_gst_policy == MAX_DELAY:
            return deadline
        if net.pre_gst_policy == TARGETED and self.group_of.get(sender) != self.group_of.get(receiver):
            return deadline
        return self.rng.randint(sent + 1, deadline)

    def _stamp(self, msg: Message, sent: int) -> Message:
        if msg.uid:
            return msg
        self._seq += 1
        return Message(msg.sender, msg.receiver, msg.body, (msg.sender, sent, self._seq))

    def _schedule(self, msg: Message, sent: int) -> None:
        targets = [n.name for n in self.nodes if n.name != msg.sender] if msg.receiver == GOSSIP else [msg.receiver]
        stamped = self._stamp(msg, sent)
        uid = stamped.uid
        bits = self.size_of(stamped)
        kind = str(getattr(msg.body, "kind", type(msg.body).__name__))
        for r in targets:
            if r not in self.by_name:
                continue
            at = self._delay(msg.sender, r, sent)
            self.inbox[at][r].append(stamped)
            self.trace.deliveries.append(Delivery(uid, msg.sender, r, sent, at, bits, kind))

    def _waits(self, p, slot: int) -> bool:
        net = self.net
        if slot == 0 or slot >= net.gst or net.wait_prob <= 0 or p in self.corrupt:
            return False
        return self.rng.random() < net.wait_prob

    # -- main loop ----------------------------------------------------------
    def inject(self, slot: int, tx: Transaction) -> None:
        self.schedule.setdefault(slot, []).append(tx)

    def advance_slot(self) -> None:
        slot = self.slot
        trace = self.trace
        due = self.inbox.pop(slot, {})
        fresh = self.schedule.get(slot, ())
        for tx in fresh:
            trace.injections.setdefault(tx.digest, (slot, tx))
        outgoing: list[Message] = []
        for node in self.nodes:
            p = node.name
            waiting = self._waits(p, slot)
            private = self.private_txs.pop((p, slot), [])
            if waiting:
                trace.waiting[p].append(slot)
                self.held[p].extend(due.get(p, ()))
                self.tx_backlog[p].extend(fresh)
                self.tx_backlog[p].extend(private)
                out = node.step(slot, True, [], [])
                continue
            msgs = self.held.pop(p, []) + due.get(p, [])
            txs = self.tx_backlog.pop(p, []) + list(fresh) + private
            if p in trace.correct:
                for tx in txs:
                    trace.first_receipt.setdefault(tx.digest, slot)
            out = node.step(slot, False, msgs, txs)
            if p in self.filters:
                out = self.filters[p](slot, out)
            out = [self._stamp(m, slot) for m in out]
            frags = getattr(node, "fragments", None)
            if frags and frags[-1].slot == slot:
                frags[-1] = replace(frags[-1], sent_msgs=tuple(out))
            if p in trace.correct:
                tx_bits = sum(tx.size_bits for tx in txs)
                fanout = len(self.nodes) - 1
                in_bits = sum(self.size_of(m) for m in msgs)
                cert_in = sum(getattr(m.body, "cert_bits", 0) for m in msgs)
                out_bits = cert_out = 0
                for m in out:
                    copies = fanout if m.receiver == GOSSIP else 1
                    out_bits += copies * self.size_of(m)
                    cert_out += copies * getattr(m.body, "cert_bits", 0)
                trace.bits[p].append((slot, tx_bits, in_bits, out_bits, cert_in, cert_out))
            outgoing.extend(out)
            log = node.log
            if log is not None and log is not self._last_log[p] and log != self._last_log[p]:
                self._last_log[p] = log
                trace.logs[p].append((slot, log))
        if self.coalition is not None:
            outgoing.extend(self.coalition(slot, self))
        for m in outgoing:
            self._schedule(m, slot)
        self.slot += 1

    def run(self, until: int | None = None) -> Trace:
        end = self.net.horizon if until is None else until
        while self.slot <= end:
            self.advance_slot()
        for node in self.nodes:
            frags = getattr(node, "fragments", None)
            if frags:
                self.trace.fragments[node.name] = frags
        return self.trace


def departure_durability(trace: Trace) -> list[str]:
    """Deliveries that missed ``max(send, GST) + δ`` for a recipient that was not waiting."""
    problems = []
    for d in trace.deliveries:
        deadline = trace.net.deadline(d.sent)
        if d.delivered > deadline or d.delivered < d.sent + 1:
            problems.append(f"{d.uid} to {d.receiver}: sent {d.sent}, delivered {d.delivered}")
    return problems
