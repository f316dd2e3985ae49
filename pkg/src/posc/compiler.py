"""Proof-of-stake wrapper around a permissioned protocol.

Every epoch runs a fresh instance of the permissioned protocol among ``T``
virtual processes, one per unit of stake under the epoch's genesis.  A
process simulates the virtual processes mapped to identifiers it owns,
signs the logs they output, and adopts the longest log it has seen
certified by validators holding ``(1 - rho) T`` stake.  A validator gossips
a FINISH transaction ``ell + Δ`` local slots after entering an epoch; once
enough FINISH stake is ordered, the completed prefix becomes the next
epoch's genesis and the old instance is told to quit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Iterable

from .crypto import Certificate, KeyRegistry, Signature, log_message
from .ledger import Log, Transaction, TxKind, _lp, finish_tx, map_stake, quit_tx, sorted_ids, start_tx
from .permissioned import GOSSIP, Message, PermissionedProtocol, quit_enhance
from .simnet import Node, Trace

INNER, LOG_SIGNATURE, CERTIFIED_LOG, FINISH_TX, DEPARTURE = "Inner", "LogSignature", "CertifiedLog", "FinishTx", "Departure"


class NotCompleted(Exception):
    pass


class StaleGenesis(Exception):
    pass


@dataclass(frozen=True)
class EpochParams:
    ell: int
    delta_known: int

    def __post_init__(self):
        if self.ell < 1 or self.delta_known < 1:
            raise ValueError("ell and delta_known must be positive")

    @property
    def epoch_duration(self) -> int:
        return self.ell + self.delta_known


@dataclass(frozen=True, eq=False)
class Envelope:
    """Wire payload between compiled processes.

    ``size_bits`` counts what a receiver could not reconstruct itself: the
    log suffix since the epoch genesis rather than the full history.
    """

    kind: str
    epoch: int = 0
    src: int = 0
    dst: int = 0
    inner: object = None
    log: Log | None = None
    signatures: tuple = ()
    certs: tuple = ()        # ((epoch, Certificate), ...)
    tx: Transaction | None = None
    known_prefix: int = 0    # receivers already hold this many entries of ``log`` from this sender

    @property
    def cert_bits(self) -> int:
        """The share of ``size_bits`` spent on signatures and epoch-ending transactions."""
        if self.kind == INNER:
            batch = getattr(self.inner, "batch", None) or ()
            return sum(tx.size_bits for tx in batch if tx.kind == TxKind.FINISH)
        if self.kind == FINISH_TX:
            return self.tx.size_bits
        return sum(s.size_bits for s in self.signatures) + sum(c.size_bits for _, c in self.certs)

    def encode(self) -> bytes:
        enc = self.__dict__.get("_enc")
        if enc is not None:
            return enc
        head = self.kind.encode() + struct.pack(">QII", self.epoch, self.src, self.dst)
        if self.kind == INNER:
            body = self.inner.encode()
        elif self.kind == FINISH_TX:
            body = self.tx.encoded
        else:
            body = self.log.encode() + b"".join(_lp(s.signer.encode()) + s.digest + s.value for s in self.signatures)
            for e, c in self.certs:
                body += struct.pack(">Q", e) + c.subject + b"".join(
                    _lp(s.signer.encode()) + s.value for s in c.signatures)
        enc = head + body
        object.__setattr__(self, "_enc", enc)
        return enc

    @property
    def size_bits(self) -> int:
        bits = self.__dict__.get("_bits")
        if bits is None:
            head = 8 * (len(self.kind) + 16)
            if self.kind == INNER:
                bits = head + self.inner.size_bits
            elif self.kind == FINISH_TX:
                bits = head + self.tx.size_bits
            else:
                start = max(self.log.epoch_genesis.length, self.known_prefix)
                bits = head + 256 + self.log.suffix_bits(start) + sum(s.size_bits for s in self.signatures)
                bits += sum(64 + c.size_bits for _, c in self.certs)
            object.__setattr__(self, "_bits", bits)
        return bits

    def __repr__(self):
        if self.kind == INNER:
            return f"Inner(e={self.epoch}, {self.src}->{self.dst}, {self.inner!r})"
        if self.kind == FINISH_TX:
            return f"FinishTx({self.tx!r})"
        return f"{self.kind}(e={self.epoch}, len={self.log.length}, sigs={len(self.signatures)}, certs={len(self.certs)})"


class CompilerNode(Node):
    """One compiled process.  ``make_protocol(epoch_genesis)`` builds the epoch's instance."""

    def __init__(self, name, owned: Iterable[str], registry: KeyRegistry, params: EpochParams, genesis: Log,
                 make_protocol: Callable[[Log], PermissionedProtocol]):
        self.name = name
        self.owned = frozenset(owned)
        self.registry = registry
        self.params = params
        self.genesis = genesis
        self.make_protocol = make_protocol
        self.trace: Trace | None = None
        self._log = genesis
        self.certs_of_log: dict[int, Certificate] = {}
        self.epoch = 0
        self.epoch_genesis: Log | None = None
        self.proto = None
        self.id_map: dict[int, str] = {}
        self.machines: dict[int, object] = {}
        self.machine_inbox: dict[int, list[Message]] = {}
        self.loopback: dict[int, list[Message]] = {}
        self.fresh_txs: list[Transaction] = []
        self.clock = 0
        self.entered_at = 0
        self.finished = False
        self.validating: list[str] = []
        self.mempool: dict[bytes, Transaction] = {}
        self.last_signed: dict[int, Log] = {}
        self.seen_logs: dict[bytes, Log] = {}
        self.signatures: dict[bytes, dict[str, Signature]] = {}
        self.cert_store: dict[bytes, Certificate] = {}
        self.candidates: dict[bytes, Log] = {}
        self.future: list[Envelope] = []
        self.dropped_stale = 0
        self.outbox: list[Message] = []
        self.slot = 0

    def bind(self, trace: Trace) -> None:
        self.trace = trace
        trace.epochs.setdefault(self.name, [])
        trace.certs.setdefault(self.name, [])

    @property
    def log(self) -> Log:
        return self._log

    # -- helpers --------------------------------------------------------------
    def _send(self, receiver, body: Envelope) -> None:
        self.outbox.append(Message(self.name, receiver, body))

    def _owner(self, identifier: str):
        return self.registry.owner(identifier)

    def _record_epoch(self) -> None:
        if self.trace is not None:
            self.trace.epochs[self.name].append((self.slot, self.epoch, bool(self.validating)))

    # -- epoch lifecycle ------------------------------------------------------
    def start_simulation(self, epoch_genesis: Log) -> None:
        if not epoch_genesis.completed:
            raise NotCompleted("epoch genesis must be a completed log")
        if not epoch_genesis.consistent_with(self._log):
            raise StaleGenesis("epoch genesis conflicts with the local log")
        self.epoch = epoch_genesis.next_epoch
        self.epoch_genesis = epoch_genesis
        self.id_map = map_stake(epoch_genesis)
        self.proto = quit_enhance(self.make_protocol(epoch_genesis))
        self.machines = {}
        self.machine_inbox = {}
        self.loopback = {}
        mine = [x for x in sorted(self.id_map) if self.id_map[x] in self.owned]
        start = start_tx(epoch_genesis)
        for x in mine:
            state, out = self.proto.transition(self.proto.initial_state(x), False, (), (start,))
            self.machines[x] = state
            self._route_inner(x, out)
        self.validating = sorted_ids({self.id_map[x] for x in mine})
        self.clock = 0
        self.entered_at = self.slot
        self.finished = False
        for tx in [tx for tx in self.mempool.values() if tx.kind == TxKind.FINISH and tx.epoch < self.epoch]:
            del self.mempool[tx.digest]
        self.fresh_txs = list(self.mempool.values())
        pending, self.future = self.future, []
        for env in pending:
            self._on_inner(env)
        self._record_epoch()

    def maybe_advance_epoch(self) -> None:
        while self._log.next_epoch > self.epoch:
            if self.proto is not None:
                q = quit_tx()
                for x in list(self.machines):
                    self.machines[x], _ = self.proto.transition(self.machines[x], False, (), (q,))
            self.machines = {}
            self.id_map = {}
            # the log body already reached everyone through signature deltas; only certificates are new
            self._send(GOSSIP, Envelope(DEPARTURE, self.epoch, log=self._log,
                                        certs=self._departure_certs(),
                                        known_prefix=self._log.length))
            for tx in [tx for tx in self.mempool.values() if self._log.contains(tx)]:
                del self.mempool[tx.digest]
            self.start_simulation(self._log.last_completed())

    def _departure_certs(self) -> tuple:
        # earlier epochs' certificates went out with earlier departures
        e = self._log.epoch
        c = self.certs_of_log.get(e)
        return ((e, c),) if c is not None else tuple(sorted(self.certs_of_log.items()))

    # -- inbound --------------------------------------------------------------
    def _on_inner(self, env: Envelope) -> None:
        if env.epoch < self.epoch:
            self.dropped_stale += 1
        elif env.epoch > self.epoch:
            self.future.append(env)
        elif env.dst in self.machines:
            self.machine_inbox.setdefault(env.dst, []).append(Message(env.src, env.dst, env.inner))

    def _add_tx(self, tx: Transaction) -> None:
        if tx.digest in self.mempool or self._log.contains(tx):
            return
        if tx.kind == TxKind.FINISH and tx.epoch < self.epoch:
            return
        self.mempool[tx.digest] = tx
        self.fresh_txs.append(tx)

    def _on_signatures(self, log: Log, sigs: Iterable[Signature]) -> None:
        if log.is_genesis or (log.length <= self._log.length and self._log.extends(log)):
            return
        d = log.digest
        self.seen_logs.setdefault(d, log)
        have = self.signatures.setdefault(d, {})
        vals = log.validators
        msg = None
        for s in sigs:
            if s.signer in have or s.signer not in vals:
                continue
            if msg is None:
                msg = log_message(log)
            if self.registry.verify(s, msg):
                have[s.signer] = s
        if d not in self.cert_store:
            base = log.epoch_genesis
            if log.model.quorum_reached(sum(base.stake_of(i) for i in have)):
                self.cert_store[d] = Certificate(d, tuple(have.values()))
                self.candidates[d] = log

    def _on_certified(self, env: Envelope) -> None:
        log = env.log
        certs = dict(env.certs)
        for e in range(1, log.epoch + 1):
            sub = log if e == log.epoch else log.ep_prefix(e)
            c = certs.get(e)
            if c is not None and c.subject == sub.digest:
                self._on_signatures(sub, c.signatures)

    # -- adoption ---------------------------------------------------------------
    def _full_certs(self, log: Log) -> dict[int, Certificate] | None:
        out = {}
        for e in range(1, log.epoch):
            c = self.cert_store.get(log.ep_prefix(e).digest)
            if c is None:
                return None
            out[e] = c
        c = self.cert_store.get(log.digest)
        if c is None:
            return None
        out[log.epoch] = c
        return out

    def adopt(self) -> bool:
        """Adopt the longest fully certified log extending the local one (ties: smaller digest)."""
        best = None
        best_certs = None
        for d, cand in list(self.candidates.items()):
            if cand.length <= self._log.length or not cand.extends(self._log):
                del self.candidates[d]
                continue
            certs = self._full_certs(cand)
            if certs is None:
                continue
            if best is None or cand.length > best.length or (cand.length == best.length and d < best.digest):
                best, best_certs = cand, certs
        if best is None:
            return False
        self._log = best
        self.certs_of_log = best_certs
        del self.candidates[best.digest]
        for tx in [tx for tx in self.mempool.values() if best.contains(tx)]:
            del self.mempool[tx.digest]
        if self.trace is not None:
            self.trace.certs[self.name].append((self.slot, best, best_certs))
        return True

    def _adopt_and_advance(self) -> None:
        while self.adopt():
            pass
        self.maybe_advance_epoch()

    # -- outbound ---------------------------------------------------------------
    def _route_inner(self, src: int, out) -> None:
        for m in out:
            dst = m.receiver
            ident = self.id_map.get(dst)
            if ident is None:
                continue
            if ident in self.owned:
                self.loopback.setdefault(dst, []).append(Message(src, dst, m.body))
            else:
                self._send(self._owner(ident), Envelope(INNER, self.epoch, src, dst, inner=m.body))

    def _sign_output(self, produced: Log) -> None:
        if not self.validating or produced is None:
            return
        e = self.epoch
        if produced.epoch > e:
            produced = produced.ep_prefix(e)
        if produced.length <= self.epoch_genesis.length:
            return
        prev = self.last_signed.get(e)
        if prev is not None and (produced.length <= prev.length or not produced.extends(prev)):
            return
        self.last_signed[e] = produced
        msg = log_message(produced)
        sigs = tuple(self.registry.sign(i, msg, self.name) for i in self.validating)
        known = prev.length if prev is not None else 0
        self._send(GOSSIP, Envelope(LOG_SIGNATURE, e, log=produced, signatures=sigs, known_prefix=known))
        self._on_signatures(produced, sigs)

    def issue_finish(self) -> None:
        if self.finished or not self.validating:
            return
        self.finished = True
        for ident in self.validating:
            tx = self.registry.sign_tx(finish_tx(ident, self.epoch), self.name)
            self._send(GOSSIP, Envelope(FINISH_TX, self.epoch, tx=tx))
            self._add_tx(tx)
            if self.trace is not None:
                self.trace.finishes.append((self.name, self.slot, self.epoch, self.entered_at, self.clock))

    # -- the slot transition ----------------------------------------------------
    def step(self, slot, waiting, msgs, txs):
        self.slot = slot
        self.outbox = []
        if slot == 0 and self.proto is None:
            self.start_simulation(self.genesis)
        if waiting:
            return []
        if self.entered_at < slot:
            self.clock += 1
        for tx in txs:
            if tx.kind in (TxKind.PAYLOAD, TxKind.FINISH):
                self._add_tx(tx)
        for m in msgs:
            env = m.body
            if not isinstance(env, Envelope):
                continue
            if env.kind == INNER:
                self._on_inner(env)
            elif env.kind == LOG_SIGNATURE:
                self._on_signatures(env.log, env.signatures)
            elif env.kind in (CERTIFIED_LOG, DEPARTURE):
                self._on_certified(env)
            elif env.kind == FINISH_TX and env.tx is not None and env.tx.kind == TxKind.FINISH:
                if self.registry.verify_tx(env.tx):
                    self._add_tx(env.tx)
        self._adopt_and_advance()
        if self.clock >= self.params.epoch_duration:
            self.issue_finish()
        self._run_machines()
        self._adopt_and_advance()
        return self.outbox

    def _run_machines(self) -> None:
        if self.entered_at == self.slot:
            return  # machines received their start transaction this slot
        fresh, self.fresh_txs = tuple(self.fresh_txs), []
        inbox, self.machine_inbox = self.machine_inbox, {}
        loop, self.loopback = self.loopback, {}
        for x in sorted(self.machines):
            msgs = loop.get(x, []) + inbox.get(x, [])
            before = self.machines[x]
            state, out = self.proto.transition(before, False, msgs, fresh)
            self.machines[x] = state
            self._route_inner(x, out)
            if state.log is not None and (before.log is None or state.log.length != before.log.length):
                self._sign_output(state.log)
