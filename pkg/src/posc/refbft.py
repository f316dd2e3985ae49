"""Rotating-leader two-phase BFT log replication.

Each height decides one batch.  The leader of view ``v`` is ``(v mod n) + 1``;
replicas vote in two phases and commit on ``n - f`` second-phase votes.  Views
change when ``n - f`` replicas report a timeout, or, with ``fast_commit``,
right after a commit, which makes latency depend only on actual delays.

Safety across views uses locks: a replica that casts a second-phase vote locks
the batch, and later only accepts that batch or one justified by a newer
first-phase quorum.  A leader that did not just see a commit waits ``2Δ``
before proposing so that any lock formed in the previous view reaches it.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .ledger import ByteReader, DecodeError, Log, Transaction, TxKind, _lp, decode_transaction
from .permissioned import Message, PermissionedProtocol, ProtocolState

PROPOSE, VOTE1, VOTE2, TIMEOUT, COMMIT = range(5)


@dataclass(frozen=True)
class RefBftConfig:
    n: int
    rho: Fraction = Fraction(1, 5)
    view_duration: int = 11
    batch_size: int = 32
    fast_commit: bool = False
    delta_known: int = 1
    accept_unsigned: bool = False

    def __post_init__(self):
        object.__setattr__(self, "rho", Fraction(self.rho))
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.delta_known < 1:
            raise ValueError("delta_known must be at least one slot")
        if self.view_duration % self.delta_known:
            raise ValueError("view_duration must be a multiple of delta_known")
        if self.view_duration <= 2 * self.delta_known:
            raise ValueError("view_duration must exceed 2 * delta_known")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    @property
    def f(self) -> int:
        # rho*n faults, capped at the largest f with n >= 3f + 1
        return min(int(self.rho * self.n), (self.n - 1) // 3)

    @property
    def quorum(self) -> int:
        return self.n - self.f

    @property
    def timeout_after(self) -> int:
        return self.view_duration - 2 * self.delta_known

    @property
    def leader_wait(self) -> int:
        return 2 * self.delta_known

    def leader(self, view: int) -> int:
        return (view % self.n) + 1


def ref_liveness_bound(cfg: RefBftConfig) -> int:
    return (cfg.f + 2) * cfg.view_duration


def safe_view_duration(delta_known: int) -> int:
    """Smallest view length for which ``ref_liveness_bound`` covers the worst case."""
    return 11 * delta_known


def batch_digest(height: int, parent: bytes, batch: Sequence[Transaction]) -> bytes:
    h = hashlib.sha256(b"BATCH" + struct.pack(">Q", height) + parent)
    for tx in batch:
        h.update(tx.digest)
    return h.digest()


@dataclass(frozen=True, eq=False)
class RefMsg:
    kind: int
    height: int = 0
    view: int = 0
    digest: bytes = b""
    parent: bytes = b""
    batch: tuple = ()
    valid_view: int = -1

    def encode(self) -> bytes:
        enc = self.__dict__.get("_enc")
        if enc is None:
            enc = (
                struct.pack(">BQQq", self.kind, self.height, self.view, self.valid_view)
                + _lp(self.digest) + _lp(self.parent)
                + struct.pack(">I", len(self.batch))
                + b"".join(_lp(tx.encoded) for tx in self.batch)
            )
            object.__setattr__(self, "_enc", enc)
        return enc

    @property
    def size_bits(self) -> int:
        return 8 * len(self.encode())

    def __eq__(self, other):
        return isinstance(other, RefMsg) and self.encode() == other.encode()

    def __hash__(self):
        return hash(self.encode())

    def __repr__(self):
        names = ["Propose", "Vote1", "Vote2", "Timeout", "Commit"]
        return f"{names[self.kind]}(h={self.height}, v={self.view}, {self.digest.hex()[:6]}, |b|={len(self.batch)})"

    @property
    def batch_id(self) -> bytes:
        return batch_digest(self.height, self.parent, self.batch)


def decode_refmsg(data: bytes) -> RefMsg:
    r = ByteReader(data)
    kind, height, view, valid_view = r.unpack(">BQQq")
    if kind > COMMIT:
        raise DecodeError(f"unknown message kind {kind}")
    digest, parent = r.lp(), r.lp()
    (count,) = r.unpack(">I")
    batch = tuple(decode_transaction(r.lp()) for _ in range(count))
    r.done()
    return RefMsg(kind, height, view, digest, parent, batch, valid_view)


def propose(height, view, parent, batch, valid_view) -> RefMsg:
    return RefMsg(PROPOSE, height, view, batch_digest(height, parent, batch), parent, tuple(batch), valid_view)


def vote(phase: int, height: int, view: int, digest: bytes) -> RefMsg:
    return RefMsg(VOTE1 if phase == 1 else VOTE2, height, view, digest)


def timeout(view: int) -> RefMsg:
    return RefMsg(TIMEOUT, 0, view)


def commit_notice(height, view, parent, batch) -> RefMsg:
    return RefMsg(COMMIT, height, view, batch_digest(height, parent, batch), parent, tuple(batch))


class RefBftState(ProtocolState):
    __slots__ = (
        "process", "log", "quit", "height", "view", "clock", "timeout_sent", "proposed", "lock", "valid",
        "voted1", "voted2", "height_view", "batches", "proposals", "votes", "timeouts", "notices", "pending",
    )

    def __init__(self, process: int):
        self.process = process
        self.log: Log | None = None
        self.quit = False
        self.height = 0
        self.view = 0
        self.clock = 0
        self.timeout_sent = -1
        self.proposed = -1          # last height proposed in the current view
        self.lock = None            # (view, digest)
        self.valid = None           # (view, digest)
        self.voted1 = (-1, -1)      # (height, view) of the last first-phase vote
        self.voted2 = (-1, -1)
        self.height_view = 0        # view in which the current height began
        self.batches: dict = {}     # digest -> (height, parent, batch)
        self.proposals: dict = {}   # (height, view) -> (digest, valid_view)
        self.votes: dict = {}       # (phase, height, view, digest) -> frozenset of senders
        self.timeouts: dict = {}    # view -> frozenset of senders
        self.notices: dict = {}     # (height, digest) -> frozenset of senders
        self.pending: dict = {}     # tx digest -> tx, FIFO

    def clone(self) -> "RefBftState":
        s = RefBftState.__new__(RefBftState)
        for k in RefBftState.__slots__:
            setattr(s, k, getattr(self, k))
        s.batches = dict(self.batches)
        s.proposals = dict(self.proposals)
        s.votes = dict(self.votes)
        s.timeouts = dict(self.timeouts)
        s.notices = dict(self.notices)
        s.pending = dict(self.pending)
        return s

    def digest(self) -> bytes:
        h = hashlib.sha256()
        h.update(repr((self.process, self.quit, self.height, self.view, self.clock, self.timeout_sent, self.proposed,
                       self.lock, self.valid, self.voted1, self.voted2, self.height_view)).encode())
        h.update(self.log.digest if self.log is not None else b"-")
        for d in sorted(self.batches):
            h.update(d)
        for k in sorted(self.proposals):
            h.update(repr((k, self.proposals[k])).encode())
        for k in sorted(self.votes):
            h.update(repr((k, sorted(self.votes[k]))).encode())
        for k in sorted(self.timeouts):
            h.update(repr((k, sorted(self.timeouts[k]))).encode())
        for k in sorted(self.notices):
            h.update(repr((k, sorted(self.notices[k]))).encode())
        for d in self.pending:
            h.update(d)
        return h.digest()

    def __repr__(self):
        return f"RefBftState(p={self.process}, h={self.height}, v={self.view}, log={self.log})"


class RefBft(PermissionedProtocol):
    """The reference protocol.  ``registry`` verifies transaction signatures."""

    def __init__(self, cfg: RefBftConfig, registry=None):
        self.cfg = cfg
        self.n = cfg.n
        self.rho = cfg.rho
        self.registry = registry
        self._tx_ok: dict[bytes, bool] = {}

    def initial_state(self, pid) -> RefBftState:
        return RefBftState(pid)

    # -- validation -------------------------------------------------------
    def tx_acceptable(self, tx: Transaction) -> bool:
        if tx.kind not in (TxKind.PAYLOAD, TxKind.FINISH):
            return False
        if self.cfg.accept_unsigned:
            return True
        ok = self._tx_ok.get(tx.digest)
        if ok is None:
            ok = self.registry is not None and self.registry.verify_tx(tx)
            self._tx_ok[tx.digest] = ok
        return ok

    def batch_acceptable(self, s: RefBftState, batch: Sequence[Transaction]) -> bool:
        if len(batch) > self.cfg.batch_size or len(set(batch)) != len(batch):
            return False
        return all(self.tx_acceptable(tx) and not s.log.contains(tx) for tx in batch)

    # -- transition -------------------------------------------------------
    def transition(self, state: RefBftState, waiting: bool, msgs_in, txs_in):
        if waiting or state.quit:
            return state, ()
        if state.log is None:
            start = next((tx for tx in txs_in if tx.is_start), None)
            if start is None:
                return state, ()
            s = state.clone()
            s.log = start.log
            return s, ()
        s = state.clone()
        out: list[Message] = []
        s.clock += 1
        for tx in txs_in:
            if tx.kind in (TxKind.PAYLOAD, TxKind.FINISH) and tx.digest not in s.pending and not s.log.contains(tx):
                s.pending[tx.digest] = tx
        for m in msgs_in:
            self._ingest(s, m.sender, m.body)
        self._progress(s, out)
        return s, tuple(out)

    def _ingest(self, s: RefBftState, sender: int, m: RefMsg) -> None:
        if not isinstance(m, RefMsg) or not (1 <= sender <= self.n):
            return
        if m.kind == TIMEOUT:
            if m.view >= s.view:
                s.timeouts[m.view] = s.timeouts.get(m.view, frozenset()) | {sender}
            return
        if m.height < s.height:
            return
        if m.kind == PROPOSE:
            if sender != self.cfg.leader(m.view) or m.digest != m.batch_id:
                return
            s.batches.setdefault(m.digest, (m.height, m.parent, m.batch))
            s.proposals.setdefault((m.height, m.view), (m.digest, m.valid_view))
        elif m.kind in (VOTE1, VOTE2):
            key = (1 if m.kind == VOTE1 else 2, m.height, m.view, m.digest)
            s.votes[key] = s.votes.get(key, frozenset()) | {sender}
        elif m.kind == COMMIT:
            if m.digest != m.batch_id:
                return
            s.batches.setdefault(m.digest, (m.height, m.parent, m.batch))
            key = (m.height, m.digest)
            s.notices[key] = s.notices.get(key, frozenset()) | {sender}

    def _broadcast(self, s: RefBftState, out: list, body: RefMsg) -> None:
        for q in range(1, self.n + 1):
            if q != s.process:
                out.append(Message(s.process, q, body))

    def _count(self, s, key) -> int:
        return len(s.votes.get(key, ()))

    def _enter_view(self, s: RefBftState, view: int) -> None:
        s.view = view
        s.clock = 0
        s.proposed = -1
        for v in [v for v in s.timeouts if v < view]:
            del s.timeouts[v]

    def _progress(self, s: RefBftState, out: list) -> None:
        cfg = self.cfg
        for _ in range(64):
            if self._try_commit(s, out):
                continue
            if self._sync_views(s, out):
                continue
            if self._try_propose(s, out):
                continue
            if self._try_vote(s, out):
                continue
            break

    def _try_commit(self, s: RefBftState, out: list) -> bool:
        q, f = self.cfg.quorum, self.cfg.f
        decided = None
        for (phase, h, w, d), voters in s.votes.items():
            if phase == 2 and h == s.height and len(voters) >= q and d in s.batches:
                decided = (w, d)
                break
        if decided is None:
            for (h, d), senders in s.notices.items():
                if h == s.height and len(senders) >= f + 1 and d in s.batches:
                    decided = (s.view, d)
                    break
        if decided is None:
            return False
        w, d = decided
        height, parent, batch = s.batches[d]
        if height != s.height or parent != s.log.digest:
            return False
        s.log = s.log.extend(batch)
        for tx in batch:
            s.pending.pop(tx.digest, None)
        self._broadcast(s, out, commit_notice(height, w, parent, batch))
        s.height += 1
        s.lock = None
        s.valid = None
        s.proposals = {k: v for k, v in s.proposals.items() if k[0] >= s.height}
        s.votes = {k: v for k, v in s.votes.items() if k[1] >= s.height}
        s.notices = {k: v for k, v in s.notices.items() if k[0] >= s.height}
        s.batches = {k: v for k, v in s.batches.items() if v[0] >= s.height}
        if self.cfg.fast_commit and w + 1 > s.view:
            self._enter_view(s, w + 1)
        s.height_view = s.view
        return True

    def _sync_views(self, s: RefBftState, out: list) -> bool:
        cfg = self.cfg
        best = None
        for v, senders in s.timeouts.items():
            if v >= s.view and len(senders) >= cfg.quorum and (best is None or v > best):
                best = v
        if best is not None:
            self._enter_view(s, best + 1)
            return True
        amplify = None
        for v, senders in s.timeouts.items():
            if v > s.timeout_sent and v >= s.view and len(senders) >= cfg.f + 1:
                amplify = v if amplify is None else max(amplify, v)
        if amplify is None and s.timeout_sent < s.view and s.clock >= cfg.timeout_after:
            amplify = s.view
        if amplify is not None:
            s.timeout_sent = amplify
            s.timeouts[amplify] = s.timeouts.get(amplify, frozenset()) | {s.process}
            self._broadcast(s, out, timeout(amplify))
            return True
        return False

    def _try_propose(self, s: RefBftState, out: list) -> bool:
        cfg = self.cfg
        if cfg.leader(s.view) != s.process or s.proposed >= s.height or s.timeout_sent >= s.view:
            return False
        if s.height_view < s.view - 1 and s.clock < cfg.leader_wait:
            return False
        if s.valid is not None and s.valid[1] in s.batches:
            vr, d = s.valid
            batch = s.batches[d][2]
        else:
            vr = -1
            batch = [tx for tx in s.pending.values() if self.tx_acceptable(tx)][: cfg.batch_size]
            if not batch and not cfg.fast_commit:
                return False
        msg = propose(s.height, s.view, s.log.digest, batch, vr)
        s.proposed = s.height
        s.batches.setdefault(msg.digest, (s.height, s.log.digest, msg.batch))
        s.proposals.setdefault((s.height, s.view), (msg.digest, vr))
        self._broadcast(s, out, msg)
        return True

    def _try_vote(self, s: RefBftState, out: list) -> bool:
        cfg = self.cfg
        q = cfg.quorum
        progressed = False
        for (phase, h, w, d), voters in s.votes.items():
            if phase == 1 and h == s.height and len(voters) >= q and d in s.batches:
                if s.valid is None or w > s.valid[0]:
                    s.valid = (w, d)
        if s.timeout_sent >= s.view:
            return False
        prop = s.proposals.get((s.height, s.view))
        if prop is None:
            return False
        d, vr = prop
        here = (s.height, s.view)
        if s.voted1 != here:
            _, parent, batch = s.batches[d]
            lock_ok = (
                s.lock is None or s.lock[1] == d
                or (s.lock[0] <= vr < s.view and self._count(s, (1, s.height, vr, d)) >= q)
            )
            if parent == s.log.digest and lock_ok and self.batch_acceptable(s, batch):
                s.voted1 = here
                s.votes[(1, s.height, s.view, d)] = s.votes.get((1, s.height, s.view, d), frozenset()) | {s.process}
                self._broadcast(s, out, vote(1, s.height, s.view, d))
                progressed = True
        if s.voted2 != here and s.voted1 == here and self._count(s, (1, s.height, s.view, d)) >= q:
            s.voted2 = here
            s.lock = (s.view, d)
            s.votes[(2, s.height, s.view, d)] = s.votes.get((2, s.height, s.view, d), frozenset()) | {s.process}
            self._broadcast(s, out, vote(2, s.height, s.view, d))
            progressed = True
        return progressed
