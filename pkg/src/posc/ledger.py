"""Logs, transactions and the stake bookkeeping derived from them.

A :class:`Log` is a genesis log followed by transactions.  Everything the
epoch machinery needs (epoch numbers, validator sets, completed prefixes,
finishers) is a pure function of a log's content and is computed once per
prefix, incrementally, as logs grow.
"""

from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Mapping, Sequence

ENCODING_VERSION = 1
TRANSFER_PREFIX = b"XFER\x00"


class LedgerError(Exception):
    pass


class DecodeError(LedgerError, ValueError):
    pass


class UndefinedEpoch(LedgerError):
    pass


class UndefinedValidators(LedgerError):
    pass


class UndefinedPrefix(LedgerError):
    pass


class UndefinedFinishers(LedgerError):
    pass


class UndefinedCompleted(LedgerError):
    pass


class InvalidEpochGenesis(LedgerError):
    pass


class TxKind(enum.IntEnum):
    PAYLOAD = 0
    FINISH = 1
    START = 2
    QUIT = 3


class CompletionThreshold(str, enum.Enum):
    STRICT_RHO = "StrictRho"
    QUORUM_ONE_MINUS_RHO = "QuorumOneMinusRho"


def _lp(data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + data


def id_key(identifier: str) -> bytes:
    """Canonical byte order used whenever identifiers are sorted."""
    return identifier.encode("utf-8")


def sorted_ids(ids: Iterable[str]) -> list[str]:
    return sorted(ids, key=id_key)


@dataclass(frozen=True, eq=False)
class Transaction:
    issuer: str
    kind: TxKind = TxKind.PAYLOAD
    payload: bytes = b""
    epoch: int = 0
    log: "Log | None" = None
    signature: bytes = b""

    def __post_init__(self):
        if self.kind == TxKind.START and self.log is None:
            raise ValueError("a start transaction carries a log")
        if self.kind != TxKind.START and self.log is not None:
            raise ValueError("only start transactions carry a log")
        if self.kind != TxKind.PAYLOAD and self.payload:
            raise ValueError("only payload transactions carry bytes")
        if self.kind != TxKind.FINISH and self.epoch:
            raise ValueError("only finish transactions carry an epoch")

    @cached_property
    def signing_bytes(self) -> bytes:
        log_ref = self.log.digest if self.log is not None else b""
        return (
            b"TX" + bytes([ENCODING_VERSION, int(self.kind)])
            + _lp(id_key(self.issuer))
            + struct.pack(">Q", self.epoch)
            + _lp(self.payload)
            + _lp(log_ref)
        )

    @cached_property
    def encoded(self) -> bytes:
        return self.signing_bytes + _lp(self.signature)

    @cached_property
    def digest(self) -> bytes:
        return hashlib.sha256(self.encoded).digest()

    @property
    def size_bits(self) -> int:
        return 8 * len(self.encoded)

    @property
    def is_start(self) -> bool:
        return self.kind == TxKind.START

    @property
    def is_quit(self) -> bool:
        return self.kind == TxKind.QUIT

    def signed(self, signature: bytes) -> "Transaction":
        return Transaction(self.issuer, self.kind, self.payload, self.epoch, self.log, signature)

    def __eq__(self, other):
        return isinstance(other, Transaction) and self.digest == other.digest

    def __hash__(self):
        return hash(self.digest)

    def __repr__(self):
        if self.kind == TxKind.FINISH:
            return f"Finish({self.epoch},{self.issuer})"
        if self.kind == TxKind.PAYLOAD:
            return f"Tx({self.issuer}:{self.payload[:16]!r})"
        return f"{self.kind.name.title()}({self.issuer})"

    def to_json(self) -> dict:
        out = {"issuer": self.issuer, "kind": self.kind.name}
        if self.payload:
            out["payload"] = self.payload.hex()
        if self.epoch:
            out["epoch"] = self.epoch
        if self.signature:
            out["sig"] = self.signature.hex()
        if self.log is not None:
            out["log"] = self.log.digest.hex()
        return out


class ByteReader:
    """Cursor over a byte string for the length-prefixed wire formats."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise DecodeError(f"truncated input at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def lp(self) -> bytes:
        (n,) = self.unpack(">I")
        return self.take(n)

    def done(self) -> None:
        if self.pos != len(self.data):
            raise DecodeError(f"{len(self.data) - self.pos} trailing bytes")


def read_transaction(r: ByteReader, logs: Mapping[bytes, "Log"] | None = None) -> Transaction:
    if r.take(2) != b"TX":
        raise DecodeError("not a transaction")
    ver, kind = r.unpack(">BB")
    if ver != ENCODING_VERSION:
        raise DecodeError(f"unsupported encoding version {ver}")
    try:
        kind = TxKind(kind)
    except ValueError:
        raise DecodeError(f"unknown transaction kind {kind}") from None
    issuer = r.lp().decode("utf-8")
    (epoch,) = r.unpack(">Q")
    payload = r.lp()
    log_ref = r.lp()
    sig = r.lp()
    log = None
    if log_ref:
        log = (logs or {}).get(log_ref)
        if log is None:
            raise DecodeError(f"unknown log {log_ref.hex()[:12]}")
    try:
        return Transaction(issuer, kind, payload, epoch, log, sig)
    except ValueError as exc:
        raise DecodeError(str(exc)) from None


def decode_transaction(data: bytes, logs: Mapping[bytes, "Log"] | None = None) -> Transaction:
    """Inverse of ``Transaction.encoded``; start transactions resolve their log through ``logs``."""
    r = ByteReader(data)
    tx = read_transaction(r, logs)
    r.done()
    return tx


def payload_tx(issuer: str, payload: bytes) -> Transaction:
    return Transaction(issuer, TxKind.PAYLOAD, payload)


def finish_tx(issuer: str, epoch: int) -> Transaction:
    return Transaction(issuer, TxKind.FINISH, epoch=epoch)


def start_tx(log: "Log", issuer: str = "env") -> Transaction:
    return Transaction(issuer, TxKind.START, log=log)


def quit_tx(issuer: str = "env") -> Transaction:
    return Transaction(issuer, TxKind.QUIT)


def transfer_payload(to: str, amount: int, nonce: int = 0) -> bytes:
    return TRANSFER_PREFIX + b"\x00".join([id_key(to), str(amount).encode(), str(nonce).encode()])


def parse_transfer(tx: Transaction) -> tuple[str, int] | None:
    if tx.kind != TxKind.PAYLOAD or not tx.payload.startswith(TRANSFER_PREFIX):
        return None
    parts = tx.payload[len(TRANSFER_PREFIX):].split(b"\x00")
    if len(parts) != 3:
        return None
    try:
        to, amount = parts[0].decode(), int(parts[1])
    except (UnicodeDecodeError, ValueError):
        return None
    if amount <= 0 or not to:
        return None
    return to, amount


@dataclass(frozen=True)
class StakeModel:
    """Initial stake table plus the rules that move stake along a log.

    Stake only moves through transfer payloads issued by the sender; a transfer
    the sender cannot cover is a no-op, so the total never changes.
    """

    initial: tuple[tuple[str, int], ...]
    rho: Fraction = Fraction(1, 5)
    threshold: CompletionThreshold = CompletionThreshold.STRICT_RHO
    label: str = "genesis"

    def __post_init__(self):
        table = dict(self.initial)
        if len(table) != len(self.initial):
            raise ValueError("duplicate identifier in stake table")
        if any(v < 0 for v in table.values()):
            raise ValueError("negative stake")
        if sum(table.values()) <= 0:
            raise ValueError("total stake must be positive")
        if not (0 <= self.rho < 1):
            raise ValueError("rho must lie in [0, 1)")
        normalized = tuple((k, table[k]) for k in sorted_ids(table) if table[k] > 0)
        object.__setattr__(self, "initial", normalized)
        object.__setattr__(self, "rho", Fraction(self.rho))
        object.__setattr__(self, "threshold", CompletionThreshold(self.threshold))

    @classmethod
    def from_table(cls, table: Mapping[str, int], rho=Fraction(1, 5), threshold=CompletionThreshold.STRICT_RHO,
                   label: str = "genesis") -> "StakeModel":
        return cls(tuple(table.items()), Fraction(rho), CompletionThreshold(threshold), label)

    @cached_property
    def total(self) -> int:
        return sum(v for _, v in self.initial)

    @cached_property
    def digest(self) -> bytes:
        h = hashlib.sha256(b"GENESIS" + bytes([ENCODING_VERSION]))
        h.update(_lp(self.label.encode()))
        for k, v in self.initial:
            h.update(_lp(id_key(k)) + struct.pack(">Q", v))
        h.update(_lp(f"{self.rho.numerator}/{self.rho.denominator}".encode()))
        h.update(_lp(self.threshold.value.encode()))
        return h.digest()

    def crosses_threshold(self, stake: int) -> bool:
        if self.threshold == CompletionThreshold.STRICT_RHO:
            return stake > self.rho * self.total
        return stake >= (1 - self.rho) * self.total

    def quorum_reached(self, stake: int) -> bool:
        return stake >= (1 - self.rho) * self.total

    def genesis(self) -> "Log":
        return Log(self, ())

    def stake(self, log: "Log", identifier: str) -> int:
        return log.stake_of(identifier)


@dataclass(frozen=True)
class _Prefix:
    epoch: int
    completed: bool
    can_complete: bool
    validators: frozenset | None
    finishers: frozenset
    stake: Mapping[str, int]
    size_bits: int


class _Analysis:
    """Append-only per-prefix facts, shared by every log along one chain."""

    def __init__(self, model: StakeModel):
        self.model = model
        genesis_stake = dict(model.initial)
        self.entries: list[Transaction] = []
        self.digests: list[bytes] = [model.digest]
        self.prefixes: list[_Prefix] = [
            _Prefix(0, True, False, None, frozenset(), genesis_stake, 0)
        ]
        self.completed_at: list[int] = [0]
        self.finish_issuers: dict[int, set] = {}
        self.position: dict[bytes, int] = {}

    def fork(self, length: int) -> "_Analysis":
        other = _Analysis.__new__(_Analysis)
        other.model = self.model
        other.entries = self.entries[:length]
        other.digests = self.digests[: length + 1]
        other.prefixes = self.prefixes[: length + 1]
        other.completed_at = [c for c in self.completed_at if c <= length]
        other.finish_issuers = {}
        other.position = {}
        for i, tx in enumerate(other.entries, 1):
            other.position.setdefault(tx.digest, i)
            if tx.kind == TxKind.FINISH:
                other.finish_issuers.setdefault(tx.epoch, set()).add(tx.issuer)
        return other

    def append(self, tx: Transaction) -> None:
        prev = self.prefixes[-1]
        epoch = prev.epoch + (1 if prev.completed else 0)
        if prev.completed:
            validators = frozenset(k for k, v in prev.stake.items() if v > 0)
        else:
            validators = prev.validators
        stake = prev.stake
        transfer = parse_transfer(tx)
        if transfer is not None:
            to, amount = transfer
            if stake.get(tx.issuer, 0) >= amount and to != tx.issuer:
                stake = dict(stake)
                stake[tx.issuer] -= amount
                stake[to] = stake.get(to, 0) + amount
                if stake[tx.issuer] == 0:
                    del stake[tx.issuer]
        if tx.kind == TxKind.FINISH:
            self.finish_issuers.setdefault(tx.epoch, set()).add(tx.issuer)
        issuers = self.finish_issuers.get(epoch, ())
        if prev.completed or (tx.kind == TxKind.FINISH and tx.epoch == epoch):
            finishers = frozenset(i for i in issuers if i in validators)
        else:
            finishers = prev.finishers
        base = self.prefixes[self.completed_at[epoch - 1]].stake
        can_complete = self.model.crosses_threshold(sum(base.get(i, 0) for i in finishers))
        completed = can_complete and not (prev.epoch == epoch and prev.can_complete)
        self.prefixes.append(_Prefix(epoch, completed, can_complete, validators, finishers, stake,
                                     prev.size_bits + tx.size_bits))
        self.entries.append(tx)
        self.position.setdefault(tx.digest, len(self.entries))
        self.digests.append(hashlib.sha256(self.digests[-1] + _lp(tx.encoded)).digest())
        if completed:
            self.completed_at.append(len(self.entries))


class Log:
    """Immutable log: a genesis stake model followed by transactions.

    Indexing follows the usual convention that ``log[1]`` is the first
    transaction after genesis.
    """

    __slots__ = ("model", "_length", "_analysis", "_hash")

    def __init__(self, model: StakeModel, entries: Sequence[Transaction] = (), _analysis: _Analysis | None = None,
                 _length: int | None = None):
        self.model = model
        if _analysis is None:
            _analysis = _Analysis(model)
            for tx in entries:
                _analysis.append(tx)
            _length = len(_analysis.entries)
        self._analysis = _analysis
        self._length = _length
        self._hash = None

    # -- structure -------------------------------------------------------
    @property
    def length(self) -> int:
        return self._length

    def __len__(self) -> int:
        return self._length

    @property
    def entries(self) -> tuple[Transaction, ...]:
        return tuple(self._analysis.entries[: self._length])

    def __getitem__(self, i: int) -> Transaction:
        if not 1 <= i <= self._length:
            raise IndexError(i)
        return self._analysis.entries[i - 1]

    def __iter__(self):
        return iter(self._analysis.entries[: self._length])

    @property
    def genesis(self) -> "Log":
        return self.prefix(0)

    @property
    def is_genesis(self) -> bool:
        return self._length == 0

    def prefix(self, length: int) -> "Log":
        if not 0 <= length <= self._length:
            raise IndexError(length)
        if length == self._length:
            return self
        return Log(self.model, _analysis=self._analysis, _length=length)

    @property
    def predecessor(self) -> "Log":
        if self._length == 0:
            raise LedgerError("genesis has no predecessor")
        return self.prefix(self._length - 1)

    def extend(self, txs: Iterable[Transaction]) -> "Log":
        txs = list(txs)
        if not txs:
            return self
        a = self._analysis
        end = self._length + len(txs)
        if len(a.entries) >= end and all(
            a.entries[self._length + i] == tx for i, tx in enumerate(txs)
        ):
            return Log(self.model, _analysis=a, _length=end)
        if len(a.entries) != self._length:
            a = a.fork(self._length)
        for tx in txs:
            a.append(tx)
        return Log(self.model, _analysis=a, _length=end)

    def append(self, tx: Transaction) -> "Log":
        return self.extend([tx])

    def contains(self, tx: Transaction) -> bool:
        pos = self._analysis.position.get(tx.digest)
        return pos is not None and pos <= self._length

    # -- identity --------------------------------------------------------
    @property
    def digest(self) -> bytes:
        return self._analysis.digests[self._length]

    def digest_at(self, length: int) -> bytes:
        return self._analysis.digests[length]

    def encode(self) -> bytes:
        """Canonical byte encoding: genesis digest then framed transactions."""
        return self.model.digest + b"".join(_lp(tx.encoded) for tx in self)

    def __eq__(self, other):
        return isinstance(other, Log) and self._length == other._length and self.digest == other.digest

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(self.digest)
        return self._hash

    def __repr__(self):
        return f"Log(len={self._length}, epoch={self.epoch}, {self.digest.hex()[:10]})"

    # -- ordering --------------------------------------------------------
    def extends(self, other: "Log") -> bool:
        if self.model.digest != other.model.digest or other._length > self._length:
            return False
        return self.digest_at(other._length) == other.digest

    def consistent_with(self, other: "Log") -> bool:
        return self.extends(other) or other.extends(self)

    def common_prefix(self, other: "Log") -> "Log":
        if self.model.digest != other.model.digest:
            raise LedgerError("logs have different genesis")
        lo, hi = 0, min(self._length, other._length)
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if self.digest_at(mid) == other.digest_at(mid):
                lo = mid
            else:
                hi = mid - 1
        return self.prefix(lo)

    # -- derived epoch structure ------------------------------------------
    def _info(self) -> _Prefix:
        return self._analysis.prefixes[self._length]

    @property
    def epoch(self) -> int:
        return self._info().epoch

    @property
    def completed(self) -> bool:
        return self._info().completed

    @property
    def can_complete(self) -> bool:
        if self._length == 0:
            raise UndefinedFinishers("genesis has no finishers")
        return self._info().can_complete

    @property
    def validators(self) -> frozenset:
        if self._length == 0:
            raise UndefinedValidators("genesis has no validators")
        return self._info().validators

    @property
    def finishers(self) -> frozenset:
        if self._length == 0:
            raise UndefinedFinishers("genesis has no finishers")
        return self._info().finishers

    @property
    def stake_table(self) -> Mapping[str, int]:
        return self._info().stake

    def stake_of(self, identifier: str) -> int:
        return self._info().stake.get(identifier, 0)

    @property
    def current_ids(self) -> frozenset:
        return frozenset(k for k, v in self._info().stake.items() if v > 0)

    def ep_prefix(self, e: int) -> "Log":
        if not 0 <= e < self.epoch:
            raise UndefinedPrefix(f"no completed prefix for epoch {e} in a log of epoch {self.epoch}")
        return self.prefix(self._analysis.completed_at[e])

    @property
    def epoch_genesis(self) -> "Log":
        """The completed log this log's epoch started from."""
        if self._length == 0:
            return self
        return self.ep_prefix(self.epoch - 1)

    def completed_prefix(self) -> "Log | None":
        """Completed prefix of this log's own epoch, if the log reaches it."""
        return self if self.completed else None

    def last_completed(self) -> "Log":
        """Longest completed prefix (genesis if nothing else completed)."""
        return self.prefix(self._analysis.completed_at[self.next_epoch - 1])

    @property
    def next_epoch(self) -> int:
        """Epoch a process holding this log should be running."""
        return self.epoch + (1 if self.completed else 0)

    def suffix_bits(self, start: int) -> int:
        """Encoded size of the entries after ``start``."""
        return self._info().size_bits - self._analysis.prefixes[start].size_bits

    @property
    def entries_after_genesis_of_epoch(self) -> int:
        return self._length - self.epoch_genesis.length

    def to_json(self) -> dict:
        return {"genesis": self.model.digest.hex(), "entries": [tx.to_json() for tx in self]}


# -- functional API ----------------------------------------------------------

def _check_genesis(l: Log, genesis: Log | None, exc: type[LedgerError]) -> None:
    if genesis is not None and not l.extends(genesis):
        raise exc("log does not extend the genesis")


def extends(a: Log, b: Log) -> bool:
    return a.extends(b)


def consistent(a: Log, b: Log) -> bool:
    return a.consistent_with(b)


def epoch_of(l: Log, genesis: Log | None = None) -> int:
    _check_genesis(l, genesis, UndefinedEpoch)
    return l.epoch


def validators_of(l: Log, genesis: Log | None = None) -> frozenset:
    _check_genesis(l, genesis, UndefinedValidators)
    return l.validators


def current_ids(l: Log) -> frozenset:
    return l.current_ids


def ep_prefix(l: Log, e: int) -> Log:
    return l.ep_prefix(e)


def finishers(l: Log) -> frozenset:
    return l.finishers


def can_complete(l: Log) -> bool:
    return l.can_complete


def completed(l: Log, genesis: Log | None = None) -> bool:
    _check_genesis(l, genesis, UndefinedCompleted)
    return l.completed


def map_stake(l: Log) -> dict[int, str]:
    """Assign permissioned-ids ``1..T`` to identifiers in proportion to stake.

    Identifiers are taken in canonical byte order and receive consecutive
    ranges, so every process derives the same map from the same log.
    """
    if not l.completed:
        raise InvalidEpochGenesis("stake can only be mapped from a completed log")
    out: dict[int, str] = {}
    nxt = 1
    table = l.stake_table
    for ident in sorted_ids(table):
        for _ in range(table[ident]):
            out[nxt] = ident
            nxt += 1
    return out


def total_stake(l: Log) -> int:
    return sum(l.stake_table.values())
