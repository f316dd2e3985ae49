"""Identifiers, signatures, certificates and proofs of guilt."""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .ledger import Log, sorted_ids

SIMULATED = "Simulated"
ED25519 = "Ed25519"


class CryptoError(Exception):
    pass


class UnknownKey(CryptoError):
    pass


class NotInconsistent(CryptoError):
    pass


class NotFullyCertified(CryptoError):
    pass


@dataclass(frozen=True)
class Identity:
    alias: str
    public_key: bytes


@dataclass(frozen=True)
class Signature:
    signer: str
    digest: bytes
    scheme: str
    value: bytes

    @property
    def size_bits(self) -> int:
        return 8 * (len(self.signer) + len(self.digest) + len(self.value) + 1)

    def to_json(self) -> dict:
        return {"signer": self.signer, "digest": self.digest.hex(), "scheme": self.scheme, "value": self.value.hex()}

    @classmethod
    def from_json(cls, d: dict) -> "Signature":
        return cls(d["signer"], bytes.fromhex(d["digest"]), d["scheme"], bytes.fromhex(d["value"]))


def log_message(log: Log) -> bytes:
    return b"POSC-LOG" + log.digest


class KeyRegistry:
    """Deterministic key material for every identifier in a run.

    Keys derive from the run seed, so a replay can rebuild the registry and
    re-verify every recorded signature.  Each identifier has one owner.
    """

    def __init__(self, seed: int | bytes = 0, scheme: str = SIMULATED):
        if scheme not in (SIMULATED, ED25519):
            raise ValueError(f"unknown signature scheme {scheme!r}")
        self.seed = seed if isinstance(seed, bytes) else str(seed).encode()
        self.scheme = scheme
        self._secret: dict[str, bytes] = {}
        self._owner: dict[str, object] = {}
        self._ed_keys: dict[str, object] = {}
        self._public: dict[str, bytes] = {}
        self.issued: set[tuple[str, bytes]] = set()

    def register(self, identifier: str, owner: object = None) -> Identity:
        if identifier in self._secret:
            if owner is not None and self._owner.get(identifier) not in (None, owner):
                raise CryptoError(f"{identifier} already owned by {self._owner[identifier]}")
            if owner is not None:
                self._owner[identifier] = owner
            return self.identity(identifier)
        secret = hashlib.sha256(b"posc-key" + self.seed + b"/" + identifier.encode()).digest()
        self._secret[identifier] = secret
        self._owner[identifier] = owner
        if self.scheme == ED25519:
            from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
            from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

            sk = Ed25519PrivateKey.from_private_bytes(secret)
            self._ed_keys[identifier] = sk
            self._public[identifier] = sk.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        else:
            self._public[identifier] = hashlib.sha256(b"pub" + secret).digest()
        return self.identity(identifier)

    def identity(self, identifier: str) -> Identity:
        if identifier not in self._public:
            raise UnknownKey(identifier)
        return Identity(identifier, self._public[identifier])

    def known(self, identifier: str) -> bool:
        return identifier in self._secret

    def owner(self, identifier: str) -> object:
        return self._owner.get(identifier)

    def identifiers(self) -> list[str]:
        return sorted_ids(self._secret)

    def sign(self, identifier: str, message: bytes, owner: object = None) -> Signature:
        if identifier not in self._secret:
            raise UnknownKey(identifier)
        if owner is not None and self._owner.get(identifier) not in (None, owner):
            raise UnknownKey(f"{owner} does not own {identifier}")
        digest = hashlib.sha256(message).digest()
        if self.scheme == ED25519:
            value = self._ed_keys[identifier].sign(digest)
        else:
            value = hmac.new(self._secret[identifier], digest, hashlib.sha256).digest()
        self.issued.add((identifier, digest))
        return Signature(identifier, digest, self.scheme, value)

    def verify(self, sig: Signature, message: bytes, identifier: str | None = None) -> bool:
        if identifier is not None and sig.signer != identifier:
            return False
        if sig.signer not in self._secret or sig.scheme != self.scheme:
            return False
        if hashlib.sha256(message).digest() != sig.digest:
            return False
        if self.scheme == ED25519:
            from cryptography.exceptions import InvalidSignature
            from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

            try:
                Ed25519PublicKey.from_public_bytes(self._public[sig.signer]).verify(sig.value, sig.digest)
            except InvalidSignature:
                return False
            return True
        expected = hmac.new(self._secret[sig.signer], sig.digest, hashlib.sha256).digest()
        return hmac.compare_digest(expected, sig.value)

    def sign_tx(self, tx, owner: object = None):
        return tx.signed(self.sign(tx.issuer, tx.signing_bytes, owner).value)

    def verify_tx(self, tx) -> bool:
        if not tx.signature or tx.issuer not in self._secret:
            return False
        digest = hashlib.sha256(tx.signing_bytes).digest()
        return self.verify(Signature(tx.issuer, digest, self.scheme, tx.signature), tx.signing_bytes)


def sign_log(registry: KeyRegistry, identifier: str, log: Log, owner: object = None) -> Signature:
    return registry.sign(identifier, log_message(log), owner)


def verify_log(registry: KeyRegistry, sig: Signature, log: Log, identifier: str | None = None) -> bool:
    return registry.verify(sig, log_message(log), identifier)


@dataclass(frozen=True)
class Certificate:
    subject: bytes
    signatures: tuple[Signature, ...] = ()

    def __post_init__(self):
        by_signer = {}
        for s in self.signatures:
            by_signer.setdefault(s.signer, s)
        ordered = tuple(by_signer[k] for k in sorted_ids(by_signer))
        object.__setattr__(self, "signatures", ordered)

    @property
    def signers(self) -> frozenset:
        return frozenset(s.signer for s in self.signatures)

    def signature_of(self, signer: str) -> Signature | None:
        for s in self.signatures:
            if s.signer == signer:
                return s
        return None

    def with_signature(self, sig: Signature) -> "Certificate":
        if sig.signer in self.signers:
            return self
        return Certificate(self.subject, self.signatures + (sig,))

    @property
    def size_bits(self) -> int:
        return 8 * len(self.subject) + sum(s.size_bits for s in self.signatures)

    def to_json(self) -> dict:
        return {"subject": self.subject.hex(), "signatures": [s.to_json() for s in self.signatures]}

    @classmethod
    def from_json(cls, d: dict) -> "Certificate":
        return cls(bytes.fromhex(d["subject"]), tuple(Signature.from_json(s) for s in d["signatures"]))


def certified_stake(log: Log, signers: Iterable[str]) -> int:
    base = log.epoch_genesis
    return sum(base.stake_of(s) for s in signers)


def valid_signers(log: Log, cert: Certificate, registry: KeyRegistry) -> frozenset:
    """Signers of ``cert`` that are validators of ``log`` with a verifying signature."""
    if cert.subject != log.digest or log.is_genesis:
        return frozenset()
    msg = log_message(log)
    vals = log.validators
    return frozenset(s.signer for s in cert.signatures if s.signer in vals and registry.verify(s, msg))


def is_certified(log: Log, cert: Certificate | None, registry: KeyRegistry) -> bool:
    if log.is_genesis:
        return True
    if cert is None or cert.subject != log.digest:
        return False
    if not cert.signers <= log.validators:
        return False
    msg = log_message(log)
    if not all(registry.verify(s, msg) for s in cert.signatures):
        return False
    return log.model.quorum_reached(certified_stake(log, cert.signers))


def is_fully_certified(log: Log, certs: Mapping[int, Certificate], registry: KeyRegistry) -> bool:
    if log.is_genesis:
        return True
    for e in range(1, log.epoch):
        if not is_certified(log.ep_prefix(e), certs.get(e), registry):
            return False
    return is_certified(log, certs.get(log.epoch), registry)


@dataclass(frozen=True)
class GuiltReport:
    culprits: frozenset
    evidence: Mapping[str, tuple[Signature, Signature]]
    stake_weight: int
    epoch: int
    logs: tuple[Log, Log] = field(repr=False, default=None)

    def to_json(self) -> dict:
        return {
            "culprits": sorted_ids(self.culprits),
            "stake_weight": self.stake_weight,
            "epoch": self.epoch,
            "evidence": {k: [a.to_json(), b.to_json()] for k, (a, b) in sorted(self.evidence.items())},
        }


def divergence_logs(log_a: Log, log_b: Log) -> tuple[Log, Log, int]:
    """Same-epoch conflicting logs that a pair of inconsistent logs commits to.

    Starting from their longest common prefix, the first differing entries
    fix an epoch; each side is cut back to that epoch (or kept whole if it
    never left it).
    """
    common = log_a.common_prefix(log_b)
    e = common.next_epoch
    star_a = log_a if log_a.epoch == e else log_a.ep_prefix(e)
    star_b = log_b if log_b.epoch == e else log_b.ep_prefix(e)
    return star_a, star_b, e


def extract_guilt(evidence_a: tuple[Log, Mapping[int, Certificate]],
                  evidence_b: tuple[Log, Mapping[int, Certificate]],
                  registry: KeyRegistry) -> GuiltReport:
    log_a, certs_a = evidence_a
    log_b, certs_b = evidence_b
    if log_a.consistent_with(log_b):
        raise NotInconsistent("logs are consistent")
    if not is_fully_certified(log_a, certs_a, registry) or not is_fully_certified(log_b, certs_b, registry):
        raise NotFullyCertified("both logs must be fully certified")
    star_a, star_b, e = divergence_logs(log_a, log_b)
    cert_a, cert_b = certs_a[e], certs_b[e]
    both = valid_signers(star_a, cert_a, registry) & valid_signers(star_b, cert_b, registry)
    evidence = {s: (cert_a.signature_of(s), cert_b.signature_of(s)) for s in sorted_ids(both)}
    base = star_a.epoch_genesis
    stake = sum(base.stake_of(s) for s in both)
    return GuiltReport(frozenset(both), evidence, stake, e, (star_a, star_b))


def verify_guilt(report: GuiltReport, registry: KeyRegistry) -> bool:
    """Check that every evidence pair is two genuine signatures over conflicting same-epoch logs."""
    star_a, star_b = report.logs
    if star_a.consistent_with(star_b) or star_a.epoch != star_b.epoch:
        return False
    if star_a.validators != star_b.validators:
        return False
    for culprit, (sa, sb) in report.evidence.items():
        if not (verify_log(registry, sa, star_a, culprit) and verify_log(registry, sb, star_b, culprit)):
            return False
    return set(report.evidence) == set(report.culprits)
