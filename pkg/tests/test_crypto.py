from dataclasses import replace
from fractions import Fraction

import pytest

from posc.crypto import (
    ED25519, Certificate, CryptoError, KeyRegistry, NotFullyCertified, NotInconsistent, UnknownKey, extract_guilt,
    is_certified, is_fully_certified, sign_log, verify_guilt, verify_log,
)
from posc.ledger import StakeModel, finish_tx, payload_tx


@pytest.fixture
def reg():
    r = KeyRegistry(seed=7)
    for i in "ABC":
        r.register(i, owner=f"p{i}")
    return r


@pytest.fixture
def genesis():
    return StakeModel.from_table({"A": 1, "B": 1, "C": 1}, Fraction(1, 3)).genesis()


def cert(reg, log, signers):
    return Certificate(log.digest, tuple(sign_log(reg, s, log) for s in signers))


def test_sign_verify_round_trip(reg, genesis):
    l1, l2 = genesis.append(payload_tx("x", b"1")), genesis.append(payload_tx("x", b"2"))
    sig = sign_log(reg, "A", l1)
    assert verify_log(reg, sig, l1, "A")
    assert not verify_log(reg, sig, l2, "A")
    assert not verify_log(reg, sig, l1, "B")


def test_forged_signature_fails(reg, genesis):
    log = genesis.append(payload_tx("x", b"1"))
    sig = sign_log(reg, "A", log)
    assert not verify_log(reg, replace(sig, value=bytes(32)), log)
    assert not verify_log(reg, replace(sig, signer="B"), log)
    assert (sig.signer, sig.digest) in reg.issued


def test_unknown_or_foreign_key(reg, genesis):
    with pytest.raises(UnknownKey):
        sign_log(reg, "Z", genesis)
    with pytest.raises(UnknownKey):
        sign_log(reg, "A", genesis, owner="pB")
    with pytest.raises(CryptoError):
        reg.register("A", owner="pB")


def test_keys_are_seed_deterministic(genesis):
    a, b, c = KeyRegistry(3), KeyRegistry(3), KeyRegistry(4)
    for r in (a, b, c):
        r.register("A")
    assert sign_log(a, "A", genesis) == sign_log(b, "A", genesis)
    assert sign_log(a, "A", genesis) != sign_log(c, "A", genesis)


def test_transaction_signatures(reg):
    tx = reg.sign_tx(payload_tx("A", b"hello"))
    assert reg.verify_tx(tx)
    assert not reg.verify_tx(payload_tx("A", b"hello"))
    assert not reg.verify_tx(payload_tx("A", b"other").signed(tx.signature))


def test_is_certified_threshold(reg, genesis):
    log = genesis.append(payload_tx("x", b"1"))
    assert is_certified(genesis, None, reg)
    assert is_certified(log, cert(reg, log, "AB"), reg)
    assert not is_certified(log, cert(reg, log, "A"), reg)
    assert not is_certified(log, None, reg)
    reg.register("Z")
    assert not is_certified(log, cert(reg, log, "ABZ"), reg)


def test_fully_certified_needs_every_epoch(reg, genesis):
    l1 = genesis.extend([finish_tx("A", 1), finish_tx("B", 1)])
    l2 = l1.append(payload_tx("x", b"2"))
    assert l2.epoch == 2
    certs = {1: cert(reg, l1, "ABC"), 2: cert(reg, l2, "AB")}
    assert is_fully_certified(genesis, {}, reg)
    assert is_fully_certified(l2, certs, reg)
    assert not is_fully_certified(l2, {2: certs[2]}, reg)


def test_extract_guilt_intersection(reg, genesis):
    l1, l2 = genesis.append(payload_tx("x", b"1")), genesis.append(payload_tx("x", b"2"))
    report = extract_guilt((l1, {1: cert(reg, l1, "AB")}), (l2, {1: cert(reg, l2, "BC")}), reg)
    assert report.culprits == {"B"} and report.stake_weight == 1 and report.epoch == 1
    assert verify_guilt(report, reg)
    full = extract_guilt((l1, {1: cert(reg, l1, "ABC")}), (l2, {1: cert(reg, l2, "ABC")}), reg)
    assert full.culprits == {"A", "B", "C"} and full.stake_weight == 3


def test_extract_guilt_preconditions(reg, genesis):
    l1 = genesis.append(payload_tx("x", b"1"))
    l2 = genesis.append(payload_tx("x", b"2"))
    with pytest.raises(NotInconsistent):
        extract_guilt((l1, {1: cert(reg, l1, "AB")}), (l1, {1: cert(reg, l1, "AB")}), reg)
    with pytest.raises(NotFullyCertified):
        extract_guilt((l1, {1: cert(reg, l1, "A")}), (l2, {1: cert(reg, l2, "BC")}), reg)


def test_guilt_located_in_later_epoch(reg, genesis):
    l1 = genesis.extend([finish_tx("A", 1), finish_tx("B", 1)])
    a, b = l1.append(payload_tx("x", b"a")), l1.append(payload_tx("x", b"b"))
    c1 = cert(reg, l1, "ABC")
    report = extract_guilt((a, {1: c1, 2: cert(reg, a, "AC")}), (b, {1: c1, 2: cert(reg, b, "BC")}), reg)
    assert report.epoch == 2 and report.culprits == {"C"}


def test_verify_guilt_rejects_tampered_evidence(reg, genesis):
    l1, l2 = genesis.append(payload_tx("x", b"1")), genesis.append(payload_tx("x", b"2"))
    report = extract_guilt((l1, {1: cert(reg, l1, "AB")}), (l2, {1: cert(reg, l2, "BC")}), reg)
    sa, sb = report.evidence["B"]
    forged = replace(report, evidence={"B": (sa, replace(sb, value=bytes(32)))})
    assert not verify_guilt(forged, reg)


def test_certificate_dedups_and_orders_signers(reg, genesis):
    log = genesis.append(payload_tx("x", b"1"))
    sa, sb = sign_log(reg, "A", log), sign_log(reg, "B", log)
    c = Certificate(log.digest, (sb, sa, sb))
    assert [s.signer for s in c.signatures] == ["A", "B"]
    assert Certificate.from_json(c.to_json()) == c


def test_ed25519_scheme(genesis):
    pytest.importorskip("cryptography")
    r = KeyRegistry(seed=1, scheme=ED25519)
    r.register("A")
    log = genesis.append(payload_tx("x", b"1"))
    sig = sign_log(r, "A", log)
    assert verify_log(r, sig, log, "A")
    assert not verify_log(r, replace(sig, value=bytes(64)), log, "A")
    assert sign_log(r, "A", log) == sig
