from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from posc.ledger import (
    CompletionThreshold, DecodeError, InvalidEpochGenesis, StakeModel, Transaction, TxKind, UndefinedCompleted,
    UndefinedEpoch, UndefinedFinishers, UndefinedPrefix, UndefinedValidators, can_complete, completed, consistent,
    current_ids, decode_transaction, ep_prefix, epoch_of, extends, finish_tx, finishers, map_stake, payload_tx,
    quit_tx, start_tx, total_stake, transfer_payload, validators_of,
)

from bruteforce import exhaustive_ledger_check, exhaustive_order_check
from oracles import LedgerOracle, oracle_map_stake

THIRD = Fraction(1, 3)


def model(table, rho=THIRD, threshold=CompletionThreshold.STRICT_RHO):
    return StakeModel.from_table(table, rho, threshold)


@pytest.fixture
def abc():
    return model({"A": 1, "B": 1, "C": 1}).genesis()


t1, t2, t3 = (payload_tx("env", bytes([i])) for i in (1, 2, 3))


def test_extends_and_consistent_small_cases(abc):
    assert extends(abc, abc)
    assert extends(abc.extend([t1, t2]), abc.append(t1))
    assert not extends(abc.append(t1), abc.append(t2))
    assert consistent(abc.extend([t1, t2]), abc.extend([t1, t2]))
    assert not consistent(abc.extend([t1, t2]), abc.extend([t1, t3]))


def test_logs_over_different_genesis_never_extend(abc):
    other = model({"A": 2, "B": 1}).genesis()
    assert not extends(abc.append(t1), other)
    assert not consistent(abc, other)


def test_two_finishers_complete_epoch_one():
    g = model({"A": 1, "B": 1, "C": 1}).genesis()
    log = g.extend([finish_tx("A", 1), finish_tx("B", 1), t1])
    assert epoch_of(log) == 2
    assert log.prefix(2).completed and log.prefix(2).epoch == 1
    assert not log.prefix(1).completed
    assert ep_prefix(log, 1) == log.prefix(2)


def test_genesis_is_completed_epoch_zero(abc):
    assert epoch_of(abc) == 0
    assert completed(abc)
    assert epoch_of(abc.append(t1)) == 1
    assert ep_prefix(abc.append(t1), 0) == abc


def test_can_complete_threshold_cases(abc):
    one = abc.extend([t1, finish_tx("A", 1)])
    assert finishers(one) == {"A"} and not can_complete(one)
    two = one.append(finish_tx("B", 1))
    assert finishers(two) == {"A", "B"} and can_complete(two)
    assert not can_complete(abc.append(t1))


def test_quorum_threshold_needs_more_finishers():
    g = model({"A": 1, "B": 1, "C": 1}, Fraction(1, 4), CompletionThreshold.QUORUM_ONE_MINUS_RHO).genesis()
    log = g.extend([finish_tx("A", 1), finish_tx("B", 1)])
    assert not log.completed
    assert log.append(finish_tx("C", 1)).completed


def test_completed_log_extension_is_not_completed(abc):
    log = abc.extend([finish_tx("A", 1), finish_tx("B", 1)])
    assert log.completed
    assert not log.append(t1).completed


def test_validators_come_from_previous_completed_log():
    g = model({"A": 0, "B": 2, "C": 2}).genesis()
    assert validators_of(g.append(t1)) == {"B", "C"}


def test_validators_change_only_at_epoch_boundary(abc):
    move = payload_tx("A", transfer_payload("D", 1))
    log = abc.extend([move, finish_tx("A", 1), finish_tx("B", 1), t1])
    assert validators_of(log.prefix(2)) == {"A", "B", "C"}
    assert finishers(log.prefix(3)) == {"A", "B"}
    assert validators_of(log) == {"B", "C", "D"}


def test_current_ids_drop_zero_stake():
    assert current_ids(model({"A": 3, "B": 0}).genesis()) == {"A"}
    assert current_ids(model({"A": 1, "B": 1, "C": 1}).genesis()) == {"A", "B", "C"}


def test_finish_from_non_validator_or_wrong_epoch_is_ignored(abc):
    log = abc.extend([finish_tx("Z", 1), finish_tx("A", 2), finish_tx("A", 1), finish_tx("A", 1)])
    assert finishers(log) == {"A"}
    assert not log.completed


def test_duplicate_finishes_count_once():
    g = model({"A": 1, "B": 1, "C": 1}).genesis()
    assert finishers(g.extend([finish_tx("B", 1)] * 3)) == {"B"}


def test_early_finish_for_next_epoch_counts_once_it_starts(abc):
    log = abc.extend([finish_tx("A", 2), finish_tx("A", 1), finish_tx("B", 1), t1])
    assert log.epoch == 2
    assert finishers(log) == {"A"}


def test_undefined_cases(abc):
    with pytest.raises(UndefinedValidators):
        validators_of(abc)
    with pytest.raises(UndefinedFinishers):
        finishers(abc)
    with pytest.raises(UndefinedFinishers):
        can_complete(abc)
    with pytest.raises(UndefinedPrefix):
        ep_prefix(abc.append(t1), 1)
    stranger = model({"Q": 1}).genesis().append(t1)
    with pytest.raises(UndefinedEpoch):
        epoch_of(stranger, abc)
    with pytest.raises(UndefinedValidators):
        validators_of(stranger, abc)
    with pytest.raises(UndefinedCompleted):
        completed(stranger, abc)


def test_map_stake_consecutive_ranges():
    g = model({"A": 3, "B": 1}).genesis()
    assert map_stake(g) == {1: "A", 2: "A", 3: "A", 4: "B"}
    assert set(map_stake(model({"A": 5}).genesis()).values()) == {"A"}


def test_map_stake_requires_completed_log(abc):
    with pytest.raises(InvalidEpochGenesis):
        map_stake(abc.append(t1))


def test_unaffordable_transfer_is_a_no_op(abc):
    log = abc.append(payload_tx("A", transfer_payload("B", 2)))
    assert dict(log.stake_table) == {"A": 1, "B": 1, "C": 1}


def test_transaction_kind_invariants(abc):
    with pytest.raises(ValueError):
        Transaction("x", TxKind.START)
    with pytest.raises(ValueError):
        Transaction("x", TxKind.QUIT, log=abc)
    with pytest.raises(ValueError):
        Transaction("x", TxKind.FINISH, payload=b"p")
    assert payload_tx("a", b"z").encoded == payload_tx("a", b"z").encoded


def test_transaction_codec_round_trip(abc):
    log = abc.append(t1)
    for tx in (t1, finish_tx("A", 7), quit_tx(), start_tx(log), payload_tx("B", b"").signed(b"\x01" * 32)):
        back = decode_transaction(tx.encoded, {log.digest: log})
        assert back.encoded == tx.encoded
    with pytest.raises(DecodeError):
        decode_transaction(t1.encoded[:-1])
    with pytest.raises(DecodeError):
        decode_transaction(start_tx(log).encoded)


def test_log_encoding_starts_with_genesis_digest(abc):
    log = abc.extend([t1, t2])
    assert log.encode().startswith(abc.model.digest)
    assert log.digest != abc.extend([t2, t1]).digest


def test_exhaustive_ledger_against_oracle():
    assert exhaustive_ledger_check(max_len=4, max_total=3)["logs"] > 0


def test_exhaustive_order_against_oracle():
    assert exhaustive_order_check(max_len=3) > 0


# -- properties ----------------------------------------------------------------

IDS = ["A", "B", "C", "D"]
tx_strategy = st.one_of(
    st.tuples(st.just("finish"), st.sampled_from(IDS), st.integers(1, 4)),
    st.tuples(st.just("xfer"), st.sampled_from(IDS), st.sampled_from(IDS), st.integers(1, 3)),
    st.tuples(st.just("pay"), st.sampled_from(IDS), st.binary(max_size=2)),
)
table_strategy = st.dictionaries(st.sampled_from(IDS), st.integers(0, 4), min_size=1).filter(
    lambda t: sum(t.values()) > 0)


def to_tx(t):
    if t[0] == "finish":
        return finish_tx(t[1], t[2])
    if t[0] == "xfer":
        return payload_tx(t[1], transfer_payload(t[2], t[3]))
    return payload_tx(t[1], t[2])


@settings(max_examples=150, deadline=None)
@given(table_strategy, st.lists(tx_strategy, max_size=12), st.sampled_from([Fraction(1, 5), THIRD]))
def test_random_logs_match_oracle(table, seq, rho):
    log = model(table, rho).genesis().extend(map(to_tx, seq))
    oracle = LedgerOracle(table, rho, tuple(seq))
    total = sum(table.values())
    for k in range(len(seq) + 1):
        p = log.prefix(k)
        assert p.epoch == oracle.epoch(k)
        assert p.completed == oracle.completed(k)
        assert total_stake(p) == total
        assert len(current_ids(p)) <= total
        if k:
            assert p.validators == oracle.validators(k)


@settings(max_examples=100, deadline=None)
@given(table_strategy, st.lists(tx_strategy, max_size=12))
def test_epoch_structure_invariants(table, seq):
    log = model(table).genesis().extend(map(to_tx, seq))
    for e in range(log.epoch):
        q = ep_prefix(log, e)
        assert q.completed and q.epoch == e
        assert map_stake(q) == oracle_map_stake(dict(q.stake_table))
    per_epoch = {}
    for k in range(1, log.length + 1):
        p = log.prefix(k)
        assert per_epoch.setdefault(p.epoch, p.validators) == p.validators
        assert log.prefix(k - 1).epoch <= p.epoch <= log.prefix(k - 1).epoch + 1


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from([t1, t2, t3]), max_size=6), st.lists(st.sampled_from([t1, t2, t3]), max_size=6))
def test_consistent_iff_one_extends_other(xs, ys):
    g = model({"A": 1}).genesis()
    a, b = g.extend(xs), g.extend(ys)
    assert consistent(a, b) == (extends(a, b) or extends(b, a))
    assert a.common_prefix(b).length == next(
        (i for i in range(min(len(xs), len(ys))) if xs[i] is not ys[i]), min(len(xs), len(ys)))
