from dataclasses import replace
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from posc.adversary import SILENT, BehaviorSpec
from posc.harness import check_liveness, latencies, run_scenario
from posc.ledger import DecodeError, StakeModel, finish_tx, payload_tx, start_tx
from posc.permissioned import Message
from posc.refbft import (
    COMMIT, PROPOSE, TIMEOUT, VOTE1, VOTE2, RefBft, RefBftConfig, commit_notice, decode_refmsg, propose,
    ref_liveness_bound, safe_view_duration, timeout, vote,
)
from posc.scenario import PERMISSIONED, EnvTx, ScenarioConfig, ref_sweep
from posc.simnet import NetworkParams


@given(st.integers(1, 40), st.sampled_from([Fraction(1, 5), Fraction(1, 4), Fraction(3, 10)]))
def test_config_invariants(n, rho):
    cfg = RefBftConfig(n=n, rho=rho)
    assert n >= 3 * cfg.f + 1
    assert 2 * cfg.quorum - n >= cfg.f + 1
    assert cfg.leader(0) == 1 and cfg.leader(n) == 1 and cfg.leader(n - 1) == n


@pytest.mark.parametrize("kwargs", [dict(n=0), dict(n=4, delta_known=2, view_duration=11),
                                    dict(n=4, view_duration=2), dict(n=4, batch_size=0)])
def test_config_rejects_bad_values(kwargs):
    with pytest.raises(ValueError):
        RefBftConfig(**kwargs)


def test_liveness_bound_formula():
    assert ref_liveness_bound(RefBftConfig(n=5, rho=Fraction(1, 5), view_duration=20, delta_known=5)) == 60
    assert ref_liveness_bound(RefBftConfig(n=3, rho=Fraction(1, 5), view_duration=11)) == 22
    assert safe_view_duration(3) % 3 == 0 and safe_view_duration(3) > 6


def test_waiting_freezes_state():
    proto = RefBft(RefBftConfig(n=4))
    g = StakeModel.from_table({"a": 1}).genesis()
    s, _ = proto.transition(proto.initial_state(1), False, (), (start_tx(g),))
    s2, out = proto.transition(s, True, (Message(2, 1, timeout(0)),), (payload_tx("c", b"x"),))
    assert s2 is s and out == ()


def test_initial_state_ignores_everything_but_start():
    proto = RefBft(RefBftConfig(n=4))
    s0 = proto.initial_state(1)
    s1, out = proto.transition(s0, False, (Message(2, 1, timeout(0)),), (payload_tx("c", b"x"),))
    assert s1.log is None and out == ()


def test_transition_is_deterministic():
    proto = RefBft(RefBftConfig(n=4, accept_unsigned=True))
    g = StakeModel.from_table({"a": 1}).genesis()

    def drive():
        s, _ = proto.transition(proto.initial_state(1), False, (), (start_tx(g),))
        outs = []
        for k in range(30):
            s, out = proto.transition(s, False, (), (payload_tx("c", bytes([k])),) if k % 3 == 0 else ())
            outs.append(tuple(m.body.encode() for m in out))
        return s.digest(), outs

    assert drive() == drive()


def test_message_codec_round_trip():
    batch = (payload_tx("c", b"1"), finish_tx("v1", 2))
    parent = b"\x11" * 32
    for m in (propose(3, 2, parent, batch, -1), vote(1, 3, 2, b"\x22" * 32), vote(2, 3, 2, b"\x33" * 32),
              timeout(9), commit_notice(3, 2, parent, batch)):
        back = decode_refmsg(m.encode())
        assert back.encode() == m.encode() and back.kind == m.kind
    assert {m.kind for m in (propose(1, 0, parent, (), -1), timeout(0))} == {PROPOSE, TIMEOUT}
    assert VOTE1 != VOTE2 != COMMIT
    with pytest.raises(DecodeError):
        decode_refmsg(b"\x00garbage")


def _bare(n=4, gst=0, adversary=(), horizon=60, env=None):
    stake = tuple((f"v{k}", 1) for k in range(1, n + 1))
    env = env if env is not None else (EnvTx(0, "c1", "first"),)
    return ScenarioConfig(name="bare", mode=PERMISSIONED, stake=stake, rho=Fraction(1, 5),
                          network=NetworkParams(gst, 1, 1, horizon, "uniform"), adversary=adversary,
                          environment=env, checks=("consistency", "liveness"))


def test_all_correct_commit_within_one_view():
    cfg = _bare()
    res = run_scenario(cfg)
    assert res.passed
    tx = next(iter(res.trace.injections.values()))[1]
    for p in res.trace.correct:
        slot = next(s for s, l in res.trace.logs[p] if l.contains(tx))
        assert slot <= cfg.view_duration


def test_commits_survive_a_silent_first_leader():
    cfg = _bare(n=7, adversary=(("1", BehaviorSpec(SILENT)),), horizon=80,
                env=tuple(EnvTx(s, "c1", f"t{s}") for s in range(0, 40, 5)))
    res = run_scenario(cfg)
    assert res.passed
    assert all(res.trace.final_log(p).length >= 8 for p in res.trace.correct)


def test_adversarial_latency_within_advertised_bound():
    for seed in range(40):
        cfg = ref_sweep(seed)
        res = run_scenario(cfg)
        assert res.verdicts["consistency"]["pass"], seed
        assert check_liveness(res.trace, cfg.ell_value) == [], seed
        lats = latencies(res.trace)
        assert lats and max(lats) <= cfg.ell_value, seed


def test_rerun_is_identical():
    cfg = ref_sweep(5)
    a, b = run_scenario(cfg), run_scenario(replace(cfg))
    assert {p: [(s, l.digest) for s, l in v] for p, v in a.trace.logs.items()} == \
        {p: [(s, l.digest) for s, l in v] for p, v in b.trace.logs.items()}
