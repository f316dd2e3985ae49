import math
from dataclasses import replace

import pytest

from posc.crypto import GuiltReport, KeyRegistry
from posc.harness import (
    AllTransactionsSigned, InsufficientRuns, LogSetProperty, NotComposable, NoViolation, ScopeError,
    check_accountability, check_composable_safety, check_consistency, check_epoch_overlap, check_liveness,
    check_responsiveness, composability_self_check, measure_complexity, run_scenario,
)
from posc.ledger import StakeModel, payload_tx
from posc.scenario import (
    PERMISSIONED, ScenarioConfig, accountability_scenario, complexity_scenario, consistency_sweep,
    responsiveness_scenario, smoke_scenario,
)
from posc.simnet import NetworkParams, Trace

G = StakeModel.from_table({"a": 1, "b": 1}).genesis()
T1, T2, T3 = (payload_tx("c", s) for s in (b"1", b"2", b"3"))


def synthetic(logs, gst=0, horizon=40, correct=None, injections=()):
    procs = sorted(logs)
    tr = Trace(procs, frozenset(correct if correct is not None else procs), NetworkParams(gst, 1, 1, horizon), G,
               logs=logs)
    for slot, tx in injections:
        tr.injections[tx.digest] = (slot, tx)
        tr.first_receipt[tx.digest] = slot
    return tr


def test_rollback_is_reported():
    tr = synthetic({"p": [(1, G.extend([T1, T2])), (3, G.append(T1))], "q": []})
    assert {v.clause for v in check_consistency(tr)} >= {"NoRollbacks"}


def test_divergence_is_reported_at_first_conflicting_slot():
    tr = synthetic({"p": [(2, G.append(T1))], "q": [(5, G.append(T2))]})
    (v,) = check_consistency(tr)
    assert v.clause == "NoDivergence" and v.slot == 5
    ok = synthetic({"p": [(2, G.append(T1))], "q": [(5, G.extend([T1, T3]))]})
    assert check_consistency(ok) == []


def test_compiled_liveness_bound():
    cfg = ScenarioConfig(network=NetworkParams(0, 10, 10, 100), ell=30)
    assert cfg.ell_star == 80 and cfg.epoch_duration == 40


def test_pre_gst_transaction_due_by_gst_plus_bound():
    on_time = synthetic({"p": [(30, G.append(T1))]}, gst=20, injections=[(5, T1)])
    assert check_liveness(on_time, 10) == []
    late = synthetic({"p": [(31, G.append(T1))]}, gst=20, injections=[(5, T1)])
    (v,) = check_liveness(late, 10)
    assert v.slot == 30
    # a deadline past the horizon is not judged
    assert check_liveness(synthetic({"p": []}, gst=20, horizon=29, injections=[(5, T1)]), 10) == []


@pytest.mark.parametrize("delta_actual,bound", [(1, 14), (2, 28)])
def test_responsiveness_bound(delta_actual, bound):
    res = run_scenario(responsiveness_scenario(0, delta_actual=delta_actual, horizon=90))
    v = res.verdicts["responsiveness"]
    assert v["bound"] == bound and v["pass"] and v["max_latency"] <= bound


def test_responsiveness_out_of_scope_with_faults():
    tr = synthetic({"p": [], "q": []}, correct={"p"})
    with pytest.raises(ScopeError):
        check_responsiveness(tr, 6)


def test_under_threshold_run_has_no_violation():
    cfg = replace(consistency_sweep(1, n=4), checks=("accountability",))
    res = run_scenario(cfg)
    assert not res.verdicts["accountability"]["divergent"]
    acc = check_accountability(res.trace, res.assembled.registry, cfg.rho, cfg.owned())
    assert acc.result == NoViolation() and acc.ok


def test_double_sign_at_smallest_total_blames_one_unit():
    cfg = accountability_scenario(0)
    assert cfg.total == 3 and (1 - 2 * cfg.rho) * cfg.total == 1
    res = run_scenario(cfg)
    acc = check_accountability(res.trace, res.assembled.registry, cfg.rho, cfg.owned())
    assert isinstance(acc.result, GuiltReport) and acc.ok
    assert acc.result.stake_weight >= 1


def test_unsigned_log_set_fails_signature_property():
    reg = KeyRegistry(0)
    reg.register("c", owner="client")
    signed = G.append(reg.sign_tx(payload_tx("c", b"ok"), "client"))
    prop = AllTransactionsSigned(reg)
    assert prop.holds([signed])
    assert not prop.holds([signed, G.append(payload_tx("c", b"bare"))])
    tr = synthetic({"p": [(1, G.append(payload_tx("c", b"bare")))]})
    assert not check_composable_safety(tr, prop)


def test_non_composable_property_is_refused():
    class AtMostOneLog(LogSetProperty):
        name = "AtMostOneLog"
        composable = False

        def holds(self, logs):
            return len(list(logs)) <= 1

    with pytest.raises(NotComposable):
        composability_self_check(AtMostOneLog(), [G])


@pytest.fixture(scope="module")
def smoke():
    return run_scenario(smoke_scenario(0))


def test_overlap_holds_with_gst_zero(smoke):
    cfg = smoke.cfg
    assert smoke.verdicts["overlap"]["pass"]
    assert check_epoch_overlap(smoke.trace, cfg.epoch_duration, cfg.owned()) == []


def test_overlap_spacing_and_pre_gst_exemption(smoke):
    cfg = smoke.cfg
    second = min(s for p in smoke.trace.correct for s, e, _ in smoke.trace.epochs[p] if e == 2)
    first = min(s for p in smoke.trace.correct for s, e, _ in smoke.trace.epochs[p] if e == 1)
    assert second - first >= cfg.epoch_duration
    # an epoch-duration one slot longer than the observed spacing must be flagged
    tight = second - first + 1
    clauses = {v.clause for v in check_epoch_overlap(smoke.trace, tight, cfg.owned())}
    assert "EpochSpacing" in clauses
    last = max(s for p in smoke.trace.correct for s, _, _ in smoke.trace.epochs[p])
    late_gst = replace(smoke.trace, net=replace(smoke.trace.net, gst=last + 1), extra={})
    assert check_epoch_overlap(late_gst, tight, cfg.owned()) == []


def test_complexity_needs_two_sizes():
    with pytest.raises(InsufficientRuns):
        measure_complexity({4: (None, None)})


def test_complexity_of_idle_runs_is_finite_and_compiled_peak_dominates():
    pairs = {}
    for n in (4, 7):
        qp = replace(complexity_scenario(0, n=n, epochs=2), environment=())
        bare = replace(complexity_scenario(0, n=n, mode=PERMISSIONED, epochs=2), environment=())
        pairs[n] = (run_scenario(bare).trace, run_scenario(qp).trace)
    report = measure_complexity(pairs)
    for n, row in report["rows"].items():
        assert all(math.isfinite(row[k]) for k in ("AC", "PC", "AC'", "PC'"))
        assert row["PC'"] >= row["PC"]
    assert math.isfinite(report["c_average"])

