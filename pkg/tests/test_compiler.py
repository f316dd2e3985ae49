from fractions import Fraction

import pytest

from posc.compiler import (
    DEPARTURE, FINISH_TX, INNER, CompilerNode, EpochParams, Envelope, NotCompleted, StaleGenesis,
)
from posc.crypto import KeyRegistry
from posc.harness import run_scenario
from posc.ledger import StakeModel, TxKind, finish_tx, payload_tx
from posc.permissioned import Message
from posc.refbft import RefBft, RefBftConfig, timeout
from posc.scenario import assemble, consistency_sweep, handover_scenario, smoke_scenario


def make_node(owned, table, name="pA", ell=20):
    reg = KeyRegistry(1)
    owners = {}
    for ident in table:
        owners[ident] = name if ident in owned else f"p{ident}"
        reg.register(ident, owner=owners[ident])
    g = StakeModel.from_table(table, Fraction(1, 5)).genesis()
    proto = RefBft(RefBftConfig(n=g.model.total, view_duration=11), reg)
    node = CompilerNode(name, owned, reg, EpochParams(ell, 1), g, lambda _: proto)
    return node, g, reg


def test_epoch_params():
    assert EpochParams(30, 10).epoch_duration == 40
    with pytest.raises(ValueError):
        EpochParams(0, 1)


def test_one_machine_per_unit_of_stake():
    node, g, _ = make_node({"A"}, {"A": 3, "B": 1})
    node.start_simulation(g)
    assert sorted(node.machines) == [1, 2, 3]
    assert node.validating == ["A"]
    assert node.id_map == {1: "A", 2: "A", 3: "A", 4: "B"}


def test_listener_runs_no_machines_and_never_finishes():
    node, g, reg = make_node({"Z"}, {"A": 4, "Z": 0}, name="pZ", ell=5)
    reg.register("A", owner="pA")
    out = []
    for slot in range(20):
        out += node.step(slot, False, [], [])
    assert node.machines == {} and node.validating == []
    assert not node.finished
    assert not any(m.body.kind == FINISH_TX for m in out)


def test_start_simulation_preconditions():
    node, g, _ = make_node({"A"}, {"A": 1, "B": 1, "C": 1})
    with pytest.raises(NotCompleted):
        node.start_simulation(g.append(payload_tx("x", b"1")))
    # rho = 1/5 of three units: a single finisher completes the epoch
    other = g.extend([finish_tx("A", 1)])
    rival = g.extend([payload_tx("x", b"2"), finish_tx("A", 1)])
    assert other.completed and rival.completed
    node._log = other
    with pytest.raises(StaleGenesis):
        node.start_simulation(rival)


def test_own_machines_talk_over_loopback():
    node, g, reg = make_node({"A"}, {"A": 3, "B": 1})
    looped = 0
    for slot in range(15):
        txs = [reg.sign_tx(payload_tx("A", b"t%d" % slot), "pA")] if slot == 1 else []
        out = node.step(slot, False, [], txs)
        looped += sum(len(v) for v in node.loopback.values())
        for m in out:
            if m.body.kind == INNER:
                assert m.receiver == "pB"
                assert node.id_map[m.body.dst] == "B"
    assert looped > 0


def test_stale_envelopes_dropped_and_future_ones_buffered():
    node, g, _ = make_node({"A"}, {"A": 3, "B": 1})
    node.step(0, False, [], [])
    node.epoch = 2
    stale = Envelope(INNER, 1, 4, 1, inner=timeout(0))
    ahead = Envelope(INNER, 3, 4, 1, inner=timeout(0))
    node.step(1, False, [Message("pB", "pA", stale), Message("pB", "pA", ahead)], [])
    assert node.dropped_stale == 1
    assert node.future == [ahead]


def test_finish_waits_a_full_epoch_duration():
    for cfg in (smoke_scenario(0), consistency_sweep(4), consistency_sweep(13), handover_scenario(1)):
        res = run_scenario(cfg)
        assert res.trace.finishes, cfg.name
        for p, slot, epoch, entered, clock in res.trace.finishes:
            assert clock >= cfg.epoch_duration
            assert slot - entered >= cfg.epoch_duration


def test_finish_is_issued_once_per_identifier():
    node, g, _ = make_node({"A", "B"}, {"A": 2, "B": 2}, ell=3)
    node.start_simulation(g)
    node.issue_finish()
    first = [m for m in node.outbox if m.body.kind == FINISH_TX]
    node.issue_finish()
    again = [m for m in node.outbox if m.body.kind == FINISH_TX]
    assert len(first) == 2 and len(again) == 2
    assert {m.body.tx.issuer for m in first} == {"A", "B"}
    assert all(m.body.tx.kind == TxKind.FINISH and m.body.tx.epoch == 1 for m in first)


def test_correct_processes_share_the_permissioned_id_map():
    a = assemble(smoke_scenario(2))
    world = a.world
    horizon = world.net.horizon
    epochs_seen = set()
    while world.slot <= horizon:
        world.advance_slot()
        maps = {}
        for node in world.nodes:
            if node.name in world.trace.correct and node.epoch_genesis is not None:
                maps.setdefault(node.epoch, set()).add(tuple(sorted(node.id_map.items())))
        for e, variants in maps.items():
            assert len(variants) == 1, (world.slot, e)
            epochs_seen.add(e)
    assert len(epochs_seen) >= 2


def test_disjoint_validator_handover():
    cfg = handover_scenario(0)
    res = run_scenario(cfg)
    assert res.passed, res.verdicts
    final = res.trace.final_log("q01")
    assert final.next_epoch >= 3
    assert final.ep_prefix(1).current_ids == {"w01", "w02", "w03", "w04"}
    assert final.prefix(1).validators == {"v01", "v02", "v03", "v04"}
    assert all(v for _, e, v in res.trace.epochs["q01"] if e >= 2)
    assert not any(v for _, e, v in res.trace.epochs["p01"] if e >= 2)


def test_departure_carries_the_latest_certificate():
    a = assemble(smoke_scenario(0))
    world = a.world
    departures = []
    node = world.nodes[0]
    while world.slot <= world.net.horizon:
        world.advance_slot()
        departures += [m.body for m in node.outbox if m.body.kind == DEPARTURE]
    assert departures
    for env in departures:
        assert [e for e, _ in env.certs] == [env.log.epoch]
        assert env.known_prefix == env.log.length


def test_duplicate_injection_is_deduplicated():
    node, g, reg = make_node({"A"}, {"A": 3, "B": 1})
    tx = reg.sign_tx(payload_tx("A", b"dup"), "pA")
    node.step(0, True, [], [])
    node._add_tx(tx)
    node._add_tx(tx)
    assert list(node.mempool) == [tx.digest]
    res = run_scenario(smoke_scenario(0))
    final = res.trace.final_log("p01")
    digests = [final[k].digest for k in range(1, final.length + 1)]
    assert len(digests) == len(set(digests))
