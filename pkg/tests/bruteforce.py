"""Exhaustive cross-checks of the ledger and quorum arithmetic against the oracles."""

from __future__ import annotations

import itertools
from fractions import Fraction

from posc.ledger import CompletionThreshold, Log, StakeModel, finish_tx, map_stake, payload_tx, transfer_payload

from oracles import (LedgerOracle, all_sequences, oracle_consistent, oracle_extends, oracle_map_stake)

IDS = ("A", "B", "C")

# Three-letter alphabets chosen so that epochs complete, validator sets change
# and stray FINISH entries (wrong epoch, non-validator issuer) all show up.
ALPHABETS = (
    (("finish", "A", 1), ("finish", "B", 1), ("finish", "C", 2)),
    (("finish", "A", 1), ("xfer", "A", "C", 1), ("finish", "C", 2)),
    (("finish", "B", 1), ("finish", "B", 2), ("pay", "A", b"x")),
    (("xfer", "B", "A", 2), ("finish", "A", 1), ("finish", "A", 2)),
)


def build_tx(t):
    if t[0] == "pay":
        return payload_tx(t[1], t[2])
    if t[0] == "xfer":
        return payload_tx(t[1], transfer_payload(t[2], t[3]))
    return finish_tx(t[1], t[2])


def stake_tables(max_total: int = 4):
    for total in range(1, max_total + 1):
        for split in itertools.product(range(total + 1), repeat=len(IDS)):
            if sum(split) == total:
                yield dict(zip(IDS, split))


def _check_log(log: Log, oracle: LedgerOracle) -> None:
    k = log.length
    e = oracle.epoch(k)
    where = (oracle.entries, k)
    assert log.epoch == e, where
    assert log.completed == oracle.completed(k), where
    assert dict(log.stake_table) == oracle.stake(k), where
    assert sum(log.stake_table.values()) == oracle.total
    assert log.current_ids == oracle.current_ids(k)
    if k:
        assert log.validators == oracle.validators(k), where
        assert log.finishers == oracle.finishers(k), where
        assert log.can_complete == oracle.can_complete(k), where
    for e1 in range(e):
        q = log.ep_prefix(e1)
        assert q.length == oracle.ep_prefix(k, e1) and q.completed and q.epoch == e1, where
        for e2 in range(e1 + 1, e):
            assert log.ep_prefix(e2).ep_prefix(e1) == q, where
    if k == 0 or len(oracle.entries) == k:
        completed_per_epoch: dict[int, int] = {}
        for j in range(k + 1):
            if oracle.completed(j):
                completed_per_epoch[oracle.epoch(j)] = completed_per_epoch.get(oracle.epoch(j), 0) + 1
        assert set(completed_per_epoch.values()) <= {1}, where


def _walk(log: Log, oracle: LedgerOracle, alphabet, txs, max_len: int) -> int:
    _check_log(log, oracle)
    if log.length == max_len:
        return 1
    return 1 + sum(_walk(log.append(txs[t]), oracle.child(t), alphabet, txs, max_len) for t in alphabet)


def exhaustive_ledger_check(max_len: int = 5, max_total: int = 4) -> dict:
    """Compare every derived quantity on every log of up to ``max_len`` entries.

    Logs are walked as a prefix tree, so each one is built and checked once.
    """
    logs = 0
    for table in stake_tables(max_total):
        for rho, threshold in ((Fraction(1, 3), CompletionThreshold.STRICT_RHO),
                               (Fraction(1, 4), CompletionThreshold.QUORUM_ONE_MINUS_RHO)):
            model = StakeModel.from_table(table, rho, threshold)
            genesis = model.genesis()
            assert map_stake(genesis) == oracle_map_stake({k: v for k, v in table.items() if v})
            quorum = threshold == CompletionThreshold.QUORUM_ONE_MINUS_RHO
            for alphabet in ALPHABETS:
                txs = {t: build_tx(t) for t in alphabet}
                logs += _walk(genesis, LedgerOracle(table, rho, (), quorum), alphabet, txs, max_len)
    return {"logs": logs}


def exhaustive_order_check(max_len: int = 5) -> int:
    """consistent(a, b) iff one extends the other, over all pairs of logs."""
    model = StakeModel.from_table({"A": 1, "B": 1, "C": 1}, Fraction(1, 3))
    g = model.genesis()
    pairs = 0
    for alphabet in ALPHABETS[:2]:
        txs = {t: build_tx(t) for t in alphabet}
        seqs = list(all_sequences(alphabet, max_len))
        logs = [g.extend(txs[t] for t in s) for s in seqs]
        for (sa, la), (sb, lb) in itertools.product(zip(seqs, logs), repeat=2):
            ext = la.extends(lb)
            assert ext == oracle_extends(sa, sb)
            assert la.consistent_with(lb) == oracle_consistent(sa, sb) == (ext or lb.extends(la))
            pairs += 1
    return pairs


def exhaustive_quorum_check(max_total: int = 8, rhos=(Fraction(1, 5), Fraction(1, 4), Fraction(1, 3) - Fraction(1, 100))):
    """Two stake sets each reaching a (1-rho)T quorum overlap in at least (1-2rho)T stake.

    Runs over every stake table up to permutation (integer partitions of T)
    and every pair of validator subsets, using the package's own quorum rule
    to decide which subsets count.
    """
    worst = {}
    for rho in rhos:
        for total in range(1, max_total + 1):
            for parts in _partitions(total):
                ids = [f"v{i}" for i in range(len(parts))]
                model = StakeModel.from_table(dict(zip(ids, parts)), rho)
                weight = [sum(parts[i] for i in range(len(parts)) if mask >> i & 1) for mask in range(1 << len(parts))]
                quorums = [m for m in range(1 << len(parts)) if model.quorum_reached(weight[m])]
                lo = min(weight[a & b] for a in quorums for b in quorums)
                assert lo >= (1 - 2 * rho) * total, (rho, parts, lo)
                key = (rho, total)
                worst[key] = min(worst.get(key, total), lo)
    return worst


def _partitions(n: int, largest: int | None = None):
    largest = n if largest is None else largest
    if n == 0:
        yield ()
        return
    for first in range(min(n, largest), 0, -1):
        for rest in _partitions(n - first, first):
            yield (first,) + rest
