import math
from fractions import Fraction as F

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from consensus_lab.deadlock import SELF, DpAudit, audit_round, dp_round, run_dp
from consensus_lab.graph import GraphSequence, complete_graph, line_graph, random_b_connected, random_connected_graph
from consensus_lab.numeric import vector
from consensus_lab.records import Stop


def test_equal_values():
    new, pairs, trace = dp_round([3, 3, 3], line_graph(3))
    assert list(new) == [3, 3, 3]
    assert pairs == [] and not trace.offers
    assert trace.messages == 2 * 2


def test_single_edge():
    new, pairs, _ = dp_round([0, 4], complete_graph(2))
    assert pairs == [(0, 1)]
    assert list(new) == [2, 2]


def test_max_gap_edge_wins():
    new, pairs, trace = dp_round([0, 10, 11], line_graph(3))
    assert pairs == [(0, 1)]
    assert list(new) == [5, 5, 11]
    assert trace.responses[(2, 1)] == "-"
    assert trace.partner[2] == SELF


def test_consensus_start_stationary():
    rec = run_dp([1] * 5, GraphSequence.static(line_graph(5)), Stop.steps(4))
    assert all(r.V == 0 for r in rec.rows)


def test_complete_graph_reaches_one_percent():
    n = 8
    rng = np.random.default_rng(8)
    x0 = rng.uniform(0, 1, n)
    rec = run_dp(x0, GraphSequence.static(complete_graph(n)), Stop.variance_ratio(0.01, 10**5), "float")
    assert rec.stop_reason == "variance_ratio"
    assert rec.steps <= 2 * n**3 * math.log(100)


def test_line_contraction_every_step():
    n = 16
    rec = run_dp([F(i) for i in range(n)], GraphSequence.static(line_graph(n)), Stop.variance_ratio(0.01, 5000))
    audit = rec.info["audit"]
    assert audit.ok
    assert audit.worst_contraction_ratio >= 1


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 12), seed=st.integers(0, 2**32 - 1))
def test_round_invariants(n, seed):
    rng = np.random.default_rng(seed)
    g = random_connected_graph(n, 0.3, rng)
    # few distinct values produce many ties
    x = vector([int(v) for v in rng.integers(0, 4, n)])
    new, pairs, trace = dp_round(x, g)
    report = DpAudit()
    audit_round(x, new, g, trace, report)
    assert report.ok
    seen = [i for p in pairs for i in p]
    assert len(seen) == len(set(seen))
    for i, j in pairs:
        assert (min(i, j), max(i, j)) in g.edges
        assert new[i] == new[j] == (x[i] + x[j]) / 2


def test_random_sequences_keep_invariants():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 12))
        x0 = [F(int(v)) for v in rng.integers(-5, 6, n)]
        rec = run_dp(x0, random_b_connected(n, 2, seed, 0.2), Stop.steps(30))
        assert rec.info["audit"].ok
        assert sum(rec.final) == sum(x0)
