import itertools
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from consensus_lab.graph import (
    GraphError,
    build_snapshot,
    dumbbell_graph,
    line_graph,
    random_connected_graph,
    ring_graph,
    star_graph,
)
from consensus_lab.interval_averaging import (
    BLOCKED,
    Accept,
    IaMachine,
    OutputInterval,
    Request,
    conservation_audit,
    dumbbell_inputs,
    ia_round,
    oracle_interval,
    run_interval_averaging,
)
from consensus_lab.network import deliver


def counting_interval(values):
    """Oracle computed from integer counts only: (low, is_open)."""
    total, n = sum(values), len(values)
    return OutputInterval(total // n, total % n != 0)


class TestOutputs:
    def test_oracle_interval(self):
        assert oracle_interval([0, 1]) == OutputInterval(0, True)
        assert oracle_interval([2, 2, 2]) == OutputInterval(2, False)
        assert str(OutputInterval(0, True)) == "(0,1)"
        assert str(OutputInterval(3, False)) == "{3}"
        assert OutputInterval(1, True).contains(F(3, 2))
        assert not OutputInterval(1, True).contains(F(1))


class TestSmallInstances:
    def test_constant_inputs(self):
        res = run_interval_averaging([2, 2, 2, 2], ring_graph(4), 3)
        assert res.acceptances == 0
        assert res.final_u == [2, 2, 2, 2]
        assert res.outputs == [OutputInterval(2, False)] * 4

    def test_edge_zero_two(self):
        res = run_interval_averaging([0, 2], line_graph(2), 2, audit=True)
        assert res.final_u == [1, 1]
        assert res.acceptances == 1
        assert res.agreed_output == OutputInterval(1, False)

    def test_edge_zero_one(self):
        res = run_interval_averaging([0, 1], line_graph(2), 1)
        assert res.final_u == [0, 1] and res.acceptances == 0
        assert res.outputs == [OutputInterval(0, True)] * 2

    def test_edge_zero_four_audit(self):
        res = run_interval_averaging([0, 4], line_graph(2), 4, audit=True)
        variances = [s.audit_variance for s in res.audit.steps]
        assert variances[0] == 8 and variances[-1] == 0
        assert res.acceptances == 1
        assert conservation_audit(res.audit, 2, 4).ok

    def test_single_node(self):
        res = run_interval_averaging([3], build_snapshot(1, []), 3)
        assert res.outputs == [OutputInterval(3, False)] and res.rounds == 0

    def test_bit_rounds(self):
        res = run_interval_averaging([0, 4, 1], line_graph(3), 4)
        assert res.bit_rounds == res.rounds * 3

    def test_validation(self):
        with pytest.raises(ValueError, match="alphabet"):
            run_interval_averaging([0, 5], line_graph(2), 4)
        with pytest.raises(GraphError, match="connected"):
            run_interval_averaging([0, 1], build_snapshot(2, []), 1)

    def test_unaudited_verdict(self):
        with pytest.raises(ValueError):
            conservation_audit(None)


class TestDumbbell:
    @pytest.mark.parametrize("n", [9, 15])
    def test_slow_instance(self, n):
        res = run_interval_averaging(dumbbell_inputs(n), dumbbell_graph(n), 2)
        assert res.settled
        assert res.outputs == [OutputInterval(1, False)] * n
        assert res.rounds >= 2 * n * n / 9


@pytest.mark.parametrize("builder", [line_graph, ring_graph, star_graph])
@pytest.mark.parametrize("n", [3, 5])
def test_binary_majority_by_doubling(builder, n):
    """Doubling binary votes and averaging over 0..2 decides the majority."""
    g = builder(n)
    for xs in itertools.product((0, 1), repeat=n):
        res = run_interval_averaging([2 * v for v in xs], g, 2)
        out = res.agreed_output
        ones = sum(xs)
        majority = out.low >= 1 if not out.open else out.low + 1 > 1
        assert majority == (2 * ones > n)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(2, 12), K=st.integers(1, 4), seed=st.integers(0, 2**32 - 1))
def test_random_instances_and_audit(n, K, seed):
    rng = np.random.default_rng(seed)
    g = random_connected_graph(n, 0.3, rng)
    x = [int(v) for v in rng.integers(0, K + 1, n)]
    res = run_interval_averaging(x, g, K, audit=True, keep_history=True)
    assert res.settled
    assert res.outputs == [counting_interval(x)] * n
    assert sum(res.final_u) == sum(x)
    assert max(res.final_u) - min(res.final_u) <= 1
    verdict = conservation_audit(res.audit, n, K)
    assert verdict.ok
    assert res.acceptances <= F(n * K * K, 8)
    # no node stays Blocked for more than 2n consecutive rounds
    for i in range(n):
        run = 0
        for states in res.history:
            run = run + 1 if states[i].mode == BLOCKED else 0
            assert run <= 2 * n


def test_competing_requests_denied_on_higher_ports():
    g = star_graph(3)
    m = IaMachine([2, 0, 0], g, 2)
    # hand-build an inbox in which both leaves request from the centre in the same slot
    boxes = [dict() for _ in range(3)]
    states = list(m.states)
    from consensus_lab.interval_averaging import IaPacket

    for leaf in (1, 2):
        pkt = m.inbox[0][g.port(0, leaf)]
        boxes[leaf][g.port(leaf, 0)] = IaPacket(pkt.max_msg, pkt.min_msg, (Request(0),))
    # carry tracker messages towards the leaves unchanged
    for leaf in (1, 2):
        boxes[0][g.port(0, leaf)] = m.inbox[leaf][g.port(leaf, 0)]
    inbox = deliver(g, boxes)
    new_states, out, _ = ia_round(states, g, inbox)
    replies = {leaf: [msg for msg in out[leaf][g.port(leaf, 0)].protocol if isinstance(msg, Accept)] for leaf in (1, 2)}
    assert replies[1] == [Accept(1)]
    assert replies[2] == [Accept(0)]
    assert new_states[0].u == 1
