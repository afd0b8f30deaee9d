import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from consensus_lab.graph import build_snapshot, line_graph, random_connected_graph, ring_graph
from consensus_lab.max_tracking import (
    RESTART,
    SELF,
    Estimate,
    InputSchedule,
    MaxTrackState,
    follow_pointers,
    is_forest,
    mt_init,
    mt_step,
    run_max_tracking,
    state_bits,
)


class TestStep:
    def test_init(self):
        state, msg = mt_init(4)
        assert state == MaxTrackState(4, SELF, 4)
        assert msg == Estimate(4)

    def test_input_change_restarts(self):
        state, msg, op = mt_step(MaxTrackState(9, 0, 2), 3, {0: Estimate(9)})
        assert (state, msg, op) == (MaxTrackState(3, SELF, 3), RESTART, "O1")

    def test_restart_from_parent(self):
        state, msg, op = mt_step(MaxTrackState(9, 1, 2), 2, {0: Estimate(7), 1: RESTART})
        assert (state, msg, op) == (MaxTrackState(2, SELF, 2), RESTART, "O4a")

    def test_adopt_largest_lowest_port(self):
        inbox = {2: Estimate(8), 0: Estimate(8), 1: Estimate(5)}
        state, msg, op = mt_step(MaxTrackState(3, SELF, 3), 3, inbox)
        assert (state, msg, op) == (MaxTrackState(8, 0, 3), RESTART, "O2")

    def test_hold_and_forward(self):
        assert mt_step(MaxTrackState(3, SELF, 3), 3, {0: Estimate(3)})[2] == "O3"
        state, msg, op = mt_step(MaxTrackState(6, 0, 3), 3, {0: Estimate(6)})
        assert (msg, op) == (Estimate(6), "O4b")


def test_forest_detection():
    assert is_forest({0: 1, 1: 2})
    assert not is_forest({0: 1, 1: 0})
    assert not is_forest({0: 1, 1: 2, 2: 1, 3: 0})


class TestRuns:
    def test_single_node(self):
        rec = run_max_tracking(InputSchedule.constant([5]), build_snapshot(1, []), 10)
        assert rec.settled and rec.settle_time == 0
        assert all(st[0] == MaxTrackState(5, SELF, 5) for st in rec.states)

    def test_edge(self):
        g = line_graph(2)
        rec = run_max_tracking(InputSchedule.constant([1, 3]), g, 20)
        assert rec.settled
        final = rec.states[-1]
        assert [s.M for s in final] == [3, 3]
        assert g.neighbor_at(0, final[0].P) == 1 and final[1].P == SELF
        assert rec.settle_time <= 4

    def test_all_equal_settles_at_once(self):
        rec = run_max_tracking(InputSchedule.constant([2] * 6), ring_graph(6), 10)
        assert rec.settle_time == 0
        assert all(s.P == SELF for s in rec.states[-1])

    def test_dropping_the_maximum(self):
        g = line_graph(6)
        sched = InputSchedule((1, 2, 9, 3, 0, 4), ((30, 2, 0),))
        rec = run_max_tracking(sched, g, 120)
        assert rec.estimates(29) == [9] * 6
        assert rec.settled and rec.final_estimates == [4] * 6
        assert rec.settle_time >= 30
        assert rec.invariants.ok

    def test_line_pointer_chains(self):
        g = line_graph(5)
        rec = run_max_tracking(InputSchedule.constant([3, 1, 4, 1, 5]), g, 60)
        assert rec.settled
        for i in range(5):
            assert follow_pointers(g, rec.states[-1], i, 5) == 4

    def test_min_mode(self):
        rec = run_max_tracking(InputSchedule.constant([3, 1, 4, 1, 5]), line_graph(5), 60, mode="min")
        assert rec.settled and rec.final_estimates == [1] * 5

    def test_relocating_maximum_on_ring(self):
        g = ring_graph(8)
        changes = ((5, 0, 9), (20, 4, 12), (40, 0, 0), (41, 4, 1))
        sched = InputSchedule((3, 1, 4, 1, 5, 2, 2, 6), changes)
        rec = run_max_tracking(sched, g, 200)
        assert rec.settled and rec.invariants.ok
        assert rec.settle_time >= sched.last_change
        after = rec.largest_estimate[sched.last_change + 1 :]
        assert all(b <= a for a, b in zip(after, after[1:]))
        assert rec.final_estimates == [6] * 8

    def test_short_horizon_reports_unsettled(self):
        rec = run_max_tracking(InputSchedule.constant(list(range(10))), line_graph(10), 3)
        assert not rec.settled and rec.settle_time is None

    def test_schedule_validation(self):
        with pytest.raises(ValueError):
            InputSchedule((1, 2), ((0, 5, 1),))

    def test_schedule_from_json(self):
        sched = InputSchedule.from_json('[{"time": 4, "node": 1, "value": 7}]', [0, 0])
        assert sched.inputs_at(3) == [0, 0] and sched.inputs_at(4) == [0, 7]


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 14), seed=st.integers(0, 2**32 - 1), changes=st.integers(0, 5))
def test_tracking_properties(n, seed, changes):
    rng = np.random.default_rng(seed)
    g = random_connected_graph(n, 0.25, rng)
    alphabet = 6
    sched = InputSchedule(
        tuple(int(v) for v in rng.integers(0, alphabet, n)),
        tuple((int(rng.integers(0, 25)), int(rng.integers(0, n)), int(rng.integers(0, alphabet))) for _ in range(changes)),
    )
    rec = run_max_tracking(sched, g, sched.last_change + 4 * n * alphabet + 10)
    assert rec.invariants.ok, rec.invariants.violations[:3]
    assert rec.settled
    assert rec.settle_time - sched.last_change <= 3 * n * alphabet
    frozen = rec.largest_estimate[sched.last_change + 1 :]
    assert all(b <= a for a, b in zip(frozen, frozen[1:]))
    for s in rec.states[-1]:
        assert state_bits(s, alphabet, max(g.degrees)) <= 2 * 3 + 4
