"""Quick cross-module invariant suites on seeded random instances.

Each suite takes a seed and returns ``(passed, message)``.  The suites are
small enough to finish in seconds; the test suite covers the same ground at
full scale.
"""

from __future__ import annotations

import itertools
from fractions import Fraction
from typing import Callable

import numpy as np

from .deadlock import run_dp
from .functions import BoxFunction, eval_frequency_function, kth_most_popular, popularity_rank_oracle
from .graph import GraphSequence, line_graph, random_b_connected, random_connected_graph, ring_graph
from .interval_averaging import conservation_audit, oracle_interval, run_interval_averaging
from .linear import WeightScheme, build_weights, run_linear
from .load_balancing import LB_ETA, lb_round, run_lb
from .lyapunov import cut_weight, random_doubly_stochastic, variance_decomposition, window_decrease_check
from .max_tracking import InputSchedule, run_max_tracking
from .quantized import quantization_drift, run_quantized
from .records import Stop


def _suite_linear(seed: int) -> tuple[bool, str]:
    rng = np.random.default_rng([seed, 10])
    for _ in range(50):
        n = int(rng.integers(2, 12))
        a = random_doubly_stochastic(n, rng, "exact")
        x = [Fraction(int(v)) for v in rng.integers(-9, 10, n)]
        if not variance_decomposition(a, x).equal:
            return False, "variance identity failed"
    seq = random_b_connected(10, 2, seed)
    rec = run_linear(rng.uniform(0, 1, 10), seq, WeightScheme("metropolis"), Stop.steps(100), "float")
    vs = rec.column("V")
    if any(b > a + 1e-12 for a, b in zip(vs, vs[1:])):
        return False, "variance increased under metropolis weights"
    return True, "variance identity on 50 matrices; monotone variance on a B-connected run"


def _suite_lyapunov(seed: int) -> tuple[bool, str]:
    rng = np.random.default_rng([seed, 11])
    checked = 0
    for _ in range(60):
        n = int(rng.integers(3, 10))
        g = random_connected_graph(n, 0.3, rng)
        a = build_weights(WeightScheme(["equal_neighbor", "metropolis"][checked % 2]), g, "exact").matrix
        subset = [i for i in range(n) if rng.random() < 0.5] or [0]
        if len(subset) == n:
            subset = subset[:-1]
        if not cut_weight(a, subset).bound_holds:
            return False, "cut weight below eta/2"
        checked += 1
    return True, f"cut bound on {checked} cuts"


def _suite_load_balancing(seed: int) -> tuple[bool, str]:
    rng = np.random.default_rng([seed, 12])
    for k in range(5):
        n = int(rng.integers(4, 12))
        seq = random_b_connected(n, 3, seed * 100 + k)
        x0 = [Fraction(int(v)) for v in rng.integers(0, 20, n)]
        rec = run_lb(x0, seq, Stop.steps(30), "exact", keep_states=True)
        if not all(r.relative_ok for r in window_decrease_check(rec, 3, LB_ETA)):
            return False, "window decrease violated"
        for x in rec.states[:5]:  # type: ignore[index]
            _, trace = lb_round(x, seq.snapshot(0))
            a = trace.induced_matrix
            if not (a == a.T).all():
                return False, "induced matrix not symmetric"
    return True, "window decrease on 5 load-balancing runs"


def _suite_quantized(seed: int) -> tuple[bool, str]:
    rng = np.random.default_rng([seed, 13])
    for k in range(10):
        n, B, Q = int(rng.integers(2, 10)), int(rng.integers(1, 4)), int(rng.integers(1, 6))
        x0 = [Fraction(int(v), Q) for v in rng.integers(0, Q + 1, n)]
        scheme = WeightScheme("metropolis") if k % 2 else "load_balancing"
        rec = run_quantized(x0, random_b_connected(n, B, seed * 100 + k), scheme, Q)
        if rec.rows[-1].spread != 0 or rec.steps > n * B * rec.info["levels"]:
            return False, "quantized run did not reach consensus in time"
        drift = quantization_drift(rec)
        if drift is None or not 0 <= drift <= Fraction(rec.steps, Q):
            return False, "quantization drift out of bounds"
    return True, "10 quantized runs terminated with bounded drift"


def _suite_max_tracking(seed: int) -> tuple[bool, str]:
    rng = np.random.default_rng([seed, 14])
    for _ in range(10):
        n = int(rng.integers(2, 12))
        g = random_connected_graph(n, 0.3, rng)
        init = tuple(int(v) for v in rng.integers(0, 6, n))
        changes = tuple((int(rng.integers(0, 15)), int(rng.integers(0, n)), int(rng.integers(0, 6))) for _ in range(3))
        sched = InputSchedule(init, changes)
        rec = run_max_tracking(sched, g, sched.last_change + 12 * n + 20)
        if not rec.settled or not rec.invariants.ok:
            return False, "max tracking did not settle or broke an invariant"
    return True, "10 tracking runs settled with invariants intact"


def _suite_interval_averaging(seed: int) -> tuple[bool, str]:
    rng = np.random.default_rng([seed, 15])
    for _ in range(20):
        n, K = int(rng.integers(2, 10)), int(rng.integers(1, 5))
        g = random_connected_graph(n, 0.3, rng)
        x = [int(v) for v in rng.integers(0, K + 1, n)]
        res = run_interval_averaging(x, g, K, audit=True)
        if not res.settled or any(o != oracle_interval(x) for o in res.outputs):
            return False, f"wrong output for {x}"
        if not conservation_audit(res.audit, n, K).ok:
            return False, "conservation audit failed"
    return True, "20 instances matched the exact-mean oracle"


def _suite_functions(seed: int) -> tuple[bool, str]:
    f: BoxFunction = kth_most_popular(2, 2)
    g = ring_graph(4)
    for xs in itertools.product(range(3), repeat=4):
        if eval_frequency_function(f, xs, g) != [popularity_rank_oracle(xs, 2, 2)] * 4:
            return False, f"second-most-popular mismatch on {xs}"
    return True, "second most popular of three values on all 81 ring inputs"


def _suite_deadlock(seed: int) -> tuple[bool, str]:
    rng = np.random.default_rng([seed, 16])
    for k in range(10):
        n = int(rng.integers(2, 12))
        x0 = [Fraction(int(v)) for v in rng.integers(-10, 11, n)]
        rec = run_dp(x0, random_b_connected(n, 1, seed * 100 + k, 0.2), Stop.steps(40))
        if not rec.info["audit"].ok or sum(rec.final) != sum(x0):
            return False, "pairing audit failed"
    rec = run_dp([Fraction(i) for i in range(8)], GraphSequence.static(line_graph(8)), Stop.steps(40))
    return rec.info["audit"].ok, "10 random runs and a line run kept every pairing invariant"


SUITES: dict[str, Callable[[int], tuple[bool, str]]] = {
    "linear": _suite_linear,
    "lyapunov": _suite_lyapunov,
    "load_balancing": _suite_load_balancing,
    "quantized": _suite_quantized,
    "max_tracking": _suite_max_tracking,
    "interval_averaging": _suite_interval_averaging,
    "functions": _suite_functions,
    "deadlock": _suite_deadlock,
}
