"""Quadratic Lyapunov functionals, exact identities, and spectral bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .graph import GraphSnapshot, build_snapshot
from .linear import WeightMatrix, WeightScheme, build_weights, inspect_matrix
from .numeric import backend_of, convert, vector, zeros_matrix
from .records import RunRecord, variance

__all__ = [
    "variance",
    "VarianceDecomposition",
    "variance_decomposition",
    "gram_weights",
    "cut_weight",
    "CutReport",
    "sorted_gap_energy",
    "relaxed_connectivity_holds",
    "WindowReport",
    "window_decrease_check",
    "SpectralReport",
    "spectral_gap",
    "random_tridiagonal",
    "line_test_vector",
    "fixed_matrix_lyapunov",
    "LyapunovCertificate",
    "stationary_distribution",
    "appendix_a_counterexample",
    "CounterexampleReport",
    "convergence_time",
    "lower_bound_steps",
]


class AnalysisError(ValueError):
    """Raised when an identity or bound is requested outside its hypotheses."""


def _is_doubly_stochastic(a: np.ndarray, tol: float = 1e-12) -> bool:
    exact = backend_of(a) == "exact"
    n = a.shape[0]
    for k in range(n):
        r, c = sum(a[k, :]), sum(a[:, k])
        if exact:
            if r != 1 or c != 1:
                return False
        elif abs(r - 1) > tol * n or abs(c - 1) > tol * n:
            return False
    return bool(np.all(a >= 0)) if not exact else all(v >= 0 for v in a.flat)


def random_doubly_stochastic(n: int, rng: np.random.Generator, backend: str = "exact", terms: int = 4) -> np.ndarray:
    """Convex mixture of ``terms`` random permutation matrices (doubly stochastic by construction).

    Exact mode draws integer weights and normalizes them to Fractions.
    """
    raw = [int(w) for w in rng.integers(1, 10, terms)]
    total = sum(raw)
    weights = [Fraction(w, total) for w in raw] if backend == "exact" else [w / total for w in raw]
    a = zeros_matrix(n, backend)
    for w in weights:
        perm = rng.permutation(n)
        for i in range(n):
            a[i, perm[i]] += w
    return a


def gram_weights(a: np.ndarray) -> np.ndarray:
    """``W = A^T A``; entry ``(i, j)`` weighs the disagreement ``(x_i - x_j)^2``."""
    return a.T.dot(a)


@dataclass
class VarianceDecomposition:
    direct_drop: object
    sum_form: object
    w_matrix: np.ndarray

    @property
    def equal(self) -> bool:
        if isinstance(self.direct_drop, Fraction):
            return self.direct_drop == self.sum_form
        scale = max(1.0, abs(float(self.direct_drop)))
        return abs(float(self.direct_drop) - float(self.sum_form)) <= 1e-12 * scale

    @property
    def relative_error(self) -> float:
        d, s = float(self.direct_drop), float(self.sum_form)
        return abs(d - s) / max(abs(d), abs(s), 1e-300) if d != s else 0.0


def variance_decomposition(a: np.ndarray, x: Sequence | np.ndarray) -> VarianceDecomposition:
    """Compute ``V(x) - V(Ax)`` directly and as ``sum_{i<j} w_ij (x_i - x_j)^2``.

    The two sides share no intermediate values: the left side evaluates the
    variance twice, the right side uses only ``A^T A`` and pairwise gaps.
    """
    a = np.asarray(a)
    x = np.asarray(x) if isinstance(x, np.ndarray) else vector(x, backend_of(a))
    x = convert(x, backend_of(a))
    if not _is_doubly_stochastic(a):
        raise AnalysisError("the decomposition applies only to doubly stochastic matrices")
    direct = variance(x, "mean") - variance(a.dot(x), "mean")
    w = gram_weights(a)
    n = len(x)
    total = 0
    for i in range(n):
        for j in range(i + 1, n):
            if w[i, j] != 0:
                d = x[i] - x[j]
                total = total + w[i, j] * d * d
    return VarianceDecomposition(direct, total, w)


@dataclass
class CutReport:
    weight: object
    eta: object
    bound_holds: bool


def cut_weight(a: np.ndarray, subset: Iterable[int], eta=None) -> CutReport:
    """Total ``A^T A`` weight between ``subset`` and its complement.

    ``bound_holds`` records whether a positive weight is at least ``eta / 2``
    (vacuously true for zero weight).  ``eta`` defaults to the smallest
    positive entry of ``A``.
    """
    a = np.asarray(a)
    n = a.shape[0]
    s = set(int(i) for i in subset)
    if not s or len(s) >= n or not s <= set(range(n)):
        raise AnalysisError("a cut needs a proper nonempty subset of the nodes")
    info = inspect_matrix(a)
    if eta is None:
        eta = info.eta
    w = gram_weights(a)
    comp = [j for j in range(n) if j not in s]
    total = 0
    for i in s:
        for j in comp:
            total = total + w[i, j]
    exact = backend_of(a) == "exact"
    positive = total > 0 if exact else total > 1e-15
    holds = (not positive) or (total >= eta / 2 if exact else total >= eta / 2 - 1e-12)
    return CutReport(total, eta, holds)


def sorted_gap_energy(x: Sequence) -> object:
    """``sum_i (x_(i) - x_(i+1))^2`` over the values sorted in decreasing order."""
    xs = sorted(x, reverse=True)
    return sum((xs[i] - xs[i + 1]) ** 2 for i in range(len(xs) - 1))


def relaxed_connectivity_holds(x: Sequence, matrices: Sequence[np.ndarray]) -> bool:
    """Every sorted cut with distinct values is crossed by a positive entry in the window.

    Sort ``x`` decreasingly; for each prefix ``1..d`` with ``x_(d) != x_(d+1)``
    some matrix of the window must have a positive entry between the prefix
    and the rest.
    """
    n = len(x)
    order = sorted(range(n), key=lambda i: (-x[i], i))
    rank = {node: r for r, node in enumerate(order)}
    crossing = [False] * (n - 1)
    for a in matrices:
        for i in range(n):
            for j in range(n):
                if i != j and a[i, j] != 0:
                    lo, hi = sorted((rank[i], rank[j]))
                    for d in range(lo, hi):
                        crossing[d] = True
    for d in range(n - 1):
        if x[order[d]] != x[order[d + 1]] and not crossing[d]:
            return False
    return True


@dataclass
class WindowReport:
    window: int
    start_variance: object
    drop: object
    relative_bound: object
    gap_bound: object
    relative_ok: bool
    gap_ok: bool
    skipped: bool = False


def window_decrease_check(record: RunRecord, window: int, eta, tol: float = 1e-12) -> list[WindowReport]:
    """Check the per-window variance decrease of a run.

    For each full window ``[kB, (k+1)B]`` with ``V(kB) > 0`` the drop must be
    at least ``(eta/2) * sorted_gap_energy(x(kB))`` and the relative drop at
    least ``eta / (2 n^2)``.  Windows starting at consensus are skipped.
    """
    if record.states is None:
        raise AnalysisError("the record does not contain per-step states")
    states = record.states
    n = len(states[0])
    exact = backend_of(states[0]) == "exact"
    reports = []
    for k in range((len(states) - 1) // window):
        x0, x1 = states[k * window], states[(k + 1) * window]
        v0 = variance(x0)
        if v0 == 0:
            reports.append(WindowReport(k, v0, 0, 0, 0, True, True, skipped=True))
            continue
        drop = v0 - variance(x1)
        rel_bound = eta / (2 * n * n) * v0
        gap_bound = eta / 2 * sorted_gap_energy(x0)
        if exact:
            rel_ok, gap_ok = drop >= rel_bound, drop >= gap_bound
        else:
            slack = tol * max(1.0, float(v0))
            rel_ok, gap_ok = drop >= rel_bound - slack, drop >= gap_bound - slack
        reports.append(WindowReport(k, v0, drop, rel_bound, gap_bound, rel_ok, gap_ok))
    return reports


# ---------------------------------------------------------------------------
# Spectral bound for line-supported doubly stochastic matrices
# ---------------------------------------------------------------------------


@dataclass
class SpectralReport:
    eigenvalues: list[float]  # sorted by decreasing magnitude
    lambda2: float  # second largest eigenvalue by value
    bound: float  # 1 - 6/n^2
    smallest: float

    @property
    def bound_holds(self) -> bool:
        return self.bound < self.lambda2 < 1

    def to_dict(self) -> dict:
        return {
            "eigenvalues": self.eigenvalues,
            "lambda2": self.lambda2,
            "bound": self.bound,
            "smallest": self.smallest,
            "bound_holds": self.bound_holds,
        }


def spectral_gap(a: np.ndarray, tol: float = 1e-9) -> SpectralReport:
    """Eigenvalues of a tridiagonal doubly stochastic matrix and the ``1 - 6/n^2`` bound.

    Raises :class:`AnalysisError` for support outside the tridiagonal band, a
    failure of double stochasticity, a disconnected support, or ``n < 3``.
    """
    n = a.shape[0]
    if n < 3:
        raise AnalysisError("the spectral bound is stated for n >= 3")
    af = convert(np.asarray(a), "float")
    if np.any(af < -tol):
        raise AnalysisError("matrix has negative entries")
    for i in range(n):
        for j in range(n):
            if abs(i - j) > 1 and abs(af[i, j]) > tol:
                raise AnalysisError("support is not tridiagonal")
    if np.max(np.abs(af.sum(axis=0) - 1)) > tol or np.max(np.abs(af.sum(axis=1) - 1)) > tol:
        raise AnalysisError("matrix is not doubly stochastic")
    if any(af[i, i + 1] <= tol for i in range(n - 1)):
        raise AnalysisError("support graph is disconnected")
    sym = (af + af.T) / 2
    vals = np.linalg.eigvalsh(sym)
    by_value = sorted(vals.tolist(), reverse=True)
    by_mag = sorted(vals.tolist(), key=lambda v: -abs(v))
    return SpectralReport(by_mag, by_value[1], 1 - 6 / n**2, by_value[-1])


def random_tridiagonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Symmetric tridiagonal doubly stochastic matrix with off-diagonals in ``(0, 1/2]``."""
    off = 0.5 * (1 - rng.random(n - 1))  # uniform in (0, 1/2]
    a = np.zeros((n, n))
    for i in range(n - 1):
        a[i, i + 1] = a[i + 1, i] = off[i]
    for i in range(n):
        a[i, i] = 1 - a[i].sum()
    return a


def line_test_vector(n: int) -> np.ndarray:
    """Centered ramp ``y_i = i - (n-1)/2``; its Rayleigh quotient certifies a small gap."""
    return np.arange(n) - (n - 1) / 2


def lower_bound_steps(n: int, eps: float) -> float:
    """``(n^2 / 30) * ln(1/eps)``: steps any line-graph averaging run needs."""
    return n * n / 30 * math.log(1 / eps)


# ---------------------------------------------------------------------------
# Fixed-matrix quadratic Lyapunov function
# ---------------------------------------------------------------------------


@dataclass
class LyapunovCertificate:
    matrix: np.ndarray  # M = H^T D H
    min_eig_difference: float  # smallest eigenvalue of M - A^T M A
    rank: int
    annihilates_ones: bool

    @property
    def valid(self) -> bool:
        return self.min_eig_difference >= -1e-10 and self.annihilates_ones


def stationary_distribution(a: np.ndarray, iters: int = 10000, tol: float = 1e-15) -> np.ndarray:
    """Left Perron vector of a stochastic matrix by power iteration, normalized to sum 1."""
    af = convert(np.asarray(a), "float")
    n = af.shape[0]
    pi = np.full(n, 1.0 / n)
    for _ in range(iters):
        nxt = pi @ af
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - pi)) < tol:
            return nxt
        pi = nxt
    return pi


def fixed_matrix_lyapunov(a: np.ndarray, pi: Sequence | np.ndarray, tol: float = 1e-10) -> LyapunovCertificate:
    """Build ``M = H^T D H`` with ``H = I - 1 pi^T`` and ``D = diag(pi)``.

    Works in exact arithmetic when both inputs are rational.  The certificate
    records the smallest eigenvalue of ``M - A^T M A`` (nonnegative up to
    rounding) and whether ``M 1 = 0`` holds exactly.
    """
    a = np.asarray(a)
    backend = backend_of(a)
    pi_v = convert(np.asarray(pi), backend) if isinstance(pi, np.ndarray) else vector(pi, backend)
    n = a.shape[0]
    resid = pi_v.dot(a) - pi_v
    if max(abs(float(r)) for r in resid) > tol:
        raise AnalysisError("pi is not a left eigenvector of A for eigenvalue 1")
    if any(p <= 0 for p in pi_v):
        raise AnalysisError("pi must be positive")
    if abs(float(sum(pi_v)) - 1) > tol:
        raise AnalysisError("pi must sum to 1")
    ones = vector([1] * n, backend)
    h = -np.outer(ones, pi_v)
    for i in range(n):
        h[i, i] = h[i, i] + 1
    d = np.diag(pi_v) if backend == "float" else _diag_exact(pi_v)
    m = h.T.dot(d).dot(h)
    diff = convert(m - a.T.dot(m).dot(a), "float")
    mf = convert(m, "float")
    rank = int(np.linalg.matrix_rank(mf, tol=1e-9))
    m1 = m.dot(ones)
    zero_ok = all(v == 0 for v in m1) if backend == "exact" else bool(np.max(np.abs(m1)) <= tol)
    return LyapunovCertificate(m, float(np.linalg.eigvalsh((diff + diff.T) / 2).min()), rank, zero_ok)


def _diag_exact(v: np.ndarray) -> np.ndarray:
    n = len(v)
    out = np.empty((n, n), dtype=object)
    out[...] = Fraction(0)
    for i in range(n):
        out[i, i] = v[i]
    return out


# ---------------------------------------------------------------------------
# Variance is not a common Lyapunov function for equal-neighbor updates
# ---------------------------------------------------------------------------

COUNTEREXAMPLE_EDGES = ((0, 1), (0, 2), (0, 3), (0, 4), (4, 7), (7, 5), (7, 6))
COUNTEREXAMPLE_X = (5, 2, 2, 2, 0, -3, -3, -5)
COUNTEREXAMPLE_Y = (
    Fraction(11, 5),
    Fraction(7, 2),
    Fraction(7, 2),
    Fraction(7, 2),
    Fraction(0),
    Fraction(-4),
    Fraction(-4),
    Fraction(-11, 4),
)


@dataclass
class CounterexampleReport:
    graph: GraphSnapshot
    x: np.ndarray
    y: np.ndarray
    v_x: Fraction
    v_y: Fraction

    @property
    def variance_increased(self) -> bool:
        return self.v_y > self.v_x


def appendix_a_counterexample() -> CounterexampleReport:
    """One equal-neighbor step on an 8-node tree that raises the sample variance.

    The tree joins a hub (node 0) to three leaves and to node 4, which links
    to a second hub (node 7) holding two leaves.  Starting from
    ``(5, 2, 2, 2, 0, -3, -3, -5)`` with variance 80 the update produces a
    vector of strictly larger variance, all in exact rationals.
    """
    g = build_snapshot(8, COUNTEREXAMPLE_EDGES)
    a = build_weights(WeightScheme("equal_neighbor"), g, "exact").matrix
    x = vector(COUNTEREXAMPLE_X)
    y = a.dot(x)
    return CounterexampleReport(g, x, y, variance(x), variance(y))


# ---------------------------------------------------------------------------
# Convergence time
# ---------------------------------------------------------------------------


def convergence_time(record: RunRecord, eps: float, measure: str = "V") -> int | None:
    """Smallest ``t`` with ``measure(s) <= eps * measure(0)`` for every ``s >= t`` in the record.

    Returns 0 when the run starts at consensus and ``None`` when the record
    never enters the target band for good.
    """
    if measure not in ("V", "underlineV", "spread"):
        raise ValueError(f"unknown measure {measure!r}")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    vals = record.column(measure)
    if vals[0] == 0:
        return 0
    target = eps * vals[0]
    t_hit = None
    for t in range(len(vals) - 1, -1, -1):
        if vals[t] <= target:
            t_hit = t
        else:
            break
    return t_hit
