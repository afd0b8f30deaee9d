"""Weight matrices and the linear agreement iteration, with optional delays.

``x(t+1) = A(t) x(t)`` where ``A(t)`` is realized from the snapshot ``G(t)``
by a weight scheme.  With a delay schedule, node ``i`` combines possibly
outdated neighbor values ``x_j(tau(i, j, t))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .graph import DelaySchedule, GraphError, GraphSequence, GraphSnapshot, build_snapshot
from .numeric import backend_of, check_backend, convert, identity, vector, zeros_matrix
from .records import RunRecord, Stop, iterate

SCHEMES = ("equal_neighbor", "metropolis", "max_degree", "custom")


class WeightError(ValueError):
    """Raised when a weight scheme cannot produce a valid matrix."""


@dataclass(frozen=True)
class WeightScheme:
    """How to turn a snapshot into a stochastic matrix.

    ``epsilon`` applies to ``max_degree`` (default ``1/(d_max + 1)``, which
    uses global knowledge of the maximum degree).  ``script`` applies to
    ``custom`` and maps the time index to a matrix.
    """

    kind: str
    epsilon: Fraction | float | None = None
    script: Callable[[int], np.ndarray] | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.kind not in SCHEMES:
            raise WeightError(f"unknown weight scheme {self.kind!r}")
        if self.kind == "custom" and self.script is None:
            raise WeightError("custom scheme needs a matrix script")

    @classmethod
    def custom(cls, matrices: Sequence[np.ndarray] | Callable[[int], np.ndarray]) -> "WeightScheme":
        if callable(matrices):
            return cls("custom", script=matrices)
        mats = list(matrices)
        if not mats:
            raise WeightError("custom scheme needs at least one matrix")
        return cls("custom", script=lambda t: mats[min(t, len(mats) - 1)])


@dataclass
class WeightMatrix:
    """A realized matrix with the properties that were checked on it."""

    matrix: np.ndarray
    eta: Fraction | float
    doubly_stochastic: bool
    symmetric: bool


def _is_zero(v, exact: bool, tol: float) -> bool:
    return v == 0 if exact else abs(v) <= tol


def inspect_matrix(a: np.ndarray, tol: float = 1e-12) -> WeightMatrix:
    """Verify nonnegativity, unit row sums, and a positive diagonal; report eta.

    Raises :class:`WeightError` when any of these fail.
    """
    exact = backend_of(a) == "exact"
    n = a.shape[0]
    if a.shape != (n, n):
        raise WeightError("weight matrix must be square")
    positives = []
    for i in range(n):
        row_sum = 0
        for j in range(n):
            v = a[i, j]
            if v < 0 and not _is_zero(v, exact, tol):
                raise WeightError(f"negative entry a[{i},{j}] = {v}")
            if not _is_zero(v, exact, tol):
                positives.append(v)
            row_sum += v
        if not _is_zero(row_sum - 1, exact, tol * n):
            raise WeightError(f"row {i} sums to {row_sum}, not 1")
        if _is_zero(a[i, i], exact, tol):
            raise WeightError(f"diagonal entry a[{i},{i}] is not positive")
    col_ok = all(_is_zero(sum(a[:, j]) - 1, exact, tol * n) for j in range(n))
    sym = all(
        _is_zero(a[i, j] - a[j, i], exact, tol) for i in range(n) for j in range(i + 1, n)
    )
    return WeightMatrix(a, min(positives), col_ok, sym)


def build_weights(scheme: WeightScheme, g: GraphSnapshot, backend: str = "exact", t: int = 0) -> WeightMatrix:
    """Realize the scheme on snapshot ``g`` (time ``t`` matters only for custom scripts)."""
    check_backend(backend)
    n = g.n
    one = Fraction(1) if backend == "exact" else 1.0
    deg = g.degrees
    if scheme.kind == "custom":
        a = convert(np.asarray(scheme.script(t)), backend)  # type: ignore[misc]
        if a.shape != (n, n):
            raise WeightError(f"custom matrix has shape {a.shape}, expected {(n, n)}")
        return inspect_matrix(a)

    a = zeros_matrix(n, backend)
    if scheme.kind == "equal_neighbor":
        for i in range(n):
            w = one / (deg[i] + 1)
            a[i, i] = w
            for j in g.neighbors[i]:
                a[i, j] = w
    elif scheme.kind == "metropolis":
        for i, j in g.edges:
            w = one / max(deg[i] + 1, deg[j] + 1)
            a[i, j] = a[j, i] = w
        for i in range(n):
            a[i, i] = one - sum(a[i, j] for j in g.neighbors[i])
    else:  # max_degree
        dmax = max(deg) if n else 0
        eps = scheme.epsilon
        if eps is None:
            eps = one / (dmax + 1)
        eps = Fraction(eps) if backend == "exact" else float(eps)
        if eps <= 0 or eps > one / (dmax + 1):
            raise WeightError(f"epsilon {eps} exceeds 1/(d_max+1) = {one / (dmax + 1)}")
        for i, j in g.edges:
            a[i, j] = a[j, i] = eps
        for i in range(n):
            a[i, i] = one - eps * deg[i]
    return inspect_matrix(a)


def _edge_messages(g: GraphSnapshot) -> int:
    return 2 * len(g.edges)


def run_linear(
    x0: Sequence | np.ndarray,
    seq: GraphSequence,
    scheme: WeightScheme,
    stop: Stop,
    backend: str = "exact",
    keep_states: bool = False,
    keep_matrices: bool = False,
) -> RunRecord:
    """Iterate ``x(t+1) = A(t) x(t)``; messages count one value per directed edge."""
    x = vector(x0, backend) if not isinstance(x0, np.ndarray) else convert(x0, backend)
    if len(x) != seq.n:
        raise GraphError(f"state has {len(x)} entries but the sequence has {seq.n} nodes")
    static_w: WeightMatrix | None = None
    if seq.is_static and scheme.kind != "custom":
        static_w = build_weights(scheme, seq.snapshot(0), backend)

    def step(t: int, x: np.ndarray):
        g = seq.snapshot(t)
        w = static_w or build_weights(scheme, g, backend, t)
        if scheme.kind == "custom":
            msgs = int(sum(1 for i in range(g.n) for j in range(g.n) if i != j and w.matrix[i, j] != 0))
        else:
            msgs = _edge_messages(g)
        return w.matrix.dot(x), msgs, (w if keep_matrices else None)

    return iterate(x, step, stop, keep_states=keep_states, keep_traces=keep_matrices)


def run_delayed(
    x0: Sequence | np.ndarray,
    seq: GraphSequence,
    scheme: WeightScheme,
    delays: DelaySchedule,
    stop: Stop,
    backend: str = "exact",
    keep_states: bool = True,
) -> RunRecord:
    """Iterate ``x_i(t+1) = sum_j a_ij(t) x_j(tau(i, j, t))``.

    ``x(s)`` for negative ``s`` is taken to be ``x(0)``.  In bounded mode
    (``delays.bound`` set) the schedule is validated at every use.
    """
    x = vector(x0, backend) if not isinstance(x0, np.ndarray) else convert(x0, backend)
    n = seq.n
    if len(x) != n:
        raise GraphError(f"state has {len(x)} entries but the sequence has {n} nodes")
    history: list[np.ndarray] = [x]

    def step(t: int, xt: np.ndarray):
        g = seq.snapshot(t)
        a = build_weights(scheme, g, backend, t).matrix
        new = xt.copy()
        for i in range(n):
            acc = 0
            for j in range(n):
                if a[i, j] != 0:
                    tau = delays.checked(i, j, t)
                    acc = acc + a[i, j] * history[tau][j]
            new[i] = acc
        history.append(new)
        return new, _edge_messages(g), None

    rec = iterate(x, step, stop, keep_states=keep_states)
    return rec


def delayed_envelope(states: Sequence[np.ndarray], bound: int) -> list[tuple]:
    """Windowed ``(min, max)`` over the last ``bound`` states, per time step."""
    out = []
    for t in range(len(states)):
        window = states[max(0, t - bound + 1) : t + 1]
        out.append((min(min(s) for s in window), max(max(s) for s in window)))
    return out


# ---------------------------------------------------------------------------
# Ratio-of-averages estimation
# ---------------------------------------------------------------------------


@dataclass
class RatioEstimate:
    estimates: list  # per node: value or None while the denominator is zero
    numerator: RunRecord
    denominator: RunRecord


def ratio_estimate(
    values: Sequence,
    variances: Sequence,
    mask: Sequence[bool],
    seq: GraphSequence,
    scheme: WeightScheme,
    stop: Stop,
    backend: str = "exact",
) -> RatioEstimate:
    """Each node's estimate of the inverse-variance weighted mean of measured values.

    Measured nodes start with numerator ``x_i / s_i`` and denominator
    ``1 / s_i`` (``s_i`` the variance); unmeasured nodes start at zero.  Both
    quantities are averaged with the same doubly stochastic weights, and the
    estimate is their ratio, reported as ``None`` while the denominator is 0.
    """
    n = seq.n
    if not (len(values) == len(variances) == len(mask) == n):
        raise GraphError("values, variances, and mask must have one entry per node")
    if not any(mask):
        raise ValueError("at least one node must be measured")
    num, den = [], []
    for v, s, m in zip(values, variances, mask):
        if m:
            s = Fraction(s) if backend == "exact" else float(s)
            if s <= 0:
                raise ValueError("measurement variances must be positive")
            num.append(Fraction(v) / s if backend == "exact" else float(v) / s)
            den.append(1 / s)
        else:
            num.append(0)
            den.append(0)
    probe = build_weights(scheme, seq.snapshot(0), backend)
    if not probe.doubly_stochastic:
        raise WeightError("ratio estimation needs a doubly stochastic scheme")
    # Both iterations run for the same number of steps: drive the denominator by the
    # numerator's stop time.
    rec_x = run_linear(vector(num, backend), seq, scheme, stop, backend)
    rec_y = run_linear(vector(den, backend), seq, scheme, Stop.steps(rec_x.steps), backend)
    est = []
    for xi, yi in zip(rec_x.final, rec_y.final):
        est.append(None if yi == 0 else xi / yi)
    return RatioEstimate(est, rec_x, rec_y)


# ---------------------------------------------------------------------------
# Scripted adversarial scenarios
# ---------------------------------------------------------------------------


def example_epsilon(k: int) -> Fraction:
    """Threshold of repetition ``k >= 1``: ``2^-(k+2)``; these sum to 1/4."""
    return Fraction(1, 2 ** (k + 2))


@dataclass
class ScenarioScript:
    """A pre-simulated scenario: frames, matrices or delays, and phase marks."""

    x0: np.ndarray
    sequence: GraphSequence
    scheme: WeightScheme
    phase_ends: list[int]
    delays: DelaySchedule | None = None
    info: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.phase_ends[-1] if self.phase_ends else 0


PHASE_CAP = 10**6


def example1_script(repetitions: int = 12) -> ScenarioScript:
    """Three nodes emulating the non-convergent cyclic copy ``x_a := x_c, x_c := x_b``.

    Repetition ``k`` uses roles ``a = (k-1) mod 3``, ``b = k mod 3``,
    ``c = (k+1) mod 3`` (a cyclic rotation, so that every pair communicates
    infinitely often).  Sub-phase one lets ``a`` average with ``c`` until
    ``|x_a - x_c| <= eps_k``; sub-phase two lets ``c`` average with ``b``
    until ``|x_c - x_b| <= eps_k``.  Each step is an equal-neighbor update of
    a single receiving node over a one-directional link.
    """
    n = 3
    x = vector([0, 0, 1])
    frames: list[GraphSnapshot] = []
    mats: list[np.ndarray] = []
    ends: list[int] = []

    def listen(receiver: int, sender: int) -> np.ndarray:
        a = identity(n, "exact")
        a[receiver, receiver] = Fraction(1, 2)
        a[receiver, sender] = Fraction(1, 2)
        return a

    for k in range(1, repetitions + 1):
        ra, rb, rc = (k - 1) % 3, k % 3, (k + 1) % 3
        eps = example_epsilon(k)
        for recv, send in ((ra, rc), (rc, rb)):
            a = listen(recv, send)
            g = build_snapshot(n, [(recv, send)])
            steps = 0
            while abs(x[recv] - x[send]) > eps:
                if steps >= PHASE_CAP:
                    raise RuntimeError("scripted phase exceeded its step cap")
                x = a.dot(x)
                frames.append(g)
                mats.append(a)
                steps += 1
            ends.append(len(mats))
    seq = GraphSequence.scripted(frames, repeat="hold-last")
    ident = identity(n, "exact")
    horizon = len(mats)
    scheme = WeightScheme.custom(lambda t: mats[t] if t < horizon else ident)
    return ScenarioScript(vector([0, 0, 1]), seq, scheme, ends, info={"final_state": x})


def example2_script(phases: int = 20) -> ScenarioScript:
    """Two nodes whose partner values are frozen at the start of every phase.

    During phase ``k`` (from ``t_{k-1}`` to ``t_k``) node 0 updates
    ``x_0 := (x_0 + x_1(t_{k-1})) / 2`` and node 1 symmetrically.  The phase
    ends once ``|x_0 - x_1(t_{k-1})| <= eps_k * |x_0(t_{k-1}) - x_1(t_{k-1})|``,
    so the disagreement contracts by exactly ``1 - 2 eps_k`` per phase while
    the delays ``t - t_{k-1}`` grow without bound.
    """
    x = vector([0, 1])
    starts: list[int] = []
    ends: list[int] = []
    t = 0
    for k in range(1, phases + 1):
        eps = example_epsilon(k)
        ref = x.copy()
        gap = abs(ref[0] - ref[1])
        starts.append(t)
        steps = 0
        while True:
            x = vector([(x[0] + ref[1]) / 2, (x[1] + ref[0]) / 2])
            t += 1
            steps += 1
            if abs(x[0] - ref[1]) <= eps * gap or steps >= PHASE_CAP:
                break
        ends.append(t)

    def tau(i: int, j: int, time: int) -> int:
        for s, e in zip(starts, ends):
            if s <= time < e:
                return s
        return time

    g = build_snapshot(2, [(0, 1)])
    seq = GraphSequence.static(g)
    delays = DelaySchedule("scripted", script=tau, bound=None)
    return ScenarioScript(
        vector([0, 1]),
        seq,
        WeightScheme("metropolis"),
        ends,
        delays=delays,
        info={"phase_starts": starts},
    )


def example2_floor(phases: int) -> Fraction:
    """Lower bound ``prod_k (1 - 2 eps_k)`` on the disagreement after ``phases`` phases."""
    out = Fraction(1)
    for k in range(1, phases + 1):
        out *= 1 - 2 * example_epsilon(k)
    return out
