"""Computing functions of the value frequencies with finite-state nodes.

A linear predicate ``sum_k a_k p_k <= a`` over the frequencies ``p_k`` of
the input values is turned into an interval-averaging instance on integer
per-node quantities ``q_i``.  The interval that instance reports then decides
the predicate.  Box functions combine such predicates into labelled level
sets.  The module also holds the one-bit detection automaton, the exact
frequency computation that uses one interval-averaging machine per
denominator, and the ring self-concatenation check.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Callable, Mapping, Sequence

from .graph import GraphError, GraphSnapshot, labeled_ring
from .interval_averaging import IaMachine, IntervalAveragingAutomaton, OutputInterval, run_interval_averaging
from .network import Automaton, Outbox, simulate
from .numeric import to_fraction

# ---------------------------------------------------------------- detection


class DetectionAutomaton:
    """One-bit flooding: a node's bit turns on once its input or any neighbor's bit is 1.

    The state is ``(x, z)`` with input ``x`` and bit ``z``; ``z`` starts at 0
    and every round each node broadcasts its current ``z``.
    """

    def init(self, value: int, ports: Sequence[int]) -> tuple[tuple[int, int], Outbox]:
        if value not in (0, 1):
            raise ValueError("detection inputs are bits")
        return (value, 0), {p: 0 for p in ports}

    def step(self, state: tuple[int, int], inbox: Mapping[int, int], ports: Sequence[int]):
        x, z = state
        z = 1 if (x == 1 or z == 1 or any(m == 1 for m in inbox.values())) else 0
        return (x, z), {p: z for p in ports}


def detect_one(x: Sequence[int], g: GraphSnapshot, horizon: int) -> list[list[int]]:
    """Per-round outputs: entry ``r`` lists every node's bit after round ``r`` (0-based).

    A node at distance ``d`` from the nearest 1 outputs 1 from round ``d`` on.
    """
    if not g.is_connected():
        raise GraphError("detection needs a connected graph")
    trace = simulate(DetectionAutomaton(), list(x), g, horizon)
    return [[z for _, z in states] for states in trace[1:]]


# ---------------------------------------------------------------- predicates


@dataclass(frozen=True)
class CompiledPredicate:
    """Integer form of a linear predicate.

    ``q_i = sum_{k in positive} beta_k [x_i = k] + sum_{k not in positive} beta_k [x_i != k]``
    and the predicate holds iff ``mean(q) <= q_star`` (``<`` when strict).
    """

    beta: tuple[int, ...]
    positive: frozenset[int]
    scaled_rhs: int
    q_star: int
    strict: bool

    @property
    def alphabet(self) -> int:
        """Largest attainable ``q_i`` used as the interval-averaging alphabet."""
        return sum(self.beta)

    def q_value(self, x: int) -> int:
        return sum(
            b if (k == x) == (k in self.positive) else 0 for k, b in enumerate(self.beta)
        )

    def q_vector(self, xs: Sequence[int]) -> list[int]:
        return [self.q_value(v) for v in xs]

    def decide(self, out: OutputInterval) -> bool:
        """Decide from an interval ``{k}`` or ``(k, k+1)`` that contains ``mean(q)``."""
        if out.open:
            return out.low + 1 <= self.q_star
        return out.low < self.q_star if self.strict else out.low <= self.q_star


@dataclass(frozen=True)
class LinearPredicate:
    """``sum_k coeffs[k] * p_k <= rhs`` (or ``<`` when ``strict``) over values ``0..K``."""

    coeffs: tuple[Fraction, ...]
    rhs: Fraction
    strict: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "coeffs", tuple(_rational(c) for c in self.coeffs))
        object.__setattr__(self, "rhs", _rational(self.rhs))
        if not self.coeffs:
            raise ValueError("a predicate needs at least one coefficient")

    @property
    def K(self) -> int:
        return len(self.coeffs) - 1

    def holds(self, freqs: Sequence[Fraction]) -> bool:
        """Exact evaluation on a frequency vector."""
        lhs = sum(c * p for c, p in zip(self.coeffs, freqs))
        return lhs < self.rhs if self.strict else lhs <= self.rhs

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "LinearPredicate":
        return cls(tuple(data["coeffs"]), data["rhs"], bool(data.get("strict", False)))


def _rational(v: Any) -> Fraction:
    if isinstance(v, float):
        raise TypeError("predicate coefficients must be exact rationals (int, Fraction or 'p/q'), not floats")
    return to_fraction(v)


def compile_predicate(pred: LinearPredicate) -> CompiledPredicate:
    """Clear denominators and split coefficients by sign."""
    scale = math.lcm(*(c.denominator for c in pred.coeffs), pred.rhs.denominator)
    gamma = [int(c * scale) for c in pred.coeffs]
    rhs = int(pred.rhs * scale)
    positive = frozenset(k for k, v in enumerate(gamma) if v >= 0)
    beta = tuple(abs(v) for v in gamma)
    q_star = rhs + sum(b for k, b in enumerate(beta) if k not in positive)
    return CompiledPredicate(beta, positive, rhs, q_star, pred.strict)


def frequencies(xs: Sequence[int], K: int) -> list[Fraction]:
    n = len(xs)
    counts = [0] * (K + 1)
    for v in xs:
        if not 0 <= v <= K:
            raise ValueError(f"value {v} outside alphabet 0..{K}")
        counts[v] += 1
    return [Fraction(c, n) for c in counts]


# ---------------------------------------------------------------- evaluation


def graph_key(g: GraphSnapshot) -> tuple:
    return (g.n, tuple(sorted(g.edges)), tuple(tuple(sorted(m.items())) for m in g.ports))


class IaCache:
    """Memoizes interval-averaging outputs by graph, alphabet and input vector."""

    def __init__(self, max_entries: int = 200_000):
        self.max_entries = max_entries
        self._store: dict[tuple, tuple[list, int]] = {}
        self.hits = 0
        self.misses = 0

    def run(self, q: Sequence[int], g: GraphSnapshot, K: int, gkey: tuple | None = None) -> tuple[list, int]:
        key = (gkey or graph_key(g), K, tuple(q))
        hit = self._store.get(key)
        if hit is not None:
            self.hits += 1
            return hit
        self.misses += 1
        res = run_interval_averaging(list(q), g, K)
        if not res.settled or any(o is None for o in res.outputs):
            raise RuntimeError("interval averaging did not settle within its round cap")
        value = (res.outputs, res.rounds)
        if len(self._store) >= self.max_entries:
            self._store.clear()
        self._store[key] = value
        return value


DEFAULT_CACHE = IaCache()


def evaluate_predicate(
    pred: LinearPredicate, xs: Sequence[int], g: GraphSnapshot, cache: IaCache | None = None
) -> tuple[list[bool], int]:
    """Per-node decisions and the round count of the underlying instance."""
    comp = compile_predicate(pred)
    q = comp.q_vector(xs)
    outputs, rounds = (cache or DEFAULT_CACHE).run(q, g, comp.alphabet)
    return [comp.decide(o) for o in outputs], rounds


@dataclass(frozen=True)
class BoxCase:
    label: Any
    any_of: tuple[tuple[LinearPredicate, ...], ...]


@dataclass(frozen=True)
class BoxFunction:
    """Labelled level sets, each a union of intersections of linear predicates."""

    K: int
    cases: tuple[BoxCase, ...]

    def __post_init__(self) -> None:
        for case in self.cases:
            for clause in case.any_of:
                for pred in clause:
                    if pred.K != self.K:
                        raise ValueError(f"predicate over {pred.K + 1} values in a function over {self.K + 1}")

    @property
    def predicates(self) -> list[LinearPredicate]:
        seen: dict[LinearPredicate, None] = {}
        for case in self.cases:
            for clause in case.any_of:
                for pred in clause:
                    seen.setdefault(pred, None)
        return list(seen)

    def label_from(self, truth: Callable[[LinearPredicate], bool]) -> Any:
        """The unique label whose level set fires; raises when none or several fire."""
        fired = [c.label for c in self.cases if any(all(truth(p) for p in clause) for clause in c.any_of)]
        if len(fired) != 1:
            raise LevelSetError(f"expected exactly one label to fire, got {fired}")
        return fired[0]

    def oracle(self, xs: Sequence[int]) -> Any:
        """Evaluate directly on the exact frequencies."""
        freqs = frequencies(xs, self.K)
        return self.label_from(lambda p: p.holds(freqs))

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "BoxFunction":
        cases = tuple(
            BoxCase(
                c["label"],
                tuple(tuple(LinearPredicate.from_dict(p) for p in clause["all_of"]) for clause in c["any_of"]),
            )
            for c in data["cases"]
        )
        return cls(int(data["alphabet"]), cases)

    @classmethod
    def from_json(cls, text: str) -> "BoxFunction":
        return cls.from_dict(json.loads(text))


class LevelSetError(ValueError):
    """Raised when the level sets of a box function overlap or miss the queried point."""


def eval_frequency_function(
    f: BoxFunction, xs: Sequence[int], g: GraphSnapshot, cache: IaCache | None = None
) -> list[Any]:
    """Per-node labels; one interval-averaging instance per distinct predicate."""
    if len(xs) != g.n:
        raise GraphError("input size does not match the graph")
    if not g.is_connected():
        raise GraphError("function computation needs a connected graph")
    gkey = graph_key(g)
    store = cache or DEFAULT_CACHE
    decisions: dict[LinearPredicate, list[bool]] = {}
    for pred in f.predicates:
        comp = compile_predicate(pred)
        outputs, _ = store.run(comp.q_vector(xs), g, comp.alphabet, gkey)
        decisions[pred] = [comp.decide(o) for o in outputs]
    return [f.label_from(lambda p, i=i: decisions[p][i]) for i in range(g.n)]


# ---------------------------------------------------------------- common functions


def beats(j: int, k: int, K: int) -> LinearPredicate:
    """``j`` is strictly more frequent than ``k``, or equally frequent with a smaller value."""
    coeffs = [Fraction(0)] * (K + 1)
    coeffs[k] += 1
    coeffs[j] -= 1
    return LinearPredicate(tuple(coeffs), Fraction(0), strict=j > k)


def kth_most_popular(K: int, rank: int) -> BoxFunction:
    """Label ``k`` fires when exactly ``rank - 1`` values beat ``k``."""
    from itertools import combinations

    cases = []
    for k in range(K + 1):
        others = [j for j in range(K + 1) if j != k]
        clauses = []
        for winners in combinations(others, rank - 1):
            clause = [beats(j, k, K) for j in winners]
            clause += [beats(k, j, K) for j in others if j not in winners]
            clauses.append(tuple(clause))
        cases.append(BoxCase(k, tuple(clauses)))
    return BoxFunction(K, tuple(cases))


def popularity_rank_oracle(xs: Sequence[int], K: int, rank: int) -> int:
    """Sort values by count (descending, ties by value) and return the one at ``rank``."""
    counts = [0] * (K + 1)
    for v in xs:
        counts[v] += 1
    order = sorted(range(K + 1), key=lambda v: (-counts[v], v))
    return order[rank - 1]


def predicate_function(pred: LinearPredicate, true_label: Any = True, false_label: Any = False) -> BoxFunction:
    """Two-label box function for a single predicate and its negation."""
    negated = LinearPredicate(tuple(-c for c in pred.coeffs), -pred.rhs, strict=not pred.strict)
    return BoxFunction(pred.K, (BoxCase(true_label, ((pred,),)), BoxCase(false_label, ((negated,),))))


# ---------------------------------------------------------------- exact frequency


@dataclass
class ExactFrequencyResult:
    estimates: list[Fraction | None]
    machines_used: int
    interleaved_steps: int

    @property
    def settled(self) -> bool:
        return all(e is not None for e in self.estimates)


def exact_frequency(x: Sequence[int], g: GraphSnapshot, budget: int, max_steps: int | None = None) -> ExactFrequencyResult:
    """Frequency of 1s computed with a growing bank of interval-averaging machines.

    Machine ``m`` runs on inputs ``m * x_i`` with alphabet ``0..m``; a
    singleton output ``{y}`` means the frequency is exactly ``y / m``.  The
    machines advance in the triangular interleaving ``1; 1, 2; 1, 2, 3; ...``
    (capped at ``budget`` machines) until, for every node,
    the smallest machine with a singleton output has been found among
    settled machines (or all machines up to ``budget`` settled without one).
    """
    if any(v not in (0, 1) for v in x):
        raise ValueError("exact_frequency takes binary inputs")
    if budget < 1:
        raise ValueError("budget must be positive")
    machines: dict[int, IaMachine] = {}
    cap = max_steps if max_steps is not None else 200 * budget * budget * g.n * g.n * (budget + 1) ** 2
    steps = 0

    def decided() -> list[Fraction | None] | None:
        result: list[Fraction | None] = []
        for i in range(g.n):
            found: Fraction | None = None
            for m in range(1, budget + 1):
                mach = machines.get(m)
                if mach is None or not mach.settled:
                    return None
                out = mach.outputs[i]
                if out is not None and not out.open:
                    found = Fraction(out.low, m)
                    break
            result.append(found)
        return result

    cycle = 1
    while steps < cap:
        for m in range(1, min(cycle, budget) + 1):
            if m not in machines:
                machines[m] = IaMachine([m * v for v in x], g, m)
            machines[m].step()
            steps += 1
        done = decided()
        if done is not None:
            return ExactFrequencyResult(done, len(machines), steps)
        cycle += 1
    return ExactFrequencyResult([None] * g.n, len(machines), steps)


# ---------------------------------------------------------------- ring equivalence


@dataclass
class RingEquivalenceReport:
    equivalent: bool
    first_mismatch: tuple[int, int] | None  # (round, base node)
    rounds: int


def ring_equivalence_check(automaton: Automaton, x: Sequence[Any], m: int, rounds: int = 500) -> RingEquivalenceReport:
    """Compare node ``j`` of the labeled ring with nodes ``j, j+n, ...`` of its ``m``-fold repetition."""
    n = len(x)
    if m < 1:
        raise ValueError("repeat factor must be positive")
    small = simulate(automaton, list(x), labeled_ring(n), rounds)
    big = simulate(automaton, list(x) * m, labeled_ring(n, m), rounds)
    for t in range(rounds + 1):
        for j in range(n):
            for copy in range(m):
                if small[t][j] != big[t][j + copy * n]:
                    return RingEquivalenceReport(False, (t, j), rounds)
    return RingEquivalenceReport(True, None, rounds)


__all__ = [
    "DetectionAutomaton",
    "detect_one",
    "LinearPredicate",
    "CompiledPredicate",
    "compile_predicate",
    "frequencies",
    "BoxCase",
    "BoxFunction",
    "LevelSetError",
    "IaCache",
    "evaluate_predicate",
    "eval_frequency_function",
    "beats",
    "kth_most_popular",
    "popularity_rank_oracle",
    "predicate_function",
    "exact_frequency",
    "ExactFrequencyResult",
    "ring_equivalence_check",
    "RingEquivalenceReport",
    "IntervalAveragingAutomaton",
]
