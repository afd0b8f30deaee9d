"""Self-stabilizing tracking of the maximum (or minimum) of time-varying inputs.

Each node keeps an estimate ``M`` and a pointer ``P`` (a local port or
``SELF``) and broadcasts one message per round: either ``Restart`` or
``Estimate(M)``.  During slot ``t`` a node reads the messages sent at time
``t`` and its current input ``u(t)``, then applies the first rule that fits:

* O1: the input changed (``u(t) != u(t-1)``).  Set ``M = u(t)``,
  ``P = SELF`` and broadcast ``Restart``.
* O4a: ``P`` is a port and the neighbor behind it sent ``Restart``.  Set
  ``M = u(t)``, ``P = SELF`` and broadcast ``Restart``.
* O2: some neighbor sent an estimate strictly larger than ``M``.  Adopt the
  largest one (lowest port on ties), point at its sender and broadcast
  ``Restart``.
* O3 (``P = SELF``) or O4b (``P`` is a port): keep ``M`` and ``P`` and
  broadcast ``Estimate(M)``.

Because adopting an estimate costs one ``Restart`` round before the estimate
is re-broadcast, estimates cross one edge every two rounds while restarts
cross one edge per round.  That speed gap lets restarts overtake stale
estimates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from .graph import GraphError, GraphSnapshot
from .network import broadcast, check_inbox, deliver

SELF = -1  # pointer value meaning "this node"


@dataclass(frozen=True)
class Restart:
    pass


@dataclass(frozen=True)
class Estimate:
    value: Any


RESTART = Restart()
MtMessage = Restart | Estimate

OPERATIONS = ("O1", "O2", "O3", "O4a", "O4b")


@dataclass(frozen=True)
class MaxTrackState:
    """Estimate, pointer (port or ``SELF``) and the input seen in the previous slot."""

    M: Any
    P: int
    u_prev: Any


def mt_init(u0: Any) -> tuple[MaxTrackState, MtMessage]:
    """Initial state ``M = u(0)``, ``P = SELF`` and the first broadcast."""
    return MaxTrackState(u0, SELF, u0), Estimate(u0)


def mt_step(state: MaxTrackState, u: Any, inbox: Mapping[int, MtMessage]) -> tuple[MaxTrackState, MtMessage, str]:
    """One slot of a single node: returns the new state, its broadcast and the rule applied."""
    if u != state.u_prev:
        return MaxTrackState(u, SELF, u), RESTART, "O1"
    if state.P != SELF and isinstance(inbox.get(state.P), Restart):
        return MaxTrackState(u, SELF, u), RESTART, "O4a"
    best_port, best = None, state.M
    for port in sorted(inbox):
        msg = inbox[port]
        if isinstance(msg, Estimate) and msg.value > best:
            best_port, best = port, msg.value
    if best_port is not None:
        return MaxTrackState(best, best_port, u), RESTART, "O2"
    return MaxTrackState(state.M, state.P, u), Estimate(state.M), "O3" if state.P == SELF else "O4b"


def mt_round(
    states: Sequence[MaxTrackState],
    inputs: Sequence[Any],
    g: GraphSnapshot,
    inbox: Sequence[Mapping[int, MtMessage]],
) -> tuple[list[MaxTrackState], list[MtMessage], list[str]]:
    """Advance every node by one slot; returns states, per-node broadcasts, rules applied."""
    if not (len(states) == len(inputs) == len(inbox) == g.n):
        raise GraphError("states, inputs and inboxes must have one entry per node")
    new_states, sent, ops = [], [], []
    for i in range(g.n):
        check_inbox(g, i, inbox[i])
        s, m, op = mt_step(states[i], inputs[i], inbox[i])
        new_states.append(s)
        sent.append(m)
        ops.append(op)
    return new_states, sent, ops


def deliver_broadcasts(g: GraphSnapshot, sent: Sequence[Any]) -> list[dict[int, Any]]:
    return deliver(g, [broadcast(g, i, sent[i]) for i in range(g.n)])


# ---------------------------------------------------------------- invariants


def pointer_graph(g: GraphSnapshot, states: Sequence[MaxTrackState], inbox: Sequence[Mapping[int, MtMessage]]) -> dict[int, int]:
    """Edges ``i -> P_i`` for pointers whose target did not just send ``Restart``."""
    edges = {}
    for i, s in enumerate(states):
        if s.P == SELF:
            continue
        if isinstance(inbox[i].get(s.P), Restart):
            continue
        edges[i] = g.neighbor_at(i, s.P)
    return edges


def is_forest(edges: Mapping[int, int]) -> bool:
    """A functional graph is a forest iff following edges never revisits a node."""
    done: set[int] = set()
    for start in edges:
        path: set[int] = set()
        v = start
        while v in edges and v not in done:
            if v in path:
                return False
            path.add(v)
            v = edges[v]
        done |= path
    return True


@dataclass
class InvariantReport:
    forest: bool = True
    constant_on_edges: bool = True
    self_pointer_matches_input: bool = True
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.forest and self.constant_on_edges and self.self_pointer_matches_input


def audit_state(
    g: GraphSnapshot,
    states: Sequence[MaxTrackState],
    inbox: Sequence[Mapping[int, MtMessage]],
    report: InvariantReport,
    t: int,
) -> None:
    """Check the structural invariants at time ``t`` and record any violation."""
    edges = pointer_graph(g, states, inbox)
    if not is_forest(edges):
        report.forest = False
        report.violations.append(f"t={t}: pointer graph has a cycle")
    for i, j in edges.items():
        if states[i].M != states[j].M:
            report.constant_on_edges = False
            report.violations.append(f"t={t}: estimates differ along pointer {i}->{j}")
    for i, s in enumerate(states):
        if s.P == SELF and s.M != s.u_prev:
            report.self_pointer_matches_input = False
            report.violations.append(f"t={t}: node {i} points at itself with M != previous input")
        if s.P != SELF and not s.M > s.u_prev:
            report.self_pointer_matches_input = False
            report.violations.append(f"t={t}: node {i} points away with M <= previous input")


# ---------------------------------------------------------------- runs


@dataclass(frozen=True)
class InputSchedule:
    """Piecewise-constant inputs: initial values plus ``(time, node, value)`` change events."""

    initial: tuple
    changes: tuple[tuple[int, int, Any], ...] = ()

    def __post_init__(self) -> None:
        for t, i, _ in self.changes:
            if t < 0 or not 0 <= i < len(self.initial):
                raise ValueError(f"bad change event at time {t} for node {i}")

    @property
    def last_change(self) -> int:
        return max((t for t, _, _ in self.changes), default=0)

    def inputs_at(self, t: int) -> list:
        u = list(self.initial)
        for when, i, v in sorted(self.changes, key=lambda c: c[0]):
            if when <= t:
                u[i] = v
        return u

    @classmethod
    def constant(cls, values: Sequence) -> "InputSchedule":
        return cls(tuple(values))

    @classmethod
    def from_json(cls, text: str, initial: Sequence) -> "InputSchedule":
        """Parse a JSON list of ``{"node", "time", "value"}`` change events."""
        events = json.loads(text)
        return cls(tuple(initial), tuple((int(e["time"]), int(e["node"]), e["value"]) for e in events))


@dataclass
class MaxTrackRecord:
    states: list[list[MaxTrackState]]
    ops: list[list[str]]
    settle_time: int | None
    settled: bool
    invariants: InvariantReport
    largest_estimate: list[Any]  # max_i M_i(t) in the internal (possibly negated) value space
    mode: str = "max"

    def estimates(self, t: int) -> list:
        """Estimates at time ``t`` in the caller's value space (negated back in min mode)."""
        sign = 1 if self.mode == "max" else -1
        return [sign * s.M for s in self.states[t]]

    @property
    def final_estimates(self) -> list:
        return self.estimates(len(self.states) - 1)


def _stable_from(history: list[tuple], start: int) -> int | None:
    """Earliest ``t >= start`` after which the history entries never change."""
    last = len(history) - 1
    t = last
    while t > start and history[t - 1] == history[last]:
        t -= 1
    return t if t < last else None


def run_max_tracking(
    schedule: InputSchedule,
    g: GraphSnapshot,
    horizon: int,
    mode: str = "max",
    audit: bool = True,
) -> MaxTrackRecord:
    """Simulate ``horizon`` slots and locate the time after which ``(M, P)`` stop changing.

    The settle time is the first time ``t >= last change`` from which every
    node's estimate and pointer keep their final values until the horizon and
    the final estimates equal the true extremum.  A horizon too short to
    observe this reports ``settled=False``.  In ``min`` mode the automaton
    runs on negated inputs.
    """
    if mode not in ("max", "min"):
        raise ValueError(f"unknown tracking mode {mode!r}")
    if len(schedule.initial) != g.n:
        raise GraphError("schedule size does not match the graph")
    sign = 1 if mode == "max" else -1
    u0 = [sign * v for v in schedule.inputs_at(0)]
    init = [mt_init(v) for v in u0]
    states = [s for s, _ in init]
    inbox = deliver_broadcasts(g, [m for _, m in init])
    history = [states]
    ops_hist: list[list[str]] = []
    report = InvariantReport()
    for t in range(horizon):
        if audit:
            audit_state(g, states, inbox, report, t)
        u = [sign * v for v in schedule.inputs_at(t)]
        states, sent, ops = mt_round(states, u, g, inbox)
        inbox = deliver_broadcasts(g, sent)
        history.append(states)
        ops_hist.append(ops)
    if audit:
        audit_state(g, states, inbox, report, horizon)

    final_u = [sign * v for v in schedule.inputs_at(horizon)]
    target = max(final_u)
    keyed = [tuple((s.M, s.P) for s in st) for st in history]
    settle = _stable_from(keyed, schedule.last_change)
    correct = all(s.M == target for s in states)
    settled = settle is not None and correct and _pointers_reach_maximizer(g, states, final_u, target)
    largest = [max(s.M for s in st) for st in history]
    return MaxTrackRecord(history, ops_hist, settle if settled else None, settled, report, largest, mode)


def _pointers_reach_maximizer(g: GraphSnapshot, states: Sequence[MaxTrackState], u: Sequence, target: Any) -> bool:
    for i in range(g.n):
        j = follow_pointers(g, states, i, g.n)
        if u[j] != target or states[j].P != SELF:
            return False
    return True


def follow_pointers(g: GraphSnapshot, states: Sequence[MaxTrackState], i: int, hops: int) -> int:
    """Node reached from ``i`` after at most ``hops`` pointer hops (stops at ``SELF``)."""
    v = i
    for _ in range(hops):
        if states[v].P == SELF:
            break
        v = g.neighbor_at(v, states[v].P)
    return v


def state_bits(state: MaxTrackState, alphabet_size: int, degree: int) -> int:
    """Bits needed to encode one node's state: two alphabet values and one pointer."""
    return 2 * max(1, (alphabet_size - 1).bit_length()) + max(1, degree.bit_length())
