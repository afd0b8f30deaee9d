"""Constant-memory interval averaging by pebble exchange.

Each node holds ``u`` pebbles (an integer in ``0..K``) and runs a max tracker
and a min tracker on its own pebble count.  A node whose max tracker shows
an estimate at least two above its count sends ``Request(u)`` along its max
pointer.  A free node with at least two pebbles more than the requester
accepts and hands over ``floor((u - r) / 2)`` pebbles.  Otherwise it forwards
the request along its own pointer when that can still help, or denies it
with ``Accept(0)``.  Forwarding nodes are Blocked until the answer comes back.  The
pebble total never changes, and each accepted transfer lowers the sum of
squared deviations by at least 2.  The counts therefore settle within one of
each other, and the trackers then report the interval holding the mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Mapping, NamedTuple, Sequence

from .graph import GraphError, GraphSnapshot
from .max_tracking import SELF, MaxTrackState, MtMessage, mt_init, mt_step
from .network import check_inbox, deliver

FREE = "Free"
BLOCKED = "Blocked"
NONE = None  # unset request pointer


@dataclass(frozen=True)
class Request:
    r: int


@dataclass(frozen=True)
class Accept:
    w: int  # 0 means the request was denied


@dataclass(frozen=True)
class IaPacket:
    """Everything one node sends on one port in one round."""

    max_msg: MtMessage
    min_msg: MtMessage
    protocol: tuple = ()  # Request/Accept messages, usually at most one


@dataclass(frozen=True)
class IaNodeState:
    u: int
    mode: str
    rin: int | None  # port of the upstream requester, SELF for an originator, None when Free
    rout: int | None  # port the request was sent to, None when Free
    mx: MaxTrackState
    mn: MaxTrackState  # runs on negated counts

    @property
    def max_estimate(self) -> int:
        return self.mx.M

    @property
    def min_estimate(self) -> int:
        return -self.mn.M


class OutputInterval(NamedTuple):
    """Element of ``{0}, (0,1), {1}, ..., {K}``: ``{low}`` or the open interval ``(low, low+1)``."""

    low: int
    open: bool

    def contains(self, value: Fraction) -> bool:
        if self.open:
            return self.low < value < self.low + 1
        return value == self.low

    def __str__(self) -> str:
        return f"({self.low},{self.low + 1})" if self.open else f"{{{self.low}}}"


def oracle_interval(values: Sequence[int]) -> OutputInterval:
    """Element of the output set containing the exact mean of ``values``."""
    mean = Fraction(sum(values), len(values))
    k = mean.numerator // mean.denominator
    return OutputInterval(k, mean != k)


def node_output(state: IaNodeState) -> OutputInterval | None:
    """Output read off the trackers; ``None`` while they are more than one apart."""
    hi, lo = state.max_estimate, state.min_estimate
    if hi == lo:
        return OutputInterval(lo, False)
    if hi == lo + 1:
        return OutputInterval(lo, True)
    return None


def log2_ceil(k: int) -> int:
    """Bits needed to send a value in ``0..k`` (at least 1)."""
    return max(1, k.bit_length())


def ia_init(u0: int) -> tuple[IaNodeState, IaPacket]:
    mx, mx_msg = mt_init(u0)
    mn, mn_msg = mt_init(-u0)
    return IaNodeState(u0, FREE, NONE, NONE, mx, mn), IaPacket(mx_msg, mn_msg)


@dataclass
class SlotEvents:
    accepted: int = 0  # pebbles handed over by an acceptance in this slot (0 if none)
    originated: bool = False
    forwarded: bool = False
    fulfilled: int = 0


def ia_step(
    state: IaNodeState, inbox: Mapping[int, IaPacket], ports: Sequence[int]
) -> tuple[IaNodeState, dict[int, IaPacket], SlotEvents]:
    """One slot of one node.  ``ports`` lists the node's ports."""
    requests: dict[int, int] = {}
    accepts: dict[int, int] = {}
    for port, pkt in inbox.items():
        for m in pkt.protocol:
            if isinstance(m, Request):
                requests[port] = m.r
            elif isinstance(m, Accept):
                accepts[port] = m.w
            else:
                raise ValueError(f"malformed protocol message {m!r}")

    u = state.u
    unchanged = u == state.mx.u_prev
    M, P = state.mx.M, state.mx.P
    mode, rin, rout = state.mode, state.rin, state.rout
    out: dict[int, list] = {}
    ev = SlotEvents()

    def send(port: int, msg: Any) -> None:
        out.setdefault(port, []).append(msg)

    if mode == BLOCKED:
        for port in requests:
            send(port, Accept(0))
        stray = set(accepts) - {rout}
        if stray:
            raise ValueError(f"accept received on ports {sorted(stray)} that carry no request")
        if rout in accepts:
            w = accepts[rout]
            if rin == SELF:
                u += w
                ev.fulfilled = w
            else:
                send(rin, Accept(w))  # type: ignore[arg-type]
            mode, rin, rout = FREE, NONE, NONE
    else:
        if accepts:
            raise ValueError("a free node received an accept")
        if requests:
            first = min(requests)
            for port in requests:
                if port != first:
                    send(port, Accept(0))
            r = requests[first]
            if u - r >= 2:
                w = (u - r) // 2
                u -= w
                send(first, Accept(w))
                ev.accepted = w
            elif unchanged and r < M - 1 and P != SELF:
                send(P, Request(r))
                mode, rin, rout = BLOCKED, first, P
                ev.forwarded = True
            else:
                send(first, Accept(0))
        elif unchanged and M >= u + 2 and P != SELF:
            send(P, Request(u))
            mode, rin, rout = BLOCKED, SELF, P
            ev.originated = True

    max_inbox = {p: pkt.max_msg for p, pkt in inbox.items()}
    min_inbox = {p: pkt.min_msg for p, pkt in inbox.items()}
    mx, mx_msg, _ = mt_step(state.mx, state.u, max_inbox)
    mn, mn_msg, _ = mt_step(state.mn, -state.u, min_inbox)
    new = IaNodeState(u, mode, rin, rout, mx, mn)
    outbox = {p: IaPacket(mx_msg, mn_msg, tuple(out.get(p, ()))) for p in ports}
    return new, outbox, ev


def ia_round(
    states: Sequence[IaNodeState], g: GraphSnapshot, inbox: Sequence[Mapping[int, IaPacket]]
) -> tuple[list[IaNodeState], list[dict[int, IaPacket]], list[SlotEvents]]:
    """Advance every node one slot and route the resulting packets."""
    if len(states) != g.n or len(inbox) != g.n:
        raise GraphError("one state and one inbox per node are required")
    new_states, outboxes, events = [], [], []
    for i in range(g.n):
        check_inbox(g, i, inbox[i])
        s, box, ev = ia_step(states[i], inbox[i], [p for p, _ in g.sorted_ports(i)])
        new_states.append(s)
        outboxes.append(box)
        events.append(ev)
    return new_states, deliver(g, outboxes), events


# ---------------------------------------------------------------- audit


def in_flight_credit(g: GraphSnapshot, states: Sequence[IaNodeState], inbox: Sequence[Mapping[int, IaPacket]]) -> list[int]:
    """Pebbles carried by accept messages, credited to the node that originated the request."""
    credit = [0] * g.n
    for j in range(g.n):
        for pkt in inbox[j].values():
            for m in pkt.protocol:
                if isinstance(m, Accept) and m.w > 0:
                    credit[_originator(g, states, j)] += m.w
    return credit


def _originator(g: GraphSnapshot, states: Sequence[IaNodeState], j: int) -> int:
    seen = set()
    v = j
    while states[v].rin != SELF:
        if v in seen or states[v].mode != BLOCKED:
            raise AssertionError(f"request chain through node {j} is broken")
        seen.add(v)
        v = g.neighbor_at(v, states[v].rin)  # type: ignore[arg-type]
    return v


def request_paths_consistent(g: GraphSnapshot, states: Sequence[IaNodeState]) -> bool:
    """Every forwarding node's upstream neighbor is Blocked and points back at it."""
    for j, s in enumerate(states):
        if (s.mode == BLOCKED) != (s.rout is not None):
            return False
        if s.rout == SELF:
            return False
        if s.mode == BLOCKED and s.rin != SELF:
            k = g.neighbor_at(j, s.rin)  # type: ignore[arg-type]
            ks = states[k]
            if ks.mode != BLOCKED or ks.rout is None or g.neighbor_at(k, ks.rout) != j:
                return False
    return True


@dataclass
class AuditStep:
    t: int
    total: int
    audit_variance: Fraction
    acceptances: int
    paths_ok: bool


@dataclass
class AuditTrace:
    total: int
    mean: Fraction
    steps: list[AuditStep] = field(default_factory=list)


def _audit_step(t: int, g, states, inbox, mean, acceptances) -> AuditStep:
    credit = in_flight_credit(g, states, inbox)
    hat = [s.u + c for s, c in zip(states, credit)]
    v = sum((h - mean) ** 2 for h in hat)
    return AuditStep(t, sum(hat), v, acceptances, request_paths_consistent(g, states))


@dataclass
class AuditVerdict:
    conserved: bool
    nonincreasing: bool
    drops_on_acceptance: bool
    paths_ok: bool
    total_acceptances: int
    acceptance_bound: Fraction

    @property
    def ok(self) -> bool:
        return (
            self.conserved
            and self.nonincreasing
            and self.drops_on_acceptance
            and self.paths_ok
            and self.total_acceptances <= self.acceptance_bound
        )


def conservation_audit(trace: AuditTrace | None, n: int | None = None, K: int | None = None) -> AuditVerdict:
    """Check sum conservation and the audit variance decrease over a recorded run.

    ``steps[t].acceptances`` counts accepted transfers made during slot
    ``t - 1``, so the drop of at least 2 is checked between consecutive steps.
    """
    if trace is None:
        raise ValueError("the run was not audited")
    steps = trace.steps
    conserved = all(s.total == trace.total for s in steps)
    noninc, drops = True, True
    for prev, cur in zip(steps, steps[1:]):
        diff = prev.audit_variance - cur.audit_variance
        if diff < 0:
            noninc = False
        if cur.acceptances and diff < 2:
            drops = False
    total = sum(s.acceptances for s in steps)
    bound = Fraction(n * K * K, 8) if n is not None and K is not None else Fraction(10**18)
    return AuditVerdict(conserved, noninc, drops, all(s.paths_ok for s in steps), total, bound)


# ---------------------------------------------------------------- runs


@dataclass
class IaResult:
    outputs: list[OutputInterval | None]
    rounds: int
    bit_rounds: int
    settled: bool
    final_u: list[int]
    acceptances: int
    audit: AuditTrace | None = None
    history: list[list[IaNodeState]] | None = None

    @property
    def agreed_output(self) -> OutputInterval | None:
        first = self.outputs[0]
        return first if all(o == first for o in self.outputs) else None

    def to_dict(self) -> dict:
        return {
            "outputs": [None if o is None else str(o) for o in self.outputs],
            "rounds": self.rounds,
            "bit_rounds": self.bit_rounds,
            "settled": self.settled,
            "final_u": self.final_u,
            "acceptances": self.acceptances,
        }


def default_round_cap(n: int, K: int) -> int:
    return 40 * n * n * (K + 1) * (K + 1) + 100


class IaMachine:
    """Steppable interval-averaging instance on a fixed graph.

    ``settled`` becomes true once a round maps the global configuration
    (node states and messages in flight) to itself.  The round function is
    deterministic and the inputs are fixed, so such a configuration stays put
    forever; ``rounds`` is then the first time it was reached.
    """

    def __init__(self, x0: Sequence[int], g: GraphSnapshot, K: int, audit: bool = False, keep_history: bool = False):
        n = g.n
        if len(x0) != n:
            raise GraphError("input size does not match the graph")
        if not g.is_connected():
            raise GraphError("interval averaging needs a connected graph")
        if K < 0:
            raise ValueError("K must be nonnegative")
        for v in x0:
            if int(v) != v or not 0 <= v <= K:
                raise ValueError(f"input {v} is outside the alphabet 0..{K}")
        self.g, self.K = g, K
        init = [ia_init(int(v)) for v in x0]
        self.states = [s for s, _ in init]
        boxes = [{g.port(i, j): pkt for j in g.neighbors[i]} for i, (_, pkt) in enumerate(init)]
        self.inbox = deliver(g, boxes)
        self.t = 0
        self.settled = False
        self.acceptances = 0
        total = sum(int(v) for v in x0)
        self.audit: AuditTrace | None = AuditTrace(total, Fraction(total, n)) if audit else None
        if self.audit is not None:
            self.audit.steps.append(_audit_step(0, g, self.states, self.inbox, self.audit.mean, 0))
        self.history = [self.states] if keep_history else None

    def step(self) -> None:
        """Advance one round; a no-op once the machine has settled."""
        if self.settled:
            return
        new_states, new_inbox, events = ia_round(self.states, self.g, self.inbox)
        accepted_now = sum(1 for e in events if e.accepted > 0)
        self.acceptances += accepted_now
        same = new_states == self.states and new_inbox == self.inbox
        self.states, self.inbox = new_states, new_inbox
        if same:
            self.settled = True
            return
        self.t += 1
        if self.audit is not None:
            self.audit.steps.append(_audit_step(self.t, self.g, self.states, self.inbox, self.audit.mean, accepted_now))
        if self.history is not None:
            self.history.append(self.states)

    @property
    def outputs(self) -> list[OutputInterval | None]:
        return [node_output(s) for s in self.states]

    def result(self) -> IaResult:
        return IaResult(
            self.outputs,
            self.t,
            self.t * log2_ceil(self.K),
            self.settled,
            [s.u for s in self.states],
            self.acceptances,
            self.audit,
            self.history,
        )


def run_interval_averaging(
    x0: Sequence[int],
    g: GraphSnapshot,
    K: int,
    max_rounds: int | None = None,
    audit: bool = False,
    keep_history: bool = False,
) -> IaResult:
    """Run one instance until its configuration becomes a fixpoint (or the round cap)."""
    machine = IaMachine(x0, g, K, audit, keep_history)
    cap = default_round_cap(g.n, K) if max_rounds is None else max_rounds
    while not machine.settled and machine.t < cap:
        machine.step()
    if not machine.settled:
        machine.step()  # one more round decides whether the state at the cap is already a fixpoint
    return machine.result()


def dumbbell_inputs(n: int) -> list[int]:
    """Zeros on the first clique, ones along the path, twos on the second clique."""
    if n % 3:
        raise ValueError("dumbbell inputs need n divisible by 3")
    b = n // 3
    return [0] * b + [1] * b + [2] * b


class IntervalAveragingAutomaton:
    """Node program in the generic :class:`~consensus_lab.network.Automaton` form."""

    def init(self, value: int, ports: Sequence[int]) -> tuple[IaNodeState, dict[int, IaPacket]]:
        state, pkt = ia_init(int(value))
        return state, {p: pkt for p in ports}

    def step(self, state: IaNodeState, inbox: Mapping[int, IaPacket], ports: Sequence[int]):
        new, box, _ = ia_step(state, inbox, ports)
        return new, box
