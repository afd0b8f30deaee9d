"""Synchronous, lossless, anonymous message passing over port labels.

A node automaton only sees its own state, its degree, and the messages that
arrived on each of its local ports.  The engine routes a message sent by
node ``i`` on port ``p`` to the neighbor ``j`` behind that port, where it
arrives on ``j``'s port for ``i``.
"""

from __future__ import annotations

from typing import Any, Mapping, Protocol, Sequence

from .graph import GraphError, GraphSnapshot

Outbox = dict[int, Any]  # local port -> message
Inbox = dict[int, Any]  # local port -> message


def deliver(g: GraphSnapshot, outboxes: list[Mapping[int, Any]]) -> list[Inbox]:
    """Route every node's per-port outbox to the receivers' per-port inboxes."""
    if len(outboxes) != g.n:
        raise GraphError("one outbox per node is required")
    inboxes: list[Inbox] = [{} for _ in range(g.n)]
    for i, box in enumerate(outboxes):
        for port, msg in box.items():
            j = g.neighbor_at(i, port)
            inboxes[j][g.port(j, i)] = msg
    return inboxes


def broadcast(g: GraphSnapshot, i: int, msg: Any) -> Outbox:
    """Outbox that sends the same message on every port of node ``i``."""
    return {g.port(i, j): msg for j in g.neighbors[i]}


def check_inbox(g: GraphSnapshot, i: int, inbox: Mapping[int, Any]) -> None:
    valid = set(g.ports[i].values())
    bad = set(inbox) - valid
    if bad:
        raise GraphError(f"node {i} received messages on unknown ports {sorted(bad)}")


class Automaton(Protocol):
    """Node program: ``init`` and ``step`` see only local ports, never node identities."""

    def init(self, value: Any, ports: Sequence[int]) -> tuple[Any, Outbox]:
        ...

    def step(self, state: Any, inbox: Inbox, ports: Sequence[int]) -> tuple[Any, Outbox]:
        ...


def simulate(automaton: Automaton, values: Sequence[Any], g: GraphSnapshot, rounds: int) -> list[list[Any]]:
    """Run ``rounds`` synchronous rounds; entry ``t`` of the result lists every node's state at time ``t``."""
    if len(values) != g.n:
        raise GraphError("one input value per node is required")
    ports = [[p for p, _ in g.sorted_ports(i)] for i in range(g.n)]
    init = [automaton.init(values[i], ports[i]) for i in range(g.n)]
    states = [s for s, _ in init]
    inbox = deliver(g, [box for _, box in init])
    trace = [states]
    for _ in range(rounds):
        stepped = [automaton.step(states[i], inbox[i], ports[i]) for i in range(g.n)]
        states = [s for s, _ in stepped]
        inbox = deliver(g, [box for _, box in stepped])
        trace.append(states)
    return trace
