"""Offer/accept load balancing with a symmetric induced matrix.

Each round every node compares its value with its neighbors'.  A node offers a
third of its excess to its smallest strictly smaller neighbor; a node that
receives offers accepts the largest one.  Accepted transfers move value from
the richer to the poorer node, so the round equals ``x' = A x`` for a
symmetric doubly stochastic ``A`` whose nonzero entries are at least 1/3.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .graph import GraphError, GraphSequence, GraphSnapshot
from .numeric import backend_of, convert, identity, vector
from .records import RunRecord, Stop, iterate

#: Lower bound on nonzero entries of every induced matrix.
LB_ETA = Fraction(1, 3)


@dataclass
class LbRoundTrace:
    offers: dict[int, tuple[int, object]]  # giver -> (receiver, amount)
    acceptances: dict[int, int]  # receiver -> accepted giver
    induced_matrix: np.ndarray
    messages: int

    @property
    def transfers(self) -> list[tuple[int, int, object]]:
        """Accepted ``(giver, receiver, amount)`` triples."""
        return [(c, d, self.offers[c][1]) for d, c in sorted(self.acceptances.items())]


def lb_round(x: Sequence | np.ndarray, g: GraphSnapshot) -> tuple[np.ndarray, LbRoundTrace]:
    """One round: value broadcast, offers, acceptances, transfers.

    Ties among equally small neighbors and among equally large offers go to
    the lowest node index.
    """
    x = x if isinstance(x, np.ndarray) else vector(x)
    n = g.n
    if len(x) != n:
        raise GraphError("state size does not match the snapshot")
    backend = backend_of(x)
    third = Fraction(1, 3) if backend == "exact" else 1.0 / 3.0

    offers: dict[int, tuple[int, object]] = {}
    for c in range(n):
        best = None
        for d in g.neighbors[c]:  # ascending index
            if x[d] < x[c] and (best is None or x[d] < x[best]):
                best = d
        if best is not None:
            offers[c] = (best, (x[c] - x[best]) * third)

    incoming: dict[int, list[int]] = {}
    for c, (d, _) in offers.items():
        incoming.setdefault(d, []).append(c)
    acceptances: dict[int, int] = {}
    for d, senders in incoming.items():
        chosen = None
        for c in sorted(senders):
            if chosen is None or offers[c][1] > offers[chosen][1]:
                chosen = c
        acceptances[d] = chosen  # type: ignore[assignment]

    a = identity(n, backend)
    new = x.copy()
    for d, c in acceptances.items():
        amount = offers[c][1]
        new[c] = new[c] - amount
        new[d] = new[d] + amount
        a[c, c] -= third
        a[d, d] -= third
        a[c, d] += third
        a[d, c] += third
    msgs = 2 * len(g.edges) + len(offers) + len(acceptances)
    return new, LbRoundTrace(offers, acceptances, a, msgs)


def run_lb(
    x0: Sequence | np.ndarray,
    seq: GraphSequence,
    stop: Stop,
    backend: str = "exact",
    keep_states: bool = False,
    keep_traces: bool = False,
) -> RunRecord:
    """Repeat :func:`lb_round` over the sequence until ``stop`` fires."""
    x = vector(x0, backend) if not isinstance(x0, np.ndarray) else convert(x0, backend)
    if len(x) != seq.n:
        raise GraphError(f"state has {len(x)} entries but the sequence has {seq.n} nodes")

    def step(t: int, xt: np.ndarray):
        new, trace = lb_round(xt, seq.snapshot(t))
        return new, trace.messages, trace

    return iterate(x, step, stop, keep_states=keep_states, keep_traces=keep_traces)
