"""Pairwise averaging over a matching negotiated with ``+``/``-`` messages.

Within one round (against a frozen snapshot) every node:

1. sets ``N = SELF``, ``gap = 0`` and broadcasts its value;
2. sends ``+`` to its smallest strictly smaller neighbor (lowest port on
   ties) and records it as ``N`` with the value difference as ``gap``;
3. if it received any ``+``, picks the sender with the largest difference
   (lowest port on ties).  When that difference beats ``gap`` it switches
   ``N`` to that sender, answers it with ``+``, sends ``-`` to the other
   senders and retracts its own step-2 offer with ``-``.  Otherwise it sends
   ``-`` to every sender;
4. resets ``N = SELF`` when its current ``N`` sent it a ``-``;
5. averages with ``N`` when ``N`` points back.

Matched pairs are disjoint, and the pair carrying the largest difference in
the graph is always matched.  Each round therefore removes a fixed fraction
of the variance on connected snapshots.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .graph import GraphError, GraphSequence, GraphSnapshot
from .numeric import backend_of, convert, vector
from .records import RunRecord, Stop, iterate

SELF = -1


@dataclass
class DpTrace:
    partner: list[int]  # node index after step 4, SELF when unmatched
    gap: list  # recorded difference after step 4 (0 when unmatched)
    offers: dict[int, int]  # step 2: sender -> target
    responses: dict[tuple[int, int], str]  # step 3: (sender, receiver) -> "+" or "-"
    pairs: list[tuple[int, int]]
    messages: int


def dp_round(x: Sequence | np.ndarray, g: GraphSnapshot) -> tuple[np.ndarray, list[tuple[int, int]], DpTrace]:
    """One negotiation round followed by exact pairwise averaging of the matched pairs."""
    x = x if isinstance(x, np.ndarray) else vector(x)
    n = g.n
    if len(x) != n:
        raise GraphError("state size does not match the snapshot")
    zero = Fraction(0) if backend_of(x) == "exact" else 0.0
    half = Fraction(1, 2) if backend_of(x) == "exact" else 0.5

    partner = [SELF] * n
    gap = [zero] * n
    offers: dict[int, int] = {}
    for i in range(n):
        target = None
        for p, j in g.sorted_ports(i):
            if x[j] < x[i] and (target is None or x[j] < x[target]):
                target = j
        if target is not None:
            offers[i] = target
            partner[i] = target
            gap[i] = x[i] - x[target]

    received: dict[int, list[int]] = {}
    for i, k in offers.items():
        received.setdefault(k, []).append(i)

    responses: dict[tuple[int, int], str] = {}
    minus_to: list[set[int]] = [set() for _ in range(n)]
    for i, senders in received.items():
        senders = sorted(senders, key=lambda s: g.port(i, s))
        best = senders[0]
        for s in senders[1:]:
            if x[s] - x[i] > x[best] - x[i]:
                best = s
        best_gap = x[best] - x[i]
        if best_gap > gap[i]:
            own_target = offers.get(i)
            partner[i] = best
            gap[i] = best_gap
            responses[(best, i)] = "+"
            for s in senders:
                if s != best:
                    responses[(s, i)] = "-"
                    minus_to[s].add(i)
            if own_target is not None:
                minus_to[own_target].add(i)
        else:
            for s in senders:
                responses[(s, i)] = "-"
                minus_to[s].add(i)

    for i in range(n):
        if partner[i] != SELF and partner[i] in minus_to[i]:
            partner[i] = SELF
            gap[i] = zero

    pairs = []
    new = x.copy()
    for i in range(n):
        j = partner[i]
        if j != SELF and i < j and partner[j] == i:
            pairs.append((i, j))
            avg = (x[i] + x[j]) * half
            new[i] = avg
            new[j] = avg
    minus_count = sum(len(s) for s in minus_to)
    msgs = 2 * len(g.edges) + len(offers) + minus_count + sum(1 for v in responses.values() if v == "+")
    return new, pairs, DpTrace(partner, gap, offers, responses, pairs, msgs)


@dataclass
class DpAudit:
    symmetric: bool = True
    disjoint: bool = True
    max_gap_paired: bool = True
    no_self_with_gap: bool = True
    mean_conserved: bool = True
    contraction_ok: bool = True
    worst_contraction_ratio: float | None = None  # min over audited steps of (V(t)-V(t+1)) * 2n^3 / V(t)

    @property
    def ok(self) -> bool:
        return (
            self.symmetric
            and self.disjoint
            and self.max_gap_paired
            and self.no_self_with_gap
            and self.mean_conserved
            and self.contraction_ok
        )


def audit_round(x: np.ndarray, new: np.ndarray, g: GraphSnapshot, trace: DpTrace, audit: DpAudit) -> None:
    """Check the matching properties of one round and the variance contraction."""
    n = g.n
    for i, j in enumerate(trace.partner):
        if j != SELF and trace.partner[j] != i:
            audit.symmetric = False
        if j == SELF and trace.gap[i] != 0:
            audit.no_self_with_gap = False
    seen: set[int] = set()
    for i, j in trace.pairs:
        if i in seen or j in seen:
            audit.disjoint = False
        seen.update((i, j))
    if g.edges:
        diffs = {e: abs(x[e[0]] - x[e[1]]) for e in g.edges}
        top = max(diffs.values())
        if top > 0:
            paired = {tuple(sorted(p)) for p in trace.pairs}
            if not any(d == top and e in paired for e, d in diffs.items()):
                audit.max_gap_paired = False
    if sum(x) != sum(new) and backend_of(x) == "exact":
        audit.mean_conserved = False
    if g.is_connected():
        mean = sum(x) / n
        v_old = sum((v - mean) ** 2 for v in x)
        v_new = sum((v - mean) ** 2 for v in new)
        if v_old > 0:
            ratio = (v_old - v_new) * 2 * n**3 / v_old
            if ratio < 1:
                audit.contraction_ok = False
            r = float(ratio)
            if audit.worst_contraction_ratio is None or r < audit.worst_contraction_ratio:
                audit.worst_contraction_ratio = r


def run_dp(
    x0: Sequence | np.ndarray,
    seq: GraphSequence,
    stop: Stop,
    backend: str = "exact",
    audit: bool = True,
    keep_states: bool = False,
) -> RunRecord:
    """Repeat :func:`dp_round`; ``record.info["audit"]`` holds a :class:`DpAudit` when auditing."""
    x = vector(x0, backend) if not isinstance(x0, np.ndarray) else convert(x0, backend)
    if len(x) != seq.n:
        raise GraphError(f"state has {len(x)} entries but the sequence has {seq.n} nodes")
    report = DpAudit()

    def step(t: int, xt: np.ndarray):
        g = seq.snapshot(t)
        new, _, trace = dp_round(xt, g)
        if audit:
            audit_round(xt, new, g, trace, report)
        return new, trace.messages, trace

    rec = iterate(x, step, stop, keep_states=keep_states)
    if audit:
        rec.info["audit"] = report
    return rec
