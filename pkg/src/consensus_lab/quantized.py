"""Floor-quantized averaging on the ``1/Q`` grid.

Every round forms the usual convex combination and rounds each entry down to
the nearest multiple of ``1/Q`` (toward minus infinity, so negative values
are handled too).  Arithmetic is exact throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .graph import GraphError, GraphSequence, quantizer_adversary_frames
from .linear import WeightScheme, build_weights
from .load_balancing import lb_round
from .numeric import to_fraction, vector
from .records import RunRecord, Stop, iterate, variance


class QuantizationError(ValueError):
    """Raised for values off the ``1/Q`` grid or an invalid construction."""


@dataclass(frozen=True)
class QuantConfig:
    """Grid resolution and the range of the initial values."""

    Q: int
    U: Fraction
    L: Fraction

    @property
    def levels(self) -> int:
        """Number of grid steps between the extreme initial values, ``(U - L) Q``."""
        k = (self.U - self.L) * self.Q
        assert k.denominator == 1
        return int(k)

    @classmethod
    def from_values(cls, x0: Sequence, Q: int) -> "QuantConfig":
        vals = [to_fraction(v) for v in x0]
        require_quantized(vals, Q)
        return cls(Q, max(vals), min(vals))


def require_quantized(x: Sequence, Q: int) -> None:
    if Q < 1:
        raise QuantizationError("Q must be a positive integer")
    for v in x:
        if (to_fraction(v) * Q).denominator != 1:
            raise QuantizationError(f"value {v} is not a multiple of 1/{Q}")


def floor_to_grid(v: Fraction, Q: int) -> Fraction:
    return Fraction(math.floor(v * Q), Q)


def q_round(x: Sequence | np.ndarray, a: np.ndarray, Q: int) -> np.ndarray:
    """``x'_i = floor_{1/Q}(sum_j a_ij x_j)`` in exact arithmetic."""
    xv = x if isinstance(x, np.ndarray) else vector(x)
    require_quantized(xv, Q)
    y = a.dot(xv)
    out = np.empty(len(y), dtype=object)
    for i, v in enumerate(y):
        out[i] = floor_to_grid(to_fraction(v), Q)
    return out


def run_quantized(
    x0: Sequence,
    seq: GraphSequence,
    scheme: WeightScheme | str,
    Q: int,
    stop: Stop | None = None,
    keep_states: bool = False,
) -> RunRecord:
    """Quantized iteration with a linear scheme or ``"load_balancing"``.

    The default stop criterion is exact consensus.  ``record.info`` holds the
    grid configuration, the first step at which all values agree, the first
    step at which the floor variance falls below ``1/Q^2``, and the final
    common value when consensus was reached.
    """
    x = vector(x0)
    if len(x) != seq.n:
        raise GraphError(f"state has {len(x)} entries but the sequence has {seq.n} nodes")
    cfg = QuantConfig.from_values(x, Q)
    if stop is None:
        stop = Stop.consensus(max(1, seq.n * (seq.window or 1) * cfg.levels) + 1)
    lb = scheme == "load_balancing"
    if not lb and not isinstance(scheme, WeightScheme):
        raise ValueError(f"unknown quantized scheme {scheme!r}")

    def step(t: int, xt: np.ndarray):
        g = seq.snapshot(t)
        if lb:
            _, trace = lb_round(xt, g)
            a, msgs = trace.induced_matrix, trace.messages
        else:
            a = build_weights(scheme, g, "exact", t).matrix  # type: ignore[arg-type]
            msgs = 2 * len(g.edges)
        return q_round(xt, a, Q), msgs, None

    rec = iterate(x, step, stop, keep_states=keep_states)
    threshold = Fraction(1, Q * Q)
    equal_at = next((r.step for r in rec.rows if r.spread == 0), None)
    below_at = next((r.step for r in rec.rows if r.underlineV < threshold), None)
    rec.info.update(
        {
            "Q": Q,
            "levels": cfg.levels,
            "equal_at": equal_at,
            "underline_below_at": below_at,
            "final_value": rec.final[0] if rec.rows[-1].spread == 0 else None,
            "initial_mean": sum(x) / len(x),
        }
    )
    return rec


def quantization_drift(rec: RunRecord) -> Fraction | None:
    """``mean(x0) - x_f`` for a run that reached consensus."""
    xf = rec.info.get("final_value")
    if xf is None:
        return None
    return rec.info["initial_mean"] - xf


@dataclass
class AdversaryResult:
    error: Fraction
    final: np.ndarray
    record: RunRecord


def adversarial_error_demo(n: int, Q: int) -> AdversaryResult:
    """Quantized equal-neighbor rounds that drag every 1 down to 0.

    Half the nodes start at 0 and half at 1.  Round ``r`` connects the block
    of current zeros completely with one remaining 1; because ``Q < n/2`` the
    averages round down to 0, so the final common value is 0 while the true
    mean is 1/2.
    """
    if n < 2 or n % 2:
        raise QuantizationError("the construction needs an even n >= 2")
    if Q >= n // 2:
        raise QuantizationError(f"the construction needs Q < n/2, got Q={Q}, n={n}")
    frames = quantizer_adversary_frames(n)
    seq = GraphSequence.scripted(frames, repeat="hold-last")
    x0 = [0] * (n // 2) + [1] * (n // 2)
    rec = run_quantized(x0, seq, WeightScheme("equal_neighbor"), Q, Stop.steps(len(frames)), keep_states=True)
    mean = Fraction(1, 2)
    final = rec.final
    if any(v != final[0] for v in final):
        raise QuantizationError("construction did not reach consensus")
    return AdversaryResult(abs(final[0] - mean), final, rec)


__all__ = [
    "QuantConfig",
    "QuantizationError",
    "require_quantized",
    "floor_to_grid",
    "q_round",
    "run_quantized",
    "quantization_drift",
    "adversarial_error_demo",
    "AdversaryResult",
    "variance",
]
