"""Run records, stop criteria, and the shared iteration driver."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Any, Callable, NamedTuple

import numpy as np

from .numeric import backend_of, format_number

CSV_COLUMNS = ("step", "V", "underlineV", "min", "max", "spread", "messages")


def variance(x: np.ndarray, mode: str = "mean"):
    """Sum of squared deviations from the mean (``mode="mean"``) or the minimum (``mode="min"``).

    In exact mode the result is a Fraction; in float mode a float.
    """
    if mode not in ("mean", "min"):
        raise ValueError(f"unknown variance mode {mode!r}")
    n = len(x)
    if n == 0:
        raise ValueError("variance of an empty vector")
    x = np.asarray(x)
    if backend_of(x) == "float":
        d = x - (x.mean() if mode == "mean" else x.min())
        return float(np.dot(d, d))
    center = sum(x) / n if mode == "mean" else min(x)
    return sum((v - center) * (v - center) for v in x)


class StepRow(NamedTuple):
    step: int
    V: Any
    underlineV: Any
    min: Any
    max: Any
    spread: Any
    messages: int


def step_row(t: int, x: np.ndarray, messages: int) -> StepRow:
    if backend_of(x) == "float":
        lo, hi = float(x.min()), float(x.max())
    else:
        lo, hi = min(x), max(x)
    return StepRow(t, variance(x, "mean"), variance(x, "min"), lo, hi, hi - lo, messages)


@dataclass(frozen=True)
class Stop:
    """Stop criterion evaluated by the omniscient harness.

    ``kind`` is ``max_steps`` (run exactly ``max_steps`` steps),
    ``variance_ratio`` (stop once ``V(t) <= value * V(0)``),
    ``underline_ratio`` (same with the floor variance),
    ``spread_below`` (stop once ``max - min <= value``), or ``consensus``
    (stop once all entries are equal).  Every kind is also capped at
    ``max_steps``.
    """

    kind: str = "max_steps"
    value: float = 0.0
    max_steps: int = 1000

    KINDS = ("max_steps", "variance_ratio", "underline_ratio", "spread_below", "consensus")

    def __post_init__(self) -> None:
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown stop criterion {self.kind!r}")
        if self.max_steps < 0:
            raise ValueError("max_steps must be nonnegative")
        if self.kind in ("variance_ratio", "underline_ratio") and not (0 < self.value < 1):
            raise ValueError("ratio stop criteria need a value in (0, 1)")

    @classmethod
    def steps(cls, t: int) -> "Stop":
        return cls("max_steps", 0.0, t)

    @classmethod
    def variance_ratio(cls, eps: float, max_steps: int = 100000) -> "Stop":
        return cls("variance_ratio", eps, max_steps)

    @classmethod
    def spread_below(cls, delta: float, max_steps: int = 100000) -> "Stop":
        return cls("spread_below", delta, max_steps)

    @classmethod
    def consensus(cls, max_steps: int = 100000) -> "Stop":
        return cls("consensus", 0.0, max_steps)

    def reached(self, row: StepRow, first: StepRow) -> bool:
        if self.kind == "max_steps":
            return False
        if self.kind == "variance_ratio":
            return row.V <= self.value * first.V
        if self.kind == "underline_ratio":
            return row.underlineV <= self.value * first.underlineV
        if self.kind == "spread_below":
            return row.spread <= self.value
        return row.spread == 0

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value, "max_steps": self.max_steps}


@dataclass
class RunRecord:
    """Per-step metric trace of one run.

    ``rows[t]`` describes the state at time ``t`` (``rows[0]`` is the initial
    state); ``rows[t].messages`` counts messages exchanged during step
    ``t - 1 -> t``.  ``states`` holds every state vector when the run was
    asked to keep them and ``traces`` holds per-step protocol traces.
    """

    rows: list[StepRow]
    final: np.ndarray
    stop_reason: str
    states: list[np.ndarray] | None = None
    traces: list[Any] = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return len(self.rows) - 1

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.rows]

    def to_csv(self, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.step] + [format_number(v) for v in r[1:6]] + [r.messages])
        return buf.getvalue()


StepFn = Callable[[int, np.ndarray], tuple[np.ndarray, int, Any]]


def iterate(
    x0: np.ndarray,
    step: StepFn,
    stop: Stop,
    keep_states: bool = False,
    keep_traces: bool = False,
) -> RunRecord:
    """Drive ``x(t+1), messages, trace = step(t, x(t))`` until ``stop`` fires."""
    x = x0
    rows = [step_row(0, x, 0)]
    states = [x] if keep_states else None
    traces: list[Any] = []
    first = rows[0]
    if stop.reached(first, first):
        return RunRecord(rows, x, stop.kind, states, traces)
    reason = "max_steps"
    for t in range(stop.max_steps):
        x, msgs, trace = step(t, x)
        row = step_row(t + 1, x, msgs)
        rows.append(row)
        if keep_states:
            states.append(x)  # type: ignore[union-attr]
        if keep_traces:
            traces.append(trace)
        if stop.reached(row, first):
            reason = stop.kind
            break
    return RunRecord(rows, x, reason, states, traces)
