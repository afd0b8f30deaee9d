"""Experiment configuration, single runs, sweeps and scenario reproductions."""

from __future__ import annotations

import copy
import hashlib
import json
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .deadlock import run_dp
from .graph import GraphError, GraphSequence, load_sequence
from .interval_averaging import oracle_interval, run_interval_averaging
from .linear import WeightError, WeightScheme, run_linear
from .load_balancing import run_lb
from .lyapunov import convergence_time
from .numeric import format_number, to_fraction
from .quantized import floor_to_grid, quantization_drift, run_quantized
from .records import RunRecord, Stop

ALGORITHMS = ("linear", "load_balancing", "deadlock_pairing", "interval_averaging")
DISTRIBUTIONS = ("values", "file", "uniform", "sorted_uniform", "ramp", "integers")
SWEEP_AXES = ("n", "B", "eps", "Q", "K")
THREADS_ENV = "CONSENSUS_LAB_THREADS"


class ConfigError(ValueError):
    """Raised for configurations that do not match the schema."""


# ---------------------------------------------------------------- config


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one run.

    ``graph`` is a named family (``{"family": ..., "params": ..., "seed": ...}``)
    or explicit frames.  ``initial`` names a distribution and a seed.
    ``quantize`` switches linear and load-balancing runs onto the ``1/Q``
    grid.  ``K`` is the alphabet for interval averaging.
    """

    algorithm: str
    graph: dict
    initial: dict = field(default_factory=lambda: {"distribution": "sorted_uniform", "seed": 0})
    scheme: dict = field(default_factory=lambda: {"kind": "metropolis"})
    stop: dict = field(default_factory=lambda: {"kind": "variance_ratio", "value": 0.01, "max_steps": 100000})
    backend: str = "float"
    quantize: int | None = None
    K: int | None = None

    FIELDS = ("algorithm", "graph", "initial", "scheme", "stop", "backend", "quantize", "K")

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; expected one of {', '.join(ALGORITHMS)}")
        if not isinstance(self.graph, Mapping):
            raise ConfigError("graph must be an object")
        if not isinstance(self.initial, Mapping) or self.initial.get("distribution") not in DISTRIBUTIONS:
            raise ConfigError(f"initial.distribution must be one of {', '.join(DISTRIBUTIONS)}")
        if self.backend not in ("float", "exact"):
            raise ConfigError("backend must be 'float' or 'exact'")
        if self.quantize is not None:
            if int(self.quantize) != self.quantize or self.quantize < 1:
                raise ConfigError("quantize must be a positive integer")
            if self.algorithm not in ("linear", "load_balancing"):
                raise ConfigError("quantize applies to linear and load_balancing runs only")
        if self.algorithm == "interval_averaging" and (self.K is None or int(self.K) < 0):
            raise ConfigError("interval_averaging needs a nonnegative K")
        try:
            self.stop_criterion()
            if self.algorithm == "linear":
                self.weight_scheme()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        if not isinstance(data, Mapping):
            raise ConfigError("configuration must be a JSON object")
        unknown = set(data) - set(cls.FIELDS)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        if "algorithm" not in data or "graph" not in data:
            raise ConfigError("configuration needs 'algorithm' and 'graph'")
        return cls(**{k: copy.deepcopy(v) for k, v in data.items()})

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"configuration is not valid JSON: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {k: copy.deepcopy(getattr(self, k)) for k in self.FIELDS}

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    def stop_criterion(self) -> Stop:
        s = dict(self.stop)
        return Stop(str(s.get("kind", "max_steps")), float(s.get("value", 0.0)), int(s.get("max_steps", 1000)))

    def weight_scheme(self) -> WeightScheme:
        kind = self.scheme.get("kind", "metropolis")
        if kind == "custom":
            raise ConfigError("custom schemes need matrices and are available from the library only")
        eps = self.scheme.get("epsilon")
        return WeightScheme(kind, None if eps is None else to_fraction(eps))

    def sequence(self) -> GraphSequence:
        return load_sequence(self.graph)


def config_from_csv(text: str) -> ExperimentConfig:
    """Recover the configuration embedded in the first line of a run CSV."""
    first = text.splitlines()[0] if text else ""
    marker = "config="
    if not first.startswith("#") or marker not in first:
        raise ConfigError("CSV has no embedded configuration")
    return ExperimentConfig.from_json(first.split(marker, 1)[1])


# ---------------------------------------------------------------- initial values


def initial_values(spec: Mapping[str, Any], n: int, K: int | None = None) -> list:
    dist = spec.get("distribution")
    seed = int(spec.get("seed", 0))
    rng = np.random.default_rng([seed, 1])
    low, high = float(spec.get("low", 0.0)), float(spec.get("high", 1.0))
    if dist == "values":
        vals = list(spec.get("values", []))
    elif dist == "file":
        vals = _read_values(Path(spec["path"]))
    elif dist == "uniform":
        vals = rng.uniform(low, high, n).tolist()
    elif dist == "sorted_uniform":
        vals = sorted(rng.uniform(low, high, n).tolist())
    elif dist == "ramp":
        vals = list(range(n))
    elif dist == "integers":
        top = int(spec.get("K", K if K is not None else 1))
        vals = [int(v) for v in rng.integers(0, top + 1, n)]
    else:
        raise ConfigError(f"unknown initial distribution {dist!r}")
    if len(vals) != n:
        raise ConfigError(f"initial values have {len(vals)} entries for {n} nodes")
    return vals


def _read_values(path: Path) -> list:
    text = path.read_text()
    try:
        data = json.loads(text)
        if isinstance(data, Mapping):
            data = data["values"]
        return list(data)
    except (json.JSONDecodeError, KeyError):
        return [to_fraction(tok) if "/" in tok else float(tok) for tok in text.replace(",", " ").split()]


# ---------------------------------------------------------------- runs


@dataclass
class RunResult:
    config: ExperimentConfig
    record: RunRecord | None
    summary: dict

    def csv(self) -> str:
        if self.record is None:
            raise ValueError("this algorithm does not produce a per-step record")
        comment = f"config_hash={self.config.config_hash} config={self.config.canonical_json()}"
        return self.record.to_csv(comment)

    def trace_csv(self) -> str:
        if self.record is None or self.record.states is None:
            raise ValueError("run was not traced")
        lines = [f"# config_hash={self.config.config_hash}", "step," + ",".join(f"x{i}" for i in range(len(self.record.final)))]
        for t, x in enumerate(self.record.states):
            lines.append(f"{t}," + ",".join(format_number(v) for v in x))
        return "\n".join(lines) + "\n"


def run_experiment(cfg: ExperimentConfig, trace: bool = False) -> RunResult:
    """Execute one configuration deterministically and summarize it."""
    try:
        seq = cfg.sequence()
    except (GraphError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    n = seq.n
    x0 = initial_values(cfg.initial, n, cfg.K)
    summary: dict[str, Any] = {"config_hash": cfg.config_hash, "algorithm": cfg.algorithm, "n": n}

    if cfg.algorithm == "interval_averaging":
        res = run_interval_averaging([int(v) for v in x0], seq.snapshot(0), int(cfg.K), audit=False)  # type: ignore[arg-type]
        expected = oracle_interval([int(v) for v in x0])
        summary.update(res.to_dict())
        summary["oracle"] = str(expected)
        summary["outputs_correct"] = all(o == expected for o in res.outputs)
        return RunResult(cfg, None, summary)

    stop = cfg.stop_criterion()
    if cfg.quantize is not None:
        Q = int(cfg.quantize)
        xq = [floor_to_grid(to_fraction(v), Q) for v in x0]
        scheme: WeightScheme | str = "load_balancing" if cfg.algorithm == "load_balancing" else cfg.weight_scheme()
        qstop = stop if stop.kind in ("max_steps", "consensus") else Stop.consensus(stop.max_steps)
        rec = run_quantized(xq, seq, scheme, Q, qstop, keep_states=trace)
        drift = quantization_drift(rec)
        under = rec.column("underlineV")
        summary.update(
            {
                "quantize": Q,
                "steps": rec.steps,
                "stop_reason": rec.stop_reason,
                "levels": rec.info["levels"],
                "equal_at": rec.info["equal_at"],
                "final_value": None if rec.info["final_value"] is None else str(rec.info["final_value"]),
                "drift": None if drift is None else str(drift),
                "drift_within_bounds": None if drift is None else bool(0 <= drift <= Fraction(rec.steps, Q)),
                "underlineV_nonincreasing": all(b <= a for a, b in zip(under, under[1:])),
            }
        )
        return RunResult(cfg, rec, summary)

    if cfg.algorithm == "linear":
        rec = run_linear(x0, seq, cfg.weight_scheme(), stop, cfg.backend, keep_states=trace)
    elif cfg.algorithm == "load_balancing":
        rec = run_lb(x0, seq, stop, cfg.backend, keep_states=trace)
    else:
        rec = run_dp(x0, seq, stop, cfg.backend, audit=True, keep_states=trace)
    summary.update(_linear_summary(rec, x0, stop))
    if "audit" in rec.info:
        audit = rec.info["audit"]
        summary["pairing_audit_ok"] = audit.ok
        summary["worst_contraction_ratio"] = audit.worst_contraction_ratio
    return RunResult(cfg, rec, summary)


def _linear_summary(rec: RunRecord, x0: Sequence, stop: Stop) -> dict:
    vs = rec.column("V")
    mean0 = sum(to_fraction(v) for v in x0) / len(x0) if rec.final.dtype == object else float(np.mean(np.asarray(x0, dtype=float)))
    err = max(abs(v - mean0) for v in rec.final)
    eps = stop.value if stop.kind == "variance_ratio" else 0.01
    slack = 0 if rec.final.dtype == object else 1e-12 * max(1.0, float(vs[0]))
    return {
        "steps": rec.steps,
        "stop_reason": rec.stop_reason,
        "convergence_time": convergence_time(rec, eps, "V") if 0 < eps < 1 else None,
        "final_error": format_number(err),
        "V_nonincreasing": all(b <= a + slack for a, b in zip(vs, vs[1:])),
        "messages": sum(rec.column("messages")),
    }


def convergence_time_of(cfg: ExperimentConfig) -> int | None:
    """Convergence time of one run (rounds for interval averaging)."""
    res = run_experiment(cfg)
    if cfg.algorithm == "interval_averaging":
        return res.summary["rounds"] if res.summary["settled"] else None
    if cfg.quantize is not None:
        return res.summary["equal_at"]
    return res.summary["convergence_time"]


# ---------------------------------------------------------------- sweeps


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


def with_axis(base: ExperimentConfig, axis: str, value: Any, trial: int) -> ExperimentConfig:
    """Copy of ``base`` with one axis set and the trial index folded into every seed."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {', '.join(SWEEP_AXES)}")
    d = base.to_dict()
    graph = d["graph"]
    if axis in ("n", "B"):
        if "family" not in graph:
            raise ConfigError(f"axis {axis!r} needs a named graph family")
        graph.setdefault("params", {})[axis] = int(value)
    elif axis == "eps":
        d["stop"] = dict(d["stop"], kind="variance_ratio", value=float(value))
    elif axis == "Q":
        d["quantize"] = int(value)
    else:
        d["K"] = int(value)
        d["initial"] = dict(d["initial"], K=int(value))
    graph["seed"] = int(graph.get("seed", 0)) + trial
    d["initial"] = dict(d["initial"], seed=int(d["initial"].get("seed", 0)) + trial)
    return ExperimentConfig.from_dict(d)


def _sweep_cell(cfg_json: str) -> tuple[int | None, str | None]:
    try:
        return convergence_time_of(ExperimentConfig.from_json(cfg_json)), None
    except Exception as exc:  # noqa: BLE001 - errors are reported per cell
        return None, f"{type(exc).__name__}: {exc}"


@dataclass
class SweepRow:
    value: Any
    trials: int
    reached: int
    median: float | None
    max: int | None
    errors: list[str]

    def to_csv_row(self) -> list:
        return [self.value, self.trials, self.reached, "" if self.median is None else self.median, "" if self.max is None else self.max]


def sweep(
    base: ExperimentConfig,
    axis: str,
    values: Sequence[Any],
    trials: int,
    threads: int | None = None,
) -> list[SweepRow]:
    """Convergence times over ``values`` of one axis, ``trials`` seeded trials per value.

    Trials are independent processes when more than one worker is allowed;
    results are merged by trial index, so the table does not depend on the
    worker count.
    """
    if trials < 1:
        raise ConfigError("trials must be positive")
    jobs = [with_axis(base, axis, v, k).canonical_json() for v in values for k in range(trials)]
    workers = thread_count() if threads is None else max(1, threads)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_cell, jobs))
    else:
        results = [_sweep_cell(j) for j in jobs]
    rows = []
    for idx, v in enumerate(values):
        cell = results[idx * trials : (idx + 1) * trials]
        times = [t for t, _ in cell if t is not None]
        errors = [e for _, e in cell if e is not None]
        rows.append(
            SweepRow(
                v,
                trials,
                len(times),
                float(statistics.median(times)) if times else None,
                max(times) if times else None,
                errors,
            )
        )
    return rows


def sweep_csv(rows: Sequence[SweepRow], axis: str, base: ExperimentConfig) -> str:
    lines = [f"# config_hash={base.config_hash} axis={axis} config={base.canonical_json()}", f"{axis},trials,reached,median,max"]
    for r in rows:
        lines.append(",".join(str(c) for c in r.to_csv_row()))
    return "\n".join(lines) + "\n"


def loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    if len(xs) != len(ys) or len(xs) < 2:
        raise ValueError("need at least two points")
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])


# ---------------------------------------------------------------- scenarios


@dataclass
class ExampleReport:
    name: str
    passed: bool
    details: dict

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: " + json.dumps(self.details, sort_keys=True, default=str)


def _example_appendix_a() -> ExampleReport:
    from .lyapunov import COUNTEREXAMPLE_Y, appendix_a_counterexample

    rep = appendix_a_counterexample()
    matches = [to_fraction(v) for v in rep.y] == [to_fraction(v) for v in COUNTEREXAMPLE_Y]
    ok = rep.v_x == 80 and rep.variance_increased and matches
    return ExampleReport("appendix_a", ok, {"V(x)": str(rep.v_x), "V(y)": str(rep.v_y), "y": [str(v) for v in rep.y]})


def _example_fig_ic() -> ExampleReport:
    from .quantized import adversarial_error_demo

    cases = {}
    ok = True
    for n, Q in ((6, 2), (10, 4), (14, 6)):
        err = adversarial_error_demo(n, Q).error
        cases[f"n={n},Q={Q}"] = str(err)
        ok &= err == Fraction(1, 2)
    return ExampleReport("fig_ic", ok, cases)


def _example_dumbbell() -> ExampleReport:
    from .graph import dumbbell_graph
    from .interval_averaging import dumbbell_inputs

    details = {}
    ok = True
    for n in (9, 15, 21):
        res = run_interval_averaging(dumbbell_inputs(n), dumbbell_graph(n), 2)
        bound = 2 * n * n / 9
        good = res.settled and res.rounds >= bound and all(str(o) == "{1}" for o in res.outputs)
        details[f"n={n}"] = {"rounds": res.rounds, "lower_bound": bound, "output": str(res.outputs[0])}
        ok &= good
    return ExampleReport("dumbbell", ok, details)


def _example_example1() -> ExampleReport:
    from .linear import example1_script

    script = example1_script(12)
    rec = run_linear(script.x0, script.sequence, script.scheme, Stop.steps(script.horizon))
    spreads = rec.column("spread")
    floor = min(spreads)
    ok = floor >= Fraction(1, 2)
    return ExampleReport("example1", ok, {"steps": rec.steps, "min_spread": float(floor)})


def _example_example2() -> ExampleReport:
    from .linear import example2_floor, example2_script, run_delayed

    phases = 20
    script = example2_script(phases)
    rec = run_delayed(script.x0, script.sequence, script.scheme, script.delays, Stop.steps(script.horizon))
    gap = abs(rec.final[0] - rec.final[1])
    bound = example2_floor(phases)
    return ExampleReport("example2", gap >= bound, {"steps": rec.steps, "final_gap": float(gap), "floor": float(bound)})


def _example_rings() -> ExampleReport:
    from .functions import DetectionAutomaton, IntervalAveragingAutomaton, ring_equivalence_check

    details = {}
    ok = True
    cases = (
        ("interval_averaging", IntervalAveragingAutomaton(), (0, 1, 1, 0, 2), 2),
        ("interval_averaging", IntervalAveragingAutomaton(), (2, 0, 1, 1), 3),
        ("detection", DetectionAutomaton(), (0, 1, 0, 0, 0), 2),
        ("detection", DetectionAutomaton(), (0, 0, 1, 0), 3),
    )
    for name, automaton, x, m in cases:
        rep = ring_equivalence_check(automaton, x, m, rounds=500)
        details[f"{name} n={len(x)} m={m}"] = rep.equivalent
        ok &= rep.equivalent
    return ExampleReport("rings", ok, details)


EXAMPLES: dict[str, Callable[[], ExampleReport]] = {
    "appendix_a": _example_appendix_a,
    "fig_ic": _example_fig_ic,
    "dumbbell": _example_dumbbell,
    "example1": _example_example1,
    "example2": _example_example2,
    "rings": _example_rings,
}


def reproduce_example(name: str) -> ExampleReport:
    try:
        fn = EXAMPLES[name]
    except KeyError:
        raise ConfigError(f"unknown example {name!r}; expected one of {', '.join(EXAMPLES)}") from None
    return fn()
