"""Command-line entry point: ``consensus-lab {run,sweep,spectral,example,verify}``.

Exit codes: 0 success, 1 a check or acceptance verdict failed, 2 invalid
configuration, 3 file input/output failure.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import experiments as ex
from .graph import GraphError
from .linear import WeightError
from .lyapunov import AnalysisError, spectral_gap
from .numeric import matrix
from .verify import SUITES

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


def _fail(code: int, message: str) -> None:
    click.echo(message, err=True)
    sys.exit(code)


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        _fail(EXIT_IO, f"cannot read {path}: {exc}")
    raise AssertionError("unreachable")


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        _fail(EXIT_IO, f"cannot write {path}: {exc}")


def _load_config(path: str, quantize: int | None = None) -> ex.ExperimentConfig:
    text = _read_text(path)
    try:
        cfg = ex.config_from_csv(text) if text.startswith("#") else ex.ExperimentConfig.from_json(text)
        if quantize is not None:
            d = cfg.to_dict()
            d["quantize"] = quantize
            cfg = ex.ExperimentConfig.from_dict(d)
        return cfg
    except (ex.ConfigError, GraphError, WeightError, ValueError, TypeError) as exc:
        _fail(EXIT_CONFIG, f"config error: {exc}")
    raise AssertionError("unreachable")


@click.group()
@click.version_option(package_name="consensus-lab")
def main() -> None:
    """Simulate and audit distributed averaging and consensus algorithms."""


@main.command()
@click.option("--config", "config_path", required=True, help="JSON configuration, or a run CSV with an embedded configuration.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None, help="Directory for run.csv and summary.json.")
@click.option("--trace", is_flag=True, help="Also write every state vector to trace.csv.")
@click.option("--quantize", type=int, default=None, help="Run on the 1/Q grid with floor rounding.")
def run(config_path: str, out_dir: str | None, trace: bool, quantize: int | None) -> None:
    """Run one experiment."""
    cfg = _load_config(config_path, quantize)
    try:
        result = ex.run_experiment(cfg, trace=trace)
    except (ex.ConfigError, GraphError, WeightError) as exc:
        _fail(EXIT_CONFIG, f"config error: {exc}")
    except OSError as exc:
        _fail(EXIT_IO, f"I/O error: {exc}")
    summary = json.dumps(result.summary, indent=2, sort_keys=True, default=str)
    if out_dir is None:
        if result.record is not None:
            click.echo(result.csv(), nl=False)
        click.echo(summary, err=result.record is not None)
        return
    out = Path(out_dir)
    if result.record is not None:
        _write_text(out / "run.csv", result.csv())
        if trace:
            _write_text(out / "trace.csv", result.trace_csv())
    _write_text(out / "summary.json", summary + "\n")
    click.echo(f"wrote {out}")


@main.command()
@click.option("--config", "config_path", required=True, help="Base JSON configuration.")
@click.option("--axis", type=click.Choice(ex.SWEEP_AXES), required=True)
@click.option("--values", required=True, help="Comma-separated axis values.")
@click.option("--trials", type=int, default=10, show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None, help="CSV file for the table.")
def sweep(config_path: str, axis: str, values: str, trials: int, out_path: str | None) -> None:
    """Convergence-time table over one axis (parallelism from CONSENSUS_LAB_THREADS)."""
    cfg = _load_config(config_path)
    try:
        parsed = [float(v) if axis == "eps" else int(v) for v in values.split(",") if v.strip()]
    except ValueError:
        _fail(EXIT_CONFIG, f"config error: cannot parse values {values!r}")
    try:
        rows = ex.sweep(cfg, axis, parsed, trials)
    except ex.ConfigError as exc:
        _fail(EXIT_CONFIG, f"config error: {exc}")
    table = ex.sweep_csv(rows, axis, cfg)
    medians = [(r.value, r.median) for r in rows if r.median]
    if len(medians) >= 2 and axis == "n":
        table += f"# loglog_slope={ex.loglog_slope([v for v, _ in medians], [m for _, m in medians]):.4f}\n"
    for r in rows:
        for e in r.errors:
            click.echo(f"{axis}={r.value}: {e}", err=True)
    if out_path:
        _write_text(Path(out_path), table)
        click.echo(f"wrote {out_path}")
    else:
        click.echo(table, nl=False)


@main.command()
@click.option("--matrix", "matrix_path", required=True, help='JSON file {"matrix": [[...], ...]} (numbers or "p/q").')
def spectral(matrix_path: str) -> None:
    """Eigenvalues of a tridiagonal doubly stochastic matrix and the 1 - 6/n^2 check."""
    text = _read_text(matrix_path)
    try:
        data = json.loads(text)
        rows = data["matrix"] if isinstance(data, dict) else data
        a = matrix(rows, "float")
        report = spectral_gap(np.asarray(a, dtype=float))
    except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
        _fail(EXIT_CONFIG, f"config error: {exc}")
    except AnalysisError as exc:
        _fail(EXIT_CONFIG, f"config error: {exc}")
    click.echo(json.dumps(report.to_dict(), indent=2))
    if not report.bound_holds:
        sys.exit(EXIT_FAIL)


@main.command()
@click.argument("name", required=False)
@click.option("--list", "list_names", is_flag=True, help="List the available scenarios.")
def example(name: str | None, list_names: bool) -> None:
    """Reproduce a scripted scenario and check its stated outcome."""
    if list_names or name is None:
        for n in ex.EXAMPLES:
            click.echo(n)
        return
    try:
        report = ex.reproduce_example(name)
    except ex.ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    click.echo(report.line())
    sys.exit(EXIT_OK if report.passed else EXIT_FAIL)


@main.command()
@click.option("--suite", type=click.Choice(sorted(SUITES)), default=None)
@click.option("--seed", type=int, default=0, show_default=True)
def verify(suite: str | None, seed: int) -> None:
    """Run the cross-module invariant suites on seeded random instances."""
    names = [suite] if suite else list(SUITES)
    failed = False
    for n in names:
        ok, message = SUITES[n](seed)
        click.echo(f"{'PASS' if ok else 'FAIL'} {n}: {message}")
        failed |= not ok
    sys.exit(EXIT_FAIL if failed else EXIT_OK)


if __name__ == "__main__":  # pragma: no cover
    main()
