"""Exact-rational and float backends shared by all simulators."""

from __future__ import annotations

from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

BACKENDS = ("exact", "float")


def check_backend(backend: str) -> str:
    if backend not in BACKENDS:
        raise ValueError(f"unknown numeric backend {backend!r}; expected one of {BACKENDS}")
    return backend


def to_fraction(v) -> Fraction:
    """Convert ints, floats, Fractions, or ``"p/q"`` strings to a Fraction."""
    if isinstance(v, Fraction):
        return v
    if isinstance(v, (int, np.integer)):
        return Fraction(int(v))
    if isinstance(v, str):
        return Fraction(v.strip())
    if isinstance(v, (float, np.floating)):
        if not np.isfinite(v):
            raise ValueError(f"non-finite value {v!r}")
        return Fraction(float(v))
    raise TypeError(f"cannot convert {type(v).__name__} to a rational")


def vector(values: Iterable, backend: str = "exact") -> np.ndarray:
    """A state vector: object array of Fractions or a float64 array."""
    check_backend(backend)
    vals = list(values)
    if backend == "exact":
        out = np.empty(len(vals), dtype=object)
        for i, v in enumerate(vals):
            out[i] = to_fraction(v)
        return out
    arr = np.array([float(to_fraction(v)) if isinstance(v, str) else float(v) for v in vals])
    if not np.all(np.isfinite(arr)):
        raise ValueError("state vector has non-finite entries")
    return arr


def matrix(rows: Sequence[Sequence], backend: str = "exact") -> np.ndarray:
    check_backend(backend)
    n = len(rows)
    if backend == "exact":
        out = np.empty((n, len(rows[0]) if n else 0), dtype=object)
        for i, row in enumerate(rows):
            for j, v in enumerate(row):
                out[i, j] = to_fraction(v)
        return out
    return np.array([[float(to_fraction(v)) if isinstance(v, str) else float(v) for v in row] for row in rows])


def zeros_matrix(n: int, backend: str) -> np.ndarray:
    if backend == "exact":
        out = np.empty((n, n), dtype=object)
        out[...] = Fraction(0)
        return out
    return np.zeros((n, n))


def identity(n: int, backend: str) -> np.ndarray:
    out = zeros_matrix(n, backend)
    one = Fraction(1) if backend == "exact" else 1.0
    for i in range(n):
        out[i, i] = one
    return out


def backend_of(arr: np.ndarray) -> str:
    return "exact" if arr.dtype == object else "float"


def convert(arr: np.ndarray, backend: str) -> np.ndarray:
    """Convert a vector or matrix between backends."""
    if backend_of(arr) == backend:
        return arr
    if backend == "float":
        return np.vectorize(float, otypes=[float])(arr) if arr.size else arr.astype(float)
    out = np.empty(arr.shape, dtype=object)
    for idx, v in np.ndenumerate(arr):
        out[idx] = Fraction(float(v))
    return out


def is_zero(v, backend: str, tol: float = 0.0) -> bool:
    if backend == "exact":
        return v == 0
    return abs(v) <= tol


def format_number(v) -> str:
    """Stable text form: ``p/q`` for rationals, ``repr`` for floats."""
    if isinstance(v, Fraction):
        return str(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))
