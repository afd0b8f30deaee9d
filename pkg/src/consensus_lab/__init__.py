"""Simulation and audit toolkit for distributed averaging and consensus.

Submodules:

* :mod:`~consensus_lab.graph`: snapshots, port labels, time-varying sequences, delays
* :mod:`~consensus_lab.linear`: weight schemes and ``x(t+1) = A(t) x(t)`` runs
* :mod:`~consensus_lab.lyapunov`: variance identities, cut bounds, spectral checks
* :mod:`~consensus_lab.load_balancing`: offer/accept load balancing
* :mod:`~consensus_lab.quantized`: floor-quantized averaging
* :mod:`~consensus_lab.max_tracking`: self-stabilizing max/min tracking automaton
* :mod:`~consensus_lab.interval_averaging`: constant-memory interval averaging
* :mod:`~consensus_lab.functions`: frequency-based function computation
* :mod:`~consensus_lab.deadlock`: pairwise averaging over negotiated matchings
* :mod:`~consensus_lab.experiments` and :mod:`~consensus_lab.cli`: experiment harness
"""

from .graph import GraphSequence, GraphSnapshot, build_snapshot, check_b_connectivity, generate_sequence
from .linear import WeightScheme, build_weights, run_delayed, run_linear
from .records import RunRecord, Stop, variance

__version__ = "0.1.0"

__all__ = [
    "GraphSequence",
    "GraphSnapshot",
    "build_snapshot",
    "check_b_connectivity",
    "generate_sequence",
    "WeightScheme",
    "build_weights",
    "run_linear",
    "run_delayed",
    "RunRecord",
    "Stop",
    "variance",
    "__version__",
]
