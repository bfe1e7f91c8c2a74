"""Bound-constrained black-box optimization: mesh-adaptive direct search
with a local Gaussian-process surrogate driving the search step."""

from .engine import ObjectiveError, Options, RunResult, initialize, run
from .problem import (
    BoundOrderError,
    InfeasibleStart,
    NoiseSpec,
    NonFinitePlausibleBounds,
    ProblemError,
    ProblemSpec,
    validate,
)

__all__ = [
    "BoundOrderError",
    "InfeasibleStart",
    "NoiseSpec",
    "NonFinitePlausibleBounds",
    "ObjectiveError",
    "Options",
    "ProblemError",
    "ProblemSpec",
    "RunResult",
    "initialize",
    "run",
    "validate",
]
