"""Problem definition, validation and the user <-> internal coordinate maps.

Internally every variable lives in a standardized space where the plausible
box is ``[-1, 1]^D``. Variables with strictly positive, wide hard bounds are
log-transformed before the affine rescaling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

# Internal hard bound used for infinite user bounds, in units of plausible half-range.
INF_BOUND_SCALE = 1e4


class ProblemError(ValueError):
    """Base class for invalid problem definitions."""


class BoundOrderError(ProblemError):
    pass


class InfeasibleStart(ProblemError):
    pass


class NonFinitePlausibleBounds(ProblemError):
    pass


@dataclass
class NoiseSpec:
    """Noise declaration: ``"deterministic"``, ``"stochastic"`` or ``"auto"``."""

    kind: str = "auto"
    sigma_est: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("deterministic", "stochastic", "auto"):
            raise ProblemError(f"unknown noise kind {self.kind!r}")
        if self.sigma_est is not None and self.sigma_est < 0:
            raise ProblemError("sigma_est must be non-negative")


@dataclass
class ProblemSpec:
    objective: Optional[Callable[[np.ndarray], float]]
    lb: Sequence[float]
    ub: Sequence[float]
    x0: Sequence[float]
    plb: Optional[Sequence[float]] = None
    pub: Optional[Sequence[float]] = None
    barrier: Optional[Callable[[np.ndarray], float]] = None
    periodic_dims: Sequence[int] = ()
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    max_fun_evals: Optional[int] = None

    @classmethod
    def from_json(cls, doc, objective=None, barrier=None) -> "ProblemSpec":
        """Build a spec from a JSON string, path-free dict or file object."""
        if isinstance(doc, str):
            doc = json.loads(doc)
        elif hasattr(doc, "read"):
            doc = json.load(doc)
        noise = doc.get("noise", {"type": "auto"})
        if isinstance(noise, str):
            noise = {"type": noise}
        return cls(
            objective=objective,
            lb=_json_floats(doc["lb"]),
            ub=_json_floats(doc["ub"]),
            x0=_json_floats(doc["x0"]),
            plb=_json_floats(doc["plb"]) if doc.get("plb") is not None else None,
            pub=_json_floats(doc["pub"]) if doc.get("pub") is not None else None,
            barrier=barrier,
            periodic_dims=tuple(doc.get("periodic_dims", ())),
            noise=NoiseSpec(noise.get("type", "auto"), noise.get("sigma_est")),
            max_fun_evals=doc.get("max_fun_evals"),
        )


def _json_floats(values):
    # JSON has no infinity literal; accept null / "inf" / "-inf" strings.
    out = []
    for v in values:
        if isinstance(v, str):
            out.append(float(v))
        elif v is None:
            out.append(np.nan)
        else:
            out.append(float(v))
    return out


@dataclass
class ValidatedProblem:
    """A checked problem with fixed dimensions removed.

    ``free`` indexes the full-dimensional vector; ``fixed_values`` holds the
    constants substituted for the removed coordinates.
    """

    objective: Optional[Callable[[np.ndarray], float]]
    lb: np.ndarray
    ub: np.ndarray
    plb: np.ndarray
    pub: np.ndarray
    x0: np.ndarray
    barrier: Optional[Callable[[np.ndarray], float]]
    periodic: np.ndarray
    noise: NoiseSpec
    max_fun_evals: int
    free: np.ndarray
    fixed_values: np.ndarray
    full_dim: int

    @property
    def D(self) -> int:
        return len(self.lb)

    def expand(self, x: np.ndarray) -> np.ndarray:
        """Insert the fixed coordinates back into a reduced vector."""
        full = self.fixed_values.copy()
        full[self.free] = x
        return full

    def evaluate(self, x: np.ndarray) -> float:
        return float(self.objective(self.expand(x)))

    def barrier_value(self, x: np.ndarray) -> float:
        if self.barrier is None:
            return -np.inf
        return float(self.barrier(self.expand(x)))


def validate(spec: ProblemSpec) -> ValidatedProblem:
    lb = np.atleast_1d(np.asarray(spec.lb, dtype=float))
    ub = np.atleast_1d(np.asarray(spec.ub, dtype=float))
    x0 = np.atleast_1d(np.asarray(spec.x0, dtype=float))
    D = len(x0)
    plb = lb.copy() if spec.plb is None else np.atleast_1d(np.asarray(spec.plb, dtype=float))
    pub = ub.copy() if spec.pub is None else np.atleast_1d(np.asarray(spec.pub, dtype=float))
    for name, arr in (("lb", lb), ("ub", ub), ("plb", plb), ("pub", pub)):
        if arr.shape != (D,):
            raise ProblemError(f"{name} has shape {arr.shape}, expected ({D},)")
    if np.any(np.isnan(lb)) or np.any(np.isnan(ub)) or np.any(np.isnan(x0)):
        raise ProblemError("bounds and x0 must not contain NaN")
    if not (np.all(np.isfinite(plb)) and np.all(np.isfinite(pub))):
        raise NonFinitePlausibleBounds("plausible bounds must be finite")

    fixed = (lb == ub) & (plb == ub) & (pub == ub) & (x0 == ub)
    for d in np.flatnonzero(~fixed):
        if not (lb[d] <= plb[d] < pub[d] <= ub[d]):
            raise BoundOrderError(
                f"dim {d}: need lb <= plb < pub <= ub, got "
                f"{lb[d]}, {plb[d]}, {pub[d]}, {ub[d]}"
            )
    if np.any(x0 < lb) or np.any(x0 > ub):
        raise InfeasibleStart(f"x0 {x0} outside hard bounds")

    periodic = np.zeros(D, dtype=bool)
    for d in spec.periodic_dims:
        if not 0 <= d < D:
            raise ProblemError(f"periodic dim {d} out of range")
        if not (np.isfinite(lb[d]) and np.isfinite(ub[d])):
            raise ProblemError(f"periodic dim {d} needs finite hard bounds")
        periodic[d] = True

    if spec.barrier is not None and float(spec.barrier(x0)) > 0:
        raise InfeasibleStart("barrier violated at x0")

    free = np.flatnonzero(~fixed)
    if len(free) == 0:
        raise ProblemError("all variables are fixed")
    noise = spec.noise if isinstance(spec.noise, NoiseSpec) else NoiseSpec(spec.noise)
    Dr = len(free)
    if spec.max_fun_evals is not None:
        budget = int(spec.max_fun_evals)
    elif noise.kind == "stochastic":
        budget = 200 * Dr
    else:
        budget = 500 * Dr
    return ValidatedProblem(
        objective=spec.objective,
        lb=lb[free],
        ub=ub[free],
        plb=plb[free],
        pub=pub[free],
        x0=x0[free],
        barrier=spec.barrier,
        periodic=periodic[free],
        noise=noise,
        max_fun_evals=budget,
        free=free,
        fixed_values=x0.copy(),
        full_dim=D,
    )


@dataclass
class Transform:
    """Per-dimension ``u = (g(x) - shift) / scale`` with ``g = log`` on log dims."""

    log_mask: np.ndarray
    shift: np.ndarray
    scale: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    # Hard bounds in internal coordinates.
    lb_internal: np.ndarray
    ub_internal: np.ndarray

    def _g(self, x):
        x = np.asarray(x, dtype=float)
        out = x.copy()
        if np.any(self.log_mask):
            out[..., self.log_mask] = np.log(x[..., self.log_mask])
        return out

    def to_internal(self, x):
        return (self._g(x) - self.shift) / self.scale

    def from_internal(self, u):
        z = np.asarray(u, dtype=float) * self.scale + self.shift
        if np.any(self.log_mask):
            z[..., self.log_mask] = np.exp(z[..., self.log_mask])
        return np.clip(z, self.lb, self.ub)

    @property
    def range_internal(self) -> np.ndarray:
        return self.ub_internal - self.lb_internal


def build_transform(problem: ValidatedProblem) -> Transform:
    lb, ub = problem.lb, problem.ub
    both_finite = np.isfinite(lb) & np.isfinite(ub)
    log_mask = both_finite & (lb > 0) & (ub >= 10 * lb) & ~problem.periodic
    g_plb = np.where(log_mask, np.log(np.where(log_mask, problem.plb, 1.0)), problem.plb)
    g_pub = np.where(log_mask, np.log(np.where(log_mask, problem.pub, 1.0)), problem.pub)
    shift = 0.5 * (g_plb + g_pub)
    scale = 0.5 * (g_pub - g_plb)

    with np.errstate(divide="ignore", invalid="ignore"):
        g_lb = np.where(log_mask, np.log(np.where(log_mask, lb, 1.0)), lb)
        g_ub = np.where(log_mask, np.log(np.where(log_mask, ub, 1.0)), ub)
        lb_int = np.where(np.isfinite(g_lb), (g_lb - shift) / scale, -INF_BOUND_SCALE)
        ub_int = np.where(np.isfinite(g_ub), (g_ub - shift) / scale, INF_BOUND_SCALE)
    return Transform(
        log_mask=log_mask,
        shift=shift,
        scale=scale,
        lb=lb.copy(),
        ub=ub.copy(),
        lb_internal=lb_int,
        ub_internal=ub_int,
    )


def is_feasible(u, problem: ValidatedProblem, transform: Transform) -> bool:
    u = np.asarray(u, dtype=float)
    if np.any(u < transform.lb_internal) or np.any(u > transform.ub_internal):
        return False
    if problem.barrier is None:
        return True
    return problem.barrier_value(transform.from_internal(u)) <= 0


def periods_internal(problem: ValidatedProblem, transform: Transform) -> np.ndarray:
    """Period of each periodic dimension in internal units (0 elsewhere)."""
    return np.where(problem.periodic, (problem.ub - problem.lb) / transform.scale, 0.0)
