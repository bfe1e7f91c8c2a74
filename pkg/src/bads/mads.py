"""Mesh arithmetic, LTMADS poll directions and mesh-size updates."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

DELTA_MESH_0 = 2.0**-10
DELTA_POLL_0 = 1.0
DELTA_POLL_MAX = 1.0
DELTA_POLL_MIN = 1e-6
STALL_ACCELERATE = 3  # contract by 4 once more than this many iterations stalled
MAX_LTMADS_INDEX = 30

SEARCH_SUCCESS = "search_success"
POLL_SUCCESS = "poll_success"
FAILURE = "failure"


class EmptyPollSet(RuntimeError):
    """No poll direction yields a feasible, new point."""


@dataclass(frozen=True)
class MeshState:
    x: np.ndarray
    f: float
    delta_mesh: float = DELTA_MESH_0
    delta_poll: float = DELTA_POLL_0
    iteration: int = 0
    stall_count: int = 0


def sufficient_improvement(f_prev: float, f_new: float, delta_poll: float) -> bool:
    return f_prev - f_new >= delta_poll**1.5


def project_to_mesh(u, x_k, delta_mesh: float, lb=None, ub=None) -> np.ndarray:
    """Nearest point of ``x_k + delta_mesh * Z^D`` (ties toward ``x_k``).

    With bounds, the step count is clamped to the nearest mesh point inside.
    """
    u = np.asarray(u, dtype=float)
    x_k = np.asarray(x_k, dtype=float)
    steps = (u - x_k) / delta_mesh
    z = np.sign(steps) * np.ceil(np.abs(steps) - 0.5)
    if lb is not None:
        z_lo = np.ceil((lb - x_k) / delta_mesh - 1e-9)
        z_hi = np.floor((ub - x_k) / delta_mesh + 1e-9)
        z = np.clip(z, z_lo, z_hi)
    out = x_k + delta_mesh * z
    if lb is not None:
        out = np.clip(out, lb, ub)
    return out


def on_mesh(u, x_k, delta_mesh: float, tol: float = 1e-6) -> bool:
    steps = (np.asarray(u) - np.asarray(x_k)) / delta_mesh
    return bool(np.all(np.abs(steps - np.round(steps)) <= tol))


def ltmads_index(delta_mesh: float, delta_poll: float) -> int:
    return int(min(max(round(np.log2(delta_poll / delta_mesh)), 0), MAX_LTMADS_INDEX))


def ltmads_basis(D: int, index: int, rng: np.random.Generator) -> np.ndarray:
    """Random lower-triangular integer basis with permuted rows and columns."""
    b = 2**index
    B = np.zeros((D, D))
    B[np.diag_indices(D)] = rng.choice([-b, b], size=D)
    rows, cols = np.tril_indices(D, k=-1)
    if len(rows):
        B[rows, cols] = rng.integers(-b + 1, b, size=len(rows)) if b > 1 else 0
    B = B[rng.permutation(D)][:, rng.permutation(D)]
    return B


def rescale_factors(ell: np.ndarray, delta_mesh: float, ranges: np.ndarray) -> np.ndarray:
    gm = np.exp(np.mean(np.log(ell)))
    return np.minimum(np.maximum(np.maximum(1e-6, delta_mesh), ell / gm), ranges)


def generate_poll_directions(
    D: int,
    delta_mesh: float,
    delta_poll: float,
    ell: Optional[np.ndarray],
    ranges: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Rows are the ``2D`` rescaled directions of the positive basis ``[B, -B]``."""
    B = ltmads_basis(D, ltmads_index(delta_mesh, delta_poll), rng)
    V = np.vstack([B.T, -B.T])
    if ell is not None:
        V = V * rescale_factors(np.asarray(ell), delta_mesh, ranges)
    return V


def poll_candidates(
    x_k: np.ndarray,
    directions: np.ndarray,
    delta_mesh: float,
    lb: np.ndarray,
    ub: np.ndarray,
    feasible: Optional[Callable[[np.ndarray], bool]] = None,
    seen: Optional[Callable[[np.ndarray], bool]] = None,
) -> np.ndarray:
    """On-mesh poll points, dropping infeasible, duplicate and null moves."""
    out = []
    keys = set()
    for v in directions:
        p = project_to_mesh(x_k + delta_mesh * v, x_k, delta_mesh)
        if np.any(p < lb) or np.any(p > ub) or np.array_equal(p, x_k):
            continue
        key = p.tobytes()
        if key in keys or (seen is not None and seen(p)):
            continue
        if feasible is not None and not feasible(p):
            continue
        keys.add(key)
        out.append(p)
    if not out:
        raise EmptyPollSet("all poll directions infeasible")
    return np.array(out)


def order_poll(candidates: np.ndarray, scores: Optional[np.ndarray]) -> np.ndarray:
    if scores is None:
        return candidates
    return candidates[np.argsort(scores, kind="stable")]


def update_mesh(state: MeshState, outcome: str, sufficient: bool) -> MeshState:
    stall = 0 if sufficient else state.stall_count + 1
    mesh, poll = state.delta_mesh, state.delta_poll
    if outcome == POLL_SUCCESS:
        poll = min(2.0 * poll, DELTA_POLL_MAX)
        mesh = min(2.0 * mesh, poll)
    elif outcome == FAILURE:
        tau = 4.0 if stall > STALL_ACCELERATE else 2.0
        mesh, poll = mesh / tau, poll / tau
    elif outcome != SEARCH_SUCCESS:
        raise ValueError(f"unknown outcome {outcome!r}")
    return replace(state, delta_mesh=mesh, delta_poll=poll, iteration=state.iteration + 1, stall_count=stall)
