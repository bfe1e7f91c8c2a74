"""SEARCH oracle: two-step evolutionary proposal and the Exp3 hedge over covariances."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .mads import project_to_mesh

BETA_H = 1.0
GAMMA_H = 0.125
N_CANDIDATES = 2**11
ZOOM = 0.25

STRATEGIES = ("ell", "wcm")


class RankDeficient(ValueError):
    pass


class NoFeasibleCandidate(RuntimeError):
    pass


@dataclass(frozen=True)
class SearchState:
    g: np.ndarray
    alpha_h: float

    @classmethod
    def initial(cls, D: int, n_strategies: int = len(STRATEGIES)) -> "SearchState":
        return cls(g=np.zeros(n_strategies), alpha_h=0.1 ** (1.0 / (2 * D)))


def hedge_probabilities(g, beta: float = BETA_H, gamma: float = GAMMA_H) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    e = np.exp(beta * (g - np.max(g)))
    return e / np.sum(e) * (1.0 - gamma * len(g)) + gamma


def hedge_select(state: SearchState, rng: np.random.Generator) -> tuple[int, np.ndarray]:
    p = hedge_probabilities(state.g)
    return int(rng.choice(len(p), p=p)), p


def hedge_update(state: SearchState, chosen: int, improvement: float, p_chosen: float, delta_poll: float) -> SearchState:
    g = state.alpha_h * state.g
    g[chosen] += improvement / (p_chosen * delta_poll)
    return replace(state, g=g)


def sigma_ell(ell) -> np.ndarray:
    ell2 = np.asarray(ell, dtype=float) ** 2
    return np.diag(ell2 / ell2.sum())


def rank_weights(y) -> np.ndarray:
    """Log-rank weights over the better half; tied values share their weight."""
    y = np.asarray(y, dtype=float)
    n = len(y)
    mu = max(n // 2, 1)
    order = np.argsort(y, kind="stable")
    w = np.zeros(n)
    ranks = np.arange(1, n + 1)
    w[order] = np.maximum(0.0, np.log(mu + 0.5) - np.log(ranks))
    for v in np.unique(y):
        tie = y == v
        if tie.sum() > 1:
            w[tie] = w[tie].mean()
    return w / w.sum()


def sigma_wcm(X, y) -> np.ndarray:
    """Rank-weighted covariance of the training points, scaled to unit trace."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, D = X.shape
    if n < D + 1:
        raise RankDeficient(f"need at least {D + 1} points, got {n}")
    w = rank_weights(y)
    centre = w @ X
    Z = X - centre
    C = (Z * w[:, None]).T @ Z
    C = 0.5 * (C + C.T)
    tr = np.trace(C)
    if not np.isfinite(tr) or tr <= 1e-300:
        raise RankDeficient("weighted covariance has zero trace")
    return C / tr


def _sqrtm_psd(S: np.ndarray) -> np.ndarray:
    lam, V = np.linalg.eigh(S)
    return V * np.sqrt(np.maximum(lam, 0.0))


def offspring_counts(n_parents: int, total: int) -> np.ndarray:
    """Largest-remainder allocation proportional to ``1/sqrt(rank)``."""
    w = 1.0 / np.sqrt(np.arange(1, n_parents + 1))
    quota = total * w / w.sum()
    counts = np.floor(quota).astype(int)
    short = total - counts.sum()
    if short > 0:
        rem = quota - counts
        counts[np.argsort(-rem, kind="stable")[:short]] += 1
    return counts


def generation_one(x_s, Sigma, delta_poll, x_k, delta_mesh, lb, ub, rng, n=N_CANDIDATES):
    A = _sqrtm_psd(Sigma)
    draws = x_s + delta_poll * rng.standard_normal((n, len(x_s))) @ A.T
    return project_to_mesh(draws, x_k, delta_mesh, lb, ub)


def propose_search_point(
    x_s: np.ndarray,
    Sigma: np.ndarray,
    delta_poll: float,
    x_k: np.ndarray,
    delta_mesh: float,
    score: Callable[[np.ndarray], np.ndarray],
    lb: np.ndarray,
    ub: np.ndarray,
    rng: np.random.Generator,
    keep: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    n_candidates: int = N_CANDIDATES,
    zoom: float = ZOOM,
) -> np.ndarray:
    """Pick a mesh point minimizing ``score`` via two sampling generations.

    ``keep`` maps a candidate array to a boolean mask of admissible rows
    (barrier feasibility, novelty).
    """
    A = _sqrtm_psd(Sigma)
    first = generation_one(x_s, Sigma, delta_poll, x_k, delta_mesh, lb, ub, rng, n_candidates)
    if keep is not None:
        first = first[keep(first)]
    if len(first) == 0:
        raise NoFeasibleCandidate("first generation empty")
    ranked = first[np.argsort(score(first), kind="stable")]
    counts = offspring_counts(len(ranked), n_candidates)
    parents = np.repeat(ranked, counts, axis=0)
    second = parents + zoom * delta_poll * rng.standard_normal(parents.shape) @ A.T
    second = project_to_mesh(second, x_k, delta_mesh, lb, ub)
    if keep is not None:
        second = second[keep(second)]
    if len(second) == 0:
        raise NoFeasibleCandidate("second generation empty")
    return second[int(np.argmin(score(second)))]
