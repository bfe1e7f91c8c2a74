"""Local training-set selection around the incumbent and the residual refit trigger."""

from __future__ import annotations

import numpy as np
from scipy import stats

from .kernels import Hyperparameters, KernelSpec, radius, scaled_r2

N_MIN = 50
N_MIN_NOISY = 100
N_MAX_NOISY = 200
NORMALITY_P_THRESHOLD = 1e-6


def select_training_set(
    cache_X: np.ndarray,
    x_k: np.ndarray,
    spec: KernelSpec,
    hyp: Hyperparameters,
    noisy: bool = False,
) -> np.ndarray:
    """Indices into ``cache_X`` forming the local training set, nearest first."""
    cache_X = np.atleast_2d(cache_X)
    D = cache_X.shape[1]
    r = np.sqrt(scaled_r2(spec, hyp.ell, cache_X, np.atleast_2d(x_k))[:, 0])
    order = np.argsort(r, kind="stable")
    n_min = N_MIN_NOISY if noisy else N_MIN
    extra = 10 * D
    if noisy:
        extra = max(extra, N_MAX_NOISY - n_min)
    head, tail = order[:n_min], order[n_min:]
    within = tail[r[tail] <= 3.0 * radius(spec, hyp)]
    return np.concatenate([head, within[:extra]])


def residual_z(y, mu, s2, sn2) -> np.ndarray:
    """Standardized predictive residuals of newly observed values."""
    y, mu, s2 = (np.asarray(v, dtype=float) for v in (y, mu, s2))
    return (y - mu) / np.sqrt(s2 + sn2)


def residual_normality_check(z) -> float:
    """Shapiro-Wilk p-value of the residuals ``z``.

    Zero-spread residuals are maximally non-normal for this purpose and get
    ``p = 0`` (or ``1`` if they are all exactly zero).
    """
    z = np.asarray(z, dtype=float)
    if len(z) < 3:
        raise ValueError("need at least 3 residuals")
    if np.ptp(z) == 0:
        return 1.0 if np.all(z == 0) else 0.0
    return float(stats.shapiro(z).pvalue)
