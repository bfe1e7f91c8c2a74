"""Exact GP posterior on a training set, with incremental (bordered) Cholesky updates."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .kernels import Hyperparameters, KernelSpec, kernel_matrix


class FactorizationFailure(np.linalg.LinAlgError):
    """``K + sigma^2 I`` could not be factorized even after jitter escalation."""


JITTER_RETRIES = 3
BATCH_INVERSE_MIN = 64  # query batches at least this large use the explicit inverse factor


@dataclass
class TrainingSet:
    X: np.ndarray
    y: np.ndarray
    spec: KernelSpec
    hyp: Hyperparameters
    L: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0
    Linv: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.y)

    def inverse_factor(self) -> np.ndarray:
        """``L^{-1}``, computed once; large query batches go through one GEMM."""
        if self.Linv is None:
            self.Linv = solve_triangular(self.L, np.eye(self.n), lower=True, check_finite=False)
        return self.Linv

    def to_json(self, prior=None) -> str:
        doc = {
            "X": self.X.tolist(),
            "y": self.y.tolist(),
            "theta": self.hyp.to_dict(),
            "prior": None if prior is None else prior.to_dict(),
        }
        return json.dumps(doc)


def cholesky_jitter(C: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``C``, adding diagonal jitter on failure."""
    n = C.shape[0]
    jitter = 0.0
    base = 1e-10 * np.trace(C) / max(n, 1)
    for attempt in range(JITTER_RETRIES + 1):
        try:
            L = np.linalg.cholesky(C + jitter * np.eye(n) if jitter else C)
            return L, jitter
        except np.linalg.LinAlgError:
            jitter = base * (10.0**attempt)
    raise FactorizationFailure("kernel matrix not positive definite")


def build_training_set(X, y, spec: KernelSpec, hyp: Hyperparameters) -> TrainingSet:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    K = kernel_matrix(spec, hyp, X, X)
    K[np.diag_indices_from(K)] += hyp.sn**2
    if not np.all(np.isfinite(K)):
        raise FactorizationFailure("non-finite kernel matrix")
    L, jitter = cholesky_jitter(K)
    alpha = cho_solve((L, True), y - hyp.mean)
    return TrainingSet(X=X, y=y, spec=spec, hyp=hyp, L=L, alpha=alpha, jitter=jitter)


def posterior_moments(ts: TrainingSet | None, Xq, hyp: Hyperparameters | None = None):
    """Latent posterior mean and variance at the rows of ``Xq``.

    With an empty training set (``ts is None``) the prior moments of ``hyp``
    are returned.
    """
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    if ts is None or ts.n == 0:
        return np.full(len(Xq), hyp.mean), np.full(len(Xq), hyp.sf**2)
    Ks = kernel_matrix(ts.spec, ts.hyp, Xq, ts.X)
    mu = ts.hyp.mean + Ks @ ts.alpha
    if len(Xq) >= BATCH_INVERSE_MIN:
        W = Ks @ ts.inverse_factor().T
        s2 = ts.hyp.sf**2 - np.einsum("ij,ij->i", W, W)
    else:
        V = solve_triangular(ts.L, Ks.T, lower=True, check_finite=False)
        s2 = ts.hyp.sf**2 - np.einsum("ij,ij->j", V, V)
    return mu, np.maximum(s2, 0.0)


def rank_one_update(ts: TrainingSet, x_new, y_new: float) -> TrainingSet:
    """Append one observation, extending the Cholesky factor by one row."""
    x_new = np.asarray(x_new, dtype=float).reshape(1, -1)
    k = kernel_matrix(ts.spec, ts.hyp, ts.X, x_new)[:, 0]
    kss = ts.hyp.sf**2 + ts.hyp.sn**2 + ts.jitter
    l = solve_triangular(ts.L, k, lower=True, check_finite=False)
    d2 = kss - l @ l
    if not np.isfinite(d2) or d2 <= 1e-14 * kss:
        raise FactorizationFailure("rank-one update lost positive definiteness")
    n = ts.n
    L = np.zeros((n + 1, n + 1))
    L[:n, :n] = ts.L
    L[n, :n] = l
    L[n, n] = d = np.sqrt(d2)
    Linv = None
    if ts.Linv is not None:
        Linv = np.zeros((n + 1, n + 1))
        Linv[:n, :n] = ts.Linv
        Linv[n, :n] = -(l @ ts.Linv) / d
        Linv[n, n] = 1.0 / d
    X = np.vstack([ts.X, x_new])
    y = np.append(ts.y, float(y_new))
    alpha = cho_solve((L, True), y - ts.hyp.mean, check_finite=False)
    return TrainingSet(X=X, y=y, spec=ts.spec, hyp=ts.hyp, L=L, alpha=alpha, jitter=ts.jitter, Linv=Linv)
