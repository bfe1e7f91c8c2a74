"""Stationary ARD kernels (RQ, SE, Matern 5/2) with optional periodic dims."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist
from scipy.optimize import brentq

BASES = ("rq", "se", "m52")


@dataclass(frozen=True)
class KernelSpec:
    """Base kernel plus per-dimension periods (``0`` marks a non-periodic dim)."""

    base: str = "rq"
    periods: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        if self.base not in BASES:
            raise ValueError(f"unknown kernel {self.base!r}; choose from {BASES}")

    @property
    def has_alpha(self) -> bool:
        return self.base == "rq"

    def periodic_mask(self, D: int) -> np.ndarray:
        if self.periods is None:
            return np.zeros(D, dtype=bool)
        return np.asarray(self.periods) > 0


@dataclass
class Hyperparameters:
    ell: np.ndarray
    sf: float
    sn: float
    mean: float
    alpha: float = np.e

    def copy(self) -> "Hyperparameters":
        return Hyperparameters(self.ell.copy(), self.sf, self.sn, self.mean, self.alpha)

    def to_vector(self, spec: KernelSpec) -> np.ndarray:
        parts = [np.log(self.ell), [np.log(self.sf)]]
        if spec.has_alpha:
            parts.append([np.log(self.alpha)])
        parts += [[np.log(self.sn)], [self.mean]]
        return np.concatenate(parts).astype(float)

    @classmethod
    def from_vector(cls, theta: np.ndarray, spec: KernelSpec, D: int) -> "Hyperparameters":
        theta = np.asarray(theta, dtype=float)
        ell = np.exp(theta[:D])
        sf = float(np.exp(theta[D]))
        i = D + 1
        alpha = np.e
        if spec.has_alpha:
            alpha = float(np.exp(theta[i]))
            i += 1
        return cls(ell=ell, sf=sf, sn=float(np.exp(theta[i])), mean=float(theta[i + 1]), alpha=alpha)

    def to_dict(self) -> dict:
        return {
            "ell": self.ell.tolist(),
            "sf": self.sf,
            "sn": self.sn,
            "mean": self.mean,
            "alpha": self.alpha,
        }


def n_hyp(spec: KernelSpec, D: int) -> int:
    return D + 3 + int(spec.has_alpha)


def sq_diffs(spec: KernelSpec, X1: np.ndarray, X2: np.ndarray) -> np.ndarray:
    """Per-dimension squared separations, shape ``(n1, n2, D)``.

    Periodic dims use the chordal distance of the (sin, cos) embedding,
    rescaled by ``(L / 2pi)^2`` so length scales keep internal-space units.
    """
    diff = X1[:, None, :] - X2[None, :, :]
    out = diff * diff
    if spec.periods is not None:
        P = np.asarray(spec.periods, dtype=float)
        mask = P > 0
        if np.any(mask):
            L = P[mask]
            s = np.sin(np.pi * diff[..., mask] / L)
            out[..., mask] = (L / np.pi) ** 2 * s * s
    return out


def _embed(spec: KernelSpec, ell: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Features whose squared Euclidean distances equal ``scaled_r2``."""
    Z = X / ell
    if spec.periods is None:
        return Z
    P = np.asarray(spec.periods, dtype=float)
    mask = P > 0
    if not np.any(mask):
        return Z
    L = P[mask]
    w = 2.0 * np.pi * X[:, mask] / L
    r = L / (2.0 * np.pi * ell[mask])
    return np.hstack([Z[:, ~mask], r * np.sin(w), r * np.cos(w)])


def scaled_r2(spec: KernelSpec, ell: np.ndarray, X1: np.ndarray, X2: np.ndarray) -> np.ndarray:
    ell = np.asarray(ell, dtype=float)
    return cdist(_embed(spec, ell, X1), _embed(spec, ell, X2), "sqeuclidean")


def k_of_r2(base: str, r2, sf2: float, alpha: float = 1.0):
    r2 = np.asarray(r2, dtype=float)
    if base == "se":
        return sf2 * np.exp(-0.5 * r2)
    if base == "rq":
        return sf2 * np.exp(-alpha * np.log1p(r2 / (2.0 * alpha)))
    s = np.sqrt(5.0 * r2)
    return sf2 * (1.0 + s + s * s / 3.0) * np.exp(-s)


def dk_dr2(base: str, r2, sf2: float, alpha: float = 1.0):
    r2 = np.asarray(r2, dtype=float)
    if base == "se":
        return -0.5 * sf2 * np.exp(-0.5 * r2)
    if base == "rq":
        u = 1.0 + r2 / (2.0 * alpha)
        return -0.5 * sf2 * u ** (-alpha - 1.0)
    s = np.sqrt(5.0 * r2)
    return -sf2 * (5.0 / 6.0) * (1.0 + s) * np.exp(-s)


def kernel_matrix(spec: KernelSpec, hyp: Hyperparameters, X1, X2) -> np.ndarray:
    X1 = np.atleast_2d(X1)
    X2 = np.atleast_2d(X2)
    r2 = scaled_r2(spec, hyp.ell, X1, X2)
    return k_of_r2(spec.base, r2, hyp.sf**2, hyp.alpha)


def kernel_eval(spec: KernelSpec, hyp: Hyperparameters, x, xp) -> float:
    return float(kernel_matrix(spec, hyp, np.atleast_2d(x), np.atleast_2d(xp))[0, 0])


def kernel_matrix_grads(spec: KernelSpec, hyp: Hyperparameters, X: np.ndarray):
    """Kernel matrix on ``X`` and its derivatives w.r.t. the log-parameters.

    Returns ``(K, dK)`` where ``dK`` lists matrices for ``log ell_1..D``,
    ``log sf`` and (RQ only) ``log alpha``.
    """
    comps = sq_diffs(spec, X, X)
    inv_ell2 = 1.0 / hyp.ell**2
    r2 = comps @ inv_ell2
    sf2 = hyp.sf**2
    K = k_of_r2(spec.base, r2, sf2, hyp.alpha)
    dk = dk_dr2(spec.base, r2, sf2, hyp.alpha)
    grads = [dk * (-2.0 * comps[..., d] * inv_ell2[d]) for d in range(X.shape[1])]
    grads.append(2.0 * K)
    if spec.has_alpha:
        a = hyp.alpha
        u = 1.0 + r2 / (2.0 * a)
        grads.append(K * a * (-np.log(u) + r2 / (2.0 * a * u)))
    return K, grads


def radius(spec: KernelSpec, hyp: Optional[Hyperparameters] = None, alpha: Optional[float] = None) -> float:
    """Distance ``rho`` at which ``k(2 rho^2) = sf^2 / e``."""
    if spec.base == "se":
        return 1.0
    if spec.base == "rq":
        a = alpha if alpha is not None else (hyp.alpha if hyp is not None else np.e)
        return float(np.sqrt(a * np.expm1(1.0 / a)))
    return _RHO_M52


def _m52_radius() -> float:
    target = np.exp(-1.0)
    return brentq(lambda rho: float(k_of_r2("m52", 2.0 * rho * rho, 1.0)) - target, 0.1, 5.0, xtol=1e-14)


_RHO_M52 = _m52_radius()
