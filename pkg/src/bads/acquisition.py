"""Acquisition functions over GP posterior moments (lower is better)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

KINDS = ("lcb", "ei", "pi")
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def lcb_beta(D: int, t: int, delta: float = 0.1) -> float:
    return 2.0 * np.log(D * t * t * np.pi**2 / (6.0 * delta))


def lcb(mu, s2, D: int, t: int, nu: float = 0.2, delta: float = 0.1):
    beta = lcb_beta(D, max(int(t), 1), delta)
    return np.asarray(mu) - np.sqrt(nu * beta * np.maximum(s2, 0.0))


def ei(mu, s2, y_best: float, xi: float = 0.0):
    """Negative expected improvement; zero where the posterior is degenerate."""
    mu = np.asarray(mu, dtype=float)
    s = np.sqrt(np.maximum(np.asarray(s2, dtype=float), 0.0))
    out = np.zeros(np.broadcast(mu, s).shape)
    pos = np.broadcast_to(s > 0, out.shape)
    mu_b = np.broadcast_to(mu, out.shape)[pos]
    s_b = np.broadcast_to(s, out.shape)[pos]
    g = (y_best - xi - mu_b) / s_b
    val = -s_b * (g * ndtr(g) + _INV_SQRT_2PI * np.exp(-0.5 * g * g))
    out[pos] = np.minimum(val, 0.0)
    return out if out.ndim else float(out)


def pi(mu, s2, y_best: float, xi: float = 0.0):
    """Negative probability of improvement; a step function where ``s = 0``."""
    mu = np.asarray(mu, dtype=float)
    s = np.sqrt(np.maximum(np.asarray(s2, dtype=float), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        g = (y_best - xi - mu) / s
    out = np.where(s > 0, -ndtr(g), np.where(mu < y_best - xi, -1.0, 0.0))
    return out if out.ndim else float(out)


def quantile(mu, s2, beta: float):
    if not 0.5 <= beta < 1.0:
        raise ValueError("beta must lie in [0.5, 1)")
    return np.asarray(mu) + ndtri(beta) * np.sqrt(np.maximum(s2, 0.0))


@dataclass(frozen=True)
class AcquisitionSpec:
    kind: str = "lcb"
    nu: float = 0.2
    delta: float = 0.1
    xi: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown acquisition {self.kind!r}; choose from {KINDS}")

    def __call__(self, mu, s2, *, D: int, t: int, y_best: float):
        if self.kind == "lcb":
            return lcb(mu, s2, D, t, self.nu, self.delta)
        if self.kind == "ei":
            return ei(mu, s2, y_best, self.xi)
        return pi(mu, s2, y_best, self.xi)
