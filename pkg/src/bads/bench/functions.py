"""Shifted and rotated test functions on the box [-5, 5]^D, all with f_min = 0."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

BOX = 5.0
SHIFT_BOX = 4.0  # optimum drawn in the central 80% of the box

GROUPS = (
    "separable",
    "low-conditioning",
    "high-conditioning",
    "multimodal-structured",
    "multimodal-weak",
)


@dataclass
class TestFunction:
    name: str
    D: int
    group: str
    x_min: np.ndarray
    f_min: float
    _f: Callable[[np.ndarray], float] = field(repr=False)

    __test__ = False  # not a pytest class

    def __call__(self, x) -> float:
        return float(self._f(np.asarray(x, dtype=float)))

    evaluate = __call__

    @property
    def lb(self):
        return np.full(self.D, -BOX)

    @property
    def ub(self):
        return np.full(self.D, BOX)


def random_rotation(D: int, rng: np.random.Generator) -> np.ndarray:
    Q, R = np.linalg.qr(rng.standard_normal((D, D)))
    return Q * np.sign(np.diag(R))


def rosenbrock(z) -> float:
    z = np.asarray(z, dtype=float)
    return float(np.sum(100.0 * (z[:-1] ** 2 - z[1:]) ** 2 + (z[:-1] - 1.0) ** 2))


def _sphere(z):
    return np.sum(z**2)


def _ellipsoid(z):
    D = len(z)
    if D == 1:
        return z[0] ** 2
    w = 10.0 ** (6.0 * np.arange(D) / (D - 1))
    return np.sum(w * z**2)


def _rastrigin(z):
    return 10.0 * len(z) + np.sum(z**2 - 10.0 * np.cos(2 * np.pi * z))


def _attractive_sector(z):
    s = np.where(z > 0, 100.0, 1.0)
    return np.sum((s * z) ** 2) ** 0.9


def _sharp_ridge(z):
    return z[0] ** 2 + 100.0 * np.sqrt(np.sum(z[1:] ** 2))


def _different_powers(z):
    D = len(z)
    p = 2.0 + 4.0 * np.arange(D) / max(D - 1, 1)
    return np.sqrt(np.sum(np.abs(z) ** p))


def _ackley(z):
    D = len(z)
    a = -20.0 * np.exp(-0.2 * np.sqrt(np.sum(z**2) / D))
    b = -np.exp(np.sum(np.cos(2 * np.pi * z)) / D)
    return max(a + b + 20.0 + np.e, 0.0)


def _griewank(z):
    i = np.arange(1, len(z) + 1)
    return max(np.sum(z**2) / 4000.0 - np.prod(np.cos(z / np.sqrt(i))) + 1.0, 0.0)


def _schaffer_f7(z):
    s = np.sqrt(z[:-1] ** 2 + z[1:] ** 2)
    return np.mean(np.sqrt(s) + np.sqrt(s) * np.sin(50.0 * s**0.2) ** 2) ** 2


# name -> (group, raw function of z, rotated?, input scale, offset at optimum, min D)
_TABLE = {
    "sphere": ("separable", _sphere, False, 1.0, 0.0, 1),
    "ellipsoid": ("separable", _ellipsoid, False, 1.0, 0.0, 1),
    "rastrigin": ("separable", _rastrigin, False, 1.0, 0.0, 1),
    "attractive_sector": ("low-conditioning", _attractive_sector, True, 1.0, 0.0, 1),
    "rosenbrock": ("low-conditioning", rosenbrock, True, None, 1.0, 2),
    "sharp_ridge": ("high-conditioning", _sharp_ridge, True, 1.0, 0.0, 1),
    "different_powers": ("high-conditioning", _different_powers, True, 1.0, 0.0, 1),
    "ackley": ("multimodal-structured", _ackley, True, 1.0, 0.0, 1),
    "griewank": ("multimodal-weak", _griewank, True, 20.0, 0.0, 1),
    "schaffer_f7": ("multimodal-weak", _schaffer_f7, True, 1.0, 0.0, 2),
}

SUITE = tuple(_TABLE)


def make_function(name: str, D: int, rng: np.random.Generator | int | None = None, shift: bool = True) -> TestFunction:
    """Instance of a suite function with a random optimum and rotation."""
    if name not in _TABLE:
        raise KeyError(f"unknown test function {name!r}")
    group, raw, rotated, scale, offset, min_d = _TABLE[name]
    if D < min_d:
        raise ValueError(f"{name} needs D >= {min_d}")
    rng = np.random.default_rng(rng)
    x_min = rng.uniform(-SHIFT_BOX, SHIFT_BOX, D) if shift else np.zeros(D)
    R = random_rotation(D, rng) if rotated and shift else np.eye(D)
    if scale is None:
        scale = max(1.0, np.sqrt(D) / 8.0)

    def f(x, R=R, x_min=x_min, scale=scale, offset=offset):
        return raw(scale * (R @ (x - x_min)) + offset)

    return TestFunction(name, D, group, x_min, 0.0, f)


def function_suite(D: int, rng: np.random.Generator | int | None = None, names=SUITE) -> list[TestFunction]:
    rng = np.random.default_rng(rng)
    return [make_function(n, D, rng) for n in names]
