"""Gaussian observation noise wrappers for test functions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .functions import TestFunction

KINDS = ("none", "homo", "hetero")


@dataclass
class NoiseWrapper:
    fn: TestFunction
    kind: str = "none"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; choose from {KINDS}")

    def sd(self, x) -> float:
        if self.kind == "none":
            return 0.0
        if self.kind == "homo":
            return 1.0
        return 1.0 + 0.1 * (self.fn(x) - self.fn.f_min)


def noisy_eval(wrapper: NoiseWrapper, x, rng: np.random.Generator) -> float:
    f = wrapper.fn(x)
    if wrapper.kind == "none":
        return f
    sd = 1.0 if wrapper.kind == "homo" else 1.0 + 0.1 * (f - wrapper.fn.f_min)
    return f + sd * float(rng.standard_normal())


def as_objective(wrapper: NoiseWrapper, rng: np.random.Generator):
    """Bind a generator so the wrapper becomes a plain ``x -> y`` callable."""
    return lambda x: noisy_eval(wrapper, x, rng)
