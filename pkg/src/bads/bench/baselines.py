"""Reference optimizers: uniform random search and Nelder-Mead with restarts."""

from __future__ import annotations

import numpy as np

from ..engine import RunResult
from ..problem import ProblemSpec, validate

N_CANDIDATES = 3


class _Budget(Exception):
    pass


class _Counter:
    """Objective wrapper with a hard evaluation cap and full history."""

    def __init__(self, f, budget: int):
        self.f = f
        self.budget = budget
        self.X: list[np.ndarray] = []
        self.Y: list[float] = []

    def __call__(self, x) -> float:
        if len(self.Y) >= self.budget:
            raise _Budget
        y = float(self.f(x))
        self.X.append(np.array(x, dtype=float))
        self.Y.append(y)
        return y

    def result(self, noisy: bool) -> RunResult:
        Y = np.array(self.Y)
        order = np.argsort(Y, kind="stable")
        i = int(order[0])
        return RunResult(
            x_end=self.X[i],
            y_end=float(Y[i]),
            y_end_se=0.0,
            fun_evals=len(Y),
            final_evals=0,
            reason="budget",
            noisy=noisy,
            iterations=0,
            candidates=[self.X[j] for j in order[:N_CANDIDATES]],
            y_trace=Y,
        )


def _box(spec: ProblemSpec):
    p = validate(spec)
    return p, p.plb, p.pub


def baseline_random_search(spec: ProblemSpec, seed: int, budget: int) -> RunResult:
    p, plb, pub = _box(spec)
    rng = np.random.default_rng(seed)
    f = _Counter(p.evaluate, budget)
    for _ in range(budget):
        f(rng.uniform(plb, pub))
    return _expand(p, f.result(p.noise.kind == "stochastic"))


def _expand(p, r: RunResult) -> RunResult:
    r.x_end = p.expand(r.x_end)
    r.candidates = [p.expand(c) for c in r.candidates]
    return r


def nelder_mead(f, x0, lb, ub, step, tol_x: float = 1e-8, tol_f: float = 1e-10):
    """Plain simplex descent (1, 2, 1/2, 1/2) with clamping to ``[lb, ub]``.

    ``f`` may raise to abort; returns the final simplex otherwise.
    """
    x0 = np.clip(np.asarray(x0, dtype=float), lb, ub)
    D = len(x0)
    S = [x0]
    for d in range(D):
        v = x0.copy()
        v[d] += step[d]
        if v[d] > ub[d]:
            v[d] = x0[d] - step[d]
        S.append(np.clip(v, lb, ub))
    S = np.array(S)
    F = np.array([f(s) for s in S])
    clamp = lambda z: np.clip(z, lb, ub)
    while True:
        order = np.argsort(F, kind="stable")
        S, F = S[order], F[order]
        if np.max(np.abs(S[1:] - S[0])) <= tol_x and np.max(np.abs(F[1:] - F[0])) <= tol_f:
            return S, F
        c = S[:-1].mean(axis=0)
        xr = clamp(2 * c - S[-1])
        fr = f(xr)
        if fr < F[0]:
            xe = clamp(3 * c - 2 * S[-1])
            fe = f(xe)
            S[-1], F[-1] = (xe, fe) if fe < fr else (xr, fr)
            continue
        if fr < F[-2]:
            S[-1], F[-1] = xr, fr
            continue
        if fr < F[-1]:
            xc = clamp(c + 0.5 * (xr - c))
            fc = f(xc)
            if fc <= fr:
                S[-1], F[-1] = xc, fc
                continue
        else:
            xc = clamp(c + 0.5 * (S[-1] - c))
            fc = f(xc)
            if fc < F[-1]:
                S[-1], F[-1] = xc, fc
                continue
        S[1:] = S[0] + 0.5 * (S[1:] - S[0])
        F[1:] = [f(s) for s in S[1:]]


def baseline_nelder_mead(spec: ProblemSpec, seed: int, budget: int, restart: bool = True) -> RunResult:
    p, plb, pub = _box(spec)
    rng = np.random.default_rng(seed)
    f = _Counter(p.evaluate, budget)
    step = 0.05 * (pub - plb)
    tol_x = 1e-8 * np.max(pub - plb)
    x0 = p.x0
    try:
        while True:
            nelder_mead(f, x0, p.lb, p.ub, step, tol_x=tol_x)
            if not restart:
                break
            x0 = rng.uniform(plb, pub)
    except _Budget:
        pass
    return _expand(p, f.result(p.noise.kind == "stochastic"))
