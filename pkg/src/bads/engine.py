"""The optimization loop: initial design, SEARCH/POLL alternation, GP upkeep,
noisy incumbent handling, termination and result packaging."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import IO, Optional

import numpy as np
from scipy.stats import qmc

from . import mads
from .acquisition import AcquisitionSpec, quantile
from .gp import (
    FactorizationFailure,
    KernelSpec,
    build_hyperprior,
    build_training_set,
    fit_map,
    initial_hyperparameters,
    posterior_moments,
    rank_one_update,
    residual_normality_check,
    residual_z,
    select_training_set,
)
from .gp.training import NORMALITY_P_THRESHOLD
from .problem import ProblemSpec, ValidatedProblem, build_transform, periods_internal, validate
from .search import (
    NoFeasibleCandidate,
    RankDeficient,
    SearchState,
    hedge_select,
    hedge_update,
    propose_search_point,
    sigma_ell,
    sigma_wcm,
)

log = logging.getLogger(__name__)

NOISE_DETECT_THRESHOLD = 1.5e-11
N_INIT_NOISY = 20
N_FINAL = 10
BETA_RUN = 0.5
BETA_END = 0.999
RESIDUAL_WINDOW = 50
EARLY_ITERATIONS = 10


class ObjectiveError(RuntimeError):
    """The objective returned a non-finite value; ``trace`` holds the run so far."""

    def __init__(self, message, point=None, trace=None):
        super().__init__(message)
        self.point = point
        self.trace = trace or []


class _BudgetExhausted(Exception):
    pass


@dataclass
class Options:
    kernel: str = "rq"
    acquisition: str = "lcb"
    unbiased_final: bool = False
    n_final: int = N_FINAL
    max_fun_evals: Optional[int] = None

    @classmethod
    def from_dict(cls, doc: dict) -> "Options":
        known = {k: doc[k] for k in ("kernel", "acquisition", "unbiased_final", "n_final", "max_fun_evals") if k in doc}
        return cls(**known)


@dataclass
class RunResult:
    x_end: np.ndarray
    y_end: float
    y_end_se: float
    fun_evals: int
    final_evals: int
    reason: str
    noisy: bool
    iterations: int
    trace: list = field(default_factory=list, repr=False)
    candidates: list = field(default_factory=list, repr=False)
    y_trace: np.ndarray = field(default=None, repr=False)

    def best_so_far(self) -> np.ndarray:
        return np.minimum.accumulate(self.y_trace)


def n_search_steps(D: int) -> int:
    return max(D, int(np.floor(3 + D / 2)))


def stall_limit(D: int, noisy: bool) -> int:
    base = 4 + D // 2
    return 2 * base if noisy else base


def refit_interval(D: int, iteration: int) -> int:
    return max(2 * D, 10) if iteration < EARLY_ITERATIONS else 5 * D


def noisy_incumbent_update(incumbents: np.ndarray, gp, beta: float = BETA_RUN) -> int:
    """Index of the stored incumbent with the lowest GP quantile."""
    incumbents = np.atleast_2d(incumbents)
    mu, s2 = posterior_moments(gp, incumbents)
    return int(np.argmin(quantile(mu, s2, beta)))


def write_trace(records, fp: IO[str]) -> None:
    for rec in records:
        fp.write(json.dumps(rec, separators=(",", ":")) + "\n")


def _key(u: np.ndarray) -> bytes:
    return (np.round(u, 12) + 0.0).tobytes()


def _keys(C: np.ndarray) -> list[bytes]:
    R = np.ascontiguousarray(np.round(C, 12) + 0.0)
    return R.view(f"V{R.shape[1] * R.itemsize}").ravel().tolist()


class Runner:
    """State of one optimization run. Use :func:`run` for the one-shot API."""

    def __init__(self, spec: ProblemSpec | ValidatedProblem, seed: int = 0, options: Optional[Options] = None, trace_fp: Optional[IO[str]] = None):
        self.options = options or Options()
        self.problem = spec if isinstance(spec, ValidatedProblem) else validate(spec)
        if self.options.max_fun_evals is not None:
            self.problem = replace(self.problem, max_fun_evals=int(self.options.max_fun_evals))
        self.T = build_transform(self.problem)
        self.D = self.problem.D
        self.rng = np.random.default_rng(seed)
        self.budget = self.problem.max_fun_evals
        self.lb = self.T.lb_internal
        self.ub = self.T.ub_internal
        finite = np.isfinite(self.problem.lb) & np.isfinite(self.problem.ub)
        # Plausible range (2 in internal units) stands in for infinite bounds.
        self.ranges = np.where(finite, self.ub - self.lb, 2.0)
        periods = periods_internal(self.problem, self.T)
        self.kspec = KernelSpec(self.options.kernel, periods if np.any(periods > 0) else None)
        self.acq = AcquisitionSpec(self.options.acquisition)
        self.noisy = self.problem.noise.kind == "stochastic"
        self.trace_fp = trace_fp
        self.trace: list[dict] = []

        cap = self.budget + 2
        self.U = np.empty((cap, self.D))
        self.Y = np.empty(cap)
        self.stage = []
        self.n = 0
        self.final_evals = 0
        self.seen: set[bytes] = set()

        self.gp = None
        self.hyp = None
        self.search_state = SearchState.initial(self.D)
        self.mesh = mads.MeshState(x=self.T.to_internal(self.problem.x0), f=np.inf)
        self.x_inc = self.mesh.x.copy()
        self.incumbents: list[np.ndarray] = []
        self.since_refit = 0
        self.residuals: list[float] = []
        self.refits = 0
        self._scale_history: list[float] = []
        self._scale_warned = False

    # ------------------------------------------------------------------ trace
    def _emit(self, event: str, stage: str, u=None, y=None, info=None):
        rec = {
            "t": self.n,
            "stage": stage,
            "x": None if u is None else self.T.from_internal(u).tolist(),
            "y": None if y is None else float(y),
            "delta_mesh": self.mesh.delta_mesh,
            "delta_poll": self.mesh.delta_poll,
            "incumbent": self.T.from_internal(self.x_inc).tolist(),
            "event": event,
        }
        if info:
            rec["info"] = info
        self.trace.append(rec)
        if self.trace_fp is not None:
            self.trace_fp.write(json.dumps(rec, separators=(",", ":")) + "\n")

    # ------------------------------------------------------------- evaluation
    def _call(self, u):
        x = self.T.from_internal(u)
        y = self.problem.evaluate(x)
        if np.isfinite(y):
            return y
        if not self.noisy:
            raise ObjectiveError(f"non-finite objective {y} at {x.tolist()}", point=x, trace=self.trace)
        if self.n >= self.budget - 1:
            raise ObjectiveError(f"non-finite objective {y} at {x.tolist()}", point=x, trace=self.trace)
        self.n += 1  # the rejected sample still costs an evaluation
        y = self.problem.evaluate(x)
        if not np.isfinite(y):
            raise ObjectiveError(f"non-finite objective {y} at {x.tolist()} (twice)", point=x, trace=self.trace)
        return y

    def _evaluate(self, u: np.ndarray, stage: str) -> float:
        if self.n >= self.budget:
            raise _BudgetExhausted
        u = np.asarray(u, dtype=float)
        anchor = self.x_inc.copy()
        y = self._call(u)
        self.U[self.n] = u
        self.Y[self.n] = y
        self.stage.append(stage)
        self.n += 1
        if not self.noisy:
            self.seen.add(_key(u))
        self._emit("eval", stage, u, y, {"u": u.tolist(), "anchor": anchor.tolist(), "delta_mesh": self.mesh.delta_mesh})
        if self.gp is not None:
            self._track_residual(u, y)
            self._gp_add(u, y)
        self.since_refit += 1
        if self.hyp is not None and (
            self.since_refit >= refit_interval(self.D, self.mesh.iteration) or self._residuals_flagged()
        ):
            self._refit()
        return y

    def _track_residual(self, u, y):
        mu, s2 = posterior_moments(self.gp, u[None, :])
        z = residual_z(y, mu[0], s2[0], self.hyp.sn**2)
        self.residuals.append(float(z))
        del self.residuals[:-RESIDUAL_WINDOW]

    def _residuals_flagged(self) -> bool:
        if len(self.residuals) < 4:
            return False
        return residual_normality_check(self.residuals) < NORMALITY_P_THRESHOLD

    # --------------------------------------------------------------------- GP
    def _gp_rebuild(self):
        if self.hyp is None:
            return
        X, Y = self.U[: self.n], self.Y[: self.n]
        idx = select_training_set(X, self.x_inc, self.kspec, self.hyp, self.noisy)
        try:
            self.gp = build_training_set(X[idx], Y[idx], self.kspec, self.hyp)
        except FactorizationFailure:
            log.debug("GP factorization failed; continuing without surrogate")
            self.gp = None

    def _gp_add(self, u, y):
        try:
            self.gp = rank_one_update(self.gp, u, y)
        except FactorizationFailure:
            self._gp_rebuild()

    def _refit(self):
        X, Y = self.U[: self.n], self.Y[: self.n]
        if self.n < 2:
            return
        if self.hyp is None:
            self.hyp = initial_hyperparameters(Y, self.D, self.mesh.delta_poll, self.noisy, self.problem.noise.sigma_est)
        idx = select_training_set(X, self.x_inc, self.kspec, self.hyp, self.noisy)
        Xs, Ys = X[idx], Y[idx]
        prior = build_hyperprior(
            Xs, Ys, self.kspec, self.mesh.delta_poll, self.noisy, self.ranges, self.mesh.delta_mesh, self.problem.noise.sigma_est
        )
        self.hyp = fit_map(Xs, Ys, self.kspec, self.hyp, prior, self.rng)
        self.since_refit = 0
        self.residuals = []
        self.refits += 1
        self._gp_rebuild()
        self._emit("refit", "gp", info={"theta": self.hyp.to_dict()})

    def _value(self, u) -> float:
        """Ranking value of a visited point: observed y, or GP median if noisy."""
        if self.noisy and self.gp is not None:
            return float(posterior_moments(self.gp, np.atleast_2d(u))[0][0])
        key = _key(u)
        hits = np.flatnonzero(np.all(np.abs(self.U[: self.n] - u) <= 1e-12, axis=1))
        if len(hits):
            return float(np.min(self.Y[hits]))
        raise KeyError(f"point {key!r} not in cache")

    def _move_incumbent(self, u, f):
        self.x_inc = np.asarray(u, dtype=float).copy()
        self.mesh = replace(self.mesh, x=self.x_inc, f=f)
        self._gp_rebuild()

    # ------------------------------------------------------------ acquisition
    def _score(self, C: np.ndarray) -> np.ndarray:
        mu, s2 = posterior_moments(self.gp, C)
        return self.acq(mu, s2, D=self.D, t=max(self.n, 1), y_best=self._value(self.x_inc))

    def _keep_mask(self, C: np.ndarray) -> np.ndarray:
        mask = np.ones(len(C), dtype=bool)
        if not self.noisy:
            keys = _keys(C)
            dup = self.seen.intersection(keys)
            if dup:
                mask &= np.array([k not in dup for k in keys], dtype=bool)
        if self.problem.barrier is not None:
            mask &= np.array([self.problem.barrier_value(self.T.from_internal(c)) <= 0 if m else False for c, m in zip(C, mask)])
        return mask

    def _feasible(self, u) -> bool:
        if self.problem.barrier is None:
            return True
        return self.problem.barrier_value(self.T.from_internal(u)) <= 0

    # ---------------------------------------------------------------- stages
    def initialize(self):
        x0 = self.mesh.x
        if self.problem.noise.kind == "auto":
            y1 = self._evaluate(x0, "init")
            self.seen.discard(_key(x0))
            y2 = self._evaluate(x0, "init")
            self.noisy = abs(y1 - y2) > NOISE_DETECT_THRESHOLD
            if self.noisy:
                self.seen.clear()
            self._emit("noise_detect", "init", info={"noisy": bool(self.noisy)})
        else:
            self._evaluate(x0, "init")
        self.stall_max = stall_limit(self.D, self.noisy)

        n_init = N_INIT_NOISY if self.noisy else self.D
        sobol = qmc.Sobol(d=self.D, scramble=True, seed=self.rng)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            pts = 2.0 * sobol.random(4 * n_init + 4) - 1.0
        added = 0
        for p in pts:
            if added >= n_init:
                break
            u = mads.project_to_mesh(p, x0, self.mesh.delta_mesh, self.lb, self.ub)
            if (not self.noisy and _key(u) in self.seen) or not self._feasible(u):
                continue
            self._evaluate(u, "init")
            added += 1

        self._refit()
        if self.noisy and self.gp is not None:
            X = self.U[: self.n]
            i = noisy_incumbent_update(X, self.gp)
            self._move_incumbent(X[i], self._value(X[i]))
        else:
            i = int(np.argmin(self.Y[: self.n]))
            self._move_incumbent(self.U[i], float(self.Y[i]))
        self.mesh = replace(self.mesh, f=self._value(self.x_inc))

    def _search_stage(self) -> bool:
        x_s = self.x_inc.copy()
        fails = 0
        while fails < n_search_steps(self.D):
            if self.gp is None:
                return False
            s, p = hedge_select(self.search_state, self.rng)
            Sigma = sigma_ell(self.hyp.ell)
            if s == 1:
                try:
                    Sigma = sigma_wcm(self.gp.X, self.gp.y)
                except RankDeficient:
                    pass
            try:
                u = propose_search_point(
                    x_s, Sigma, self.mesh.delta_poll, self.x_inc, self.mesh.delta_mesh,
                    self._score, self.lb, self.ub, self.rng, keep=self._keep_mask,
                )
            except NoFeasibleCandidate:
                return False
            self._evaluate(u, "search")
            f_old = self._value(self.x_inc)
            f_new = self._value(u)
            gain = max(0.0, f_old - f_new)
            self.search_state = hedge_update(self.search_state, s, gain, p[s], self.mesh.delta_poll)
            self._emit("hedge", "search", info={"p": p.tolist(), "chosen": s, "gain": gain})
            if f_new < f_old:
                self._move_incumbent(u, f_new)
                x_s = u.copy()
            if mads.sufficient_improvement(f_old, f_new, self.mesh.delta_poll):
                return True
            fails += 1
        return False

    def _poll_stage(self) -> bool:
        f_start = self._value(self.x_inc)
        ell = self.hyp.ell if self.hyp is not None else None
        V = mads.generate_poll_directions(self.D, self.mesh.delta_mesh, self.mesh.delta_poll, ell, self.ranges, self.rng)
        seen = None if self.noisy else (lambda q: _key(q) in self.seen)
        try:
            P = mads.poll_candidates(self.x_inc, V, self.mesh.delta_mesh, self.lb, self.ub, self._feasible, seen)
        except mads.EmptyPollSet:
            return False
        if self.gp is not None:
            P = mads.order_poll(P, self._score(P))
        success = False
        best_u, best_f = None, f_start
        for p in P:
            self._evaluate(p, "poll")
            f_new = self._value(p)
            f_ref = self._value(self.x_inc) if self.noisy else f_start
            if f_new < min(best_f, f_ref):
                best_u, best_f = p, f_new
            if mads.sufficient_improvement(f_start, f_new, self.mesh.delta_poll):
                success = True
                break
        if best_u is not None:
            self._move_incumbent(best_u, best_f)
        if self.noisy and self.gp is not None and self.incumbents:
            pool = np.vstack(self.incumbents + [self.x_inc])
            i = noisy_incumbent_update(pool, self.gp)
            if not np.array_equal(pool[i], self.x_inc):
                self._move_incumbent(pool[i], self._value(pool[i]))
        return success

    def _check_scale(self, df: float):
        if self._scale_warned or df == 0:
            return
        self._scale_history.append(abs(df))
        recent = self._scale_history[-10:]
        if len(recent) == 10 and (min(recent) > 1e6 or (max(recent) < 1e-6 and self.mesh.delta_poll >= 1e-3)):
            warnings.warn("objective changes are far from order 1; consider rescaling the objective", RuntimeWarning)
            self._scale_warned = True

    def iterate(self) -> str:
        f_start = self._value(self.x_inc)
        poll_start = self.mesh.delta_poll
        if self._search_stage():
            outcome = mads.SEARCH_SUCCESS
        elif self._poll_stage():
            outcome = mads.POLL_SUCCESS
        else:
            outcome = mads.FAILURE
        f_end = self._value(self.x_inc)
        self._check_scale(f_start - f_end)
        sufficient = mads.sufficient_improvement(f_start, f_end, poll_start)
        self.mesh = mads.update_mesh(replace(self.mesh, x=self.x_inc, f=f_end), outcome, sufficient)
        if self.noisy:
            self.incumbents.append(self.x_inc.copy())
        self._emit("iteration", "update", info={"outcome": outcome, "sufficient": sufficient, "stall": self.mesh.stall_count})
        return outcome

    def termination(self) -> Optional[str]:
        if self.mesh.delta_poll < mads.DELTA_POLL_MIN:
            return "poll_size"
        if self.n >= self.budget:
            return "budget"
        if self.mesh.stall_count > self.stall_max:
            return "stalling"
        return None

    def run(self) -> RunResult:
        try:
            self.initialize()
            while (reason := self.termination()) is None:
                self.iterate()
        except _BudgetExhausted:
            reason = "budget"
        if self.n == 0:
            raise ObjectiveError("budget allows no evaluations", trace=self.trace)
        self._emit("terminate", "final", info={"reason": reason})
        return self.finalize(reason)

    def finalize(self, reason: str) -> RunResult:
        Y = self.Y[: self.n]
        if not self.noisy or self.gp is None:
            i = int(np.argmin(Y))
            u_end, y_end, se = self.U[i], float(Y[i]), 0.0
            order = np.argsort(Y, kind="stable")
            cands = [self.T.from_internal(self.U[j]) for j in order[:3]]
        else:
            pool = np.unique(np.vstack(self.incumbents + [self.x_inc]), axis=0)
            mu, s2 = posterior_moments(self.gp, pool)
            q = quantile(mu, s2, BETA_END)
            order = np.argsort(q, kind="stable")
            u_end = pool[order[0]]
            y_end, se = float(mu[order[0]]), float(np.sqrt(s2[order[0]]))
            cands = [self.T.from_internal(pool[j]) for j in order[:3]]
            if self.options.unbiased_final:
                x = self.T.from_internal(u_end)
                ys = []
                for _ in range(self.options.n_final):
                    yv = self.problem.evaluate(x)
                    self.final_evals += 1
                    self._emit("eval", "final", u_end, yv, {"u": u_end.tolist()})
                    if np.isfinite(yv):
                        ys.append(yv)
                if len(ys) >= 2:
                    y_end = float(np.mean(ys))
                    se = float(np.std(ys, ddof=1) / np.sqrt(len(ys)))
        return RunResult(
            x_end=self.problem.expand(self.T.from_internal(u_end)),
            y_end=y_end,
            y_end_se=se,
            fun_evals=self.n,
            final_evals=self.final_evals,
            reason=reason,
            noisy=self.noisy,
            iterations=self.mesh.iteration,
            trace=self.trace,
            candidates=[self.problem.expand(c) for c in cands],
            y_trace=Y.copy(),
        )


def initialize(spec, seed: int = 0, options: Optional[Options] = None) -> Runner:
    """Run the initial design and first GP fit; returns the live run state."""
    runner = Runner(spec, seed, options)
    runner.initialize()
    return runner


def run(spec, seed: int = 0, options: Optional[Options] = None, trace_fp: Optional[IO[str]] = None) -> RunResult:
    return Runner(spec, seed, options, trace_fp).run()
