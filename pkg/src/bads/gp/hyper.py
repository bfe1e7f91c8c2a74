"""Empirical-Bayes hyperprior and MAP fitting of GP hyperparameters.

Hyperparameters are optimized in the vector parameterization of
:meth:`Hyperparameters.to_vector`: log length scales, log signal sd,
log RQ shape (RQ only), log noise sd, and the constant mean.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.special import ndtr
from scipy.stats import truncnorm

from .kernels import Hyperparameters, KernelSpec, dk_dr2, k_of_r2, sq_diffs
from .posterior import FactorizationFailure, cholesky_jitter

log = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)

ELL_MIN = 1e-6  # minimum poll size
SF_BOUNDS = (1e-3, 1e9)
LOG_ALPHA_BOUNDS = (-5.0, 5.0)
SN_BOUNDS = (4e-4, 150.0)
# Floors keeping the prior proper when the training data are degenerate.
ELL_PRIOR_SD_MIN = 0.5
MEAN_PRIOR_SD_MIN = 1e-3
MAX_FUN_EVALS = 200
FTOL = 1e-6  # relative decrease; finer optima do not change the surrogate


class DegenerateTrainingSet(ValueError):
    pass


@dataclass
class HyperPrior:
    """Independent (truncated) normal priors over the hyperparameter vector.

    An ``sd`` of ``inf`` denotes a flat prior on the bound interval.
    """

    mean: np.ndarray
    sd: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def log_density(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        theta = np.asarray(theta, dtype=float)
        if np.any(theta < self.lower) or np.any(theta > self.upper):
            return -np.inf, np.zeros_like(theta)
        flat = ~np.isfinite(self.sd)
        sd = np.where(flat, 1.0, self.sd)
        z = (theta - self.mean) / sd
        a = (self.lower - self.mean) / sd
        b = (self.upper - self.mean) / sd
        log_z = _log_mass(a, b)
        lp = -0.5 * z * z - np.log(sd) - 0.5 * LOG_2PI - log_z
        grad = -z / sd
        lp[flat] = 0.0
        grad[flat] = 0.0
        return float(np.sum(lp)), grad

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        out = np.empty_like(self.mean)
        for i, (m, s, lo, hi) in enumerate(zip(self.mean, self.sd, self.lower, self.upper)):
            if not np.isfinite(s):
                out[i] = rng.uniform(lo, hi) if np.isfinite(lo) and np.isfinite(hi) else m
            else:
                out[i] = truncnorm.rvs((lo - m) / s, (hi - m) / s, loc=m, scale=s, random_state=rng)
        return out

    def to_dict(self) -> dict:
        def enc(a):
            return [float(v) if np.isfinite(v) else str(float(v)) for v in a]

        return {"mean": enc(self.mean), "sd": enc(self.sd), "lower": enc(self.lower), "upper": enc(self.upper)}


def _log_mass(a, b):
    """log(Phi(b) - Phi(a)), stable for the tails."""
    # Work in whichever tail keeps the difference well conditioned.
    upper_tail = a > 0
    mass = np.where(upper_tail, ndtr(-a) - ndtr(-b), ndtr(b) - ndtr(a))
    return np.log(np.maximum(mass, 1e-300))


def pairwise_distance_range(X: np.ndarray) -> tuple[float, float]:
    diff = X[:, None, :] - X[None, :, :]
    d = np.sqrt(np.sum(diff * diff, axis=-1))
    iu = np.triu_indices(len(X), k=1)
    d = d[iu]
    d = d[d > 0]
    if d.size == 0:
        raise DegenerateTrainingSet("all training points coincide")
    return float(d.min()), float(d.max())


def default_sigma_est(delta_poll: float, noisy: bool, user_estimate: float | None = None) -> float:
    if noisy:
        return 1.0 if user_estimate is None else float(user_estimate)
    return float(np.sqrt(1e-3 * delta_poll))


def build_hyperprior(
    X: np.ndarray,
    y: np.ndarray,
    spec: KernelSpec,
    delta_poll: float,
    noisy: bool,
    ranges: np.ndarray,
    delta_mesh: float = 2.0**-10,
    sigma_est: float | None = None,
) -> HyperPrior:
    """Empirical-Bayes prior built from the current training data.

    ``ranges`` holds the internal-space width of each hard-bound interval and
    caps the length scales.
    """
    X = np.atleast_2d(X)
    y = np.asarray(y, dtype=float)
    D = X.shape[1]
    try:
        r_min, r_max = pairwise_distance_range(X)
    except DegenerateTrainingSet:
        r_min, r_max = delta_mesh, 2.0 * 2.0 * np.sqrt(D)
    r_min = max(r_min, ELL_MIN)
    r_max = max(r_max, r_min)
    ell_mu = 0.5 * (np.log(r_max) + np.log(r_min))
    ell_sd = max(0.5 * (np.log(r_max) - np.log(r_min)), ELL_PRIOR_SD_MIN)

    sd_y = float(np.std(y, ddof=1)) if len(y) > 1 else 0.0
    sd_y = max(sd_y, SF_BOUNDS[0])
    sig = max(default_sigma_est(delta_poll, noisy, sigma_est), SN_BOUNDS[0])
    q9, q5 = np.quantile(y, 0.9), np.quantile(y, 0.5)
    m_sd = max((q9 - q5) / 5.0, MEAN_PRIOR_SD_MIN)

    ranges = np.asarray(ranges, dtype=float)
    mean = [np.full(D, ell_mu), [np.log(sd_y)]]
    sd = [np.full(D, ell_sd), [2.0]]
    lower = [np.full(D, np.log(ELL_MIN)), [np.log(SF_BOUNDS[0])]]
    upper = [np.log(np.maximum(ranges, 2 * ELL_MIN)), [np.log(SF_BOUNDS[1])]]
    if spec.has_alpha:
        mean.append([1.0])
        sd.append([1.0])
        lower.append([LOG_ALPHA_BOUNDS[0]])
        upper.append([LOG_ALPHA_BOUNDS[1]])
    mean += [[np.log(sig)], [q9]]
    sd += [[1.0], [m_sd]]
    lower += [[np.log(SN_BOUNDS[0])], [-np.inf]]
    upper += [[np.log(SN_BOUNDS[1])], [np.inf]]
    return HyperPrior(*(np.concatenate(v).astype(float) for v in (mean, sd, lower, upper)))


def log_marginal_likelihood(X, y, spec: KernelSpec, theta: np.ndarray, comps=None) -> tuple[float, np.ndarray]:
    """Log marginal likelihood and its gradient in the log-parameters.

    ``comps`` may carry the precomputed ``sq_diffs(spec, X, X)``, which does
    not depend on ``theta``.
    """
    X = np.atleast_2d(X)
    y = np.asarray(y, dtype=float)
    n, D = X.shape
    hyp = Hyperparameters.from_vector(theta, spec, D)
    if comps is None:
        comps = sq_diffs(spec, X, X)
    inv_ell2 = 1.0 / hyp.ell**2
    r2 = comps @ inv_ell2
    sf2 = hyp.sf**2
    K = k_of_r2(spec.base, r2, sf2, hyp.alpha)
    C = K.copy()
    C[np.diag_indices_from(C)] += hyp.sn**2
    try:
        L, _ = cholesky_jitter(C)
    except FactorizationFailure:
        return -np.inf, np.zeros_like(theta)
    r = y - hyp.mean
    a = cho_solve((L, True), r, check_finite=False)
    value = -0.5 * r @ a - np.sum(np.log(np.diag(L))) - 0.5 * n * LOG_2PI
    Linv = solve_triangular(L, np.eye(n), lower=True, check_finite=False)
    Q = np.outer(a, a) - Linv.T @ Linv
    grad = np.empty(len(theta))
    Qd = Q * dk_dr2(spec.base, r2, sf2, hyp.alpha)
    grad[:D] = -np.einsum("ij,ijd->d", Qd, comps) * inv_ell2
    QK = np.sum(Q * K)
    grad[D] = QK
    if spec.has_alpha:
        al = hyp.alpha
        u = 1.0 + r2 / (2.0 * al)
        grad[D + 1] = 0.5 * np.sum(Q * K * al * (-np.log(u) + r2 / (2.0 * al * u)))
    grad[-2] = hyp.sn**2 * np.trace(Q)
    grad[-1] = np.sum(a)
    return float(value), grad


def log_map_objective(X, y, spec: KernelSpec, theta: np.ndarray, prior: HyperPrior, comps=None) -> tuple[float, np.ndarray]:
    """Log marginal likelihood plus log prior, with gradient."""
    lp, glp = prior.log_density(theta)
    if not np.isfinite(lp):
        return -np.inf, np.zeros_like(theta)
    lml, g = log_marginal_likelihood(X, y, spec, theta, comps)
    if not np.isfinite(lml):
        return -np.inf, np.zeros_like(theta)
    return lml + lp, g + glp


def is_suspicious(hyp: Hyperparameters, y: np.ndarray) -> bool:
    q9, q1 = np.quantile(y, 0.9), np.quantile(y, 0.1)
    sd = np.std(y)
    return hyp.sn > 2.0 * (q9 - q1) or hyp.mean < np.min(y) - 5.0 * sd


def _optimize(X, y, spec, prior, start, max_fun, comps=None):
    bounds = list(zip(prior.lower, prior.upper))
    bounds = [(None if not np.isfinite(lo) else lo, None if not np.isfinite(hi) else hi) for lo, hi in bounds]

    def neg(theta):
        v, g = log_map_objective(X, y, spec, theta, prior, comps)
        if not np.isfinite(v):
            return 1e300, np.zeros_like(theta)
        return -v, -g

    try:
        res = minimize(neg, start, jac=True, method="L-BFGS-B", bounds=bounds, options={"maxfun": max_fun, "ftol": FTOL})
    except (ValueError, np.linalg.LinAlgError) as exc:
        log.debug("hyperparameter optimization failed: %s", exc)
        return None
    return np.clip(res.x, prior.lower, prior.upper)


def _inside(theta, prior, frac=1e-8):
    width = np.where(np.isfinite(prior.upper - prior.lower), prior.upper - prior.lower, 1.0)
    return np.clip(theta, prior.lower + frac * width, prior.upper - frac * width)


def fit_map(
    X,
    y,
    spec: KernelSpec,
    hyp_prev: Hyperparameters,
    prior: HyperPrior,
    rng: np.random.Generator,
    max_fun: int = MAX_FUN_EVALS,
) -> Hyperparameters:
    """MAP estimate starting from ``hyp_prev``; never returns a worse point."""
    X = np.atleast_2d(X)
    y = np.asarray(y, dtype=float)
    D = X.shape[1]
    prev = _inside(hyp_prev.to_vector(spec), prior)
    comps = sq_diffs(spec, X, X)
    candidates = [prev]
    first = _optimize(X, y, spec, prior, prev, max_fun, comps)
    if first is not None:
        candidates.append(first)
        if is_suspicious(Hyperparameters.from_vector(first, spec, D), y):
            draw = prior.sample(rng)
            restart = _inside(0.5 * prev + 0.5 * draw, prior)
            second = _optimize(X, y, spec, prior, restart, max_fun, comps)
            if second is not None:
                candidates.append(second)
    values = [log_map_objective(X, y, spec, c, prior, comps)[0] for c in candidates]
    best = int(np.argmax(values))
    if not np.isfinite(values[best]):
        return hyp_prev.copy()
    return Hyperparameters.from_vector(candidates[best], spec, D)


def initial_hyperparameters(y: np.ndarray, D: int, delta_poll: float, noisy: bool, sigma_est=None) -> Hyperparameters:
    y = np.asarray(y, dtype=float)
    sd = float(np.std(y, ddof=1)) if len(y) > 1 else 1.0
    return Hyperparameters(
        ell=np.full(D, 0.5),
        sf=max(sd, SF_BOUNDS[0] * 10),
        sn=max(default_sigma_est(delta_poll, noisy, sigma_est), SN_BOUNDS[0] * 2),
        mean=float(np.quantile(y, 0.9)),
        alpha=np.e,
    )
