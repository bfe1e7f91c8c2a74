import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bads.gp import (
    FactorizationFailure,
    HyperPrior,
    Hyperparameters,
    KernelSpec,
    build_hyperprior,
    build_training_set,
    fit_map,
    initial_hyperparameters,
    kernel_eval,
    kernel_matrix,
    log_map_objective,
    log_marginal_likelihood,
    posterior_moments,
    radius,
    rank_one_update,
    residual_normality_check,
    residual_z,
    select_training_set,
)
from bads.gp.hyper import is_suspicious, pairwise_distance_range
from bads.gp.kernels import kernel_matrix_grads, n_hyp
from bads.gp.posterior import cholesky_jitter

from .oracles import dense_lml, dense_posterior, gram


def random_hyp(rng, D, base="rq"):
    return Hyperparameters(
        ell=np.exp(rng.uniform(-1.5, 0.7, D)),
        sf=float(np.exp(rng.uniform(-0.5, 1.0))),
        sn=float(np.exp(rng.uniform(-4, -1))),
        mean=float(rng.normal()),
        alpha=float(np.exp(rng.uniform(-1, 2))),
    )


@pytest.mark.parametrize("base", ["rq", "se", "m52"])
def test_kernel_matches_pairwise_oracle(base, rng):
    X1, X2 = rng.normal(size=(6, 3)), rng.normal(size=(4, 3))
    h = random_hyp(rng, 3)
    spec = KernelSpec(base)
    np.testing.assert_allclose(kernel_matrix(spec, h, X1, X2), gram(base, X1, X2, h.ell, h.sf, h.alpha), rtol=1e-12)


def test_periodic_kernel_matches_chordal_oracle(rng):
    X1, X2 = rng.normal(size=(5, 2)), rng.normal(size=(3, 2))
    h = random_hyp(rng, 2)
    spec = KernelSpec("rq", (1.3, 0.0))
    ref = gram("rq", X1, X2, h.ell, h.sf, h.alpha, periods=(1.3, 0.0))
    np.testing.assert_allclose(kernel_matrix(spec, h, X1, X2), ref, rtol=1e-12)


def test_radius_values():
    assert radius(KernelSpec("se")) == 1.0
    assert radius(KernelSpec("m52")) == pytest.approx(0.91852, abs=1e-5)
    assert radius(KernelSpec("rq"), alpha=1.0) == pytest.approx(np.sqrt(np.e - 1), abs=1e-12)


@pytest.mark.parametrize("base", ["rq", "se", "m52"])
def test_radius_defines_one_over_e_point(base):
    # k(x, x + rho * sqrt(2) * ell e_1) = sf^2 / e
    h = Hyperparameters(ell=np.array([0.7]), sf=1.3, sn=0.1, mean=0.0, alpha=2.5)
    spec = KernelSpec(base)
    rho = radius(spec, h)
    k = kernel_eval(spec, h, np.array([0.0]), np.array([rho * np.sqrt(2) * 0.7]))
    assert k == pytest.approx(h.sf**2 / np.e, rel=1e-9)


@given(st.floats(0.05, 50.0))
def test_rq_radius_formula(alpha):
    h = Hyperparameters(ell=np.array([1.0]), sf=1.0, sn=0.1, mean=0.0, alpha=alpha)
    rho = radius(KernelSpec("rq"), h)
    k = kernel_eval(KernelSpec("rq"), h, np.array([0.0]), np.array([rho * np.sqrt(2)]))
    assert k == pytest.approx(np.exp(-1), rel=1e-9)


def test_rq_tends_to_se(rng):
    h_rq = Hyperparameters(ell=np.array([0.8, 1.1]), sf=1.2, sn=0.1, mean=0.0, alpha=1e6)
    X1, X2 = rng.normal(size=(50, 2)), rng.normal(size=(50, 2))
    diff = kernel_matrix(KernelSpec("rq"), h_rq, X1, X2) - kernel_matrix(KernelSpec("se"), h_rq, X1, X2)
    assert np.max(np.abs(diff)) <= 1e-4


@pytest.mark.parametrize("base", ["rq", "se", "m52"])
def test_kernel_gradients_match_finite_differences(base, rng):
    spec = KernelSpec(base)
    X = rng.normal(size=(6, 2))
    h = random_hyp(rng, 2)
    theta = h.to_vector(spec)
    K, dK = kernel_matrix_grads(spec, h, X)
    # indices: ell (D), log sf, optional log alpha
    n_grad = len(dK)
    for j in range(n_grad):
        e = np.zeros_like(theta)
        e[j] = 1e-6
        Kp = kernel_matrix(spec, Hyperparameters.from_vector(theta + e, spec, 2), X, X)
        Km = kernel_matrix(spec, Hyperparameters.from_vector(theta - e, spec, 2), X, X)
        np.testing.assert_allclose(dK[j], (Kp - Km) / 2e-6, atol=1e-6)


@pytest.mark.parametrize("base", ["rq", "se", "m52"])
def test_hyperparameter_vector_round_trip(base, rng):
    spec = KernelSpec(base)
    h = random_hyp(rng, 3)
    theta = h.to_vector(spec)
    assert len(theta) == n_hyp(spec, 3)
    h2 = Hyperparameters.from_vector(theta, spec, 3)
    np.testing.assert_allclose(h2.to_vector(spec), theta)


@pytest.mark.parametrize("base", ["rq", "se", "m52"])
def test_posterior_matches_dense_oracle(base, rng):
    for _ in range(10):
        n, D = int(rng.integers(5, 40)), int(rng.integers(1, 4))
        X, y = rng.uniform(-1, 1, (n, D)), rng.normal(size=n)
        h = random_hyp(rng, D)
        ts = build_training_set(X, y, KernelSpec(base), h)
        Xq = rng.uniform(-1.5, 1.5, (7, D))
        mu, s2 = posterior_moments(ts, Xq)
        mu_ref, s2_ref = dense_posterior(base, X, y, Xq, h.ell, h.sf, h.sn, h.mean, h.alpha)
        np.testing.assert_allclose(mu, mu_ref, atol=1e-8)
        np.testing.assert_allclose(s2, np.maximum(s2_ref, 0), atol=1e-8)


def test_large_batch_path_agrees_with_triangular_solve(rng):
    X, y = rng.uniform(-1, 1, (30, 2)), rng.normal(size=30)
    ts = build_training_set(X, y, KernelSpec("rq"), random_hyp(rng, 2))
    Xq = rng.uniform(-1, 1, (200, 2))
    mu_big, s2_big = posterior_moments(ts, Xq)
    mu_small = np.concatenate([posterior_moments(ts, Xq[i : i + 10])[0] for i in range(0, 200, 10)])
    s2_small = np.concatenate([posterior_moments(ts, Xq[i : i + 10])[1] for i in range(0, 200, 10)])
    np.testing.assert_allclose(mu_big, mu_small, atol=1e-12)
    np.testing.assert_allclose(s2_big, s2_small, atol=1e-10)


def test_empty_training_set_returns_prior():
    h = Hyperparameters(ell=np.ones(2), sf=2.0, sn=0.1, mean=3.0)
    mu, s2 = posterior_moments(None, np.zeros((3, 2)), h)
    np.testing.assert_array_equal(mu, 3.0)
    np.testing.assert_array_equal(s2, 4.0)


def test_rank_one_update_matches_full_recompute(rng):
    for _ in range(10):
        D = int(rng.integers(1, 4))
        X, y = rng.uniform(-1, 1, (20, D)), rng.normal(size=20)
        h = random_hyp(rng, D)
        ts = build_training_set(X[:10], y[:10], KernelSpec("rq"), h)
        for i in range(10, 20):
            ts = rank_one_update(ts, X[i], y[i])
            if i == 14:
                ts.inverse_factor()  # exercise the bordered inverse as well
        full = build_training_set(X, y, KernelSpec("rq"), h)
        np.testing.assert_allclose(ts.L, full.L, atol=1e-8)
        Xq = rng.uniform(-1, 1, (100, D))
        for a, b in zip(posterior_moments(ts, Xq), posterior_moments(full, Xq)):
            np.testing.assert_allclose(a, b, atol=1e-8)


def test_rank_one_update_rejects_duplicate_without_noise():
    h = Hyperparameters(ell=np.ones(1), sf=1.0, sn=1e-9, mean=0.0)
    ts = build_training_set(np.array([[0.0], [1.0]]), np.array([0.0, 1.0]), KernelSpec("se"), h)
    with pytest.raises(FactorizationFailure):
        rank_one_update(ts, np.array([0.0]), 0.0)


def test_cholesky_jitter_escalates():
    C = np.ones((3, 3))  # PSD but singular
    L, jitter = cholesky_jitter(C)
    assert jitter > 0
    np.testing.assert_allclose(L @ L.T, C + jitter * np.eye(3), atol=1e-12)
    with pytest.raises(FactorizationFailure):
        cholesky_jitter(-np.eye(2))


@pytest.mark.parametrize("base", ["rq", "se", "m52"])
def test_lml_matches_dense_oracle(base, rng):
    X, y = rng.uniform(-1, 1, (15, 2)), rng.normal(size=15)
    h = random_hyp(rng, 2)
    spec = KernelSpec(base)
    v, _ = log_marginal_likelihood(X, y, spec, h.to_vector(spec))
    assert v == pytest.approx(dense_lml(base, X, y, h.ell, h.sf, h.sn, h.mean, h.alpha), rel=1e-9)


@pytest.mark.parametrize("base", ["rq", "se", "m52"])
@pytest.mark.parametrize("periodic", [False, True])
def test_map_gradient_matches_central_differences(base, periodic, rng):
    spec = KernelSpec(base, (0.0, 1.7) if periodic else None)
    for _ in range(4):
        X, y = rng.uniform(-1, 1, (12, 2)), rng.normal(size=12)
        prior = build_hyperprior(X, y, spec, 1.0, False, np.full(2, 2.0))
        theta = random_hyp(rng, 2).to_vector(spec)
        theta = np.clip(theta, prior.lower + 0.1, prior.upper - 0.1)
        _, g = log_map_objective(X, y, spec, theta, prior)
        h = 1e-5
        fd = np.array([
            (log_map_objective(X, y, spec, theta + h * e, prior)[0] - log_map_objective(X, y, spec, theta - h * e, prior)[0]) / (2 * h)
            for e in np.eye(len(theta))
        ])
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-6)


def test_hyperprior_density_and_support():
    prior = HyperPrior(mean=np.array([0.0, 1.0]), sd=np.array([1.0, np.inf]), lower=np.array([-1.0, -5.0]), upper=np.array([1.0, 5.0]))
    lp, g = prior.log_density(np.array([0.5, 2.0]))
    # normalized truncated normal on [-1, 1] plus a flat component
    from scipy.stats import truncnorm

    assert lp == pytest.approx(truncnorm.logpdf(0.5, -1, 1))
    np.testing.assert_allclose(g, [-0.5, 0.0])
    assert prior.log_density(np.array([1.5, 0.0]))[0] == -np.inf


def test_hyperprior_sample_within_bounds(rng):
    X, y = rng.uniform(-1, 1, (20, 3)), rng.normal(size=20)
    prior = build_hyperprior(X, y, KernelSpec("rq"), 0.5, False, np.full(3, 2.0))
    for _ in range(50):
        t = prior.sample(rng)
        assert np.all(t >= prior.lower) and np.all(t <= prior.upper)


def test_hyperprior_length_scale_centre(rng):
    X, y = rng.uniform(-1, 1, (20, 2)), rng.normal(size=20)
    rmin, rmax = pairwise_distance_range(X)
    prior = build_hyperprior(X, y, KernelSpec("se"), 1.0, False, np.full(2, 2.0))
    np.testing.assert_allclose(prior.mean[:2], 0.5 * (np.log(rmin) + np.log(rmax)))
    assert prior.mean[-1] == pytest.approx(np.quantile(y, 0.9))


def test_fit_map_never_worse_than_start(rng):
    spec = KernelSpec("rq")
    X = rng.uniform(-1, 1, (25, 2))
    y = np.sum(X**2, axis=1)
    h0 = initial_hyperparameters(y, 2, 1.0, False)
    prior = build_hyperprior(X, y, spec, 1.0, False, np.full(2, 2.0))
    h = fit_map(X, y, spec, h0, prior, rng)
    start = np.clip(h0.to_vector(spec), prior.lower, prior.upper)
    assert log_map_objective(X, y, spec, h.to_vector(spec), prior)[0] >= log_map_objective(X, y, spec, start, prior)[0] - 1e-9


def test_suspicious_fit_detection():
    y = np.linspace(0, 1, 11)
    assert is_suspicious(Hyperparameters(np.ones(1), 1.0, 5.0, 0.5), y)
    assert is_suspicious(Hyperparameters(np.ones(1), 1.0, 0.01, -100.0), y)
    assert not is_suspicious(Hyperparameters(np.ones(1), 1.0, 0.01, 0.9), y)


def test_training_set_selection_nearest_first(rng):
    X = rng.uniform(-1, 1, (300, 2))
    h = Hyperparameters(ell=np.array([0.1, 0.1]), sf=1.0, sn=0.1, mean=0.0)
    x_k = np.zeros(2)
    idx = select_training_set(X, x_k, KernelSpec("se"), h)
    d = np.linalg.norm(X / 0.1, axis=1)
    nearest = np.argsort(d, kind="stable")[:50]
    assert set(nearest) <= set(idx)
    assert len(idx) <= 50 + 20
    assert len(set(idx)) == len(idx)


def test_training_set_small_cache_takes_everything(rng):
    X = rng.uniform(-1, 1, (7, 3))
    h = Hyperparameters(ell=np.ones(3), sf=1.0, sn=0.1, mean=0.0)
    assert sorted(select_training_set(X, X[0], KernelSpec("rq"), h)) == list(range(7))


def test_residual_normality(rng):
    z = rng.standard_normal(40)
    assert residual_normality_check(z) > 1e-6
    z_bad = np.concatenate([np.zeros(39), [1e3]])
    assert residual_normality_check(z_bad) < 1e-6
    assert residual_z(1.0, 0.0, 0.75, 0.25) == pytest.approx(1.0)
