import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boop.gp import (
    GpModel,
    GpNumericalError,
    HyperBounds,
    KernelFamily,
    KernelSpec,
    TrainingSet,
    fit_gp,
    gp_fit_hyperparams,
    gp_log_marginal_likelihood,
    gp_posterior,
    kernel_eval,
    stable_cholesky,
)
from scipy.stats import multivariate_normal

SE = KernelFamily.SQUARED_EXPONENTIAL
M52 = KernelFamily.MATERN52


def test_kernel_at_zero_distance_is_signal_variance():
    for fam in KernelFamily:
        assert kernel_eval(KernelSpec(fam, 1.7, 0.4), [0.2, 0.3], [0.2, 0.3]) == pytest.approx(1.7**2, rel=1e-15)


def test_matern52_at_one_length_scale_matches_high_precision_value():
    mpmath.mp.dps = 40
    s5 = mpmath.sqrt(5)
    expected = float((1 + s5 + mpmath.mpf(5) / 3) * mpmath.exp(-s5))
    assert kernel_eval(KernelSpec(M52, 1.0, 1.0), [0.0], [1.0]) == pytest.approx(expected, rel=1e-14)


def test_squared_exponential_value():
    got = kernel_eval(KernelSpec(SE, 2.0, 0.5), [0.0, 0.0], [0.3, 0.4])
    assert got == pytest.approx(4.0 * math.exp(-0.5 * 0.25 / 0.25), rel=1e-14)


@given(
    st.lists(st.floats(-5, 5), min_size=2, max_size=2),
    st.lists(st.floats(-5, 5), min_size=2, max_size=2),
    st.sampled_from(list(KernelFamily)),
)
def test_kernel_symmetric_and_bounded(a, b, fam):
    spec = KernelSpec(fam, 1.3, 0.7)
    k1, k2 = kernel_eval(spec, a, b), kernel_eval(spec, b, a)
    assert k1 == k2
    assert 0 <= k1 <= 1.3**2 + 1e-12


def test_kernel_rejects_bad_input():
    spec = KernelSpec(M52, 1.0, 1.0)
    with pytest.raises(ValueError):
        kernel_eval(spec, [0.0, 1.0], [0.0])
    with pytest.raises(ValueError):
        kernel_eval(spec, [math.nan], [0.0])
    with pytest.raises(ValueError):
        KernelSpec(M52, -1.0, 1.0)


def test_training_set_validation():
    with pytest.raises(ValueError):
        TrainingSet([[0.0], [1.0]], [1.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        TrainingSet([[0.0]], [1.0], [-1.0])
    with pytest.raises(ValueError):
        TrainingSet([[0.0]], [math.inf], [0.0])


def test_empty_training_set_returns_prior():
    spec = KernelSpec(M52, 2.0, 0.3)
    p = gp_posterior(TrainingSet.empty(2), spec, 1.5, [0.1, 0.2])
    assert p.mean == 1.5 and p.sd == 2.0


def test_noise_free_point_is_interpolated():
    train = TrainingSet([[0.2], [0.7]], [1.0, -2.0], [0.0, 0.0])
    p = gp_posterior(train, KernelSpec(SE, 1.0, 0.3), 0.0, [0.7])
    assert p.mean == pytest.approx(-2.0, abs=1e-8)
    assert p.sd < 1e-4


def test_posterior_matches_dense_formula(rng):
    x = rng.random((5, 2))
    y = rng.standard_normal(5)
    v = rng.uniform(0.01, 0.2, 5)
    spec = KernelSpec(M52, 1.2, 0.4)
    xs = rng.random(2)
    k = spec.gram(x, x) + np.diag(v)
    ks = spec.gram(x, xs[None, :])[:, 0]
    mean = 0.3 + ks @ np.linalg.solve(k, y - 0.3)
    var = 1.44 - ks @ np.linalg.solve(k, ks)
    p = gp_posterior(TrainingSet(x, y, v), spec, 0.3, xs)
    assert p.mean == pytest.approx(mean, rel=1e-10)
    assert p.sd == pytest.approx(math.sqrt(var), rel=1e-10)


def test_log_marginal_likelihood_matches_scipy(rng):
    x = rng.random((6, 1))
    y = rng.standard_normal(6)
    v = rng.uniform(0.01, 0.1, 6)
    spec = KernelSpec(SE, 0.8, 0.25)
    cov = spec.gram(x, x) + np.diag(v)
    expected = multivariate_normal(np.full(6, 0.1), cov).logpdf(y)
    assert gp_log_marginal_likelihood(TrainingSet(x, y, v), spec, 0.1) == pytest.approx(expected, rel=1e-12)


def test_prior_mean_defaults_to_observation_mean():
    train = TrainingSet([[0.0], [10.0]], [4.0, 8.0], [0.0, 0.0])
    model = GpModel(train, KernelSpec(SE, 1.0, 0.1))
    assert model.prior_mean == 6.0
    # far from the data the posterior reverts to the prior mean
    assert model.posterior([100.0]).mean == pytest.approx(6.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_posterior_sd_never_exceeds_prior(n, seed):
    r = np.random.default_rng(seed)
    train = TrainingSet(r.random((n, 2)), r.standard_normal(n), r.uniform(0, 0.1, n))
    model = GpModel(train, KernelSpec(M52, 1.5, 0.3))
    _, sd = model.predict(r.random((20, 2)))
    assert np.all(sd <= 1.5) and np.all(sd >= 0)


def test_jitter_only_on_failure():
    k = np.array([[1.0, 0.5], [0.5, 1.0]])
    _, jitter = stable_cholesky(k)
    assert jitter == 0.0
    singular = np.ones((3, 3))
    l, jitter = stable_cholesky(singular)
    assert jitter > 0
    assert np.allclose(l @ l.T, singular + jitter * np.eye(3))


def test_jitter_gives_up_with_diagnostics():
    bad = np.array([[1.0, 2.0], [2.0, 1.0]])  # indefinite
    with pytest.raises(GpNumericalError) as err:
        stable_cholesky(bad)
    assert err.value.jitter > 0


def test_with_observation_leaves_original_untouched():
    train = TrainingSet([[0.1]], [1.0], [0.01])
    model = GpModel(train, KernelSpec(M52, 1.0, 0.2), prior_mean=0.0)
    before = model.predict([[0.5]])
    bigger = model.with_observation([0.5], 3.0, 0.0)
    assert len(model) == 1 and len(bigger) == 2
    assert bigger.prior_mean == 0.0 and bigger.spec == model.spec
    np.testing.assert_array_equal(model.predict([[0.5]])[0], before[0])


def test_hyperparameter_fit_improves_on_start_and_respects_bounds(rng):
    x = rng.random((15, 1))
    y = np.sin(6 * x[:, 0]) + 0.05 * rng.standard_normal(15)
    bounds = HyperBounds(sigma_f=(0.05, 5.0), ell=(0.02, 5.0))
    fit = gp_fit_hyperparams(TrainingSet(x, y, np.full(15, 0.0025)), M52, bounds, seed=1)
    assert 0.05 <= fit.spec.sigma_f <= 5.0 and 0.02 <= fit.spec.ell <= 5.0
    start = gp_log_marginal_likelihood(TrainingSet(x, y, np.full(15, 0.0025)), KernelSpec(M52, 1.0, 1.0), y.mean())
    assert fit.log_ml >= start
    assert fit.converged


def test_collapsed_bounds_return_that_point(rng):
    x = rng.random((4, 1))
    train = TrainingSet(x, rng.standard_normal(4), np.full(4, 0.1))
    fit = gp_fit_hyperparams(train, SE, HyperBounds((0.7, 0.7), (0.3, 0.3)))
    assert fit.spec.sigma_f == pytest.approx(0.7) and fit.spec.ell == pytest.approx(0.3)


def test_fit_is_deterministic_for_a_seed(rng):
    x = rng.random((8, 2))
    train = TrainingSet(x, rng.standard_normal(8), np.full(8, 0.01))
    a, b = fit_gp(train, seed=3), fit_gp(train, seed=3)
    assert a.spec == b.spec


def test_fit_with_single_point():
    model = fit_gp(TrainingSet([[0.5]], [2.0], [0.1]))
    assert model.prior_mean == 2.0
