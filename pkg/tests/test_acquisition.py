import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from boop.acquisition import (
    AcquisitionContext,
    boop_acquisition,
    eis_acquisition,
    expected_improvement,
    log_boop_acquisition,
    log_expected_improvement,
    optimize_acquisition,
    prob_improvement,
)
from boop.gp import GpModel, KernelFamily, KernelSpec, TrainingSet


def _mp_ei(m, s, f_max):
    mpmath.mp.dps = 60
    m, s, f = mpmath.mpf(m), mpmath.mpf(s), mpmath.mpf(f_max)
    z = (m - f) / s
    return (m - f) * mpmath.ncdf(z) + s * mpmath.npdf(z)


def test_prob_improvement_at_the_incumbent_is_half():
    assert prob_improvement(2.0, 0.5, 2.0) == pytest.approx(0.5)


def test_prob_improvement_rejects_zero_sd():
    with pytest.raises(ValueError):
        prob_improvement(1.0, 0.0, 0.0)


def test_ei_standard_normal_at_zero_gap():
    assert expected_improvement(0.0, 1.0, 0.0) == pytest.approx(1.0 / math.sqrt(2 * math.pi), rel=1e-14)


def test_ei_zero_variance_limit():
    assert expected_improvement(3.0, 0.0, 1.0) == 2.0
    assert expected_improvement(0.5, 0.0, 1.0) == 0.0
    assert log_expected_improvement(0.5, 0.0, 1.0)[0] == -math.inf


@pytest.mark.parametrize("z", [-3.0, -7.9, -8.1, -15.0, -30.0, -37.0])
def test_log_ei_accurate_in_the_tail(z):
    got = log_expected_improvement(z, 1.0, 0.0)[0]
    want = float(mpmath.log(_mp_ei(z, 1.0, 0.0)))
    assert got == pytest.approx(want, rel=1e-9)


@given(st.floats(-20, 20), st.floats(1e-3, 10), st.floats(-20, 20))
def test_ei_nonnegative_and_dominates_gap(m, s, f):
    ei = expected_improvement(m, s, f)
    assert ei >= 0
    assert ei >= max(m - f, 0) - 1e-9 * max(1.0, abs(m - f))


def test_ei_monotone_in_mean_and_sd():
    m = np.linspace(-2, 2, 50)
    ei = expected_improvement(m, np.ones(50), 0.0)
    assert np.all(np.diff(ei) > 0)
    s = np.linspace(0.1, 3, 50)
    ei = expected_improvement(np.zeros(50), s, 0.5)
    assert np.all(np.diff(ei) > 0)


def test_ei_matches_monte_carlo_small(rng):
    draws = rng.standard_normal(2_000_000)
    for m, s, f in [(0.3, 1.2, 0.5), (-1.0, 0.4, -0.8), (2.0, 2.0, 0.0)]:
        imp = np.maximum(m + s * draws - f, 0)
        se = imp.std() / math.sqrt(len(imp))
        assert abs(expected_improvement(m, s, f) - imp.mean()) < 4 * se


def _model():
    train = TrainingSet([[0.1], [0.5], [0.9]], [0.0, 1.0, 0.2], [1e-4] * 3)
    return GpModel(train, KernelSpec(KernelFamily.MATERN52, 1.0, 0.2))


def test_cold_effort_model_divides_by_g_min():
    ctx = AcquisitionContext(1.0, _model(), None, g_min=3000, g_max=10000)
    x = np.array([[0.3], [0.6]])
    ratio = boop_acquisition(x, ctx) / expected_improvement(*ctx.surrogate.predict(x), 1.0)
    np.testing.assert_allclose(ratio, 1.0 / 3000, rtol=1e-12)


def test_effort_prediction_is_clamped():
    ctx = AcquisitionContext(1.0, _model(), lambda x, m, s: np.full(len(x), 1e9), g_min=3000, g_max=10000)
    x = np.array([[0.3]])
    ei = expected_improvement(*ctx.surrogate.predict(x), 1.0)
    assert boop_acquisition(x, ctx)[0] == pytest.approx(ei[0] / 10000)
    assert log_boop_acquisition(x, ctx)[0] == pytest.approx(math.log(ei[0] / 10000))


def test_cheaper_points_are_preferred_at_equal_ei():
    ctx = AcquisitionContext(
        1.0, _model(), lambda x, m, s: np.where(x[:, 0] > 0.5, 9000.0, 3000.0), g_min=3000, g_max=10000
    )
    # two points with the same EI by symmetry would tie; the cheap one must win
    a = boop_acquisition(np.array([[0.45]]), ctx)[0] * 3000
    b = boop_acquisition(np.array([[0.55]]), ctx)[0] * 9000
    ei = expected_improvement(*ctx.surrogate.predict(np.array([[0.45], [0.55]])), 1.0)
    assert a == pytest.approx(ei[0]) and b == pytest.approx(ei[1])


def test_eis_divides_by_duration():
    ctx = AcquisitionContext(1.0, _model())
    x = np.array([[0.3]])
    ei = expected_improvement(*ctx.surrogate.predict(x), 1.0)
    assert eis_acquisition(x, ctx, lambda x: np.full(len(x), 4.0))[0] == pytest.approx(ei[0] / 4)
    with pytest.raises(ValueError):
        eis_acquisition(x, ctx, lambda x: np.zeros(len(x)))


def test_optimizer_finds_interior_maximum(rng):
    target = np.array([0.23, 0.71])
    acq = lambda X: -np.sum((np.atleast_2d(X) - target) ** 2, axis=1)  # noqa: E731
    best = optimize_acquisition(acq, [(0, 1), (0, 1)], restarts=16, rng=rng)
    np.testing.assert_allclose(best, target, atol=1e-4)


def test_optimizer_handles_boundary_maximum(rng):
    acq = lambda X: np.atleast_2d(X)[:, 0]  # noqa: E731
    best = optimize_acquisition(acq, [(-1, 2)], restarts=4, rng=rng)
    assert best[0] == 2.0


def test_optimizer_uses_extra_starts(rng):
    # a needle only the extra start can see
    acq = lambda X: np.where(np.abs(np.atleast_2d(X)[:, 0] - 0.123456) < 1e-9, 1.0, 0.0)  # noqa: E731
    best = optimize_acquisition(acq, [(0, 1)], restarts=2, rng=rng, extra_starts=[[0.123456]])
    assert best[0] == pytest.approx(0.123456)


def test_optimizer_errors():
    with pytest.raises(ValueError):
        optimize_acquisition(lambda X: np.zeros(len(X)), [(1, 1)])
    with pytest.raises(ValueError):
        optimize_acquisition(lambda X: np.full(len(X), np.nan), [(0, 1)], rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        optimize_acquisition(lambda X: np.zeros(len(X)), [(0, 1)], restarts=0)
