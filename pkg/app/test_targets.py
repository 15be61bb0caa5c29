import math

import numpy as np
import pytest
from scipy.special import expit
from scipy.stats import cauchy, multivariate_normal, norm, t as student_t

from app.components.errors import CapabilityError, DimensionMismatchError
from app.components.geometry import Affinity, AffinityProvenance, QuadratureGrid, Support, residual_density_h
from app.components.targets import (
    LogisticPosterior,
    SixModeTarget,
    TargetModel,
    builtin_density,
    density_target,
    example1_envelope_bound,
    example3_mixture,
    finite_target,
    logistic_derivatives,
    logistic_log_post,
    logistic_target,
    mixture_density,
    normal_density,
    posterior_mode,
    random_walk_normal,
    simulate_logistic,
    sixmode_conditional,
    t_density,
    tuned_cauchy_residual_sampler,
    tuned_normal_residual_sampler,
)


# ---------------------------------------------------------------------------
# 내장 밀도
# ---------------------------------------------------------------------------

def test_normal_density_matches_scipy():
    density = builtin_density("normal", {"mean": 1.0, "sd": 2.0})
    x = np.linspace(-5.0, 5.0, 11)
    np.testing.assert_allclose(density.log_pdf(x), norm.logpdf(x, 1.0, 2.0), rtol=1e-12)
    assert density.log_pdf(0.5) == pytest.approx(norm.logpdf(0.5, 1.0, 2.0))


def test_multivariate_normal_matches_scipy():
    cov = np.array([[2.0, 0.5], [0.5, 1.0]])
    density = normal_density([1.0, -1.0], cov)
    x = np.random.default_rng(0).normal(size=(20, 2))
    np.testing.assert_allclose(density.log_pdf(x), multivariate_normal.logpdf(x, [1.0, -1.0], cov), rtol=1e-12)


def test_student_t_and_cauchy_match_scipy():
    x = np.linspace(-30.0, 30.0, 13)
    np.testing.assert_allclose(t_density(2.0).log_pdf(x), student_t.logpdf(x, 2.0), rtol=1e-12)
    cauchyDensity = builtin_density("cauchy", {"loc": 1.0, "scale": 2.0})
    np.testing.assert_allclose(cauchyDensity.log_pdf(x), cauchy.logpdf(x, 1.0, 2.0), rtol=1e-12)


def test_random_walk_normal_centered_on_state():
    density = random_walk_normal(0.5)
    assert not density.state_free
    assert density.log_pdf(2.5, 2.0) == pytest.approx(norm.logpdf(0.5, 0.0, math.sqrt(0.5)))
    draws = density.sample(np.random.default_rng(1), 10.0, size=5000)
    assert draws.mean() == pytest.approx(10.0, abs=0.05)


def test_mixture_density_log_pdf():
    components = [normal_density(0.0, 1.0), normal_density(5.0, 4.0)]
    density = mixture_density(components, [0.3, 0.7])
    x = np.array([-1.0, 0.0, 2.5, 6.0])
    expected = np.log(0.3 * norm.pdf(x) + 0.7 * norm.pdf(x, 5.0, 2.0))
    np.testing.assert_allclose(density.log_pdf(x), expected, rtol=1e-12)
    draws = density.sample(np.random.default_rng(2), size=20_000)
    assert draws.mean() == pytest.approx(3.5, abs=0.1)


def test_mixture_density_weight_validation():
    with pytest.raises(ValueError):
        mixture_density([normal_density(0.0, 1.0)], [0.5])
    with pytest.raises(DimensionMismatchError):
        mixture_density([normal_density(0.0, 1.0)], [0.5, 0.5])


def test_builtin_density_rejects_unknown():
    with pytest.raises(ValueError):
        builtin_density("gamma", {})
    with pytest.raises(ValueError):
        builtin_density("normal", {"mean": 0.0, "shape": 1.0})


def test_density_target_gradient_for_gaussian():
    target = density_target(normal_density([0.0, 1.0], np.diag([1.0, 4.0])))
    np.testing.assert_allclose(target.gradient([1.0, 1.0]), [-1.0, 0.0])
    np.testing.assert_allclose(target.hessian([0.0, 0.0]), -np.diag([1.0, 0.25]))


def test_target_without_gradient_raises():
    target = TargetModel(lambda x: 0.0, 1, Support.continuous(1))
    with pytest.raises(CapabilityError):
        target.gradient([0.0])


def test_finite_target_log_values():
    target = finite_target([2.0, 1.0, 0.0])
    assert target.is_discrete
    assert target.log_target(0) == pytest.approx(math.log(2.0))
    assert target.log_target(2) == -np.inf
    with pytest.raises(ValueError):
        finite_target([-1.0, 2.0])


# ---------------------------------------------------------------------------
# 두 봉우리 혼합, 6-모드
# ---------------------------------------------------------------------------

def test_example3_mixture_basins():
    mixture = example3_mixture()
    labels = mixture.basin(np.array([[0.0, 0.0], [10.0, 10.0], [1.0, -1.0], [9.0, 11.0]]))
    np.testing.assert_array_equal(labels, [0, 1, 0, 1])
    assert len(mixture.components) == 2


def test_sixmode_poles_and_box():
    target = SixModeTarget()
    assert target.log_density([0.0, 0.0]) == -np.inf
    assert target.log_density([0.0, 11.0]) == -np.inf
    assert np.isfinite(target.log_density([0.5, math.pi / 2.0]))


def test_sixmode_symmetry():
    target = SixModeTarget()
    rng = np.random.default_rng(4)
    points = rng.uniform(-9.0, 9.0, size=(50, 2))
    mirrored = -points
    np.testing.assert_allclose(target.log_density(points), target.log_density(mirrored), rtol=1e-10)


def test_sixmode_basins_cover_modes():
    target = SixModeTarget()
    modes = SixModeTarget.mode_locations()
    np.testing.assert_array_equal(target.basin(modes), np.arange(6))
    assert np.all(np.isfinite(target.log_density(modes)))


def test_sixmode_conditional_matches_joint():
    target = SixModeTarget()
    conditional = sixmode_conditional(target, 0, math.pi / 2.0)
    x = np.array([-1.0, 0.0, 0.7])
    joint = target.log_density(np.column_stack([x, np.full(3, math.pi / 2.0)]))
    np.testing.assert_allclose(conditional.log_pdf(x), joint)
    with pytest.raises(ValueError):
        sixmode_conditional(target, 2, 0.0)


# ---------------------------------------------------------------------------
# 로지스틱 사후분포
# ---------------------------------------------------------------------------

def _logistic():
    lp, trueBeta = simulate_logistic(100, 5, np.random.default_rng(7))
    return lp, trueBeta


def test_logistic_log_post_matches_naive():
    rng = np.random.default_rng(8)
    W = rng.normal(size=(20, 3))
    z = (rng.random(20) < 0.5).astype(float)
    lp = LogisticPosterior(W, z, np.zeros(3), 10.0 * np.eye(3))
    beta = np.array([0.2, -0.4, 0.1])
    eta = W @ beta
    p = expit(eta)
    naive = np.sum(z * np.log(p) + (1.0 - z) * np.log(1.0 - p)) + multivariate_normal.logpdf(beta, np.zeros(3),
                                                                                              10.0 * np.eye(3))
    assert logistic_log_post(lp, beta) == pytest.approx(naive, abs=1e-10)


def test_logistic_gradient_matches_finite_differences():
    lp, trueBeta = _logistic()
    beta = trueBeta + 0.1
    step = 1e-5
    numeric = np.array([(logistic_log_post(lp, beta + step * e) - logistic_log_post(lp, beta - step * e)) / (2 * step)
                        for e in np.eye(5)])
    np.testing.assert_allclose(logistic_derivatives(lp, beta).gradient, numeric, rtol=1e-5, atol=1e-6)


def test_logistic_hessian_matches_finite_differences():
    lp, trueBeta = _logistic()
    beta = trueBeta + 0.1
    step = 1e-5
    numeric = np.column_stack([
        (logistic_derivatives(lp, beta + step * e).gradient - logistic_derivatives(lp, beta - step * e).gradient)
        / (2 * step) for e in np.eye(5)])
    np.testing.assert_allclose(logistic_derivatives(lp, beta).hessian, numeric, rtol=1e-4, atol=1e-6)


def test_logistic_third_order_matches_finite_differences():
    lp, trueBeta = _logistic()
    beta = trueBeta + 0.1
    step = 1e-5
    derivs = logistic_derivatives(lp, beta)
    for j in range(5):
        e = np.eye(5)[j]
        numeric = (logistic_derivatives(lp, beta + step * e).hessian
                   - logistic_derivatives(lp, beta - step * e).hessian) / (2 * step)
        np.testing.assert_allclose(derivs.third_order(j), numeric, rtol=1e-3, atol=1e-6)


def test_logistic_target_exposes_derivatives():
    lp, trueBeta = _logistic()
    target = logistic_target(lp)
    assert target.has_gradient and target.has_hessian
    np.testing.assert_allclose(target.third_order(trueBeta, 1), logistic_derivatives(lp, trueBeta).third_order(1))


def test_posterior_mode_is_stationary():
    lp, _ = _logistic()
    betaHat, sigmaHat = posterior_mode(lp)
    assert np.max(np.abs(logistic_derivatives(lp, betaHat).gradient)) < 1e-5
    np.testing.assert_allclose(sigmaHat, sigmaHat.T)
    assert np.all(np.linalg.eigvalsh(sigmaHat) > 0)


def test_logistic_rejects_non_binary_response():
    with pytest.raises(ValueError):
        LogisticPosterior(np.ones((3, 1)), np.array([0.0, 0.5, 1.0]))


# ---------------------------------------------------------------------------
# 조율된 h 샘플러
# ---------------------------------------------------------------------------

def test_example1_envelope_bound():
    assert example1_envelope_bound() == pytest.approx(5.604, abs=1e-3)


def test_tuned_normal_sampler_acceptance_and_fit():
    from scipy.stats import kstest

    aff = Affinity(math.exp(-0.125), AffinityProvenance.CLOSED_FORM)
    sampler = tuned_normal_residual_sampler()
    rng = np.random.default_rng(41)
    n = 20_000
    draws = np.empty(n)
    attempts = 0
    for i in range(n):
        point, tries = sampler(rng, None, aff)
        draws[i] = point[0]
        attempts += tries
    bound = example1_envelope_bound()
    se = math.sqrt((1.0 / bound) * (1.0 - 1.0 / bound) / attempts)
    assert abs(n / attempts - 1.0 / bound) < 4.0 * se

    f, g = normal_density(1.0, 1.0), normal_density(0.0, 1.0)
    grid = QuadratureGrid.uniform(-15.0, 15.0, 30_001)
    cdf = grid.cdf(residual_density_h(f, g, aff).pdf(grid.points))
    assert kstest(draws, lambda x: np.interp(x, grid.axes[0], cdf)).pvalue > 0.01


def test_tuned_normal_sampler_rejects_other_affinity():
    sampler = tuned_normal_residual_sampler()
    with pytest.raises(CapabilityError):
        sampler(np.random.default_rng(0), None, Affinity(0.5, AffinityProvenance.CLOSED_FORM))


def test_tuned_cauchy_sampler_matches_residual():
    from scipy.stats import kstest

    from app.components.geometry import quadrature_affinity

    f, g = t_density(2.0), t_density(1.0)
    grid = QuadratureGrid.symmetric(1e4, 200_001)
    aff = quadrature_affinity(f, g, grid)
    sampler = tuned_cauchy_residual_sampler(2.0)
    rng = np.random.default_rng(42)
    draws = np.array([sampler(rng, None, aff)[0][0] for _ in range(5000)])
    cdf = grid.cdf(residual_density_h(f, g, aff).pdf(grid.points))
    inside = np.clip(draws, grid.axes[0][0], grid.axes[0][-1])
    assert kstest(inside, lambda x: np.interp(x, grid.axes[0], cdf)).pvalue > 0.01
