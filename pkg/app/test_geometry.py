import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import cauchy, kstest, norm, t as student_t

from app.components.errors import CoverageError, DegenerateDirectionError, DimensionMismatchError
from app.components.geometry import (
    Affinity,
    AffinityMode,
    AffinityProvenance,
    DirectionSet,
    GeometricProposal,
    QuadratureGrid,
    discrete_affinity,
    discrete_mixture_pmf,
    exact_perturbed_pdf,
    finite_density,
    gaussian_affinity,
    geometric_mixture_pdf,
    geodesic_path,
    h_weight,
    importance_affinity,
    parallel_transport,
    quadrature_affinity,
    residual_density_h,
    residual_envelope_bound,
    sample_geometric_proposal,
    sample_residual_h_many,
    sphere_exp_map,
    sphere_log_map,
    sqrt_representation,
)
from app.components.targets import normal_density, random_walk_normal, t_density


def _example1():
    return normal_density(1.0, 1.0), normal_density(0.0, 1.0)


def _example2_affinity():
    f, g = t_density(2.0), t_density(1.0)
    grid = QuadratureGrid.symmetric(1e4, 200_001)
    return f, g, grid, quadrature_affinity(f, g, grid)


# ---------------------------------------------------------------------------
# affinity
# ---------------------------------------------------------------------------

def test_gaussian_affinity_example1_constant():
    aff = gaussian_affinity(1.0, 1.0, 0.0, 1.0)
    assert aff.value == pytest.approx(math.exp(-0.125), abs=1e-12)
    assert aff.value == pytest.approx(0.882497, abs=1e-6)
    assert aff.provenance == AffinityProvenance.CLOSED_FORM


def test_gaussian_affinity_identical_is_degenerate():
    aff = gaussian_affinity([0.0, 1.0], np.eye(2), [0.0, 1.0], np.eye(2))
    assert aff.value == pytest.approx(1.0, abs=1e-12)
    assert aff.is_degenerate
    assert aff.theta == pytest.approx(0.0, abs=1e-5)


def test_gaussian_affinity_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        gaussian_affinity([0.0, 0.0], np.eye(2), [0.0], np.eye(1))


def test_gaussian_affinity_matches_quadrature():
    f, g = normal_density(0.0, 1.0), normal_density(0.0, 4.0)
    grid = QuadratureGrid.uniform(-40.0, 40.0, 20_001)
    closed = gaussian_affinity(0.0, 1.0, 0.0, 4.0).value
    assert closed == pytest.approx(math.sqrt(0.8), abs=1e-12)
    assert quadrature_affinity(f, g, grid).value == pytest.approx(closed, abs=1e-9)


def test_gaussian_affinity_matches_quadrature_random_pairs():
    rng = np.random.default_rng(3)
    for _ in range(10):
        mu1, mu2 = rng.normal(0.0, 1.0, 2)
        s1, s2 = rng.uniform(0.5, 2.0, 2)
        grid = QuadratureGrid.uniform(-30.0, 30.0, 30_001)
        closed = gaussian_affinity(mu1, s1 ** 2, mu2, s2 ** 2).value
        numeric = quadrature_affinity(normal_density(mu1, s1 ** 2), normal_density(mu2, s2 ** 2), grid).value
        assert numeric == pytest.approx(closed, abs=1e-8)


def test_gaussian_affinity_2d_matches_tensor_quadrature():
    cov1 = np.array([[1.0, 0.3], [0.3, 0.8]])
    cov2 = np.array([[1.5, -0.2], [-0.2, 1.0]])
    grid = QuadratureGrid.uniform([-12.0, -12.0], [12.0, 12.0], 401)
    closed = gaussian_affinity([0.5, 0.0], cov1, [0.0, -0.5], cov2).value
    numeric = quadrature_affinity(normal_density([0.5, 0.0], cov1), normal_density([0.0, -0.5], cov2), grid).value
    assert numeric == pytest.approx(closed, abs=1e-8)


def test_quadrature_affinity_narrow_grid_raises():
    f, g = _example1()
    with pytest.raises(CoverageError):
        quadrature_affinity(f, g, QuadratureGrid.uniform(-1.0, 1.0, 101))


def test_importance_affinity_within_standard_errors():
    f, g = _example1()
    aff = importance_affinity(f, g, 100_000, np.random.default_rng(11))
    assert aff.provenance == AffinityProvenance.MONTE_CARLO
    assert abs(aff.estimate - math.exp(-0.125)) < 3.5 * aff.std_error


def test_importance_affinity_heavy_tail_against_quadrature():
    f, g, _, reference = _example2_affinity()
    aff = importance_affinity(f, g, 100_000, np.random.default_rng(5))
    assert abs(aff.estimate - reference.value) < 3.5 * aff.std_error


def test_importance_affinity_warns_on_nonfinite_ratios(monkeypatch):
    f, g = _example1()

    def holed(point, context):
        values = np.array(g.log_pdf(point, context), dtype=float)
        values[::10] = np.nan
        return values

    warnings = []
    monkeypatch.setattr("app.components.geometry.logger.warning", warnings.append)
    aff = importance_affinity(f, replace(g, logpdf_fn=holed), 1000, np.random.default_rng(2))
    assert len(warnings) == 1 and "100/1000" in warnings[0]
    assert aff.estimate < math.exp(-0.125)
    importance_affinity(f, g, 1000, np.random.default_rng(2))
    assert len(warnings) == 1


def test_importance_affinity_requires_two_samples():
    f, g = _example1()
    with pytest.raises(ValueError):
        importance_affinity(f, g, 1, np.random.default_rng(0))


def test_affinity_value_range():
    with pytest.raises(ValueError):
        Affinity(1.5, AffinityProvenance.CLOSED_FORM)


def test_discrete_affinity_exact_sum():
    aff = discrete_affinity([0.5, 0.5, 0.0], [0.25, 0.25, 0.5])
    assert aff.value == pytest.approx(2.0 * math.sqrt(0.125))
    with pytest.raises(DimensionMismatchError):
        discrete_affinity([0.5, 0.5], [1.0, 0.0, 0.0])


# ---------------------------------------------------------------------------
# 상수
# ---------------------------------------------------------------------------

def test_example1_constants():
    aff = gaussian_affinity(1.0, 1.0, 0.0, 1.0)
    assert residual_envelope_bound(aff) == pytest.approx(8.042, abs=1e-3)
    assert h_weight(aff.theta, 0.5) == pytest.approx(0.0588, abs=1e-4)


def test_example2_constants():
    _, _, _, aff = _example2_affinity()
    assert 1.0 / (1.0 - aff.value ** 2) == pytest.approx(25.538, abs=0.02)
    assert residual_envelope_bound(aff) == pytest.approx(50.077, abs=0.05)
    assert h_weight(aff.theta, 0.5) == pytest.approx(0.0099, abs=2e-4)


def test_envelope_bound_orthogonal_limit():
    assert residual_envelope_bound(Affinity(0.0, AffinityProvenance.EXACT_SUM)) == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# 잔차 밀도 h 와 섭동 밀도
# ---------------------------------------------------------------------------

def test_example1_residual_closed_form_and_mass():
    f, g = _example1()
    aff = gaussian_affinity(1.0, 1.0, 0.0, 1.0)
    h = residual_density_h(f, g, aff)
    x = np.linspace(-4.0, 4.0, 9)
    expected = (np.sqrt(norm.pdf(x)) - math.exp(-0.125) * np.sqrt(norm.pdf(x, 1.0))) ** 2 / (1.0 - math.exp(-0.25))
    np.testing.assert_allclose(h.pdf(x), expected, rtol=1e-10, atol=1e-300)
    grid = QuadratureGrid.uniform(-20.0, 20.0, 40_001)
    assert grid.integrate(h.pdf(grid.points)) == pytest.approx(1.0, abs=1e-8)


def test_example2_residual_pointwise():
    f, g, _, aff = _example2_affinity()
    h = residual_density_h(f, g, aff)
    x = np.array([0.0, 1.0, 10.0])
    a = aff.value
    expected = (np.sqrt(cauchy.pdf(x)) - a * np.sqrt(student_t.pdf(x, 2.0))) ** 2 / (1.0 - a * a)
    np.testing.assert_allclose(h.pdf(x), expected, rtol=1e-10)


def test_residual_degenerate_direction_raises():
    f = normal_density(0.0, 1.0)
    aff = gaussian_affinity(0.0, 1.0, 0.0, 1.0)
    with pytest.raises(DegenerateDirectionError):
        residual_density_h(f, normal_density(0.0, 1.0), aff)


@pytest.mark.parametrize("epsilon", [0.0, 0.25, 0.5, 1.0])
def test_example1_mixture_integrates_to_one(epsilon):
    f, g = _example1()
    aff = gaussian_affinity(1.0, 1.0, 0.0, 1.0)
    grid = QuadratureGrid.uniform(-20.0, 20.0, 40_001)
    w = h_weight(aff.theta, epsilon)
    values = (1.0 - w) * f.pdf(grid.points) + w * residual_density_h(f, g, aff).pdf(grid.points)
    assert grid.integrate(values) == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("epsilon", [0.0, 0.25, 0.5, 1.0])
def test_example2_mixture_integrates_to_one(epsilon):
    f, g, grid, aff = _example2_affinity()
    w = h_weight(aff.theta, epsilon)
    values = (1.0 - w) * f.pdf(grid.points) + w * residual_density_h(f, g, aff).pdf(grid.points)
    assert grid.integrate(values) == pytest.approx(1.0, abs=1e-6)


def test_exact_perturbed_pdf_endpoints():
    f, g = _example1()
    aff = gaussian_affinity(1.0, 1.0, 0.0, 1.0)
    x = np.linspace(-5.0, 5.0, 21)
    np.testing.assert_allclose(exact_perturbed_pdf(f, g, aff, 0.0, x), f.pdf(x), atol=1e-10)
    np.testing.assert_allclose(exact_perturbed_pdf(f, g, aff, 1.0, x), g.pdf(x), atol=1e-10)


def test_exact_perturbed_pdf_integrates_to_one():
    f, g = _example1()
    aff = gaussian_affinity(1.0, 1.0, 0.0, 1.0)
    grid = QuadratureGrid.uniform(-20.0, 20.0, 40_001)
    assert grid.integrate(exact_perturbed_pdf(f, g, aff, 0.5, grid.points)) == pytest.approx(1.0, abs=1e-8)


def test_discrete_mixture_pmf():
    f = np.array([0.2, 0.3, 0.5])
    g = np.array([0.6, 0.3, 0.1])
    phi, aff = discrete_mixture_pmf(f, g, 0.5)
    assert phi.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(phi >= 0)
    np.testing.assert_allclose(discrete_mixture_pmf(f, g, 0.0)[0], f)


# ---------------------------------------------------------------------------
# 기각 샘플러
# ---------------------------------------------------------------------------

def _acceptance_within(n: int, attempts: int, bound: float, sigmas: float = 4.0) -> bool:
    rate = n / attempts
    se = math.sqrt((1.0 / bound) * (1.0 - 1.0 / bound) / attempts)
    return abs(rate - 1.0 / bound) < sigmas * se


def test_example1_rejection_acceptance_rate():
    f, g = _example1()
    aff = gaussian_affinity(1.0, 1.0, 0.0, 1.0)
    draws, attempts = sample_residual_h_many(f, g, aff, np.random.default_rng(21), 100_000)
    assert draws.shape == (100_000, 1)
    assert _acceptance_within(100_000, attempts, residual_envelope_bound(aff))


def test_example2_rejection_acceptance_rate():
    f, g, _, aff = _example2_affinity()
    draws, attempts = sample_residual_h_many(f, g, aff, np.random.default_rng(22), 100_000)
    assert draws.shape == (100_000, 1)
    assert _acceptance_within(100_000, attempts, residual_envelope_bound(aff))


def test_example1_rejection_goodness_of_fit():
    f, g = _example1()
    aff = gaussian_affinity(1.0, 1.0, 0.0, 1.0)
    draws, _ = sample_residual_h_many(f, g, aff, np.random.default_rng(23), 20_000)
    grid = QuadratureGrid.uniform(-15.0, 15.0, 30_001)
    cdf = grid.cdf(residual_density_h(f, g, aff).pdf(grid.points))
    result = kstest(draws[:, 0], lambda x: np.interp(x, grid.axes[0], cdf))
    assert result.pvalue > 0.01


def test_example2_rejection_goodness_of_fit():
    f, g, grid, aff = _example2_affinity()
    draws, _ = sample_residual_h_many(f, g, aff, np.random.default_rng(24), 20_000)
    cdf = grid.cdf(residual_density_h(f, g, aff).pdf(grid.points))
    inside = np.clip(draws[:, 0], grid.axes[0][0], grid.axes[0][-1])
    result = kstest(inside, lambda x: np.interp(x, grid.axes[0], cdf))
    assert result.pvalue > 0.01


# ---------------------------------------------------------------------------
# 제안분포
# ---------------------------------------------------------------------------

def test_proposal_epsilon_zero_reduces_to_base():
    f, g = _example1()
    prop = GeometricProposal(f, DirectionSet.uniform([g]), 0.0)
    for y in (-2.0, 0.3, 4.0):
        assert prop.log_pdf(None, y) == pytest.approx(float(f.log_pdf(y)))


def test_proposal_log_pdf_matches_mixture():
    f, g = _example1()
    aff = gaussian_affinity(1.0, 1.0, 0.0, 1.0)
    prop = GeometricProposal(f, DirectionSet.uniform([g]), 0.5)
    w = h_weight(aff.theta, 0.5)
    h = residual_density_h(f, g, aff)
    for y in (-3.0, 0.0, 1.5):
        expected = math.log((1.0 - w) * float(f.pdf(y)) + w * float(h.pdf(y)))
        assert prop.log_pdf(None, y) == pytest.approx(expected, rel=1e-10)


def test_sampled_proposal_mean():
    f, g = _example1()
    prop = GeometricProposal(f, DirectionSet.uniform([g]), 0.5)
    assert geometric_mixture_pdf(prop, None, 0.7) == pytest.approx(prop.log_pdf(None, 0.7))
    rng = np.random.default_rng(32)
    draws = np.array([sample_geometric_proposal(prop, None, rng) for _ in range(20_000)], float).ravel()
    # E_h[x] = 0, E_f[x] = 1
    w = h_weight(gaussian_affinity(1.0, 1.0, 0.0, 1.0).theta, 0.5)
    assert draws.mean() == pytest.approx(1.0 - w, abs=0.03)


def test_proposal_affinities_memoized():
    f, g = _example1()
    prop = GeometricProposal(f, DirectionSet.uniform([g]), 0.5)
    first = prop.affinities(None)
    assert prop.affinities(None) is first
    assert prop.angles(None)[0] == pytest.approx(math.acos(math.exp(-0.125)))


def test_monte_carlo_affinities_depend_only_on_state():
    def build():
        return GeometricProposal(random_walk_normal(1.0), DirectionSet.uniform([normal_density(0.0, 1.0)]), 0.5,
                                 affinity_mode=AffinityMode.MONTE_CARLO, mc_samples=4000, mc_seed=3)

    states = [np.array([x]) for x in (-2.0, 0.5, 1.5, 3.0)]
    forward = build()
    expected = [forward.affinities(s)[0].value for s in states]

    shared = build()
    with ThreadPoolExecutor(max_workers=4) as pool:
        got = list(pool.map(lambda s: shared.affinities(s)[0].value, list(reversed(states))))
    assert list(reversed(got)) == expected
    assert shared.affinities(states[1]) is shared.affinities(states[1])
    for s, value in zip(states, expected):
        assert value == pytest.approx(gaussian_affinity(s[0], 1.0, 0.0, 1.0).value, abs=0.06)
    with pytest.raises(ValueError):
        GeometricProposal(normal_density(1.0, 1.0), DirectionSet.uniform([normal_density(0.0, 1.0)]), 0.5,
                          mc_seed=-1)


def test_proposal_residual_branch_frequency():
    f, g = _example1()
    prop = GeometricProposal(f, DirectionSet.uniform([g]), 0.5)
    rng = np.random.default_rng(31)
    n = 20_000
    hits = sum(prop.draw(None, rng).from_residual for _ in range(n))
    assert hits / n == pytest.approx(0.0588, abs=0.007)


def test_proposal_degenerate_direction_uses_base():
    f = normal_density(0.0, 1.0)
    prop = GeometricProposal(f, DirectionSet.uniform([normal_density(0.0, 1.0)]), 0.5)
    rng = np.random.default_rng(1)
    assert not any(prop.draw(None, rng).from_residual for _ in range(50))


def test_proposal_discrete_uses_exact_sum():
    base = finite_density([0.25, 0.25, 0.25, 0.25])
    g = finite_density([0.7, 0.1, 0.1, 0.1])
    prop = GeometricProposal(base, DirectionSet.uniform([g]), 0.5, affinity_mode=AffinityMode.QUADRATURE)
    assert prop.affinity_mode == AffinityMode.EXACT_SUM
    phi = np.exp([prop.log_pdf(0, y) for y in range(4)])
    assert phi.sum() == pytest.approx(1.0, abs=1e-12)


def test_direction_set_validation():
    f, g = _example1()
    with pytest.raises(ValueError):
        DirectionSet((f, g), np.array([0.6, 0.6]))
    with pytest.raises(DimensionMismatchError):
        DirectionSet((f, g), np.array([1.0]))


def test_proposal_rejects_bad_epsilon():
    f, g = _example1()
    with pytest.raises(ValueError):
        GeometricProposal(f, DirectionSet.uniform([g]), 1.5)


# ---------------------------------------------------------------------------
# 구면 기하
# ---------------------------------------------------------------------------

def _sphere_points():
    grid = QuadratureGrid.uniform(-15.0, 15.0, 3001)
    f, g = _example1()
    return sqrt_representation(f, grid), sqrt_representation(g, grid)


def test_sqrt_representation_is_unit():
    rho1, rho2 = _sphere_points()
    assert rho1.norm() == pytest.approx(1.0, abs=1e-12)
    assert rho1.inner(rho2) == pytest.approx(math.exp(-0.125), abs=1e-8)


def test_log_then_exp_recovers_point():
    rho1, rho2 = _sphere_points()
    tangent = sphere_log_map(rho1, rho2)
    assert tangent.norm() == pytest.approx(math.acos(rho1.inner(rho2)), abs=1e-10)
    back = sphere_exp_map(rho1, tangent)
    np.testing.assert_allclose(back.values, rho2.values, atol=1e-10)


def test_geodesic_midpoint():
    rho1, rho2 = _sphere_points()
    theta = math.acos(rho1.inner(rho2))
    mid = geodesic_path(rho1, rho2, 0.5)
    assert mid.norm() == pytest.approx(1.0, abs=1e-10)
    assert mid.inner(rho1) == pytest.approx(math.cos(theta / 2.0), abs=1e-10)
    np.testing.assert_allclose(geodesic_path(rho1, rho2, 0.0).values, rho1.values, atol=1e-12)
    with pytest.raises(ValueError):
        geodesic_path(rho1, rho2, 1.5)


def test_parallel_transport_preserves_norm():
    rho1, rho2 = _sphere_points()
    tangent = sphere_log_map(rho1, rho2)
    moved = parallel_transport(tangent, rho1, rho2)
    assert moved.norm() == pytest.approx(tangent.norm(), abs=1e-10)
    assert moved.inner(rho2) == pytest.approx(0.0, abs=1e-10)
