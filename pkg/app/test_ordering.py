import math

import numpy as np
import pytest
from scipy.stats import norm

from app.components.errors import ConfigValidationError, InvalidChainError, NonReversibleError, ReducibleChainError
from app.components.geometry import Affinity, AffinityProvenance, residual_density_h
from app.components.ordering import (
    FiniteChain,
    asymptotic_variance,
    c_epsilon_bound,
    center_and_scale,
    example1_minimum_ratio,
    mh_transition_matrix,
    peskun_constant,
    spectral_gap,
    total_variation_curve,
    uniform_ergodicity_bound,
    variational_gap,
    verify_theorem1,
)
from app.components.ordering_fixtures import build_fixture, load_fixtures, run_fixture_checks
from app.components.targets import normal_density
from app.utils.settings import APP_DIR

FIXTURES = APP_DIR / 'fixtures' / 'ordering_fixtures.yaml'


def _two_state() -> FiniteChain:
    return mh_transition_matrix([[0.5, 0.5], [0.5, 0.5]], [2.0, 1.0])


def test_two_state_spectral_gap():
    chain = _two_state()
    assert spectral_gap(chain) == pytest.approx(0.75)
    assert variational_gap(chain) == pytest.approx(0.75)


def test_two_state_asymptotic_variance():
    chain = _two_state()
    t = center_and_scale(chain.psi, np.array([0.0, 1.0]))
    assert asymptotic_variance(chain, t) == pytest.approx(5.0 / 3.0)
    with pytest.raises(ValueError):
        asymptotic_variance(chain, np.array([0.0, 1.0]))


def test_reducible_chain_has_no_asymptotic_variance():
    chain = FiniteChain(np.eye(2), np.array([0.5, 0.5]))
    with pytest.raises(ReducibleChainError):
        asymptotic_variance(chain, np.array([1.0, -1.0]))


def test_finite_chain_validation():
    with pytest.raises(InvalidChainError):
        FiniteChain(np.array([[0.5, 0.6], [0.5, 0.5]]), np.array([0.5, 0.5]))
    with pytest.raises(InvalidChainError):
        FiniteChain(np.eye(3), np.array([0.5, 0.5]))
    cycle = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    with pytest.raises(NonReversibleError):
        FiniteChain(cycle, np.full(3, 1.0 / 3.0))
    assert FiniteChain(cycle, np.full(3, 1.0 / 3.0), reversible=False).size == 3


def test_peskun_constant_of_chain_with_itself():
    chain = _two_state()
    assert peskun_constant(chain.P, chain.P) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        peskun_constant(np.eye(2), np.eye(2))


def test_verify_theorem1_on_lazy_chain():
    rng = np.random.default_rng(0)
    psi = rng.random(8) + 0.2
    fast = mh_transition_matrix(np.full((8, 8), 1.0 / 8.0), psi)
    lazy = FiniteChain(0.5 * np.eye(8) + 0.5 * fast.P, fast.psi)
    report = verify_theorem1(fast, lazy, trials=50, seed=1)
    assert report.passed
    assert report.peskun_constant == pytest.approx(2.0)
    assert report.gap_p >= report.gap_q
    assert set(report.to_dict()["worst_slack"]) == {"covariance", "spectral-gap", "asymptotic-variance"}


def test_verify_theorem1_requires_same_target():
    a = mh_transition_matrix(np.full((3, 3), 1.0 / 3.0), [1.0, 2.0, 3.0])
    b = mh_transition_matrix(np.full((3, 3), 1.0 / 3.0), [3.0, 2.0, 1.0])
    with pytest.raises(ValueError):
        verify_theorem1(a, b)


def test_c_epsilon_is_one_without_perturbation():
    rows = np.full((4, 4), 0.25)
    g = np.array([0.4, 0.3, 0.2, 0.1])
    assert c_epsilon_bound(rows, [g], [1.0], 0.0) == pytest.approx(1.0)
    assert 0.0 <= c_epsilon_bound(rows, [g], [1.0], 1.0) < 1.0
    with pytest.raises(ValueError):
        c_epsilon_bound(rows, [g], [0.5, 0.5], 0.5)


def test_total_variation_curve_decreases():
    curve = total_variation_curve(_two_state(), 10)
    assert np.all(np.diff(curve) <= 1e-15)
    assert curve[0] == pytest.approx(1.0 / 6.0)
    assert curve[-1] < 1e-5


def test_uniform_ergodicity_for_exact_proposal():
    psi = np.array([0.1, 0.2, 0.3, 0.4])
    report = uniform_ergodicity_bound(psi, psi, steps=5)
    assert report.beta == pytest.approx(1.0)
    assert report.uniformly_ergodic
    np.testing.assert_allclose(report.tv, 0.0, atol=1e-12)


def test_uniform_ergodicity_without_coverage():
    report = uniform_ergodicity_bound(np.array([0.5, 0.5, 0.0]), np.array([0.2, 0.3, 0.5]), steps=5)
    assert report.beta == 0.0
    assert report.bound is None
    assert not report.uniformly_ergodic


def test_example1_discretized_ratio_matches_closed_form():
    x = np.round(np.arange(-10.0, 10.0 + 1e-9, 0.1), 10)
    f, g = normal_density(1.0, 1.0), normal_density(0.0, 1.0)
    aff = Affinity(math.exp(-0.125), AffinityProvenance.CLOSED_FORM)
    s = math.sin(0.5 * aff.theta) ** 2
    phi = (1.0 - s) * f.pdf(x) + s * residual_density_h(f, g, aff).pdf(x)
    psi = norm.pdf(x)
    report = uniform_ergodicity_bound(phi / phi.sum(), psi / psi.sum())
    exact = example1_minimum_ratio(0.5)
    assert exact == pytest.approx(0.2177, abs=1e-3)
    assert exact - 1e-6 <= report.beta <= exact + 5e-3
    assert np.all(report.tv <= report.bound + 1e-12)


def test_example1_minimum_ratio_vanishes_at_zero():
    assert example1_minimum_ratio(0.0) == 0.0
    assert example1_minimum_ratio(1.0) > example1_minimum_ratio(0.5)


# ---------------------------------------------------------------------------
# fixture
# ---------------------------------------------------------------------------

def test_default_fixtures_pass():
    fixtures = load_fixtures(FIXTURES)
    assert len(fixtures) >= 10
    for fixture in fixtures:
        result = run_fixture_checks(fixture, trials=20, seed=0)
        assert result.passed, (fixture.name, result.failures())


def test_explicit_fixture():
    fixture = build_fixture({
        "name": "explicit",
        "explicit": {
            "P": [[0.5, 0.5], [0.5, 0.5]],
            "Q": [[0.75, 0.25], [0.25, 0.75]],
            "psi": [1.0, 1.0],
        },
    })
    result = run_fixture_checks(fixture, trials=10)
    assert result.passed, result.failures()
    assert result.outcomes["covariance"].slack >= -1e-9


def test_fixture_errors(tmp_path):
    with pytest.raises(ConfigValidationError):
        load_fixtures(tmp_path / "missing.yaml")
    empty = tmp_path / "empty.yaml"
    empty.write_text("fixtures: []\n", encoding="utf-8")
    with pytest.raises(ConfigValidationError):
        load_fixtures(empty)
    with pytest.raises(ConfigValidationError):
        build_fixture({"name": "bad", "states": 5, "checks": ["stationarity", "nonsense"]})
    with pytest.raises(ConfigValidationError):
        build_fixture({"name": "bad", "states": 5, "base": {"kind": "teleport"}})


def test_uniform_ergodicity_check_needs_state_free_proposal():
    fixture = build_fixture({"name": "ring", "states": 6, "base": {"kind": "ring"},
                             "checks": ["uniform-ergodicity"]})
    result = run_fixture_checks(fixture)
    assert result.failures() == ["uniform-ergodicity"]
