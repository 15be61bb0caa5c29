import numpy as np
import pytest

from app.components.varsel import ModelScorer, VSTrace
from app.components.varsel_design import (
    DesignKind,
    coefficient_mse,
    design_beta,
    fit_coefficients,
    hitting_iteration,
    hitting_statistics,
    mspe,
    population_covariance,
    selection_metrics,
    simulate_design,
)


@pytest.mark.parametrize("kind", [k.value for k in DesignKind])
def test_simulate_design_every_kind(kind):
    design = simulate_design(kind, p=40, m=60, r2=0.9, seed=1, m_test=30)
    assert design.data.p == 40 and design.data.m == 60
    assert design.W_test.shape == (30, 40) and design.z_test.shape == (30,)
    assert design.gamma == tuple(int(j) for j in np.flatnonzero(design.beta))
    assert design.sigma2 > 0
    ModelScorer(design.data).state_for(design.gamma, with_scores=False)


def test_simulate_design_is_reproducible():
    first = simulate_design("ar", p=20, m=50, r2=0.8, seed=3)
    second = simulate_design("ar", p=20, m=50, r2=0.8, seed=3)
    np.testing.assert_array_equal(first.data.raw, second.data.raw)
    np.testing.assert_array_equal(first.data.z, second.data.z)


def test_simulate_design_validation():
    with pytest.raises(ValueError):
        simulate_design("circular", p=10, m=50, r2=0.5, seed=0)
    with pytest.raises(ValueError):
        simulate_design("independent", p=10, m=50, r2=1.0, seed=0)
    with pytest.raises(ValueError):
        simulate_design("independent", p=10, m=2, r2=0.5, seed=0)


def test_design_beta_supports():
    assert np.flatnonzero(design_beta(DesignKind.INDEPENDENT, 20)).tolist() == [0, 1, 2, 3, 4]
    assert np.flatnonzero(design_beta(DesignKind.AR, 20)).tolist() == [0, 3, 6]
    assert design_beta(DesignKind.COMPOUND, 20)[:5].tolist() == [5.0] * 5


def test_sigma2_matches_requested_r2():
    design = simulate_design("compound", p=10, m=50, r2=0.75, seed=2, rho=0.5)
    beta = design.beta[list(design.gamma)]
    signal = beta @ population_covariance(DesignKind.COMPOUND, design.gamma, 0.5) @ beta
    assert design.sigma2 == pytest.approx(signal / 3.0)


def test_extreme_covariance_is_positive_definite():
    cov = population_covariance(DesignKind.EXTREME, range(10))
    np.testing.assert_allclose(cov, cov.T)
    assert np.all(np.linalg.eigvalsh(cov) > 0)
    assert cov[0, 5] == pytest.approx(1.0 / (2.0 * np.sqrt(2.0)))
    assert cov[6, 6] == pytest.approx(1.5)


def test_selection_metrics():
    metrics = selection_metrics([0, 1, 7], [0, 1, 2])
    assert metrics["coverage"] == 0.0
    assert metrics["size"] == 3.0
    assert metrics["fdr"] == pytest.approx(1.0 / 3.0)
    assert metrics["fnr"] == pytest.approx(1.0 / 3.0)
    assert metrics["jaccard"] == pytest.approx(0.5)
    empty = selection_metrics([], [])
    assert empty["fdr"] == 0.0 and empty["jaccard"] == 1.0


def test_fit_coefficients_and_errors():
    design = simulate_design("independent", p=10, m=200, r2=0.95, seed=4, m_test=100, omega=0.5)
    intercept, beta = fit_coefficients(design.data, design.gamma)
    np.testing.assert_allclose(beta[list(design.gamma)], design.beta[list(design.gamma)], atol=0.2)
    assert np.all(beta[5:] == 0.0)
    assert coefficient_mse(design.data, design.gamma, design.beta) < coefficient_mse(design.data, (), design.beta)
    assert mspe(design.data, design.gamma, design.W_test, design.z_test) < \
        mspe(design.data, (), design.W_test, design.z_test)
    assert fit_coefficients(design.data, ())[0] == pytest.approx(design.data.z_mean)


def _trace(models, logs) -> VSTrace:
    return VSTrace(list(models), np.ones(len(models), bool), np.asarray(logs, float), 0, 0.0)


def test_hitting_iteration_is_one_based():
    models = [(), (0,), (0, 1), (0,)]
    assert hitting_iteration(models, (0,)) == 2
    assert hitting_iteration(models, [1, 0]) == 3
    assert hitting_iteration(models, (5,)) is None


def test_hitting_statistics_uses_best_over_runs():
    traces = [
        _trace([(), (0,), (0, 1)], [-10.0, -5.0, -1.0]),
        _trace([(1,), (0, 1)], [-7.0, -1.0]),
        _trace([(), (2,)], [-10.0, -8.0]),
    ]
    stats = hitting_statistics(traces, truth=(0, 1))
    assert stats["best_model"] == [0, 1]
    assert stats["iterations"] == [3, 2, None]
    assert stats["success_rate"] == pytest.approx(2.0 / 3.0)
    assert stats["median"] == pytest.approx(2.5)
    assert stats["best_is_truth"] is True
    assert hitting_statistics([_trace([], [])])["best_model"] is None
