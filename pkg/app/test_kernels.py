import math

import numpy as np
import pytest
from scipy.stats import norm

from app.components.errors import CapabilityError, DimensionMismatchError
from app.components.geometry import DirectionSet, GeometricProposal, Support, finite_conditional_density, finite_density
from app.components.kernels import (
    GeometricBlock,
    GeometricStepper,
    KernelKind,
    MHBlock,
    MHStepper,
    ProposalKernel,
    conditional_target,
    direction_proposal_matrices,
    exact_transition_matrix,
    finite_kernel,
    geometric_mh_step,
    geometric_proposal_matrix,
    geometric_transition_matrix,
    gibbs_compose,
    gibbs_scan_matrix,
    make_base_kernel,
    run_chain,
)
from app.components.ordering import detailed_balance_error, remark1_domination, stationarity_error
from app.components.targets import (
    SixModeTarget,
    TargetModel,
    density_target,
    finite_target,
    normal_density,
    random_walk_normal,
    tuned_normal_residual_sampler,
)


def _cycle_rows(n: int) -> np.ndarray:
    rows = np.zeros((n, n))
    for x in range(n):
        rows[x, (x - 1) % n] = 0.5
        rows[x, (x + 1) % n] = 0.5
    return rows


def _finite_setup(n: int = 6, seed: int = 3):
    rng = np.random.default_rng(seed)
    psi = rng.random(n) + 0.1
    psi /= psi.sum()
    other = rng.random(n) + 0.1
    other /= other.sum()
    base = finite_conditional_density(_cycle_rows(n))
    return psi, base, [finite_density(psi, "psi"), finite_density(other, "other")]


# ---------------------------------------------------------------------------
# 유한 공간 정확 전이행렬
# ---------------------------------------------------------------------------

def test_two_state_metropolis_matrix():
    chain = exact_transition_matrix(finite_target([2.0, 1.0]), finite_kernel([[0.5, 0.5], [0.5, 0.5]]))
    np.testing.assert_allclose(chain.P, [[0.75, 0.25], [0.5, 0.5]])
    np.testing.assert_allclose(chain.psi, [2.0 / 3.0, 1.0 / 3.0])


def test_geometric_matrix_is_reversible_wrt_target():
    psi, base, directions = _finite_setup()
    target = finite_target(psi)
    for mixture in (False, True):
        prop = GeometricProposal(base, DirectionSet.uniform(directions), 0.5)
        chain = geometric_transition_matrix(target, prop, mixture=mixture)
        assert stationarity_error(chain.P, psi) < 1e-12
        assert detailed_balance_error(chain.P, psi) < 1e-12


def test_geometric_proposal_rows_are_pmfs():
    psi, base, directions = _finite_setup()
    prop = GeometricProposal(base, DirectionSet.uniform(directions), 0.7)
    for matrix in direction_proposal_matrices(prop):
        np.testing.assert_allclose(matrix.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(geometric_proposal_matrix(prop) >= 0.0)


def test_epsilon_zero_reduces_to_base_chain():
    psi, base, directions = _finite_setup()
    target = finite_target(psi)
    prop = GeometricProposal(base, DirectionSet.uniform(directions), 0.0)
    np.testing.assert_allclose(geometric_proposal_matrix(prop), _cycle_rows(psi.size), atol=1e-12)
    baseChain = exact_transition_matrix(target, finite_kernel(_cycle_rows(psi.size)))
    np.testing.assert_allclose(geometric_transition_matrix(target, prop).P, baseChain.P, atol=1e-12)


def test_single_mixture_dominates_direction_mixture():
    psi, base, directions = _finite_setup()
    target = finite_target(psi)
    prop = GeometricProposal(base, DirectionSet(tuple(directions), np.array([0.3, 0.7])), 0.6)
    single = geometric_transition_matrix(target, prop, mixture=False)
    mixed = geometric_transition_matrix(target, prop, mixture=True)
    assert remark1_domination(single.P, mixed.P) >= -1e-12


def test_exact_matrix_requires_finite_target():
    target = density_target(normal_density(0.0, 1.0))
    with pytest.raises(CapabilityError):
        exact_transition_matrix(target, make_base_kernel("random-walk", {"cov": 1.0}, target))


# ---------------------------------------------------------------------------
# 기본 커널
# ---------------------------------------------------------------------------

def test_random_walk_kernel_is_symmetric():
    target = density_target(normal_density(0.0, 1.0))
    kernel = make_base_kernel("random-walk", {"cov": 2.0}, target)
    assert kernel.symmetric
    assert kernel.log_pdf(0.0, 1.0) == pytest.approx(kernel.log_pdf(1.0, 0.0))
    tKernel = make_base_kernel("random-walk", {"df": 3.0, "scale": 1.0}, target)
    assert tKernel.kind == KernelKind.RANDOM_WALK


def test_independent_kernel_ignores_state():
    target = density_target(normal_density(0.0, 1.0))
    kernel = make_base_kernel("independent", {"distribution": "normal", "mean": 1.0, "sd": 1.0}, target)
    assert not kernel.symmetric
    assert kernel.log_pdf(-5.0, 0.0) == pytest.approx(norm.logpdf(0.0, 1.0, 1.0))


def test_mala_kernel_drift():
    target = density_target(normal_density(0.0, 1.0))
    kernel = make_base_kernel("mala", {"h": 0.5}, target)
    expectedMean = 1.0 + 0.25 * (-1.0)
    assert kernel.log_pdf(1.0, 0.5) == pytest.approx(norm.logpdf(0.5, expectedMean, math.sqrt(0.5)))


def test_mmala_matches_mala_on_standard_normal():
    target = density_target(normal_density([0.0, 0.0], np.eye(2)))
    mala = make_base_kernel("mala", {"h": 0.3}, target)
    mmala = make_base_kernel("mmala", {"h": 0.3}, target)
    x, y = np.array([0.4, -1.0]), np.array([0.1, 0.2])
    assert mmala.log_pdf(x, y) == pytest.approx(mala.log_pdf(x, y), rel=1e-10)
    assert mmala.sample(x, np.random.default_rng(0)).shape == (2,)


def test_make_base_kernel_validation():
    target = density_target(normal_density(0.0, 1.0))
    with pytest.raises(ValueError):
        make_base_kernel("random-walk", {"cov": 1.0, "shape": 2.0}, target)
    with pytest.raises(ValueError):
        make_base_kernel("mala", {"h": 0.0}, target)
    with pytest.raises(ValueError):
        make_base_kernel("geometric", {}, target)
    with pytest.raises(DimensionMismatchError):
        make_base_kernel("independent", {"distribution": "normal", "mean": [0.0, 0.0], "cov": np.eye(2)}, target)
    bare = TargetModel(lambda x: 0.0, 1, Support.continuous(1))
    with pytest.raises(CapabilityError):
        make_base_kernel("mala", {"h": 0.1}, bare)


# ---------------------------------------------------------------------------
# 체인 실행
# ---------------------------------------------------------------------------

def test_run_chain_is_reproducible():
    target = density_target(normal_density(0.0, 1.0))
    step = MHStepper(target, make_base_kernel("random-walk", {"cov": 1.0}, target))
    first = run_chain(step, 0.0, 200, seed=11)
    second = run_chain(step, 0.0, 200, seed=11)
    np.testing.assert_array_equal(first.states, second.states)
    np.testing.assert_array_equal(first.accepted, second.accepted)
    assert first.states.shape == (200, 1)
    assert first.completed and first.error is None
    assert 0.0 < first.acceptance_rate < 1.0


def test_run_chain_validation():
    target = SixModeTarget().target()
    step = MHStepper(target, make_base_kernel("random-walk", {"cov": np.eye(2)}, target))
    with pytest.raises(ValueError):
        run_chain(step, [0.5, 1.5], 0, seed=0)
    with pytest.raises(ValueError):
        run_chain(step, [0.5, 20.0], 10, seed=0)


def test_run_chain_rejects_out_of_box_candidates():
    target = SixModeTarget().target()
    step = MHStepper(target, make_base_kernel("random-walk", {"cov": 25.0 * np.eye(2)}, target))
    trace = run_chain(step, [0.5, math.pi / 2.0], 500, seed=2)
    assert np.all(np.abs(trace.states) <= 10.0)
    assert trace.nonfinite == 0


def test_discrete_chain_visits_target_frequencies():
    psi, base, directions = _finite_setup()
    prop = GeometricProposal(base, DirectionSet.uniform(directions), 0.5)
    trace = run_chain(GeometricStepper(finite_target(psi), prop), 0, 20_000, seed=5)
    assert trace.states.dtype.kind == 'i'
    freq = np.bincount(trace.states, minlength=psi.size) / trace.n
    np.testing.assert_allclose(freq, psi, atol=0.03)


def test_geometric_chain_escapes_far_start():
    target = density_target(normal_density(0.0, 1.0))
    prop = GeometricProposal(normal_density(1.0, 1.0), DirectionSet.uniform([normal_density(0.0, 1.0)]), 0.5,
                             residual_samplers=(tuned_normal_residual_sampler(),))
    step = GeometricStepper(target, prop)
    escaped = 0
    for seed in range(100):
        trace = run_chain(step, -30.0, 10, seed=seed)
        escaped += int(np.any(np.abs(trace.states[:, 0]) < 3.0))
    assert escaped >= 95


def test_base_independent_chain_stays_stuck():
    target = density_target(normal_density(0.0, 1.0))
    step = MHStepper(target, make_base_kernel("independent", {"distribution": "normal", "mean": 1.0, "sd": 1.0},
                                              target))
    stuck = 0
    for seed in range(100):
        trace = run_chain(step, -10.0, 1000, seed=seed)
        stuck += int(np.all(trace.states[:, 0] < -5.0))
    assert stuck >= 95


def test_geometric_mh_step_from_far_tail():
    target = density_target(normal_density(0.0, 1.0))
    prop = GeometricProposal(normal_density(1.0, 1.0), DirectionSet.uniform([normal_density(0.0, 1.0)]), 0.5)
    rng = np.random.default_rng(4)
    results = [geometric_mh_step(target, prop, np.array([-30.0]), rng) for _ in range(200)]
    moved = [r for r in results if r.accepted]
    assert moved
    assert all(abs(float(np.ravel(r.state)[0])) < 10.0 for r in moved)
    assert all(r.direction == 0 for r in results)


def test_mixture_kernel_step_reports_direction():
    target = density_target(normal_density(0.0, 1.0))
    directions = DirectionSet(tuple([normal_density(0.0, 1.0), normal_density(-1.0, 2.0)]), np.array([0.5, 0.5]))
    prop = GeometricProposal(normal_density(1.0, 1.0), directions, 0.5)
    trace = run_chain(GeometricStepper(target, prop, mixture=True), 0.0, 300, seed=9)
    assert set(np.unique(trace.directions)) <= {0, 1}
    assert trace.completed


# ---------------------------------------------------------------------------
# Gibbs 합성
# ---------------------------------------------------------------------------

def _rw_block(cov: float) -> MHBlock:
    return MHBlock(ProposalKernel(random_walk_normal(cov), KernelKind.RANDOM_WALK, symmetric=True))


def test_gibbs_compose_requires_partition():
    target = SixModeTarget().target()
    with pytest.raises(ValueError):
        gibbs_compose([([0], _rw_block(1.0)), ([0], _rw_block(1.0))], target)
    with pytest.raises(ValueError):
        gibbs_compose([([0, 1], _rw_block(1.0)), ([], _rw_block(1.0))], target)


def test_gibbs_sampler_tracks_block_acceptance():
    target = SixModeTarget().target()
    sampler = gibbs_compose([([0], _rw_block(1.0)), ([1], _rw_block(0.5))], target)
    trace = run_chain(sampler, [0.5, math.pi / 2.0], 300, seed=4)
    rates = trace.block_acceptance_rates
    assert rates is not None and rates.shape == (2,)
    assert np.all((rates > 0.0) & (rates < 1.0))


def test_conditional_target_fixes_other_coordinates():
    six = SixModeTarget()
    cond = conditional_target(six.target(), [1], np.array([0.3, 0.0]))
    assert cond.log_target(1.0) == pytest.approx(six.log_density([0.3, 1.0]))
    assert cond.dimension == 1


def test_gibbs_scan_matrix_is_stationary():
    rng = np.random.default_rng(12)
    logPsi = rng.normal(size=(4, 3))
    uniform4 = finite_kernel(np.full((4, 4), 0.25))
    geoBase = finite_conditional_density(np.full((3, 3), 1.0 / 3.0))
    geoBlock = GeometricBlock(GeometricProposal(geoBase, DirectionSet.uniform([finite_density([0.6, 0.3, 0.1])]),
                                                0.5))
    chain = gibbs_scan_matrix(logPsi, [(0, MHBlock(uniform4)), (1, geoBlock)])
    np.testing.assert_allclose(chain.P.sum(axis=1), 1.0, atol=1e-12)
    assert stationarity_error(chain.P, chain.psi) < 1e-10
    with pytest.raises(ValueError):
        gibbs_scan_matrix(logPsi, [(0, MHBlock(uniform4))])
