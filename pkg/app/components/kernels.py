"""MH 기계장치: 기본 커널, 기하 MH (단일 혼합/방향별), Gibbs 합성, 체인 실행"""
import math
import time
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from strenum import StrEnum

from app.components.errors import CapabilityError, DimensionMismatchError, GeomMcError
from app.components.geometry import Density, GaussianForm, GeometricProposal, Support, as_points, finish, \
    discrete_mixture_pmf, finite_conditional_density
from app.components.ordering import FiniteChain, mh_transition_matrix
from app.components.targets import (
    TargetModel,
    builtin_density,
    finite_target,
    random_walk_normal,
    random_walk_t,
    gaussian_density,
)
from app.utils.logging_utils import setupLogging
from app.utils.seed_utils import makeRng

logger = setupLogging()

LOG_2PI = math.log(2.0 * math.pi)
METRIC_FLOOR = 1e-6


class KernelKind(StrEnum):
    RANDOM_WALK = "random-walk"
    INDEPENDENT = "independent"
    MALA = "mala"
    MMALA = "mmala"
    GEOMETRIC = "geometric"
    CUSTOM = "custom"


@dataclass(frozen=True, eq=False)
class ProposalKernel:
    """f(y|x): density의 context가 현재 상태"""
    density: Density
    kind: KernelKind
    symmetric: bool = False

    def sample(self, current: Any, rng: np.random.Generator) -> Any:
        return self.density.sample(rng, current)

    def log_pdf(self, current: Any, candidate: Any) -> float:
        return float(self.density.log_pdf(candidate, current))


def finite_kernel(rows: Any, name: str = "finite-kernel") -> ProposalKernel:
    return ProposalKernel(finite_conditional_density(rows, name), KernelKind.CUSTOM,
                          symmetric=bool(np.allclose(rows, np.asarray(rows).T)))


def _metric_gaussian(target: TargetModel, h: float) -> Density:
    """N(x + (h/2)G⁻¹∇log ψ, hG⁻¹), G = −∇² log ψ (고유값 하한으로 보정)"""
    d = target.dimension
    cache: Dict[bytes, Tuple[np.ndarray, np.ndarray, np.ndarray, float]] = {}
    warned = []

    def params(context):
        x = np.atleast_1d(np.asarray(context, float))
        key = x.tobytes()
        hit = cache.get(key)
        if hit is None:
            G = -target.hessian(x)
            vals, vecs = np.linalg.eigh((G + G.T) / 2.0)
            floor = METRIC_FLOOR * max(float(np.max(np.abs(vals))), 1e-300)
            if vals.min() < floor:
                if not warned:
                    logger.warning(f"⚠️ 음의 정부호가 아닌 metric을 고유값 하한 {floor:.3g}로 보정했습니다")
                    warned.append(True)
                vals = np.maximum(vals, floor)
            ginv = (vecs / vals) @ vecs.T
            mean = x + 0.5 * h * ginv @ target.gradient(x)
            scale = np.sqrt(vals / h)
            hit = (mean, vecs, scale, float(np.sum(np.log(scale))))
            if len(cache) >= 8:
                cache.clear()
            cache[key] = hit
        return hit

    def logpdf(point, context):
        y, single = as_points(point, d)
        mean, vecs, scale, halfLogDet = params(context)
        z = ((y - mean) @ vecs) * scale
        return finish(-0.5 * d * LOG_2PI + halfLogDet - 0.5 * np.sum(z * z, axis=1), single)

    def sampler(rng, context, size):
        mean, vecs, scale, _ = params(context)
        if size is None:
            return mean + vecs @ (rng.standard_normal(d) / scale)
        return mean + (rng.standard_normal((size, d)) / scale) @ vecs.T

    def cov_fn(context):
        _, vecs, scale, _ = params(context)
        return (vecs / scale ** 2) @ vecs.T

    return Density(logpdf, d, Support.continuous(d), sampler, True, False,
                   GaussianForm(lambda c: params(c)[0], None, cov_fn), "mmala")


def make_base_kernel(kind: str, params: Dict[str, Any], target: TargetModel) -> ProposalKernel:
    """kind ∈ {random-walk, independent, mala, mmala}"""
    kind = KernelKind(kind)
    params = dict(params or {})
    d = target.dimension
    if kind == KernelKind.RANDOM_WALK:
        df = params.pop("df", None)
        if df is not None:
            density = random_walk_t(float(df), params.pop("scale", 1.0), d)
        else:
            density = random_walk_normal(params.pop("cov", 1.0), d)
        kernel = ProposalKernel(density, kind, symmetric=True)
    elif kind == KernelKind.INDEPENDENT:
        distribution = params.pop("distribution", "normal")
        density = builtin_density(distribution, params)
        params = {}
        if density.dimension != d:
            raise DimensionMismatchError(f"독립 제안 차원 {density.dimension} != 목표 차원 {d}")
        kernel = ProposalKernel(density, kind)
    elif kind in (KernelKind.MALA, KernelKind.MMALA):
        h = float(params.pop("h"))
        if h <= 0:
            raise ValueError("step size h는 양수여야 합니다")
        if not target.has_gradient:
            raise CapabilityError(f"{kind}는 목표분포의 gradient가 필요합니다")
        if kind == KernelKind.MALA:
            density = gaussian_density(
                lambda context: np.atleast_1d(np.asarray(context, float))
                + 0.5 * h * target.gradient(context),
                h * np.eye(d), False, "mala")
        else:
            if not target.has_hessian:
                raise CapabilityError("mmala는 목표분포의 hessian이 필요합니다")
            density = _metric_gaussian(target, h)
        kernel = ProposalKernel(density, kind)
    else:
        raise ValueError(f"기본 커널로 쓸 수 없는 종류: {kind}")
    if params:
        raise ValueError(f"{kind} 커널에 알 수 없는 파라미터: {sorted(params)}")
    if kernel.density.dimension != d:
        raise DimensionMismatchError(f"커널 차원 {kernel.density.dimension} != 목표 차원 {d}")
    return kernel


# ---------------------------------------------------------------------------
# 한 단계 이동
# ---------------------------------------------------------------------------

class StepResult(NamedTuple):
    state: Any
    accepted: bool
    log_alpha: float
    direction: int = -1
    attempts: int = 0
    nonfinite: bool = False
    block_accepted: Optional[Tuple[bool, ...]] = None


def _finish_step(current: Any, candidate: Any, logAlpha: float, rng: np.random.Generator,
                 direction: int = -1, attempts: int = 0) -> StepResult:
    if math.isnan(logAlpha):
        return StepResult(current, False, -math.inf, direction, attempts, True)
    accepted = logAlpha >= 0.0 or math.log(rng.random()) < logAlpha
    return StepResult(candidate if accepted else current, bool(accepted), min(logAlpha, 0.0), direction, attempts)


def _candidate_log_target(target: TargetModel, candidate: Any) -> Tuple[float, bool]:
    """(log ψ(y), 비정상 여부). −∞ 는 support 밖으로 정상 기각"""
    value = float(target.log_target(candidate))
    if math.isnan(value) or value == math.inf:
        logger.debug(f"비유한 log 목표값 {value} 후보를 기각합니다")
        return value, True
    return value, False


def mh_step(target: TargetModel, kernel: ProposalKernel, current: Any, rng: np.random.Generator) -> StepResult:
    candidate = kernel.sample(current, rng)
    logNew, bad = _candidate_log_target(target, candidate)
    if bad:
        return StepResult(current, False, -math.inf, nonfinite=True)
    if logNew == -math.inf:
        return StepResult(current, False, -math.inf)
    logAlpha = logNew - float(target.log_target(current))
    if not kernel.symmetric:
        logAlpha += kernel.log_pdf(candidate, current) - kernel.log_pdf(current, candidate)
    return _finish_step(current, candidate, logAlpha, rng)


def geometric_mh_step(target: TargetModel, prop: GeometricProposal, current: Any,
                      rng: np.random.Generator) -> StepResult:
    """y ~ φ_ε(·|x), min{ψ(y)φ_ε(x|y) / ψ(x)φ_ε(y|x), 1} 로 수락"""
    draw = prop.draw(current, rng)
    logNew, bad = _candidate_log_target(target, draw.point)
    if bad:
        return StepResult(current, False, -math.inf, draw.direction, draw.attempts, True)
    if logNew == -math.inf:
        return StepResult(current, False, -math.inf, draw.direction, draw.attempts)
    logAlpha = (logNew + prop.log_pdf(draw.point, current)
                - float(target.log_target(current)) - prop.log_pdf(current, draw.point))
    return _finish_step(current, draw.point, logAlpha, rng, draw.direction, draw.attempts)


def mixture_kernel_step(target: TargetModel, prop: GeometricProposal, current: Any,
                        rng: np.random.Generator) -> StepResult:
    """i ~ a 로 방향을 먼저 고르고 φ_{i,ε} 만으로 수락"""
    weights = prop.directions.weights
    i = 0 if weights.size == 1 else int(rng.choice(weights.size, p=weights))
    draw = prop.draw(current, rng, direction=i)
    logNew, bad = _candidate_log_target(target, draw.point)
    if bad:
        return StepResult(current, False, -math.inf, i, draw.attempts, True)
    if logNew == -math.inf:
        return StepResult(current, False, -math.inf, i, draw.attempts)
    logAlpha = (logNew + prop.direction_log_pdf(i, draw.point, current)
                - float(target.log_target(current)) - prop.direction_log_pdf(i, current, draw.point))
    return _finish_step(current, draw.point, logAlpha, rng, i, draw.attempts)


class MHStepper:
    def __init__(self, target: TargetModel, kernel: ProposalKernel):
        self.target = target
        self.kernel = kernel

    def __call__(self, current: Any, rng: np.random.Generator) -> StepResult:
        return mh_step(self.target, self.kernel, current, rng)


class GeometricStepper:
    def __init__(self, target: TargetModel, prop: GeometricProposal, mixture: bool = False):
        self.target = target
        self.prop = prop
        self.mixture = mixture

    def __call__(self, current: Any, rng: np.random.Generator) -> StepResult:
        if self.mixture:
            return mixture_kernel_step(self.target, self.prop, current, rng)
        return geometric_mh_step(self.target, self.prop, current, rng)


# ---------------------------------------------------------------------------
# 유한 공간 정확 전이행렬
# ---------------------------------------------------------------------------

def _finite_psi(target: TargetModel) -> np.ndarray:
    if not target.is_discrete:
        raise CapabilityError("정확 전이행렬은 유한 support에서만 계산합니다")
    logPsi = np.asarray(target.log_target(np.arange(target.support.size)), float)
    return np.exp(logPsi - np.max(logPsi))


def exact_transition_matrix(target: TargetModel, kernel: ProposalKernel) -> FiniteChain:
    n = target.support.size
    states = np.arange(n)
    q = np.vstack([kernel.density.pdf(states, x) for x in range(n)])
    return mh_transition_matrix(q, _finite_psi(target))


def direction_proposal_matrices(prop: GeometricProposal) -> List[np.ndarray]:
    """방향별 φ_{i,ε} 행렬"""
    if not prop.base.is_discrete:
        raise CapabilityError("제안 행렬은 유한 support에서만 계산합니다")
    n = prop.base.support.size
    states = np.arange(n)
    matrices = []
    for g in prop.directions.directions:
        rows = [discrete_mixture_pmf(prop.base.pdf(states, x), g.pdf(states, x), prop.epsilon)[0] for x in range(n)]
        matrices.append(np.vstack(rows))
    return matrices


def geometric_proposal_matrix(prop: GeometricProposal) -> np.ndarray:
    matrices = direction_proposal_matrices(prop)
    return sum(a * m for a, m in zip(prop.directions.weights, matrices))


def geometric_transition_matrix(target: TargetModel, prop: GeometricProposal, mixture: bool = False) -> FiniteChain:
    """단일 혼합 제안 MH 또는 방향별 MH 커널의 가중 혼합"""
    psi = _finite_psi(target)
    if not mixture:
        return mh_transition_matrix(geometric_proposal_matrix(prop), psi)
    matrices = direction_proposal_matrices(prop)
    P = sum(a * mh_transition_matrix(m, psi).P for a, m in zip(prop.directions.weights, matrices))
    return FiniteChain(P, psi / psi.sum(), reversible=True)


# ---------------------------------------------------------------------------
# Gibbs 합성
# ---------------------------------------------------------------------------

class MHBlock:
    """블록 조건부에 대한 기본 MH"""

    def __init__(self, kernel: ProposalKernel):
        self.kernel = kernel

    def step(self, cond_target: TargetModel, x: Any, rng: np.random.Generator) -> StepResult:
        return mh_step(cond_target, self.kernel, x, rng)

    def transition_matrix(self, cond_target: TargetModel) -> np.ndarray:
        return exact_transition_matrix(cond_target, self.kernel).P


class GeometricBlock:
    """블록 조건부에 대한 기하 MH"""

    def __init__(self, prop: GeometricProposal, mixture: bool = False):
        self.prop = prop
        self.mixture = mixture

    def step(self, cond_target: TargetModel, x: Any, rng: np.random.Generator) -> StepResult:
        if self.mixture:
            return mixture_kernel_step(cond_target, self.prop, x, rng)
        return geometric_mh_step(cond_target, self.prop, x, rng)

    def transition_matrix(self, cond_target: TargetModel) -> np.ndarray:
        return geometric_transition_matrix(cond_target, self.prop, self.mixture).P


BlockKernel = Union[MHBlock, GeometricBlock]


def conditional_target(target: TargetModel, coords: Sequence[int], point: np.ndarray) -> TargetModel:
    """coords 이외 좌표를 point 값으로 고정한 조건부 목표"""
    coords = list(coords)
    fixed = np.array(point, dtype=float)
    k = len(coords)

    def logTarget(y):
        values, single = as_points(y, k)
        full = np.repeat(fixed[None, :], values.shape[0], axis=0)
        full[:, coords] = values
        return finish(np.atleast_1d(target.log_target(full)), single)

    lower = target.support.lower[coords] if target.support.lower is not None else None
    upper = target.support.upper[coords] if target.support.upper is not None else None
    return TargetModel(logTarget, k, Support.continuous(k, lower, upper), name=f"{target.name}|{coords}")


class GibbsSampler:
    """결정적 순서 블록 갱신"""

    def __init__(self, target: TargetModel, blocks: Sequence[Tuple[Sequence[int], BlockKernel]]):
        self.target = target
        self.blocks = tuple((tuple(int(c) for c in coords), block) for coords, block in blocks)

    def __call__(self, current: Any, rng: np.random.Generator) -> StepResult:
        x = np.array(current, dtype=float)
        accepted = []
        nonfinite = False
        attempts = 0
        for coords, block in self.blocks:
            cond = conditional_target(self.target, coords, x)
            result = block.step(cond, x[list(coords)], rng)
            x[list(coords)] = np.atleast_1d(result.state)
            accepted.append(result.accepted)
            nonfinite = nonfinite or result.nonfinite
            attempts += result.attempts
        return StepResult(x, any(accepted), 0.0, -1, attempts, nonfinite, tuple(accepted))


def gibbs_compose(blocks: Sequence[Tuple[Sequence[int], BlockKernel]], target: TargetModel) -> GibbsSampler:
    seen: List[int] = []
    for coords, _ in blocks:
        if len(coords) == 0:
            raise ValueError("빈 좌표 블록이 있습니다")
        seen.extend(int(c) for c in coords)
    if sorted(seen) != list(range(target.dimension)):
        raise ValueError(f"좌표 블록 {seen}이 0..{target.dimension - 1}의 분할이 아닙니다")
    return GibbsSampler(target, blocks)


def gibbs_scan_matrix(log_psi: np.ndarray, blocks: Sequence[Tuple[int, BlockKernel]]) -> FiniteChain:
    """격자 목표 위 결정적 순서 스캔의 정확한 전이행렬 (블록 = 축 하나)"""
    log_psi = np.asarray(log_psi, float)
    shape = log_psi.shape
    axes = sorted(axis for axis, _ in blocks)
    if axes != list(range(len(shape))):
        raise ValueError("블록 축이 격자 축의 분할이 아닙니다")
    N = int(np.prod(shape))
    scan = np.eye(N)
    for axis, block in blocks:
        Pj = np.zeros((N, N))
        rest = [s for a, s in enumerate(shape) if a != axis]
        for comp in np.ndindex(*rest):
            index = list(comp)
            index.insert(axis, slice(None))
            cond = log_psi[tuple(index)]
            K = block.transition_matrix(finite_target(np.exp(cond - cond.max())))
            flat = []
            for v in range(shape[axis]):
                index[axis] = v
                flat.append(np.ravel_multi_index(tuple(index), shape))
            Pj[np.ix_(flat, flat)] = K
        scan = scan @ Pj
    psi = np.exp(log_psi - log_psi.max()).ravel()
    return FiniteChain(scan, psi / psi.sum(), reversible=False)


# ---------------------------------------------------------------------------
# 체인 실행
# ---------------------------------------------------------------------------

@dataclass
class ChainTrace:
    states: np.ndarray
    accepted: np.ndarray
    log_alpha: np.ndarray
    directions: np.ndarray
    attempts: np.ndarray
    init: Any
    seed: Optional[int]
    wall_time: float
    completed: bool = True
    error: Optional[str] = None
    nonfinite: int = 0
    block_accepted: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return int(self.accepted.size)

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted)) if self.accepted.size else float('nan')

    @property
    def block_acceptance_rates(self) -> Optional[np.ndarray]:
        if self.block_accepted is None or not self.block_accepted.size:
            return None
        return self.block_accepted.mean(axis=0)


StepFn = Callable[[Any, np.random.Generator], StepResult]


def run_chain(step: StepFn, init: Any, n: int, seed: Optional[int]) -> ChainTrace:
    """seed로 재현 가능한 n회 반복. 중간 실패 시 부분 trace 반환"""
    if n < 1:
        raise ValueError(f"반복 횟수는 1 이상이어야 합니다: {n}")
    target = getattr(step, 'target', None)
    if target is not None and target.is_discrete:
        current: Any = int(init)
    else:
        current = np.atleast_1d(np.asarray(init, float)).copy()
    if target is not None and not target.support.contains(current):
        raise ValueError(f"초기값 {init}이 support 밖입니다")

    rng = makeRng(seed)
    states, accepted, logAlphas, directions, attempts, blocks = [], [], [], [], [], []
    nonfinite = 0
    error = None
    started = time.perf_counter()
    for i in range(n):
        try:
            result = step(current, rng)
        except GeomMcError as e:
            error = f"{type(e).__name__}: {e}"
            logger.error(f"❌ {i + 1}번째 반복에서 체인 중단: {error}")
            break
        except Exception as e:
            error = f"{type(e).__name__}: {e}"
            logger.error(f"❌ {i + 1}번째 반복에서 예기치 못한 오류로 체인 중단: {error}")
            break
        current = result.state
        states.append(current)
        accepted.append(result.accepted)
        logAlphas.append(result.log_alpha)
        directions.append(result.direction)
        attempts.append(result.attempts)
        if result.block_accepted is not None:
            blocks.append(result.block_accepted)
        nonfinite += int(result.nonfinite)
    wallTime = time.perf_counter() - started

    if nonfinite:
        logger.warning(f"⚠️ 비유한 log 목표값 후보 {nonfinite}개를 자동 기각했습니다")
    if target is not None and target.is_discrete:
        stateArray = np.asarray(states, dtype=int)
    else:
        d = np.atleast_1d(np.asarray(init, float)).size
        stateArray = np.asarray(states, dtype=float).reshape(-1, d)
    return ChainTrace(
        states=stateArray,
        accepted=np.asarray(accepted, dtype=bool),
        log_alpha=np.asarray(logAlphas, dtype=float),
        directions=np.asarray(directions, dtype=int),
        attempts=np.asarray(attempts, dtype=int),
        init=init,
        seed=seed,
        wall_time=wallTime,
        completed=error is None,
        error=error,
        nonfinite=nonfinite,
        block_accepted=np.asarray(blocks, dtype=bool) if blocks else None,
    )
