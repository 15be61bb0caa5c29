"""제곱근 표현 기하: affinity, 각도, 잔차 밀도 h, 측지선 섭동 제안분포와 그 샘플러"""
import math
import threading
from dataclasses import dataclass, field
from functools import reduce
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import cholesky, solve_triangular, LinAlgError
from scipy.special import logsumexp
from scipy.stats import norm
from strenum import StrEnum

from app.components.errors import (
    CapabilityError,
    CoverageError,
    DegenerateDirectionError,
    DegenerateSupportError,
    DimensionMismatchError,
    EnvelopeFailureError,
    IllConditionedInputError,
)
from app.utils.logging_utils import setupLogging

logger = setupLogging()

# affinity ≥ 1 − DEGENERATE_TOL 이면 h 정의 불가, f로 대체
DEGENERATE_TOL = 1e-9
AFFINITY_FLOOR = 1e-12
UNIT_TOL = 1e-8
MEMO_LIMIT = 50_000


class SupportKind(StrEnum):
    CONTINUOUS = "continuous"
    DISCRETE = "discrete"


class AffinityProvenance(StrEnum):
    CLOSED_FORM = "closed-form"
    QUADRATURE = "quadrature"
    MONTE_CARLO = "monte-carlo"
    EXACT_SUM = "exact-sum"


class AffinityMode(StrEnum):
    CLOSED_FORM = "closed-form"
    QUADRATURE = "quadrature"
    MONTE_CARLO = "monte-carlo"
    EXACT_SUM = "exact-sum"


@dataclass(frozen=True)
class Support:
    """연속 박스 또는 유한 이산 집합"""
    kind: SupportKind
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    size: Optional[int] = None

    @classmethod
    def continuous(cls, dimension: int, lower: Any = None, upper: Any = None) -> "Support":
        lo = np.full(dimension, -np.inf) if lower is None else np.broadcast_to(np.asarray(lower, float), (dimension,)).copy()
        hi = np.full(dimension, np.inf) if upper is None else np.broadcast_to(np.asarray(upper, float), (dimension,)).copy()
        if np.any(lo >= hi):
            raise ValueError("support 하한은 상한보다 작아야 합니다")
        return cls(SupportKind.CONTINUOUS, lo, hi, None)

    @classmethod
    def discrete(cls, size: int) -> "Support":
        if size < 1:
            raise ValueError("이산 support 크기는 1 이상이어야 합니다")
        return cls(SupportKind.DISCRETE, None, None, int(size))

    def contains(self, point: Any) -> bool:
        if self.kind == SupportKind.DISCRETE:
            idx = int(point)
            return 0 <= idx < self.size
        x = np.atleast_1d(np.asarray(point, float))
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))


@dataclass(frozen=True, eq=False)
class GaussianForm:
    """가우시안 밀도의 (평균, 공분산). 공분산이 고정이면 cov, 상태 의존이면 cov_fn"""
    mean_fn: Callable[[Any], np.ndarray]
    cov: Optional[np.ndarray] = None
    cov_fn: Optional[Callable[[Any], np.ndarray]] = None

    @property
    def fixed_cov(self) -> bool:
        return self.cov is not None

    def params(self, context: Any = None) -> Tuple[np.ndarray, np.ndarray]:
        mean = np.atleast_1d(np.asarray(self.mean_fn(context), float))
        cov = self.cov if self.cov is not None else self.cov_fn(context)
        return mean, np.atleast_2d(np.asarray(cov, float))


def as_points(x: Any, dimension: int) -> Tuple[np.ndarray, bool]:
    """점 하나 (d,) 또는 배치 (n, d)를 (n, d) 배열로, 단일 여부와 함께 반환"""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        return arr.reshape(1, 1), True
    if arr.ndim == 1:
        if dimension == 1 and arr.shape[0] != 1:
            return arr.reshape(-1, 1), False
        if arr.shape[0] != dimension:
            raise DimensionMismatchError(f"점의 차원 {arr.shape[0]} != {dimension}")
        return arr.reshape(1, dimension), True
    if arr.ndim == 2 and arr.shape[1] == dimension:
        return arr, False
    raise DimensionMismatchError(f"점 배열 형태 {arr.shape}가 차원 {dimension}과 맞지 않습니다")


def finish(values: np.ndarray, single: bool) -> Union[float, np.ndarray]:
    return float(values[0]) if single else values


@dataclass(frozen=True, eq=False)
class Density:
    """평가 가능한 (조건부일 수 있는) 밀도/pmf. context는 현재 상태"""
    logpdf_fn: Callable[[Any, Any], Any]
    dimension: int
    support: Support
    sampler_fn: Optional[Callable[[np.random.Generator, Any, Optional[int]], Any]] = None
    normalized: bool = True
    state_free: bool = True
    gaussian: Optional[GaussianForm] = None
    name: str = "density"

    @property
    def is_discrete(self) -> bool:
        return self.support.kind == SupportKind.DISCRETE

    @property
    def samplable(self) -> bool:
        return self.sampler_fn is not None

    def log_pdf(self, point: Any, context: Any = None) -> Any:
        return self.logpdf_fn(point, context)

    def pdf(self, point: Any, context: Any = None) -> Any:
        return np.exp(self.log_pdf(point, context))

    def sample(self, rng: np.random.Generator, context: Any = None, size: Optional[int] = None) -> Any:
        if self.sampler_fn is None:
            raise CapabilityError(f"'{self.name}' 밀도는 샘플러가 없습니다")
        return self.sampler_fn(rng, context, size)


def finite_density(pmf: Sequence[float], name: str = "pmf") -> Density:
    """상태 0..n−1 위의 고정 pmf"""
    probs = np.asarray(pmf, float)
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-10:
        raise ValueError("pmf는 음이 아니고 합이 1이어야 합니다")
    with np.errstate(divide='ignore'):
        logProbs = np.log(probs)

    def logpdf(point, context):
        return logProbs[np.asarray(point, dtype=int)]

    def sampler(rng, context, size):
        return rng.choice(probs.size, size=size, p=probs)

    return Density(logpdf, 1, Support.discrete(probs.size), sampler, True, True, None, name)


def finite_conditional_density(rows: Any, name: str = "kernel") -> Density:
    """행 x가 f(·|x)인 조건부 pmf (context = 현재 상태 인덱스)"""
    matrix = np.asarray(rows, float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DimensionMismatchError("조건부 pmf는 정사각 행렬이어야 합니다")
    if np.any(matrix < 0) or np.max(np.abs(matrix.sum(axis=1) - 1.0)) > 1e-10:
        raise ValueError("각 행은 pmf여야 합니다")
    with np.errstate(divide='ignore'):
        logMatrix = np.log(matrix)

    def logpdf(point, context):
        return logMatrix[int(context), np.asarray(point, dtype=int)]

    def sampler(rng, context, size):
        return rng.choice(matrix.shape[1], size=size, p=matrix[int(context)])

    return Density(logpdf, 1, Support.discrete(matrix.shape[0]), sampler, True, False, None, name)


@dataclass(frozen=True)
class Affinity:
    """⟨√f, √g⟩ 값과 출처"""
    value: float
    provenance: AffinityProvenance
    n_samples: Optional[int] = None
    std_error: Optional[float] = None
    estimate: Optional[float] = None

    def __post_init__(self):
        if not (0.0 <= self.value <= 1.0) or math.isnan(self.value):
            raise ValueError(f"affinity 값은 [0, 1] 범위여야 합니다: {self.value}")

    @property
    def theta(self) -> float:
        return float(np.arccos(self.value))

    @property
    def is_degenerate(self) -> bool:
        return self.value >= 1.0 - DEGENERATE_TOL


@dataclass(frozen=True, eq=False)
class DirectionSet:
    """방향 밀도 g_1..g_k 와 가중치 a"""
    directions: Tuple[Density, ...]
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'directions', tuple(self.directions))
        weights = np.asarray(self.weights, float)
        object.__setattr__(self, 'weights', weights)
        if len(self.directions) < 1:
            raise ValueError("방향 밀도가 최소 1개 필요합니다")
        if weights.shape != (len(self.directions),):
            raise DimensionMismatchError("가중치 개수가 방향 수와 다릅니다")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("가중치는 음이 아니고 합이 1이어야 합니다")

    @classmethod
    def uniform(cls, directions: Sequence[Density]) -> "DirectionSet":
        k = len(directions)
        return cls(tuple(directions), np.full(k, 1.0 / k) if k else np.zeros(0))

    def __len__(self) -> int:
        return len(self.directions)


# ---------------------------------------------------------------------------
# 구적 격자와 격자 함수
# ---------------------------------------------------------------------------

def _trapezoid_weights(axis: np.ndarray) -> np.ndarray:
    dx = np.diff(axis)
    weights = np.zeros_like(axis)
    weights[:-1] += dx / 2.0
    weights[1:] += dx / 2.0
    return weights


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    """박스 위 사다리꼴 격자 (축별 텐서곱). tail_correction은 1차원 대칭 격자의 대수적 꼬리 보정"""
    axes: Tuple[np.ndarray, ...]
    tail_correction: bool = False
    points: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        axes = tuple(np.asarray(a, float) for a in self.axes)
        for a in axes:
            if a.ndim != 1 or a.size < 2 or np.any(np.diff(a) <= 0):
                raise ValueError("격자 축은 엄격히 증가해야 합니다")
        if self.tail_correction and len(axes) != 1:
            raise ValueError("꼬리 보정은 1차원 격자에서만 지원합니다")
        object.__setattr__(self, 'axes', axes)
        mesh = np.meshgrid(*axes, indexing='ij')
        object.__setattr__(self, 'points', np.stack([m.ravel() for m in mesh], axis=1))
        weights = reduce(np.multiply.outer, [_trapezoid_weights(a) for a in axes])
        object.__setattr__(self, 'weights', np.asarray(weights).ravel())

    @classmethod
    def uniform(cls, lower: Any, upper: Any, n: int) -> "QuadratureGrid":
        lower = np.atleast_1d(np.asarray(lower, float))
        upper = np.atleast_1d(np.asarray(upper, float))
        return cls(tuple(np.linspace(lo, hi, n) for lo, hi in zip(lower, upper)))

    @classmethod
    def symmetric(cls, half_width: float, n: int, tail_correction: bool = True) -> "QuadratureGrid":
        """두꺼운 꼬리용 대칭 격자 [−L, L]"""
        return cls((np.linspace(-half_width, half_width, n),), tail_correction)

    @classmethod
    def covering(cls, densities: Sequence[Density], n: int, mass: float = 1e-8) -> "QuadratureGrid":
        """가우시안 밀도들의 질량 1−mass 이상을 덮는 격자"""
        lowers, uppers = [], []
        for d in densities:
            if d.gaussian is None or not d.state_free:
                raise CapabilityError(f"'{d.name}'은 자동 격자를 만들 수 없습니다 (가우시안 형태 필요)")
            mean, cov = d.gaussian.params(None)
            z = norm.isf(mass / (2.0 * mean.size))
            sd = np.sqrt(np.diag(cov))
            lowers.append(mean - z * sd)
            uppers.append(mean + z * sd)
        return cls.uniform(np.min(lowers, axis=0), np.max(uppers, axis=0), n)

    @property
    def dimension(self) -> int:
        return len(self.axes)

    def _tail_mass(self, values: np.ndarray) -> float:
        x = self.axes[0]
        total = 0.0
        for edge in (0, x.size - 1):
            xe = x[edge]
            if xe == 0.0:
                continue
            inner = int(np.clip(np.searchsorted(x, xe / 2.0), 1, x.size - 2))
            ve, vi = values[edge], values[inner]
            if ve <= 0.0 or vi <= 0.0:
                continue
            alpha = math.log(vi / ve) / math.log(abs(xe) / abs(x[inner]))
            if alpha <= 1.0 + 1e-9:
                raise CoverageError(f"꼬리가 적분 불가능합니다 (지수 {alpha:.3f})")
            total += ve * abs(xe) / (alpha - 1.0)
        return total

    def integrate(self, values: np.ndarray) -> float:
        values = np.asarray(values, float)
        total = float(np.dot(self.weights, values))
        if self.tail_correction:
            total += self._tail_mass(values)
        return total

    def cdf(self, values: np.ndarray) -> np.ndarray:
        """1차원 격자점에서의 누적분포 (꼬리 보정 포함, 전체 질량으로 정규화)"""
        if self.dimension != 1:
            raise ValueError("cdf는 1차원 격자에서만 계산합니다")
        x = self.axes[0]
        values = np.asarray(values, float)
        steps = np.diff(x) * (values[1:] + values[:-1]) / 2.0
        cumulative = np.concatenate([[0.0], np.cumsum(steps)])
        leftTail = rightTail = 0.0
        if self.tail_correction:
            both = self._tail_mass(values)
            leftOnly = self._tail_mass(np.where(x < 0, values, values * 0.0)) if x[0] < 0 else 0.0
            leftTail, rightTail = leftOnly, both - leftOnly
        total = leftTail + cumulative[-1] + rightTail
        return (leftTail + cumulative) / total


@dataclass(frozen=True, eq=False)
class GridFunction:
    """격자 위 함수 (제곱근 점 또는 접벡터)"""
    grid: QuadratureGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, float)
        if values.shape != (self.grid.points.shape[0],):
            raise DimensionMismatchError("격자 함수 값 개수가 격자점 수와 다릅니다")
        object.__setattr__(self, 'values', values)

    @property
    def weights(self) -> np.ndarray:
        return self.grid.weights

    def inner(self, other: "GridFunction") -> float:
        return float(np.sum(self.weights * self.values * other.values))

    def norm(self) -> float:
        return math.sqrt(max(self.inner(self), 0.0))

    def scaled(self, factor: float) -> "GridFunction":
        return GridFunction(self.grid, self.values * factor)


def sqrt_representation(density: Density, grid: QuadratureGrid, context: Any = None,
                        renormalize: bool = True) -> GridFunction:
    """밀도 f → 격자 위 √f (단위 노름으로 정규화)"""
    values = np.exp(0.5 * np.asarray(density.log_pdf(grid.points, context), float))
    rho = GridFunction(grid, values)
    if renormalize:
        rho = rho.scaled(1.0 / rho.norm())
    return rho


def _require_unit(rho: GridFunction, label: str) -> None:
    if abs(rho.norm() - 1.0) > UNIT_TOL:
        raise ValueError(f"{label}는 단위 노름이어야 합니다 (‖·‖ = {rho.norm():.12f})")


def sphere_exp_map(rho: GridFunction, tangent: GridFunction) -> GridFunction:
    """ρ에서 접벡터 방향으로 측지선 이동"""
    _require_unit(rho, "rho")
    if abs(tangent.inner(rho)) > UNIT_TOL:
        raise ValueError("접벡터가 rho와 직교하지 않습니다")
    length = tangent.norm()
    if length < 1e-15:
        return rho
    return GridFunction(rho.grid, math.cos(length) * rho.values + math.sin(length) * tangent.values / length)


def sphere_log_map(rho1: GridFunction, rho2: GridFunction) -> GridFunction:
    """ρ1의 접공간으로 ρ2를 보내는 역지수 사상"""
    _require_unit(rho1, "rho1")
    _require_unit(rho2, "rho2")
    cosTheta = float(np.clip(rho1.inner(rho2), -1.0, 1.0))
    theta = math.acos(cosTheta)
    if theta < 1e-12:
        return GridFunction(rho1.grid, np.zeros_like(rho1.values))
    return GridFunction(rho1.grid, theta / math.sin(theta) * (rho2.values - cosTheta * rho1.values))


def parallel_transport(tangent: GridFunction, rho1: GridFunction, rho2: GridFunction) -> GridFunction:
    """T_ρ1 → T_ρ2 평행이동 (‖ρ1+ρ2‖² 로 나눔)"""
    _require_unit(rho1, "rho1")
    _require_unit(rho2, "rho2")
    total = rho1.values + rho2.values
    totalNorm2 = float(np.sum(rho1.weights * total * total))
    if totalNorm2 < 1e-14:
        raise ValueError("rho1 = −rho2 인 경우 평행이동이 정의되지 않습니다")
    coef = 2.0 * tangent.inner(rho2) / totalNorm2
    return GridFunction(tangent.grid, tangent.values - coef * total)


def geodesic_path(rho1: GridFunction, rho2: GridFunction, r: float) -> GridFunction:
    """ρ1에서 ρ2로 가는 측지선 위 r ∈ [0, 1] 지점"""
    if not 0.0 <= r <= 1.0:
        raise ValueError("r은 [0, 1] 범위여야 합니다")
    tangent = sphere_log_map(rho1, rho2)
    return sphere_exp_map(rho1, tangent.scaled(r))


# ---------------------------------------------------------------------------
# affinity
# ---------------------------------------------------------------------------

def spd_cholesky(cov: np.ndarray, label: str) -> np.ndarray:
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise DimensionMismatchError(f"{label} 공분산이 정사각 행렬이 아닙니다")
    scale = max(float(np.max(np.abs(cov))), 1e-300)
    if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12 * scale):
        raise IllConditionedInputError(f"{label} 공분산이 대칭이 아닙니다")
    try:
        return cholesky(cov, lower=True)
    except LinAlgError as e:
        raise IllConditionedInputError(f"{label} 공분산이 양정치가 아닙니다: {e}")


def _gaussian_inputs(mu: Any, cov: Any) -> Tuple[np.ndarray, np.ndarray]:
    mu = np.atleast_1d(np.asarray(mu, float))
    cov = np.atleast_2d(np.asarray(cov, float))
    if cov.shape != (mu.size, mu.size):
        raise DimensionMismatchError(f"평균 차원 {mu.size}과 공분산 형태 {cov.shape}가 다릅니다")
    return mu, cov


def gaussian_affinity(mu1: Any, cov1: Any, mu2: Any, cov2: Any) -> Affinity:
    """두 가우시안의 Bhattacharyya affinity (닫힌 형태)"""
    mu1, cov1 = _gaussian_inputs(mu1, cov1)
    mu2, cov2 = _gaussian_inputs(mu2, cov2)
    if mu1.size != mu2.size:
        raise DimensionMismatchError(f"차원 불일치: {mu1.size} != {mu2.size}")
    L1 = spd_cholesky(cov1, "첫째")
    L2 = spd_cholesky(cov2, "둘째")
    Lbar = spd_cholesky((cov1 + cov2) / 2.0, "평균")
    logdet1 = 2.0 * np.sum(np.log(np.diag(L1)))
    logdet2 = 2.0 * np.sum(np.log(np.diag(L2)))
    logdetBar = 2.0 * np.sum(np.log(np.diag(Lbar)))
    sol = solve_triangular(Lbar, mu1 - mu2, lower=True)
    distance = float(sol @ sol) / 8.0 + 0.5 * (logdetBar - 0.5 * (logdet1 + logdet2))
    return Affinity(min(math.exp(-distance), 1.0), AffinityProvenance.CLOSED_FORM)


class GaussianAffinityPlan:
    """공분산이 고정된 두 가우시안: Σ̄ 분해를 한 번만 하고 평균만 바꿔 평가"""

    def __init__(self, cov_f: np.ndarray, mean_g: np.ndarray, cov_g: np.ndarray):
        mean_g, cov_g = _gaussian_inputs(mean_g, cov_g)
        cov_f = np.atleast_2d(np.asarray(cov_f, float))
        if cov_f.shape != cov_g.shape:
            raise DimensionMismatchError("공분산 차원이 다릅니다")
        Lf = spd_cholesky(cov_f, "base")
        Lg = spd_cholesky(cov_g, "direction")
        self._Lbar = spd_cholesky((cov_f + cov_g) / 2.0, "평균")
        self._meanG = mean_g
        self._const = 0.5 * (2.0 * np.sum(np.log(np.diag(self._Lbar)))
                             - np.sum(np.log(np.diag(Lf))) - np.sum(np.log(np.diag(Lg))))

    def affinity(self, mean_f: np.ndarray) -> Affinity:
        sol = solve_triangular(self._Lbar, np.atleast_1d(mean_f) - self._meanG, lower=True, check_finite=False)
        distance = float(sol @ sol) / 8.0 + self._const
        return Affinity(min(math.exp(-distance), 1.0), AffinityProvenance.CLOSED_FORM)


def importance_affinity(f: Density, g: Density, n: int, rng: np.random.Generator,
                        context: Any = None) -> Affinity:
    """f 표본으로 ⟨√f, √g⟩ 중요도 추정 (표준오차 포함)"""
    if n < 2:
        raise ValueError("표본 수 n은 2 이상이어야 합니다")
    draws = f.sample(rng, context, size=n)
    logF = np.asarray(f.log_pdf(draws, context), float)
    logG = np.asarray(g.log_pdf(draws, context), float)
    with np.errstate(invalid='ignore', over='ignore'):
        ratios = np.exp(0.5 * (logG - logF))
    finite = np.isfinite(ratios)
    if not np.all(finite):
        logger.warning(f"⚠️ 중요도 비율 {int(np.sum(~finite))}/{n}개가 유한하지 않아 0으로 둡니다")
    ratios = np.where(finite, ratios, 0.0)
    if not np.any(ratios > 0.0):
        raise DegenerateSupportError("모든 중요도 비율이 0입니다 (support 불일치)")
    estimate = float(np.mean(ratios))
    stdError = float(np.std(ratios, ddof=1) / math.sqrt(n))
    value = float(np.clip(estimate, AFFINITY_FLOOR, 1.0 - DEGENERATE_TOL))
    return Affinity(value, AffinityProvenance.MONTE_CARLO, n, stdError, estimate)


def quadrature_affinity(f: Density, g: Density, grid: QuadratureGrid, context: Any = None,
                        coverage_tol: float = 1e-6) -> Affinity:
    """격자 구적으로 Σ w √(f g)"""
    logF = np.asarray(f.log_pdf(grid.points, context), float)
    logG = np.asarray(g.log_pdf(grid.points, context), float)
    massF = grid.integrate(np.exp(logF))
    massG = grid.integrate(np.exp(logG))
    if massF < 1.0 - coverage_tol or massG < 1.0 - coverage_tol:
        raise CoverageError(f"격자 질량 부족: ∫f = {massF:.10f}, ∫g = {massG:.10f}")
    value = grid.integrate(np.exp(0.5 * (logF + logG)))
    return Affinity(min(value, 1.0), AffinityProvenance.QUADRATURE)


def discrete_affinity(f_pmf: Any, g_pmf: Any) -> Affinity:
    """같은 유한 support 위 두 pmf의 정확한 합"""
    f_pmf = np.asarray(f_pmf, float)
    g_pmf = np.asarray(g_pmf, float)
    if f_pmf.shape != g_pmf.shape:
        raise DimensionMismatchError(f"support 불일치: {f_pmf.shape} != {g_pmf.shape}")
    value = float(np.sum(np.sqrt(f_pmf * g_pmf)))
    return Affinity(min(value, 1.0), AffinityProvenance.EXACT_SUM)


# ---------------------------------------------------------------------------
# 잔차 밀도 h 와 섭동 밀도
# ---------------------------------------------------------------------------

def _log_abs_diff(u: Any, v: Any) -> Any:
    """log|e^u − e^v| (둘 다 −∞면 −∞)"""
    u = np.asarray(u, float)
    v = np.asarray(v, float)
    top = np.maximum(u, v)
    with np.errstate(invalid='ignore', divide='ignore'):
        gap = -np.abs(u - v)
        out = top + np.log(-np.expm1(gap))
    return np.where(np.isneginf(top), -np.inf, out)


def log_residual(log_f: Any, log_g: Any, aff_value: float) -> Any:
    """log h = 2 log|√g − a√f| − log(1 − a²)"""
    with np.errstate(divide='ignore'):
        logA = math.log(aff_value) if aff_value > 0.0 else -np.inf
    diff = _log_abs_diff(0.5 * np.asarray(log_g, float), logA + 0.5 * np.asarray(log_f, float))
    return 2.0 * diff - math.log1p(-aff_value * aff_value)


def _require_nondegenerate(aff: Affinity) -> None:
    if aff.is_degenerate:
        raise DegenerateDirectionError(
            f"affinity {aff.value:.12f} ≥ 1 − {DEGENERATE_TOL}: h가 정의되지 않으므로 f로 대체해야 합니다")


def residual_envelope_bound(aff: Affinity) -> float:
    """기각 샘플러 상수 M = (1 + cos²θ) / sin²θ"""
    c2 = aff.value * aff.value
    return (1.0 + c2) / (1.0 - c2)


def h_weight(theta: float, epsilon: float) -> float:
    """혼합 제안에서 h 성분 가중치 sin²(εθ)"""
    return math.sin(epsilon * theta) ** 2


def residual_density_h(f: Density, g: Density, aff: Affinity) -> Density:
    """h(y) = (√g − a√f)² / (1 − a²)"""
    _require_nondegenerate(aff)
    a = aff.value

    def logpdf(point, context):
        return log_residual(f.log_pdf(point, context), g.log_pdf(point, context), a)

    sampler = None
    if f.samplable and g.samplable:
        def sampler(rng, context, size):
            if size is None:
                return sample_residual_h(f, g, aff, rng, context)[0]
            return sample_residual_h_many(f, g, aff, rng, size, context)[0]

    return Density(logpdf, f.dimension, f.support, sampler,
                   normalized=f.normalized and g.normalized,
                   state_free=f.state_free and g.state_free,
                   name=f"h[{g.name}|{f.name}]")


def exact_perturbed_pdf(f: Density, g: Density, aff: Affinity, epsilon: float, point: Any,
                        context: Any = None) -> Any:
    """교차항을 포함한 정확한 섭동 밀도 cos²f + sin²h + sin(2εθ)√f ζ"""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon은 [0, 1] 범위여야 합니다")
    _require_nondegenerate(aff)
    a = aff.value
    fv = np.exp(np.asarray(f.log_pdf(point, context), float))
    gv = np.exp(np.asarray(g.log_pdf(point, context), float))
    zeta = (np.sqrt(gv) - a * np.sqrt(fv)) / math.sqrt(1.0 - a * a)
    t = epsilon * aff.theta
    value = math.cos(t) ** 2 * fv + math.sin(t) ** 2 * zeta ** 2 + math.sin(2.0 * t) * np.sqrt(fv) * zeta
    return float(value) if np.ndim(value) == 0 else value


def _select(mask: np.ndarray, first: np.ndarray, second: np.ndarray) -> np.ndarray:
    shape = (mask.size,) + (1,) * (np.ndim(first) - 1)
    return np.where(mask.reshape(shape), first, second)


def _residual_block(f: Density, g: Density, a: float, rng: np.random.Generator, k: int,
                    context: Any) -> Tuple[np.ndarray, np.ndarray]:
    """envelope u = (g + a² f)/(1 + a²)에서 k개를 뽑고 수락 여부 반환"""
    c2 = a * a
    fromG = rng.random(k) < 1.0 / (1.0 + c2)
    draws = _select(fromG, np.asarray(g.sample(rng, context, size=k)), np.asarray(f.sample(rng, context, size=k)))
    logF = np.asarray(f.log_pdf(draws, context), float)
    logG = np.asarray(g.log_pdf(draws, context), float)
    logA = math.log(a) if a > 0.0 else -np.inf
    # h / (M u) = (√g − a√f)² / (g + a² f)
    with np.errstate(invalid='ignore'):
        logAccept = 2.0 * _log_abs_diff(0.5 * logG, logA + 0.5 * logF) - np.logaddexp(logG, 2.0 * logA + logF)
    with np.errstate(divide='ignore'):
        accepted = np.log(rng.random(k)) < logAccept
    return draws, accepted


def sample_residual_h(f: Density, g: Density, aff: Affinity, rng: np.random.Generator,
                      context: Any = None, max_attempts: int = 1_000_000) -> Tuple[Any, int]:
    """h 기각 샘플러. (표본, 시도 횟수) 반환"""
    _require_nondegenerate(aff)
    block = int(min(max(8, math.ceil(2.0 * residual_envelope_bound(aff))), 4096))
    attempts = 0
    while attempts < max_attempts:
        k = min(block, max_attempts - attempts)
        draws, accepted = _residual_block(f, g, aff.value, rng, k, context)
        hits = np.flatnonzero(accepted)
        if hits.size:
            return draws[hits[0]], attempts + int(hits[0]) + 1
        attempts += k
    raise EnvelopeFailureError(f"h 기각 샘플러가 {max_attempts}회 안에 수락하지 못했습니다", attempts)


def sample_residual_h_many(f: Density, g: Density, aff: Affinity, rng: np.random.Generator, n: int,
                           context: Any = None, block: int = 65_536) -> Tuple[np.ndarray, int]:
    """h에서 n개 표본과 총 시도 횟수"""
    _require_nondegenerate(aff)
    chunks: List[np.ndarray] = []
    collected = 0
    attempts = 0
    while collected < n:
        draws, accepted = _residual_block(f, g, aff.value, rng, block, context)
        hits = np.flatnonzero(accepted)
        need = n - collected
        if hits.size >= need:
            chunks.append(draws[hits[:need]])
            attempts += int(hits[need - 1]) + 1
            collected = n
        else:
            chunks.append(draws[hits])
            attempts += block
            collected += hits.size
    return np.concatenate(chunks, axis=0), attempts


def discrete_residual_pmf(f_pmf: Any, g_pmf: Any, aff_value: float) -> np.ndarray:
    f_pmf = np.asarray(f_pmf, float)
    g_pmf = np.asarray(g_pmf, float)
    return (np.sqrt(g_pmf) - aff_value * np.sqrt(f_pmf)) ** 2 / (1.0 - aff_value * aff_value)


def discrete_mixture_pmf(f_pmf: Any, g_pmf: Any, epsilon: float) -> Tuple[np.ndarray, Affinity]:
    """유한 support 위 φ_ε = cos²(εθ) f + sin²(εθ) h"""
    f_pmf = np.asarray(f_pmf, float)
    aff = discrete_affinity(f_pmf, g_pmf)
    if aff.is_degenerate or epsilon == 0.0:
        return f_pmf.copy(), aff
    weight = h_weight(aff.theta, epsilon)
    return (1.0 - weight) * f_pmf + weight * discrete_residual_pmf(f_pmf, g_pmf, aff.value), aff


# ---------------------------------------------------------------------------
# 기하 제안분포
# ---------------------------------------------------------------------------

ResidualSampler = Callable[[np.random.Generator, Any, Affinity], Tuple[Any, int]]


@dataclass(frozen=True)
class ProposalDraw:
    point: Any
    direction: int
    from_residual: bool
    attempts: int = 0


@dataclass(frozen=True, eq=False)
class GeometricProposal:
    """φ_ε(·|x) = Σ a_i [cos²(εθ_i) f + sin²(εθ_i) h_i]"""
    base: Density
    directions: DirectionSet
    epsilon: float
    affinity_mode: AffinityMode = AffinityMode.CLOSED_FORM
    mc_samples: int = 1000
    mc_seed: int = 0
    grid: Optional[QuadratureGrid] = None
    local_half_width: float = 12.0
    local_points: int = 2001
    memoize: bool = True
    max_attempts: int = 1_000_000
    residual_samplers: Optional[Tuple[Optional[ResidualSampler], ...]] = None
    _cache: Dict[Any, Tuple[Affinity, ...]] = field(default_factory=dict, init=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)
    _plans: Tuple[Optional[GaussianAffinityPlan], ...] = field(default=(), init=False, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon은 [0, 1] 범위여야 합니다: {self.epsilon}")
        if self.mc_seed < 0:
            raise ValueError(f"mc_seed는 음이 아니어야 합니다: {self.mc_seed}")
        for g in self.directions.directions:
            if g.dimension != self.base.dimension:
                raise DimensionMismatchError(f"방향 '{g.name}' 차원이 base와 다릅니다")
            if g.is_discrete != self.base.is_discrete:
                raise DimensionMismatchError("이산/연속 support가 섞여 있습니다")
        if self.base.is_discrete:
            object.__setattr__(self, 'affinity_mode', AffinityMode.EXACT_SUM)
        elif self.affinity_mode == AffinityMode.EXACT_SUM:
            raise CapabilityError("exact-sum affinity는 이산 support에서만 사용합니다")
        if self.residual_samplers is not None and len(self.residual_samplers) != len(self.directions):
            raise DimensionMismatchError("residual_samplers 개수가 방향 수와 다릅니다")

        plans: List[Optional[GaussianAffinityPlan]] = []
        if self.affinity_mode == AffinityMode.CLOSED_FORM:
            if self.base.gaussian is None:
                raise CapabilityError("닫힌 형태 affinity는 가우시안 base가 필요합니다")
            for g in self.directions.directions:
                if g.gaussian is None:
                    raise CapabilityError(f"방향 '{g.name}'이 가우시안이 아니어서 닫힌 형태를 쓸 수 없습니다")
                if self.base.gaussian.fixed_cov and g.state_free and g.gaussian.fixed_cov:
                    meanG, covG = g.gaussian.params(None)
                    plans.append(GaussianAffinityPlan(self.base.gaussian.cov, meanG, covG))
                else:
                    plans.append(None)
        object.__setattr__(self, '_plans', tuple(plans))

    @property
    def state_free(self) -> bool:
        return self.base.state_free and all(g.state_free for g in self.directions.directions)

    def _key(self, state: Any) -> Any:
        if self.state_free:
            return None
        return np.asarray(state).tobytes()

    def _local_quadrature(self, g: Density, state: Any) -> Affinity:
        if self.base.dimension != 1:
            raise CapabilityError("격자 없는 구적 affinity는 1차원 base에서만 지원합니다")
        if self.base.gaussian is not None:
            mean, cov = self.base.gaussian.params(state)
            center, sd = float(mean[0]), math.sqrt(float(cov[0, 0]))
            lower, upper = center - self.local_half_width * sd, center + self.local_half_width * sd
        else:
            lower, upper = float(self.base.support.lower[0]), float(self.base.support.upper[0])
            if not (np.isfinite(lower) and np.isfinite(upper)):
                raise CapabilityError("국소 격자를 정할 수 없습니다 (가우시안 base 또는 유한 support 필요)")
        grid = QuadratureGrid.uniform(lower, upper, self.local_points)
        logF = np.asarray(self.base.log_pdf(grid.points, state), float)
        logG = np.asarray(g.log_pdf(grid.points, state), float)
        massF = grid.integrate(np.exp(logF))
        if massF < 1.0 - 1e-6:
            raise CoverageError(f"국소 격자 질량 부족: ∫f = {massF:.10f}")
        value = grid.integrate(np.exp(0.5 * (logF + logG)))
        return Affinity(float(np.clip(value, 0.0, 1.0)), AffinityProvenance.QUADRATURE)

    def _affinity_rng(self, state: Any) -> np.random.Generator:
        """(mc_seed, 상태)로 정해지는 affinity 전용 난수열"""
        if self._key(state) is None:
            return np.random.default_rng(self.mc_seed)
        words = np.frombuffer(np.asarray(state, dtype=float).tobytes(), dtype=np.uint32)
        return np.random.default_rng([self.mc_seed, *words.tolist()])

    def _affinity(self, i: int, state: Any) -> Affinity:
        g = self.directions.directions[i]
        mode = self.affinity_mode
        if mode == AffinityMode.EXACT_SUM:
            support = np.arange(self.base.support.size)
            return discrete_affinity(self.base.pdf(support, state), g.pdf(support, state))
        if mode == AffinityMode.CLOSED_FORM:
            plan = self._plans[i]
            if plan is not None:
                return plan.affinity(self.base.gaussian.params(state)[0])
            meanF, covF = self.base.gaussian.params(state)
            meanG, covG = g.gaussian.params(state)
            return gaussian_affinity(meanF, covF, meanG, covG)
        if mode == AffinityMode.QUADRATURE:
            if self.grid is not None:
                return quadrature_affinity(self.base, g, self.grid, context=state)
            return self._local_quadrature(g, state)
        return importance_affinity(self.base, g, self.mc_samples, self._affinity_rng(state), context=state)

    def affinities(self, state: Any) -> Tuple[Affinity, ...]:
        """방향별 affinity. 값은 상태만으로 정해지므로 여러 체인이 캐시를 공유해도 같다"""
        key = self._key(state)
        useCache = self.memoize or key is None
        if useCache:
            with self._lock:
                cached = self._cache.get(key)
            if cached is not None:
                return cached
        affs = tuple(self._affinity(i, state) for i in range(len(self.directions)))
        if useCache:
            with self._lock:
                if len(self._cache) >= MEMO_LIMIT:
                    self._cache.clear()
                affs = self._cache.setdefault(key, affs)
        return affs

    def angles(self, state: Any) -> np.ndarray:
        return np.array([aff.theta for aff in self.affinities(state)])

    def _term(self, i: int, aff: Affinity, logF: float, state: Any, candidate: Any) -> float:
        if self.epsilon == 0.0 or aff.is_degenerate:
            return logF
        t = self.epsilon * aff.theta
        logG = self.directions.directions[i].log_pdf(candidate, state)
        logH = float(log_residual(logF, logG, aff.value))
        with np.errstate(divide='ignore'):
            return float(np.logaddexp(2.0 * math.log(math.cos(t)) + logF, 2.0 * math.log(math.sin(t)) + logH))

    def direction_log_pdf(self, i: int, state: Any, candidate: Any) -> float:
        """log φ_{i,ε}(candidate | state)"""
        logF = float(self.base.log_pdf(candidate, state))
        if self.epsilon == 0.0:
            return logF
        return self._term(i, self.affinities(state)[i], logF, state, candidate)

    def log_pdf(self, state: Any, candidate: Any) -> float:
        """log φ_ε(candidate | state)"""
        logF = float(self.base.log_pdf(candidate, state))
        if self.epsilon == 0.0:
            return logF
        affs = self.affinities(state)
        weights = self.directions.weights
        terms = [math.log(weights[i]) + self._term(i, affs[i], logF, state, candidate)
                 for i in range(len(affs)) if weights[i] > 0.0]
        return float(logsumexp(terms))

    def residual_pmf(self, i: int, state: Any) -> np.ndarray:
        """이산 support 위 h_i(·|state)"""
        support = np.arange(self.base.support.size)
        aff = self.affinities(state)[i]
        _require_nondegenerate(aff)
        return discrete_residual_pmf(self.base.pdf(support, state),
                                     self.directions.directions[i].pdf(support, state), aff.value)

    def draw(self, state: Any, rng: np.random.Generator, direction: Optional[int] = None) -> ProposalDraw:
        k = len(self.directions)
        if direction is None:
            direction = 0 if k == 1 else int(rng.choice(k, p=self.directions.weights))
        if self.epsilon == 0.0:
            return ProposalDraw(self.base.sample(rng, state), direction, False, 0)
        aff = self.affinities(state)[direction]
        if aff.is_degenerate or rng.random() < math.cos(self.epsilon * aff.theta) ** 2:
            return ProposalDraw(self.base.sample(rng, state), direction, False, 0)
        if self.base.is_discrete:
            probs = self.residual_pmf(direction, state)
            return ProposalDraw(int(rng.choice(probs.size, p=probs / probs.sum())), direction, True, 1)
        tuned = self.residual_samplers[direction] if self.residual_samplers else None
        if tuned is not None:
            point, attempts = tuned(rng, state, aff)
        else:
            point, attempts = sample_residual_h(self.base, self.directions.directions[direction], aff, rng,
                                                context=state, max_attempts=self.max_attempts)
        return ProposalDraw(point, direction, True, attempts)


def geometric_mixture_pdf(prop: GeometricProposal, current: Any, candidate: Any) -> float:
    """log φ_ε(candidate | current)"""
    return prop.log_pdf(current, candidate)


def sample_geometric_proposal(prop: GeometricProposal, current: Any, rng: np.random.Generator) -> Any:
    return prop.draw(current, rng).point
