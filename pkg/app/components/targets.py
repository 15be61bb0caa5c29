"""내장 목표분포: 정규/t/Cauchy/혼합 밀도, 로지스틱 사후분포, 6-모드 목표, 조율된 h 샘플러"""
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.special import expit, gammaln, logsumexp
from scipy.stats import norm
from strenum import StrEnum

from app.components.errors import CapabilityError, DimensionMismatchError, EnvelopeFailureError
from app.components.geometry import (
    Affinity,
    Density,
    GaussianForm,
    ResidualSampler,
    Support,
    SupportKind,
    as_points,
    finish,
    spd_cholesky,
)
from app.utils.logging_utils import setupLogging

logger = setupLogging()

LOG_2PI = math.log(2.0 * math.pi)


class DensityKind(StrEnum):
    NORMAL = "normal"
    STUDENT_T = "student_t"
    CAUCHY = "cauchy"
    MIXTURE = "mixture"


@dataclass(frozen=True, eq=False)
class TargetModel:
    """비정규화 log ψ 와 (있으면) 도함수들"""
    log_target_fn: Callable[[Any], Any]
    dimension: int
    support: Support
    gradient_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    hessian_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    third_order_fn: Optional[Callable[[np.ndarray, int], np.ndarray]] = None
    name: str = "target"

    @property
    def is_discrete(self) -> bool:
        return self.support.kind == SupportKind.DISCRETE

    @property
    def has_gradient(self) -> bool:
        return self.gradient_fn is not None

    @property
    def has_hessian(self) -> bool:
        return self.hessian_fn is not None

    def log_target(self, point: Any) -> Any:
        return self.log_target_fn(point)

    def gradient(self, point: Any) -> np.ndarray:
        if self.gradient_fn is None:
            raise CapabilityError(f"'{self.name}' 목표분포는 gradient가 없습니다")
        return np.asarray(self.gradient_fn(np.atleast_1d(np.asarray(point, float))), float)

    def hessian(self, point: Any) -> np.ndarray:
        if self.hessian_fn is None:
            raise CapabilityError(f"'{self.name}' 목표분포는 hessian이 없습니다")
        return np.atleast_2d(np.asarray(self.hessian_fn(np.atleast_1d(np.asarray(point, float))), float))

    def third_order(self, point: Any, j: int) -> np.ndarray:
        if self.third_order_fn is None:
            raise CapabilityError(f"'{self.name}' 목표분포는 3차 도함수가 없습니다")
        return self.third_order_fn(np.atleast_1d(np.asarray(point, float)), j)

    def as_density(self) -> Density:
        """방향 밀도로 쓰기 위한 (비정규화일 수 있는) 상태 무관 밀도"""
        return Density(lambda point, context: self.log_target_fn(point), self.dimension, self.support,
                       None, normalized=False, state_free=True, name=self.name)


def density_target(density: Density) -> TargetModel:
    """상태 무관 밀도를 그대로 목표분포로"""
    if not density.state_free:
        raise ValueError("목표분포로 쓸 밀도는 상태 무관이어야 합니다")
    gradient = hessian = None
    if density.gaussian is not None:
        mean, cov = density.gaussian.params(None)
        precision = np.linalg.inv(cov)
        gradient = lambda x: -precision @ (x - mean)
        hessian = lambda x: -precision
    return TargetModel(lambda point: density.log_pdf(point), density.dimension, density.support,
                       gradient, hessian, None, density.name)


def finite_target(psi: Sequence[float], name: str = "finite") -> TargetModel:
    """유한 상태 0..n−1 위의 목표 pmf (정규화 불필요)"""
    weights = np.asarray(psi, float)
    if np.any(weights < 0) or weights.sum() <= 0:
        raise ValueError("목표 가중치는 음이 아니고 합이 양수여야 합니다")
    with np.errstate(divide='ignore'):
        logWeights = np.log(weights)
    return TargetModel(lambda point: logWeights[np.asarray(point, dtype=int)], 1,
                       Support.discrete(weights.size), name=name)


# ---------------------------------------------------------------------------
# 내장 밀도
# ---------------------------------------------------------------------------

def _as_matrix(value: Any, dimension: int, squared: bool) -> np.ndarray:
    """스칼라/대각/행렬 파라미터 → d×d 행렬 (squared면 스칼라·벡터를 제곱)"""
    arr = np.asarray(value, float)
    if arr.ndim == 0:
        return np.eye(dimension) * (arr ** 2 if squared else arr)
    if arr.ndim == 1:
        if arr.size != dimension:
            raise DimensionMismatchError(f"대각 파라미터 길이 {arr.size} != {dimension}")
        return np.diag(arr ** 2 if squared else arr)
    if arr.shape != (dimension, dimension):
        raise DimensionMismatchError(f"행렬 파라미터 형태 {arr.shape} != ({dimension}, {dimension})")
    return arr


def _state_mean(context: Any) -> np.ndarray:
    return np.atleast_1d(np.asarray(context, float))


def gaussian_density(mean_fn: Callable[[Any], np.ndarray], cov: np.ndarray, state_free: bool,
                     name: str = "normal") -> Density:
    cov = np.atleast_2d(np.asarray(cov, float))
    d = cov.shape[0]
    L = spd_cholesky(cov, name)
    const = -0.5 * d * LOG_2PI - float(np.sum(np.log(np.diag(L))))

    def logpdf(point, context):
        x, single = as_points(point, d)
        sol = solve_triangular(L, (x - mean_fn(context)).T, lower=True, check_finite=False)
        return finish(const - 0.5 * np.sum(sol * sol, axis=0), single)

    def sampler(rng, context, size):
        mu = mean_fn(context)
        if size is None:
            return mu + L @ rng.standard_normal(d)
        return mu + rng.standard_normal((size, d)) @ L.T

    return Density(logpdf, d, Support.continuous(d), sampler, True, state_free,
                   GaussianForm(mean_fn, cov), name)


def normal_density(mean: Any, cov: Any, name: str = "normal") -> Density:
    mean = np.atleast_1d(np.asarray(mean, float))
    return gaussian_density(lambda context: mean, _as_matrix(cov, mean.size, squared=False), True, name)


def random_walk_normal(cov: Any, dimension: int = 1, name: str = "rw-normal") -> Density:
    """N(x, Σ_f): 현재 상태 x가 평균"""
    return gaussian_density(_state_mean, _as_matrix(cov, dimension, squared=False), False, name)


def student_t_density(df: float, loc_fn: Callable[[Any], np.ndarray], shape: np.ndarray, state_free: bool,
                      name: str = "student_t") -> Density:
    if df <= 0:
        raise ValueError("자유도는 양수여야 합니다")
    shape = np.atleast_2d(np.asarray(shape, float))
    d = shape.shape[0]
    L = spd_cholesky(shape, name)
    const = (gammaln((df + d) / 2.0) - gammaln(df / 2.0) - 0.5 * d * math.log(df * math.pi)
             - float(np.sum(np.log(np.diag(L)))))

    def logpdf(point, context):
        x, single = as_points(point, d)
        sol = solve_triangular(L, (x - loc_fn(context)).T, lower=True, check_finite=False)
        return finish(const - 0.5 * (df + d) * np.log1p(np.sum(sol * sol, axis=0) / df), single)

    def sampler(rng, context, size):
        mu = loc_fn(context)
        if size is None:
            return mu + (L @ rng.standard_normal(d)) / math.sqrt(rng.chisquare(df) / df)
        z = rng.standard_normal((size, d)) @ L.T
        return mu + z / np.sqrt(rng.chisquare(df, size) / df)[:, None]

    return Density(logpdf, d, Support.continuous(d), sampler, True, state_free, None, name)


def t_density(df: float, loc: Any = 0.0, scale: Any = 1.0, name: Optional[str] = None) -> Density:
    loc = np.atleast_1d(np.asarray(loc, float))
    label = name or (f"t{df:g}" if df != 1 else "cauchy")
    return student_t_density(df, lambda context: loc, _as_matrix(scale, loc.size, squared=True), True, label)


def random_walk_t(df: float, scale: Any = 1.0, dimension: int = 1, name: str = "rw-t") -> Density:
    return student_t_density(df, _state_mean, _as_matrix(scale, dimension, squared=True), False, name)


def mixture_density(components: Sequence[Density], weights: Sequence[float], name: str = "mixture") -> Density:
    weights = np.asarray(weights, float)
    if len(components) != weights.size or weights.size == 0:
        raise DimensionMismatchError("혼합 성분 수와 가중치 수가 다릅니다")
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
        raise ValueError("혼합 가중치는 음이 아니고 합이 1이어야 합니다")
    d = components[0].dimension
    if any(c.dimension != d or not c.state_free for c in components):
        raise DimensionMismatchError("혼합 성분은 같은 차원의 상태 무관 밀도여야 합니다")
    with np.errstate(divide='ignore'):
        logWeights = np.log(weights)

    def logpdf(point, context):
        x, single = as_points(point, d)
        parts = np.stack([lw + np.atleast_1d(c.log_pdf(x, context)) for lw, c in zip(logWeights, components)])
        return finish(logsumexp(parts, axis=0), single)

    def sampler(rng, context, size):
        if size is None:
            k = int(rng.choice(weights.size, p=weights))
            return components[k].sample(rng, context)
        labels = rng.choice(weights.size, size=size, p=weights)
        out = np.empty((size, d))
        for k in np.unique(labels):
            mask = labels == k
            out[mask] = components[k].sample(rng, context, size=int(mask.sum()))
        return out

    return Density(logpdf, d, Support.continuous(d), sampler, True, True, None, name)


def builtin_density(kind: str, params: Dict[str, Any]) -> Density:
    """kind ∈ {normal, student_t, cauchy, mixture}"""
    try:
        kind = DensityKind(kind)
    except ValueError:
        raise ValueError(f"알 수 없는 밀도 종류: {kind}")
    params = dict(params)
    if kind == DensityKind.NORMAL:
        mean = params.pop("mean", 0.0)
        if "sd" in params:
            cov = float(params.pop("sd")) ** 2
        else:
            cov = params.pop("cov", 1.0)
        density = normal_density(mean, cov)
    elif kind in (DensityKind.STUDENT_T, DensityKind.CAUCHY):
        df = 1.0 if kind == DensityKind.CAUCHY else float(params.pop("df"))
        density = t_density(df, params.pop("loc", 0.0), params.pop("scale", 1.0))
    else:
        means = params.pop("means")
        covs = params.pop("covs")
        components = [normal_density(m, c, name=f"component{i + 1}") for i, (m, c) in enumerate(zip(means, covs))]
        density = mixture_density(components, params.pop("weights", [1.0 / len(components)] * len(components)))
    if params:
        raise ValueError(f"{kind} 밀도에 알 수 없는 파라미터: {sorted(params)}")
    return density


# ---------------------------------------------------------------------------
# 2-성분 혼합 목표
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MixtureTarget:
    means: Tuple[np.ndarray, ...]
    covs: Tuple[np.ndarray, ...]
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'means', tuple(np.atleast_1d(np.asarray(m, float)) for m in self.means))
        d = self.means[0].size
        object.__setattr__(self, 'covs', tuple(_as_matrix(c, d, squared=False) for c in self.covs))
        object.__setattr__(self, 'weights', np.asarray(self.weights, float))
        for c in self.covs:
            spd_cholesky(c, "혼합 성분")

    @property
    def components(self) -> List[Density]:
        return [normal_density(m, c, name=f"component{i + 1}") for i, (m, c) in enumerate(zip(self.means, self.covs))]

    def density(self) -> Density:
        return mixture_density(self.components, self.weights, name="mixture-target")

    def target(self) -> TargetModel:
        return density_target(self.density())

    def basin(self, points: Any) -> np.ndarray:
        """가장 가까운 성분 평균(마할라노비스) 인덱스"""
        x, _ = as_points(points, self.means[0].size)
        dists = np.stack([np.einsum('ij,jk,ik->i', x - m, np.linalg.inv(c), x - m)
                          for m, c in zip(self.means, self.covs)])
        return np.argmin(dists, axis=0)


def example3_mixture() -> MixtureTarget:
    return MixtureTarget(((0.0, 0.0), (10.0, 10.0)), (np.eye(2), 2.0 * np.eye(2)), np.array([0.5, 0.5]))


# ---------------------------------------------------------------------------
# 6-모드 목표
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SixModeTarget:
    """ψ(x1, x2) ∝ exp(−x1²/2) exp(−(csc⁵x2 − x1)²/2) on [lower, upper]²"""
    lower: float = -10.0
    upper: float = 10.0

    def log_density(self, points: Any) -> Any:
        x, single = as_points(points, 2)
        x1, x2 = x[:, 0], x[:, 1]
        s = np.sin(x2)
        with np.errstate(divide='ignore', over='ignore', invalid='ignore'):
            csc5 = (1.0 / s) ** 5
            value = -0.5 * x1 ** 2 - 0.5 * (csc5 - x1) ** 2
        inside = np.all((x >= self.lower) & (x <= self.upper), axis=1)
        value = np.where(inside & (s != 0.0) & np.isfinite(value), value, -np.inf)
        return finish(value, single)

    def target(self) -> TargetModel:
        return TargetModel(self.log_density, 2, Support.continuous(2, self.lower, self.upper), name="six-mode")

    def basin(self, points: Any) -> np.ndarray:
        """csc 극점 사이 x2 구간 번호 0..5"""
        x, _ = as_points(points, 2)
        return np.clip(np.floor(x[:, 1] / math.pi).astype(int) + 3, 0, 5)

    @staticmethod
    def mode_locations() -> np.ndarray:
        centers = np.array([math.pi / 2.0 + k * math.pi for k in range(-3, 3)])
        return np.column_stack([0.5 * np.sign(np.sin(centers)), centers])


def sixmode_conditional(target: SixModeTarget, axis: int, fixed_value: float) -> Density:
    """한 좌표를 고정한 1차원 비정규화 조건부 밀도"""
    if axis not in (0, 1):
        raise ValueError("axis는 0 또는 1이어야 합니다")
    if not target.lower <= fixed_value <= target.upper:
        raise ValueError(f"고정값 {fixed_value}가 상자 밖입니다")

    def logpdf(point, context):
        x, single = as_points(point, 1)
        full = np.empty((x.shape[0], 2))
        full[:, axis] = x[:, 0]
        full[:, 1 - axis] = fixed_value
        return finish(np.atleast_1d(target.log_density(full)), single)

    return Density(logpdf, 1, Support.continuous(1, target.lower, target.upper), None,
                   normalized=False, state_free=True, name=f"six-mode|x{2 - axis}={fixed_value:g}")


# ---------------------------------------------------------------------------
# 로지스틱 사후분포
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LogisticPosterior:
    """베르누이-로짓 가능도 × N_p(μ0, Σ0) 사전분포"""
    W: np.ndarray
    z: np.ndarray
    prior_mean: Optional[np.ndarray] = None
    prior_cov: Optional[np.ndarray] = None
    _priorChol: np.ndarray = field(init=False, repr=False)
    _priorConst: float = field(init=False, repr=False)

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, float))
        z = np.asarray(self.z, float).ravel()
        m, p = W.shape
        if z.size != m:
            raise DimensionMismatchError(f"응답 길이 {z.size} != 설계 행 수 {m}")
        if not np.all((z == 0.0) | (z == 1.0)):
            raise ValueError("응답은 0 또는 1이어야 합니다")
        mean = np.zeros(p) if self.prior_mean is None else np.atleast_1d(np.asarray(self.prior_mean, float))
        cov = 1e3 * np.eye(p) if self.prior_cov is None else _as_matrix(self.prior_cov, p, squared=False)
        if mean.size != p:
            raise DimensionMismatchError("사전 평균 차원이 설계 열 수와 다릅니다")
        L = spd_cholesky(cov, "사전")
        object.__setattr__(self, 'W', W)
        object.__setattr__(self, 'z', z)
        object.__setattr__(self, 'prior_mean', mean)
        object.__setattr__(self, 'prior_cov', cov)
        object.__setattr__(self, '_priorChol', L)
        object.__setattr__(self, '_priorConst', -0.5 * p * LOG_2PI - float(np.sum(np.log(np.diag(L)))))

    @property
    def dimension(self) -> int:
        return self.W.shape[1]

    def prior_precision_times(self, v: np.ndarray) -> np.ndarray:
        return cho_solve((self._priorChol, True), v)


class LogisticDerivatives(NamedTuple):
    gradient: np.ndarray
    hessian: np.ndarray
    third_order: Callable[[int], np.ndarray]


def logistic_log_post(lp: LogisticPosterior, beta: Any) -> Any:
    """Σ [z_i η_i − log(1 + e^{η_i})] + log φ_p(β; μ0, Σ0)"""
    b, single = as_points(beta, lp.dimension)
    eta = b @ lp.W.T
    data = eta @ lp.z - np.sum(np.logaddexp(0.0, eta), axis=1)
    sol = solve_triangular(lp._priorChol, (b - lp.prior_mean).T, lower=True, check_finite=False)
    prior = lp._priorConst - 0.5 * np.sum(sol * sol, axis=0)
    return finish(data + prior, single)


def logistic_derivatives(lp: LogisticPosterior, beta: Any) -> LogisticDerivatives:
    beta = np.atleast_1d(np.asarray(beta, float))
    if beta.size != lp.dimension:
        raise DimensionMismatchError(f"β 차원 {beta.size} != {lp.dimension}")
    xi = expit(lp.W @ beta)
    lam = xi * (1.0 - xi)
    gradient = lp.W.T @ (lp.z - xi) - lp.prior_precision_times(beta - lp.prior_mean)
    hessian = -(lp.W.T * lam) @ lp.W - lp.prior_precision_times(np.eye(lp.dimension))
    gammaBase = lam * (1.0 - 2.0 * xi)

    def third_order(j: int) -> np.ndarray:
        return -(lp.W.T * (gammaBase * lp.W[:, j])) @ lp.W

    return LogisticDerivatives(gradient, hessian, third_order)


def logistic_target(lp: LogisticPosterior) -> TargetModel:
    return TargetModel(
        lambda beta: logistic_log_post(lp, beta),
        lp.dimension,
        Support.continuous(lp.dimension),
        lambda beta: logistic_derivatives(lp, beta).gradient,
        lambda beta: logistic_derivatives(lp, beta).hessian,
        lambda beta, j: logistic_derivatives(lp, beta).third_order(j),
        name="logistic",
    )


def posterior_mode(lp: LogisticPosterior) -> Tuple[np.ndarray, np.ndarray]:
    """(β̂, Σ̂ = (−∇² log ψ(β̂))⁻¹)"""
    result = minimize(
        lambda b: -logistic_log_post(lp, b),
        lp.prior_mean.copy(),
        jac=lambda b: -logistic_derivatives(lp, b).gradient,
        hess=lambda b: -logistic_derivatives(lp, b).hessian,
        method='trust-exact',
    )
    if not result.success:
        logger.warning(f"⚠️ 사후 최빈값 탐색이 수렴하지 않았습니다: {result.message}")
    betaHat = np.asarray(result.x, float)
    sigmaHat = np.linalg.inv(-logistic_derivatives(lp, betaHat).hessian)
    return betaHat, (sigmaHat + sigmaHat.T) / 2.0


def laplace_direction(lp: LogisticPosterior) -> Density:
    """N(β̂, Σ̂) 방향 밀도"""
    betaHat, sigmaHat = posterior_mode(lp)
    return normal_density(betaHat, sigmaHat, name="laplace")


def simulate_logistic(m: int, p: int, rng: np.random.Generator, beta: Optional[Sequence[float]] = None,
                      intercept: bool = True, prior_var: float = 1e3) -> Tuple[LogisticPosterior, np.ndarray]:
    """표준정규 공변량으로 로지스틱 자료 생성. (사후분포, 참 β) 반환"""
    if m < 1 or p < 1:
        raise ValueError("m, p는 1 이상이어야 합니다")
    W = rng.standard_normal((m, p))
    if intercept:
        W[:, 0] = 1.0
    trueBeta = rng.normal(0.0, 0.5, size=p) if beta is None else np.asarray(beta, float)
    z = (rng.random(m) < expit(W @ trueBeta)).astype(float)
    return LogisticPosterior(W, z, np.zeros(p), prior_var * np.eye(p)), trueBeta


# ---------------------------------------------------------------------------
# 조율된 h 기각 샘플러
# ---------------------------------------------------------------------------

def example1_envelope_bound() -> float:
    """M̃ = [Φ(3/4) + e^{−1/4} Φ(1/4)] / (1 − e^{−1/4})"""
    return (norm.cdf(0.75) + math.exp(-0.25) * norm.cdf(0.25)) / (1.0 - math.exp(-0.25))


def tuned_normal_residual_sampler(block: int = 64) -> ResidualSampler:
    """f = N(1, 1), g = N(0, 1) 전용 h 샘플러 (구간별 envelope)"""
    leftMass = norm.cdf(0.75)
    rightMass = math.exp(-0.25) * norm.cdf(0.25)
    leftShare = leftMass / (leftMass + rightMass)

    def sampler(rng: np.random.Generator, context: Any, aff: Affinity) -> Tuple[np.ndarray, int]:
        if abs(aff.value - math.exp(-0.125)) > 1e-6:
            raise CapabilityError("이 envelope은 N(1,1) base와 N(0,1) 방향에서만 유효합니다")
        a = aff.value
        attempts = 0
        while attempts < 1_000_000:
            left = rng.random(block) < leftShare
            u = rng.random(block)
            x = np.where(left, norm.ppf(u * norm.cdf(0.75)), 1.0 - norm.ppf(u * norm.cdf(0.25)))
            halfLogRatio = 0.5 * (x - 0.5)
            with np.errstate(over='ignore'):
                accept = np.where(left, (1.0 - a * np.exp(halfLogRatio)) ** 2,
                                  (np.exp(-halfLogRatio) - a) ** 2 / (a * a))
            hits = np.flatnonzero(rng.random(block) < accept)
            if hits.size:
                return np.array([x[hits[0]]]), attempts + int(hits[0]) + 1
            attempts += block
        raise EnvelopeFailureError("조율된 정규 h 샘플러가 수락하지 못했습니다", attempts)

    return sampler


def tuned_cauchy_residual_sampler(df: float = 2.0, block: int = 256) -> ResidualSampler:
    """f = t_κ, g = Cauchy(0,1): Cauchy 표본을 (1 − a√(f/g))² 확률로 수락"""
    base = t_density(df)
    cauchy = t_density(1.0)

    def sampler(rng: np.random.Generator, context: Any, aff: Affinity) -> Tuple[np.ndarray, int]:
        a = aff.value
        attempts = 0
        while attempts < 1_000_000:
            x = rng.standard_cauchy(block).reshape(-1, 1)
            ratio = np.exp(0.5 * (base.log_pdf(x) - cauchy.log_pdf(x)))
            accept = (1.0 - a * ratio) ** 2
            if np.any(accept > 1.0 + 1e-12):
                raise EnvelopeFailureError("Cauchy envelope이 h를 덮지 못합니다", attempts)
            hits = np.flatnonzero(rng.random(block) < accept)
            if hits.size:
                return x[hits[0]], attempts + int(hits[0]) + 1
            attempts += block
        raise EnvelopeFailureError("조율된 Cauchy h 샘플러가 수락하지 못했습니다", attempts)

    return sampler
