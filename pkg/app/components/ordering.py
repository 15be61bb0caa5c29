"""유한 상태 순서 이론 검증: Peskun 상수, spectral gap, 점근분산, c_ε 하한, 균등 에르고딕 하한"""
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from app.components.errors import (
    DegenerateDirectionError,
    InvalidChainError,
    NonReversibleError,
    ReducibleChainError,
    VerificationFailure,
)
from app.utils.logging_utils import setupLogging
from app.utils.seed_utils import makeRng

logger = setupLogging()

ROW_TOL = 1e-12
STATIONARY_TOL = 1e-10
DEGENERATE_TOL = 1e-9


def stationarity_error(P: np.ndarray, psi: np.ndarray) -> float:
    return float(np.max(np.abs(psi @ P - psi)))


def detailed_balance_error(P: np.ndarray, psi: np.ndarray) -> float:
    flow = psi[:, None] * P
    return float(np.max(np.abs(flow - flow.T)))


@dataclass(frozen=True, eq=False)
class FiniteChain:
    """행 확률 전이행렬 P 와 정상분포 ψ"""
    P: np.ndarray
    psi: np.ndarray
    reversible: bool = True
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        P = np.asarray(self.P, float)
        psi = np.asarray(self.psi, float)
        object.__setattr__(self, 'P', P)
        object.__setattr__(self, 'psi', psi)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or psi.shape != (P.shape[0],):
            raise InvalidChainError(f"전이행렬 {P.shape}와 ψ {psi.shape}의 형태가 맞지 않습니다")
        if not self.validate:
            return
        if np.any(P < -ROW_TOL) or np.max(np.abs(P.sum(axis=1) - 1.0)) > ROW_TOL:
            raise InvalidChainError("전이행렬의 행이 확률분포가 아닙니다")
        if np.any(psi < 0) or abs(psi.sum() - 1.0) > STATIONARY_TOL:
            raise InvalidChainError("ψ가 확률분포가 아닙니다")
        if stationarity_error(P, psi) > STATIONARY_TOL:
            raise InvalidChainError(f"ψP ≠ ψ (오차 {stationarity_error(P, psi):.3e})")
        if self.reversible and detailed_balance_error(P, psi) > STATIONARY_TOL:
            raise NonReversibleError(f"상세균형 위반 (오차 {detailed_balance_error(P, psi):.3e})")

    @property
    def size(self) -> int:
        return self.P.shape[0]


def mh_transition_matrix(q: Any, psi: Any) -> FiniteChain:
    """P_xy = q(x,y) min{1, ψ_y q(y,x) / ψ_x q(x,y)}, 대각은 기각 질량"""
    q = np.asarray(q, float)
    psi = np.asarray(psi, float)
    if q.ndim != 2 or q.shape[0] != q.shape[1] or psi.shape != (q.shape[0],):
        raise InvalidChainError(f"제안 행렬 {q.shape}와 목표 {psi.shape}의 형태가 맞지 않습니다")
    if np.any(q < 0) or np.max(np.abs(q.sum(axis=1) - 1.0)) > 1e-10:
        raise InvalidChainError("제안 행렬의 행이 확률분포가 아닙니다")
    if np.any(psi <= 0):
        raise InvalidChainError("목표 질량이 0인 상태가 있습니다")
    psi = psi / psi.sum()
    flow = psi[:, None] * q
    P = np.minimum(flow, flow.T) / psi[:, None]
    np.fill_diagonal(P, 0.0)
    P[np.diag_indices_from(P)] = 1.0 - P.sum(axis=1)
    return FiniteChain(P, psi, reversible=True)


def _symmetrized(chain: FiniteChain) -> np.ndarray:
    if detailed_balance_error(chain.P, chain.psi) > STATIONARY_TOL:
        raise NonReversibleError("가역적이지 않은 체인은 대칭화할 수 없습니다")
    root = np.sqrt(chain.psi)
    S = root[:, None] * chain.P / root[None, :]
    return (S + S.T) / 2.0


def _centered_spectrum(chain: FiniteChain) -> np.ndarray:
    root = np.sqrt(chain.psi)
    return np.linalg.eigvalsh(_symmetrized(chain) - np.outer(root, root))


def spectral_gap(chain: FiniteChain) -> float:
    """1 − sup|λ| over 평균 0 함수 공간 위의 스펙트럼"""
    return float(np.clip(1.0 - np.max(np.abs(_centered_spectrum(chain))), 0.0, 1.0))


def variational_gap(chain: FiniteChain) -> float:
    """1 − sup_t ⟨Pt, t⟩_ψ (t 평균 0, 분산 1)"""
    return float(1.0 - np.max(_centered_spectrum(chain)))


def center_and_scale(psi: np.ndarray, t: np.ndarray) -> np.ndarray:
    t = t - psi @ t
    return t / math.sqrt(psi @ (t * t))


def stationary_variance(psi: np.ndarray, t: np.ndarray) -> float:
    return float(psi @ (t * t))


def lag1_autocovariance(chain: FiniteChain, t: np.ndarray) -> float:
    """⟨Pt, t⟩_ψ"""
    return float(chain.psi @ (t * (chain.P @ t)))


def asymptotic_variance(chain: FiniteChain, t: Any) -> float:
    """v(t, P) = Σ_{λ≠1} (1+λ)/(1−λ) ⟨t, e⟩²_ψ"""
    t = np.asarray(t, float)
    if abs(chain.psi @ t) > 1e-8 * max(1.0, float(np.max(np.abs(t)))):
        raise ValueError("t는 ψ 아래에서 평균 0이어야 합니다")
    vals, vecs = np.linalg.eigh(_symmetrized(chain))
    if np.sum(vals > 1.0 - 1e-10) > 1:
        raise ReducibleChainError("고유값 1의 중복도가 1보다 큽니다 (기약이 아님)")
    coef = vecs.T @ (np.sqrt(chain.psi) * t)
    keep = np.arange(vals.size) != np.argmax(vals)
    return float(np.sum((1.0 + vals[keep]) / (1.0 - vals[keep]) * coef[keep] ** 2))


def peskun_constant(P: np.ndarray, Q: np.ndarray) -> float:
    """min_{x≠y, Q_xy>0} P_xy / Q_xy"""
    P = np.asarray(P, float)
    Q = np.asarray(Q, float)
    mask = (Q > 0.0) & ~np.eye(Q.shape[0], dtype=bool)
    if not np.any(mask):
        raise ValueError("Q가 대각 밖에 질량이 없어 Peskun 상수가 정의되지 않습니다")
    return float(np.min(P[mask] / Q[mask]))


def remark1_domination(P_single: np.ndarray, P_mixture: np.ndarray) -> float:
    """대각 밖 최소 (단일 혼합 MH − 방향별 MH 혼합). 음수 여유가 없어야 함"""
    diff = np.asarray(P_single, float) - np.asarray(P_mixture, float)
    np.fill_diagonal(diff, np.inf)
    return float(np.min(diff))


@dataclass
class OrderingReport:
    peskun_constant: float
    gap_p: float
    gap_q: float
    variational_gap_p: float
    variational_gap_q: float
    lag1_p: np.ndarray
    lag1_q: np.ndarray
    variance_p: Optional[np.ndarray]
    variance_q: Optional[np.ndarray]
    sigma2: np.ndarray
    worst_slack: Dict[str, float]
    c_epsilon: Optional[float] = None

    @property
    def passed(self) -> bool:
        return all(s >= -1e-9 for s in self.worst_slack.values())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "peskun_constant": self.peskun_constant,
            "gap_p": self.gap_p,
            "gap_q": self.gap_q,
            "variational_gap_p": self.variational_gap_p,
            "variational_gap_q": self.variational_gap_q,
            "worst_slack": dict(self.worst_slack),
            "c_epsilon": self.c_epsilon,
        }


def verify_theorem1(P: FiniteChain, Q: FiniteChain, trials: int = 100, seed: Optional[int] = 0,
                    tol: float = 1e-9, raise_on_violation: bool = True) -> OrderingReport:
    """공분산, gap, 점근분산 부등식을 임의 검정함수로 확인"""
    if P.size != Q.size or np.max(np.abs(P.psi - Q.psi)) > STATIONARY_TOL:
        raise ValueError("P와 Q의 정상분포가 다릅니다")
    psi = P.psi
    c = peskun_constant(P.P, Q.P)
    rng = makeRng(seed)
    tests = [center_and_scale(psi, rng.standard_normal(P.size)) for _ in range(trials)]
    sigma2 = np.array([stationary_variance(psi, t) for t in tests])
    lagP = np.array([lag1_autocovariance(P, t) for t in tests])
    lagQ = np.array([lag1_autocovariance(Q, t) for t in tests])

    slack: Dict[str, float] = {
        "covariance": float(np.min(c * lagQ + (1.0 - c) * sigma2 - lagP)),
    }
    gapP = spectral_gap(P)
    gapQ = spectral_gap(Q)
    varGapP = variational_gap(P)
    varGapQ = variational_gap(Q)
    slack["spectral-gap"] = varGapP - c * varGapQ

    varP = varQ = None
    if c > 0.0:
        try:
            varP = np.array([asymptotic_variance(P, t) for t in tests])
            varQ = np.array([asymptotic_variance(Q, t) for t in tests])
        except ReducibleChainError as e:
            logger.warning(f"⚠️ 점근분산 부등식 생략: {e}")
        else:
            bound = varQ / c + (1.0 - c) / c * sigma2
            slack["asymptotic-variance"] = float(np.min((bound - varP) / np.maximum(1.0, np.abs(bound))))

    report = OrderingReport(c, gapP, gapQ, varGapP, varGapQ, lagP, lagQ, varP, varQ, sigma2, slack)
    if raise_on_violation:
        for name, value in slack.items():
            if value < -tol:
                raise VerificationFailure(name, f"여유 {value:.3e} < −{tol:g}", value)
    return report


def c_epsilon_bound(f_rows: Any, g_rows: Sequence[Any], a: Sequence[float], epsilon: float) -> float:
    """c_ε = Σ a_i inf_{x≠y, f(y|x)>0} [cos²(εθ_{i,x}) + sin²(εθ_{i,x}) d_i(y|x)]"""
    f_rows = np.atleast_2d(np.asarray(f_rows, float))
    n = f_rows.shape[1]
    if f_rows.shape[0] == 1:
        f_rows = np.repeat(f_rows, n, axis=0)
    a = np.asarray(a, float)
    if len(g_rows) != a.size:
        raise ValueError("방향 수와 가중치 수가 다릅니다")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon은 [0, 1] 범위여야 합니다")
    offDiagonal = ~np.eye(n, dtype=bool) & (f_rows > 0.0)
    total = 0.0
    for weight, g in zip(a, g_rows):
        g = np.atleast_2d(np.asarray(g, float))
        if g.shape[0] == 1:
            g = np.repeat(g, n, axis=0)
        aff = np.minimum(np.sum(np.sqrt(f_rows * g), axis=1), 1.0)
        degenerate = aff >= 1.0 - DEGENERATE_TOL
        theta = np.arccos(aff)
        cos2 = np.cos(epsilon * theta) ** 2
        sin2 = np.sin(epsilon * theta) ** 2
        with np.errstate(divide='ignore', invalid='ignore'):
            d = (np.sqrt(g / f_rows) - aff[:, None]) ** 2 / (1.0 - aff[:, None] ** 2)
            terms = cos2[:, None] + sin2[:, None] * d
        terms = np.where(degenerate[:, None], 1.0, terms)
        if epsilon > 0 and np.any(~np.isfinite(terms[offDiagonal])):
            raise DegenerateDirectionError("d_i 계산 중 0으로 나누기가 발생했습니다")
        total += weight * float(np.min(terms[offDiagonal]))
    return total


@dataclass
class UniformErgodicityReport:
    beta: float
    tv: np.ndarray
    bound: Optional[np.ndarray]

    @property
    def uniformly_ergodic(self) -> bool:
        return self.beta > 0.0


def total_variation_curve(chain: FiniteChain, steps: int) -> np.ndarray:
    """max_x TV(Pⁿ(x,·), ψ), n = 1..steps"""
    curve = np.empty(steps)
    power = np.eye(chain.size)
    for k in range(steps):
        power = power @ chain.P
        curve[k] = 0.5 * float(np.max(np.sum(np.abs(power - chain.psi[None, :]), axis=1)))
    return curve


def uniform_ergodicity_bound(phi: Any, psi: Any, steps: int = 50, tol: float = 1e-12) -> UniformErgodicityReport:
    """독립 제안 MH: β = min φ/ψ 과 TV ≤ (1−β)ⁿ 확인"""
    phi = np.asarray(phi, float)
    psi = np.asarray(psi, float)
    psi = psi / psi.sum()
    beta = float(np.min(phi / psi))
    chain = mh_transition_matrix(np.repeat(phi[None, :], phi.size, axis=0), psi)
    tv = total_variation_curve(chain, steps)
    if beta <= 0.0:
        logger.info("📊 min φ/ψ = 0: 균등 에르고딕 하한을 줄 수 없습니다")
        return UniformErgodicityReport(beta, tv, None)
    bound = (1.0 - beta) ** np.arange(1, steps + 1)
    worst = float(np.min(bound - tv))
    if worst < -tol:
        raise VerificationFailure("uniform-ergodicity", f"TV가 (1−β)ⁿ을 넘습니다 (여유 {worst:.3e})", worst)
    return UniformErgodicityReport(beta, tv, bound)


def example1_minimum_ratio(epsilon: float) -> float:
    """N(1,1) base, N(0,1) 목표의 기하 제안에 대한 inf φ/ψ 닫힌 형태

    r = √(f/g) 로 두면 φ/ψ = c r² + (s/k)(1 − a r)², r > 0 에서의 최솟값
    """
    theta = math.acos(math.exp(-0.125))
    s = math.sin(epsilon * theta) ** 2
    c = math.cos(epsilon * theta) ** 2
    k = 1.0 - math.exp(-0.25)
    b = s / k
    if b == 0.0:
        return 0.0
    return c * b / (c + b * math.exp(-0.25))
