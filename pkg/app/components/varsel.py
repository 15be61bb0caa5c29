"""베이지안 변수선택: 모형 주변사후, 이웃 제안, 점진 Cholesky, 모형공간 기하 MH"""
import math
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from itertools import combinations
from typing import Any, Dict, Iterator, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cholesky, solve_triangular, LinAlgError
from scipy.special import logsumexp
from strenum import StrEnum

from app.components.errors import CholeskyError, DegenerateSupportError, DimensionMismatchError, \
    IllConditionedInputError
from app.components.geometry import Affinity, discrete_affinity, discrete_residual_pmf, h_weight
from app.components.ordering import FiniteChain, mh_transition_matrix
from app.utils.logging_utils import setupLogging
from app.utils.seed_utils import makeRng

logger = setupLogging()

Model = Tuple[int, ...]


class BaseKind(StrEnum):
    SYMMETRIC = "symmetric"
    ASYMMETRIC = "asymmetric"


class MoveKind(StrEnum):
    ADD = "add"
    DELETE = "delete"
    SWAP = "swap"
    STAY = "stay"


class Move(NamedTuple):
    kind: MoveKind
    out: int = -1
    into: int = -1


def canonical_model(indices: Sequence[int], p: Optional[int] = None) -> Model:
    """정렬된 0-기반 인덱스 튜플 (중복·범위 검사)"""
    model = tuple(sorted(int(i) for i in indices))
    if len(set(model)) != len(model):
        raise ValueError(f"모형 인덱스가 중복됩니다: {model}")
    if p is not None and model and (model[0] < 0 or model[-1] >= p):
        raise ValueError(f"모형 인덱스가 [0, {p}) 범위를 벗어납니다: {model}")
    return model


def apply_move(gamma: Model, move: Move) -> Model:
    if move.kind == MoveKind.STAY:
        return gamma
    if move.kind == MoveKind.ADD:
        return canonical_model(gamma + (move.into,))
    if move.kind == MoveKind.DELETE:
        return tuple(i for i in gamma if i != move.out)
    return canonical_model(tuple(i for i in gamma if i != move.out) + (move.into,))


# ---------------------------------------------------------------------------
# 자료
# ---------------------------------------------------------------------------

class VSData:
    """표준화된 설계 W̃ (열별 표본 SD 1)와 중심화 반응 z̃, 초모수 λ, ω"""

    def __init__(self, W: Any, z: Any, lam: Optional[float] = None, omega: Optional[float] = None):
        z = np.asarray(z, float).ravel()
        self.sparse = sp.issparse(W)
        raw = sp.csc_matrix(W, dtype=float) if self.sparse else np.asarray(W, float)
        m, p = raw.shape
        if z.size != m:
            raise DimensionMismatchError(f"반응 길이 {z.size} != 설계 행 수 {m}")
        if m < 3:
            raise ValueError("관측 수 m은 3 이상이어야 합니다")
        self.m, self.p = m, p
        self.lam = float(m / p ** 2) if lam is None else float(lam)
        self.omega = float(math.sqrt(m) / p) if omega is None else float(omega)
        if self.lam <= 0:
            raise ValueError(f"λ는 양수여야 합니다: {self.lam}")
        if not 0.0 < self.omega < 1.0:
            raise ValueError(f"ω는 (0, 1) 범위여야 합니다: {self.omega} (기본값 √m/p가 1 이상이면 직접 지정)")

        if self.sparse:
            means = np.asarray(raw.mean(axis=0)).ravel()
            sq = np.asarray(raw.multiply(raw).sum(axis=0)).ravel()
            variances = (sq - m * means ** 2) / (m - 1)
        else:
            means = raw.mean(axis=0)
            variances = raw.var(axis=0, ddof=1)
        if np.any(variances <= 1e-14 * np.maximum(1.0, means ** 2)):
            bad = np.flatnonzero(variances <= 1e-14 * np.maximum(1.0, means ** 2))
            raise IllConditionedInputError(f"분산이 0인 열이 있습니다 (0-기반 {bad[:5].tolist()})")
        self.col_means = means
        self.col_sds = np.sqrt(variances)
        self.raw = raw
        self.z = z
        self.z_mean = float(z.mean())
        self.zt = z - self.z_mean
        self.ztz = float(self.zt @ self.zt)
        if self.ztz <= 0:
            raise IllConditionedInputError("반응의 분산이 0입니다")
        if self.sparse:
            self.std = None
            self.wz = np.asarray(raw.T @ self.zt).ravel() / self.col_sds
        else:
            self.std = (raw - means) / self.col_sds
            self.wz = self.std.T @ self.zt
        self.col_ss = np.full(p, float(m - 1))

    def gram_column(self, j: int) -> np.ndarray:
        """W̃ᵀ w̃_j (p-벡터)"""
        if self.sparse:
            col = self.raw[:, j]
            cross = np.asarray((self.raw.T @ col).todense()).ravel()
            cross = cross - self.m * self.col_means * self.col_means[j]
            return cross / (self.col_sds * self.col_sds[j])
        return self.std.T @ self.std[:, j]

    def columns(self, model: Sequence[int]) -> np.ndarray:
        """표준화된 W̃_γ (m × |γ|)"""
        idx = list(model)
        if self.sparse:
            dense = np.asarray(self.raw[:, idx].todense())
            return (dense - self.col_means[idx]) / self.col_sds[idx]
        return self.std[:, idx]


def dense_log_marginal(data: VSData, model: Sequence[int]) -> float:
    """밀집 행렬로 직접 계산한 log ψ(γ|z) (검증용)"""
    k = len(model)
    prior = k * math.log(data.omega) + (data.p - k) * math.log1p(-data.omega)
    if k == 0:
        return -0.5 * (data.m - 1) * math.log(data.ztz) + prior
    Wg = data.columns(model)
    A = Wg.T @ Wg + data.lam * np.eye(k)
    sign, logdet = np.linalg.slogdet(A)
    b = Wg.T @ data.zt
    R = data.ztz - float(b @ np.linalg.solve(A, b))
    return 0.5 * k * math.log(data.lam) - 0.5 * logdet - 0.5 * (data.m - 1) * math.log(R) + prior


# ---------------------------------------------------------------------------
# 점진 Cholesky
# ---------------------------------------------------------------------------

def _givens(a: float, b: float) -> Tuple[float, float, float]:
    if math.fabs(a) > math.fabs(b):
        t = b / a
        u = math.copysign(math.sqrt(1 + t * t), a)
        c = 1 / u
        return c, c * t, a * u
    t = a / b
    u = math.copysign(math.sqrt(1 + t * t), b)
    s = 1 / u
    return s * t, s, b * u


def cholupdate_upper(U: np.ndarray, x: np.ndarray) -> np.ndarray:
    """RᵀR = UᵀU + xxᵀ 인 상삼각 R"""
    U = U.copy()
    x = np.array(x, dtype=float)
    for k in range(x.size):
        c, s, r = _givens(U[k, k], x[k])
        row = U[k, k + 1:].copy()
        U[k, k] = r
        U[k, k + 1:] = c * row + s * x[k + 1:]
        x[k + 1:] = -s * row + c * x[k + 1:]
    return U


def choldelete(U: np.ndarray, i: int) -> np.ndarray:
    """i번째 행·열을 지운 행렬의 상삼각 인수"""
    n = U.shape[0]
    out = np.zeros((n - 1, n - 1))
    out[:i, :i] = U[:i, :i]
    out[:i, i:] = U[:i, i + 1:]
    out[i:, i:] = U[i + 1:, i + 1:]
    if i < n - 1:
        out[i:, i:] = cholupdate_upper(out[i:, i:], U[i, i + 1:])
    return out


@dataclass(frozen=True, eq=False)
class CholState:
    """삽입 순서 order 기준 A = W̃ᵀW̃ + λI 의 상삼각 인수 U, v = U⁻ᵀW̃ᵀz̃, R = z̃ᵀz̃ − ‖v‖²"""
    order: Tuple[int, ...]
    U: np.ndarray
    wz: np.ndarray
    v: np.ndarray
    R: float

    @property
    def gamma(self) -> Model:
        return tuple(sorted(self.order))

    @property
    def size(self) -> int:
        return len(self.order)

    @property
    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.U)))) if self.order else 0.0


def log_marginal(data: VSData, chol: CholState) -> float:
    """(k/2)log λ − ½log|A| − ((m−1)/2)log R + k log ω + (p−k)log(1−ω)"""
    if chol.R <= 0:
        raise CholeskyError(f"ridge 잔차 R = {chol.R:.3e} ≤ 0")
    return _log_post(data, chol.size, chol.logdet, chol.R)


def _log_post(data: VSData, k: Any, logdet: Any, R: Any) -> Any:
    with np.errstate(divide='ignore', invalid='ignore'):
        return (0.5 * k * math.log(data.lam) - 0.5 * logdet - 0.5 * (data.m - 1) * np.log(R)
                + k * math.log(data.omega) + (data.p - k) * math.log1p(-data.omega))


# ---------------------------------------------------------------------------
# 이웃
# ---------------------------------------------------------------------------

def neighborhood(gamma: Sequence[int], p: int) -> Iterator[Tuple[Move, Model]]:
    """추가, 삭제, 교환 순서로 이웃을 스트리밍"""
    gamma = canonical_model(gamma, p)
    members = set(gamma)
    outside = [j for j in range(p) if j not in members]
    for j in outside:
        yield Move(MoveKind.ADD, into=j), apply_move(gamma, Move(MoveKind.ADD, into=j))
    for i in gamma:
        yield Move(MoveKind.DELETE, out=i), apply_move(gamma, Move(MoveKind.DELETE, out=i))
    for i in gamma:
        for j in outside:
            move = Move(MoveKind.SWAP, i, j)
            yield move, apply_move(gamma, move)


@dataclass(frozen=True, eq=False)
class NeighborhoodScores:
    """N(γ) 위 log ψ 값 (순서: 추가, 삭제, 교환)"""
    gamma: Model
    p: int
    log_post: float
    add_idx: np.ndarray
    del_idx: np.ndarray
    add_scores: np.ndarray
    del_scores: np.ndarray
    swap_scores: np.ndarray

    @property
    def n_add(self) -> int:
        return self.add_idx.size

    @property
    def n_del(self) -> int:
        return self.del_idx.size

    @property
    def n_swap(self) -> int:
        return self.swap_scores.size

    @property
    def scores(self) -> np.ndarray:
        return np.concatenate([self.add_scores, self.del_scores, self.swap_scores])

    def move(self, index: int) -> Move:
        if index < self.n_add:
            return Move(MoveKind.ADD, into=int(self.add_idx[index]))
        index -= self.n_add
        if index < self.n_del:
            return Move(MoveKind.DELETE, out=int(self.del_idx[index]))
        index -= self.n_del
        return Move(MoveKind.SWAP, int(self.del_idx[index // self.n_add]), int(self.add_idx[index % self.n_add]))

    def model(self, index: int) -> Model:
        return apply_move(self.gamma, self.move(index))

    def index_of(self, other: Sequence[int]) -> int:
        """N(γ) 안에서 other 의 위치"""
        other = set(other)
        mine = set(self.gamma)
        added = sorted(other - mine)
        removed = sorted(mine - other)
        if len(added) == 1 and not removed:
            return int(np.searchsorted(self.add_idx, added[0]))
        if len(removed) == 1 and not added:
            return self.n_add + int(np.searchsorted(self.del_idx, removed[0]))
        if len(added) == 1 and len(removed) == 1:
            out = int(np.searchsorted(self.del_idx, removed[0]))
            return self.n_add + self.n_del + out * self.n_add + int(np.searchsorted(self.add_idx, added[0]))
        raise ValueError(f"{sorted(other)}는 {self.gamma}의 이웃이 아닙니다")


def rw_proposal_pmf(kind: str, k: int, p: int, b: Optional[Sequence[float]] = None) -> np.ndarray:
    """모형공간 RW 제안 pmf (추가/삭제/교환 순서).

    대칭형은 경계(γ = ∅, |γ| = p)에서 빈 이동 종류의 질량을 제자리 머무름으로 남겨 합이 1보다 작다.
    비대칭형은 빈 종류의 질량을 나머지에 비례 재분배한다.
    """
    kind = BaseKind(kind)
    counts = np.array([p - k, k, k * (p - k)], dtype=float)
    if counts.sum() <= 0:
        raise DegenerateSupportError("이웃이 비어 있습니다")
    if kind == BaseKind.SYMMETRIC:
        mass = np.where(counts > 0, [(p - k) / (2.0 * p), k / (2.0 * p), 0.5], 0.0)
    else:
        mass = np.asarray(b if b is not None else (0.4, 0.4, 0.2), float)
        if mass.shape != (3,) or np.any(mass < 0) or abs(mass.sum() - 1.0) > 1e-12:
            raise ValueError("b⁺, b⁻, b°는 음이 아니고 합이 1이어야 합니다")
        mass = np.where(counts > 0, mass, 0.0)
        if mass.sum() <= 0:
            raise DegenerateSupportError("비어 있지 않은 이동 종류에 질량이 없습니다")
        mass = mass / mass.sum()
    return np.concatenate([np.full(int(c), m / c) if c > 0 else np.zeros(0) for m, c in zip(mass, counts)])


def stay_probability(pmf: np.ndarray) -> float:
    """N(γ) 밖으로 빠진 질량 = 제자리 머무름 확률"""
    return max(0.0, 1.0 - float(np.sum(pmf)))


def informed_g_pmf(scores: Union[NeighborhoodScores, np.ndarray]) -> np.ndarray:
    """g(γ′|γ) ∝ ψ(γ′|z) on N(γ)"""
    values = scores.scores if isinstance(scores, NeighborhoodScores) else np.asarray(scores, float)
    top = np.max(values) if values.size else -np.inf
    if not np.isfinite(top):
        raise DegenerateSupportError("이웃 점수가 모두 −∞ 입니다")
    return np.exp(values - logsumexp(values))


def neighborhood_affinity(f_pmf: np.ndarray, g_pmf: np.ndarray) -> Affinity:
    return discrete_affinity(f_pmf, g_pmf)


def _geometric_pmf(f_pmf: np.ndarray, g_pmf: np.ndarray, epsilon: float) -> np.ndarray:
    if epsilon == 0.0:
        return f_pmf
    aff = neighborhood_affinity(f_pmf, g_pmf)
    if aff.is_degenerate:
        return f_pmf
    weight = h_weight(aff.theta, epsilon)
    return (1.0 - weight) * f_pmf + weight * discrete_residual_pmf(f_pmf, g_pmf, aff.value)


def proposal_row(f_pmf: np.ndarray, g_pmf: np.ndarray, epsilon: float) -> np.ndarray:
    """N(γ) 위 φ_ε, 마지막 칸은 제자리 머무름 (g 는 그 칸에 질량 0)"""
    fExt = np.append(f_pmf, stay_probability(f_pmf))
    return _geometric_pmf(fExt, np.append(g_pmf, 0.0), epsilon)


# ---------------------------------------------------------------------------
# 점수 계산기
# ---------------------------------------------------------------------------

@dataclass
class VSState:
    gamma: Model
    chol: CholState
    log_post: float
    scores: Optional[NeighborhoodScores] = None


class ModelScorer:
    """gram 열 캐시와 이웃 점수 LRU를 가진 점진 계산기"""

    def __init__(self, data: VSData, cache_size: int = 512):
        self.data = data
        self.cache_size = int(cache_size)
        self._gram: Dict[int, np.ndarray] = {}
        self._states: "OrderedDict[Model, VSState]" = OrderedDict()
        self.candidates_scored = 0
        self.gram_rows_computed = 0
        self.refactorizations = 0
        self.cache_hits = 0

    def gram_column(self, j: int) -> np.ndarray:
        col = self._gram.get(j)
        if col is None:
            col = self.data.gram_column(j)
            self._gram[j] = col
            self.gram_rows_computed += 1
        return col

    def _gram_rows(self, order: Sequence[int]) -> np.ndarray:
        if not order:
            return np.zeros((0, self.data.p))
        return np.vstack([self.gram_column(i) for i in order])

    # -- Cholesky ---------------------------------------------------------

    def empty(self) -> CholState:
        return CholState((), np.zeros((0, 0)), np.zeros(0), np.zeros(0), self.data.ztz)

    def refactor(self, gamma: Sequence[int]) -> CholState:
        """처음부터 다시 분해"""
        order = tuple(gamma)
        if not order:
            return self.empty()
        G = self._gram_rows(order)[:, list(order)]
        A = (G + G.T) / 2.0 + self.data.lam * np.eye(len(order))
        try:
            U = cholesky(A, lower=False)
        except LinAlgError as e:
            raise CholeskyError(f"모형 {order} 분해 실패: {e}")
        wz = self.data.wz[list(order)]
        v = solve_triangular(U, wz, trans='T', lower=False)
        R = self.data.ztz - float(v @ v)
        if R <= 0:
            raise CholeskyError(f"모형 {order}의 ridge 잔차가 양수가 아닙니다: {R:.3e}")
        return CholState(order, U, wz, v, R)

    def _append(self, chol: CholState, j: int) -> CholState:
        k = chol.size
        c = self.data.col_ss[j] + self.data.lam
        if k == 0:
            d2, s = c, np.zeros(0)
        else:
            b = self.gram_column(j)[list(chol.order)]
            s = solve_triangular(chol.U, b, trans='T', lower=False, check_finite=False)
            d2 = c - float(s @ s)
        if d2 <= 0:
            raise CholeskyError(f"열 {j} 추가 후 양정치성이 깨졌습니다 (d² = {d2:.3e})")
        d = math.sqrt(d2)
        U = np.zeros((k + 1, k + 1))
        U[:k, :k] = chol.U
        U[:k, k] = s
        U[k, k] = d
        vNew = (self.data.wz[j] - float(s @ chol.v)) / d
        R = chol.R - vNew * vNew
        if R <= 0:
            raise CholeskyError(f"열 {j} 추가 후 ridge 잔차가 양수가 아닙니다: {R:.3e}")
        return CholState(chol.order + (j,), U, np.append(chol.wz, self.data.wz[j]), np.append(chol.v, vNew), R)

    def _remove(self, chol: CholState, j: int) -> CholState:
        pos = chol.order.index(j)
        U = choldelete(chol.U, pos)
        wz = np.delete(chol.wz, pos)
        order = chol.order[:pos] + chol.order[pos + 1:]
        v = solve_triangular(U, wz, trans='T', lower=False, check_finite=False) if order else np.zeros(0)
        R = self.data.ztz - float(v @ v)
        if R <= 0:
            raise CholeskyError(f"열 {j} 삭제 후 ridge 잔차가 양수가 아닙니다: {R:.3e}")
        return CholState(order, U, wz, v, R)

    def chol_update(self, chol: CholState, move: Move) -> CholState:
        """추가/삭제/교환. 수치 실패 시 재분해 후 재시도"""
        try:
            if move.kind == MoveKind.ADD:
                return self._append(chol, move.into)
            if move.kind == MoveKind.DELETE:
                return self._remove(chol, move.out)
            return self._append(self._remove(chol, move.out), move.into)
        except (CholeskyError, LinAlgError) as e:
            self.refactorizations += 1
            logger.warning(f"⚠️ 점진 Cholesky 실패로 재분해합니다: {e}")
            return self.refactor(apply_move(chol.gamma, move))

    # -- 점수 ---------------------------------------------------------------

    def _add_scores(self, chol: CholState, G: np.ndarray, candidates: np.ndarray) -> np.ndarray:
        """chol 모형에 candidates 각각을 추가한 모형의 log ψ (벡터화)"""
        if candidates.size == 0:
            return np.zeros(0)
        k = chol.size
        d2 = self.data.col_ss[candidates] + self.data.lam
        wz = self.data.wz[candidates]
        if k:
            S = solve_triangular(chol.U, G[:, candidates], trans='T', lower=False, check_finite=False)
            d2 = d2 - np.sum(S * S, axis=0)
            wz = wz - S.T @ chol.v
        with np.errstate(invalid='ignore', divide='ignore'):
            vNew = wz / np.sqrt(d2)
            R = chol.R - vNew * vNew
            scores = _log_post(self.data, k + 1, chol.logdet + np.log(d2), R)
        bad = np.flatnonzero(~((d2 > 0) & (R > 0)))
        for idx in bad:
            self.refactorizations += 1
            chosen = self.refactor(chol.order + (int(candidates[idx]),))
            scores[idx] = log_marginal(self.data, chosen)
        self.candidates_scored += candidates.size
        return scores

    def _delete_scores(self, chol: CholState) -> np.ndarray:
        """정렬된 구성원 순서로, 하나씩 뺀 모형의 log ψ"""
        k = chol.size
        if k == 0:
            return np.zeros(0)
        Uinv = solve_triangular(chol.U, np.eye(k), lower=False)
        ainvDiag = np.sum(Uinv * Uinv, axis=1)
        coef = Uinv @ chol.v
        R = chol.R + coef * coef / ainvDiag
        scores = _log_post(self.data, k - 1, chol.logdet + np.log(ainvDiag), R)
        self.candidates_scored += k
        return scores[np.argsort(chol.order)]

    def neighborhood_scores(self, chol: CholState, log_post: Optional[float] = None) -> NeighborhoodScores:
        gamma = chol.gamma
        p = self.data.p
        inside = np.zeros(p, dtype=bool)
        inside[list(gamma)] = True
        addIdx = np.flatnonzero(~inside)
        delIdx = np.asarray(gamma, dtype=int)
        G = self._gram_rows(chol.order)
        addScores = self._add_scores(chol, G, addIdx)
        delScores = self._delete_scores(chol)
        swaps = []
        for i in delIdx:
            reduced = self._remove(chol, int(i))
            pos = chol.order.index(int(i))
            swaps.append(self._add_scores(reduced, np.delete(G, pos, axis=0), addIdx))
        swapScores = np.concatenate(swaps) if swaps else np.zeros(0)
        own = log_marginal(self.data, chol) if log_post is None else log_post
        return NeighborhoodScores(gamma, p, own, addIdx, delIdx, addScores, delScores, swapScores)

    def _remember(self, state: VSState) -> VSState:
        self._states[state.gamma] = state
        self._states.move_to_end(state.gamma)
        while len(self._states) > self.cache_size:
            self._states.popitem(last=False)
        return state

    def state_for(self, gamma: Sequence[int], with_scores: bool = True) -> VSState:
        gamma = canonical_model(gamma, self.data.p)
        cached = self._states.get(gamma)
        if cached is not None and (cached.scores is not None or not with_scores):
            self.cache_hits += 1
            self._states.move_to_end(gamma)
            return cached
        chol = self.refactor(gamma)
        return self._complete(chol, with_scores)

    def _complete(self, chol: CholState, with_scores: bool) -> VSState:
        logPost = log_marginal(self.data, chol)
        scores = self.neighborhood_scores(chol, logPost) if with_scores else None
        state = VSState(chol.gamma, chol, logPost, scores)
        return self._remember(state) if with_scores else state

    def state_after(self, state: VSState, move: Move, with_scores: bool = True) -> VSState:
        gamma = apply_move(state.gamma, move)
        cached = self._states.get(gamma)
        if cached is not None and (cached.scores is not None or not with_scores):
            self.cache_hits += 1
            self._states.move_to_end(gamma)
            return cached
        return self._complete(self.chol_update(state.chol, move), with_scores)


def chol_update(scorer: ModelScorer, chol: CholState, move: Move) -> CholState:
    return scorer.chol_update(chol, move)


# ---------------------------------------------------------------------------
# 모형공간 MH
# ---------------------------------------------------------------------------

class VSStep(NamedTuple):
    state: VSState
    accepted: bool
    log_alpha: float
    move: Move


def _draw_index(pmf: np.ndarray, rng: np.random.Generator) -> int:
    cumulative = np.cumsum(pmf)
    return int(min(np.searchsorted(cumulative, rng.random() * cumulative[-1], side='right'), pmf.size - 1))


def vs_geometric_step(scorer: ModelScorer, state: VSState, epsilon: float, base: str,
                      rng: np.random.Generator, b: Optional[Sequence[float]] = None) -> VSStep:
    """f = RW pmf, g = 이웃 위 정보 pmf, h 를 정확히 열거해 φ_ε 에서 제안"""
    scores = state.scores if state.scores is not None else scorer.state_for(state.gamma).scores
    p = scorer.data.p
    phi = proposal_row(rw_proposal_pmf(base, len(state.gamma), p, b), informed_g_pmf(scores), epsilon)
    index = _draw_index(phi, rng)
    if index == phi.size - 1:
        return VSStep(state, False, 0.0, Move(MoveKind.STAY))
    move = scores.move(index)
    proposed = scorer.state_after(state, move)
    back = proposed.scores
    phiBack = proposal_row(rw_proposal_pmf(base, len(proposed.gamma), p, b), informed_g_pmf(back), epsilon)
    logAlpha = (proposed.log_post - state.log_post
                + math.log(phiBack[back.index_of(state.gamma)]) - math.log(phi[index]))
    if logAlpha >= 0.0 or math.log(rng.random()) < logAlpha:
        return VSStep(proposed, True, min(logAlpha, 0.0), move)
    return VSStep(state, False, logAlpha, move)


def _class_probability(base: str, k: int, p: int, cls: int, b: Optional[Sequence[float]]) -> float:
    pmf = rw_proposal_pmf(base, k, p, b)
    starts = np.cumsum([0, p - k, k])
    return float(pmf[starts[cls]]) if pmf.size > starts[cls] else 0.0


def vs_rw_step(scorer: ModelScorer, state: VSState, base: str, rng: np.random.Generator,
               b: Optional[Sequence[float]] = None) -> VSStep:
    """RW 기준 표집기: 이웃 전체를 점수화하지 않고 제안 모형만 계산"""
    p = scorer.data.p
    k = len(state.gamma)
    pmfClass = rw_proposal_pmf(base, k, p, b)
    index = _draw_index(np.append(pmfClass, stay_probability(pmfClass)), rng)
    if index == pmfClass.size:
        return VSStep(state, False, 0.0, Move(MoveKind.STAY))
    members = list(state.gamma)
    inside = set(members)
    outside = None
    if index < p - k:
        outside = [j for j in range(p) if j not in inside]
        move, cls, back = Move(MoveKind.ADD, into=outside[index]), 0, 1
    elif index < p:
        move, cls, back = Move(MoveKind.DELETE, out=members[index - (p - k)]), 1, 0
    else:
        outside = [j for j in range(p) if j not in inside]
        r = index - p
        move, cls, back = Move(MoveKind.SWAP, members[r // (p - k)], outside[r % (p - k)]), 2, 2
    proposed = scorer.state_after(state, move, with_scores=False)
    kNew = len(proposed.gamma)
    logAlpha = (proposed.log_post - state.log_post
                + math.log(_class_probability(base, kNew, p, back, b))
                - math.log(_class_probability(base, k, p, cls, b)))
    if logAlpha >= 0.0 or math.log(rng.random()) < logAlpha:
        return VSStep(proposed, True, min(logAlpha, 0.0), move)
    return VSStep(state, False, logAlpha, move)


@dataclass
class VSTrace:
    models: List[Model]
    accepted: np.ndarray
    log_posts: np.ndarray
    seed: Optional[int]
    wall_time: float
    completed: bool = True
    error: Optional[str] = None

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted)) if self.accepted.size else float('nan')

    def best(self) -> Tuple[Model, float]:
        """방문한 모형 중 사후확률 최대"""
        i = int(np.argmax(self.log_posts))
        return self.models[i], float(self.log_posts[i])


def run_varsel(scorer: ModelScorer, n: int, seed: int, sampler: str = "geometric",
               epsilon: float = 0.5, base: str = "symmetric", b: Optional[Sequence[float]] = None,
               init: Sequence[int] = ()) -> VSTrace:
    if n < 1:
        raise ValueError(f"반복 횟수는 1 이상이어야 합니다: {n}")
    if sampler not in ("geometric", "rw"):
        raise ValueError(f"알 수 없는 표집기: {sampler}")
    rng = makeRng(seed)
    state = scorer.state_for(init, with_scores=(sampler == "geometric"))
    models, accepted, logPosts = [], [], []
    error = None
    started = time.perf_counter()
    for i in range(n):
        try:
            if sampler == "geometric":
                step = vs_geometric_step(scorer, state, epsilon, base, rng, b)
            else:
                step = vs_rw_step(scorer, state, base, rng, b)
        except (CholeskyError, DegenerateSupportError) as e:
            error = f"{type(e).__name__}: {e}"
            logger.error(f"❌ 변수선택 체인이 {i + 1}번째 반복에서 중단되었습니다: {error}")
            break
        state = step.state
        models.append(state.gamma)
        accepted.append(step.accepted)
        logPosts.append(state.log_post)
    return VSTrace(models, np.asarray(accepted, bool), np.asarray(logPosts, float), seed,
                   time.perf_counter() - started, error is None, error)


# ---------------------------------------------------------------------------
# 작은 p 정확 계산
# ---------------------------------------------------------------------------

def all_models(p: int) -> List[Model]:
    return [combo for k in range(p + 1) for combo in combinations(range(p), k)]


def enumerate_log_posterior(scorer: ModelScorer) -> Dict[Model, float]:
    return {gamma: scorer.state_for(gamma, with_scores=False).log_post for gamma in all_models(scorer.data.p)}


def exact_inclusion_probabilities(scorer: ModelScorer) -> np.ndarray:
    logs = enumerate_log_posterior(scorer)
    models = list(logs)
    values = np.array([logs[g] for g in models])
    weights = np.exp(values - logsumexp(values))
    mip = np.zeros(scorer.data.p)
    for w, gamma in zip(weights, models):
        mip[list(gamma)] += w
    return mip


def assemble_transition_matrix(scorer: ModelScorer, epsilon: float = 0.5, base: str = "symmetric",
                               sampler: str = "geometric", b: Optional[Sequence[float]] = None) -> FiniteChain:
    """2^p 모형 위 정확한 전이행렬 (작은 p 전용)"""
    p = scorer.data.p
    if p > 12:
        raise ValueError("정확 전이행렬은 p ≤ 12 에서만 만듭니다")
    models = all_models(p)
    index = {gamma: i for i, gamma in enumerate(models)}
    Q = np.zeros((len(models), len(models)))
    logPsi = np.empty(len(models))
    for i, gamma in enumerate(models):
        state = scorer.state_for(gamma)
        logPsi[i] = state.log_post
        f = rw_proposal_pmf(base, len(gamma), p, b)
        if sampler == "rw":
            row = np.append(f, stay_probability(f))
        else:
            row = proposal_row(f, informed_g_pmf(state.scores), epsilon)
        for pos, mass in enumerate(row[:-1]):
            Q[i, index[state.scores.model(pos)]] += mass
        Q[i, i] += row[-1]
    return mh_transition_matrix(Q, np.exp(logPsi - logPsi.max()))


# ---------------------------------------------------------------------------
# 사후 요약
# ---------------------------------------------------------------------------

@dataclass
class PosteriorSummary:
    mip: np.ndarray
    mip_weighted: np.ndarray
    median_model: Model
    wam_model: Model
    unique_models: int
    r2: Dict[str, float] = field(default_factory=dict)


def model_r2(data: VSData, model: Sequence[int]) -> float:
    """절편 포함 최소제곱 R²"""
    if not model:
        return 0.0
    Wg = data.columns(model)
    coef, *_ = np.linalg.lstsq(Wg, data.zt, rcond=None)
    resid = data.zt - Wg @ coef
    return float(1.0 - resid @ resid / data.ztz)


def posterior_summaries(models: Sequence[Sequence[int]], scorer: ModelScorer) -> PosteriorSummary:
    """방문 빈도 MIP (median 모형), 사후가중 MIP (WAM)"""
    if len(models) == 0:
        raise ValueError("빈 trace 입니다")
    p = scorer.data.p
    counts = np.zeros(p)
    for gamma in models:
        counts[list(gamma)] += 1.0
    mip = counts / len(models)
    unique = sorted({canonical_model(g) for g in models})
    logs = np.array([scorer.state_for(g, with_scores=False).log_post for g in unique])
    weights = np.exp(logs - logsumexp(logs))
    weighted = np.zeros(p)
    for w, gamma in zip(weights, unique):
        weighted[list(gamma)] += w
    median = tuple(int(j) for j in np.flatnonzero(mip > 0.5))
    wam = tuple(int(j) for j in np.flatnonzero(weighted > 0.5))
    return PosteriorSummary(mip, weighted, median, wam, len(unique),
                            {"median": model_r2(scorer.data, median), "wam": model_r2(scorer.data, wam)})
