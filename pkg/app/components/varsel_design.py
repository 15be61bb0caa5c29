"""변수선택 모의실험 설계와 참 모형 대비 평가 지표"""
import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from strenum import StrEnum

from app.components.varsel import Model, VSData, VSTrace, canonical_model
from app.utils.logging_utils import setupLogging
from app.utils.seed_utils import makeRng

logger = setupLogging()


class DesignKind(StrEnum):
    INDEPENDENT = "independent"
    COMPOUND = "compound"
    AR = "ar"
    FACTOR = "factor"
    EXTREME = "extreme"


@dataclass(frozen=True, eq=False)
class SimulatedDesign:
    kind: DesignKind
    data: VSData
    beta: np.ndarray
    gamma: Model
    sigma2: float
    W_test: Optional[np.ndarray] = None
    z_test: Optional[np.ndarray] = None

    def as_tuple(self) -> Tuple[VSData, np.ndarray, Model]:
        return self.data, self.beta, self.gamma


def design_beta(kind: DesignKind, p: int) -> np.ndarray:
    beta = np.zeros(p)
    if kind == DesignKind.INDEPENDENT:
        values = [0.5, 0.75, 1.0, 1.25, 1.5]
        beta[:min(5, p)] = values[:min(5, p)]
    elif kind == DesignKind.AR:
        for j, value in ((0, 3.0), (3, 1.5), (6, 2.0)):
            if j < p:
                beta[j] = value
    else:
        beta[:min(5, p)] = 5.0
    return beta


def _draw(kind: DesignKind, m: int, p: int, rho: float, loadings: Optional[np.ndarray],
          rng: np.random.Generator) -> np.ndarray:
    if kind == DesignKind.INDEPENDENT:
        return rng.standard_normal((m, p))
    if kind == DesignKind.COMPOUND:
        shared = rng.standard_normal((m, 1))
        return math.sqrt(1.0 - rho) * rng.standard_normal((m, p)) + math.sqrt(rho) * shared
    if kind == DesignKind.AR:
        W = np.empty((m, p))
        W[:, 0] = rng.standard_normal(m)
        scale = math.sqrt(1.0 - rho * rho)
        for j in range(1, p):
            W[:, j] = rho * W[:, j - 1] + scale * rng.standard_normal(m)
        return W
    if kind == DesignKind.FACTOR:
        return rng.standard_normal((m, loadings.shape[1])) @ loadings.T + rng.standard_normal((m, p))
    b = rng.standard_normal((m, p))
    t = rng.standard_normal((m, 5))
    W = np.empty((m, p))
    head = min(5, p)
    W[:, :head] = (b[:, :head] + t[:, :head]) / math.sqrt(2.0)
    if p > 5:
        W[:, 5:] = (b[:, 5:] + t.sum(axis=1, keepdims=True)) / 2.0
    return W


def population_covariance(kind: DesignKind, indices: Sequence[int], rho: float = 0.6,
                          loadings: Optional[np.ndarray] = None) -> np.ndarray:
    """설계 모집단 공분산의 indices 부분행렬"""
    idx = np.asarray(indices, dtype=int)
    same = idx[:, None] == idx[None, :]
    if kind == DesignKind.INDEPENDENT:
        return same.astype(float)
    if kind == DesignKind.COMPOUND:
        return np.where(same, 1.0, rho)
    if kind == DesignKind.AR:
        return rho ** np.abs(idx[:, None] - idx[None, :]).astype(float)
    if kind == DesignKind.FACTOR:
        F = loadings[idx]
        return F @ F.T + np.eye(idx.size)
    head = idx < 5
    cov = np.empty((idx.size, idx.size))
    for a in range(idx.size):
        for c in range(idx.size):
            if head[a] and head[c]:
                cov[a, c] = 1.0 if same[a, c] else 0.0
            elif head[a] != head[c]:
                cov[a, c] = 1.0 / (2.0 * math.sqrt(2.0))
            else:
                cov[a, c] = 1.5 if same[a, c] else 1.25
    return cov


def simulate_design(kind: str, p: int, m: int, r2: float, seed: int, m_test: int = 0, rho: float = 0.6,
                    lam: Optional[float] = None, omega: Optional[float] = None) -> SimulatedDesign:
    """설계 생성, σ² = βᵀΣβ(1−R²)/R², 반응 생성"""
    try:
        kind = DesignKind(kind)
    except ValueError:
        raise ValueError(f"알 수 없는 설계 종류: {kind} (가능: {[k.value for k in DesignKind]})")
    if not 0.0 < r2 < 1.0:
        raise ValueError(f"R²는 (0, 1) 범위여야 합니다: {r2}")
    if p < 1 or m < 3:
        raise ValueError(f"p ≥ 1, m ≥ 3 이어야 합니다 (p={p}, m={m})")
    rng = makeRng(seed)
    loadings = rng.standard_normal((p, 2)) if kind == DesignKind.FACTOR else None
    beta = design_beta(kind, p)
    support = np.flatnonzero(beta)
    signal = float(beta[support] @ population_covariance(kind, support, rho, loadings) @ beta[support])
    sigma2 = signal * (1.0 - r2) / r2

    W = _draw(kind, m, p, rho, loadings, rng)
    z = W @ beta + math.sqrt(sigma2) * rng.standard_normal(m)
    Wt = zt = None
    if m_test > 0:
        Wt = _draw(kind, m_test, p, rho, loadings, rng)
        zt = Wt @ beta + math.sqrt(sigma2) * rng.standard_normal(m_test)
    logger.info(f"📐 설계 '{kind}' 생성: m={m}, p={p}, R²={r2}, σ²={sigma2:.4g}")
    return SimulatedDesign(kind, VSData(W, z, lam, omega), beta, tuple(int(j) for j in support), sigma2, Wt, zt)


# ---------------------------------------------------------------------------
# 평가 지표
# ---------------------------------------------------------------------------

def selection_metrics(model: Sequence[int], truth: Sequence[int]) -> Dict[str, float]:
    chosen = set(canonical_model(model))
    true = set(canonical_model(truth))
    union = chosen | true
    return {
        "coverage": float(true <= chosen),
        "size": float(len(chosen)),
        "fdr": len(chosen - true) / len(chosen) if chosen else 0.0,
        "fnr": len(true - chosen) / len(true) if true else 0.0,
        "jaccard": len(chosen & true) / len(union) if union else 1.0,
    }


def fit_coefficients(data: VSData, model: Sequence[int]) -> Tuple[float, np.ndarray]:
    """원척도 W 에 절편 포함 최소제곱 (모형 밖 계수 0)"""
    beta = np.zeros(data.p)
    idx = list(model)
    if not idx:
        return data.z_mean, beta
    raw = data.raw[:, idx]
    raw = np.asarray(raw.todense()) if data.sparse else raw
    X = np.column_stack([np.ones(data.m), raw])
    coef, *_ = np.linalg.lstsq(X, data.z, rcond=None)
    beta[idx] = coef[1:]
    return float(coef[0]), beta


def coefficient_mse(data: VSData, model: Sequence[int], true_beta: np.ndarray) -> float:
    _, beta = fit_coefficients(data, model)
    return float(np.mean((beta - true_beta) ** 2))


def mspe(data: VSData, model: Sequence[int], W_test: np.ndarray, z_test: np.ndarray) -> float:
    intercept, beta = fit_coefficients(data, model)
    return float(np.mean((z_test - intercept - W_test @ beta) ** 2))


def hitting_iteration(models: Sequence[Sequence[int]], target: Sequence[int]) -> Optional[int]:
    """target 을 처음 방문한 반복 번호 (1-기반), 없으면 None"""
    target = canonical_model(target)
    for i, gamma in enumerate(models):
        if tuple(gamma) == target:
            return i + 1
    return None


def hitting_statistics(traces: Sequence[VSTrace], truth: Optional[Sequence[int]] = None) -> Dict[str, object]:
    """N_success: 실행 전체에서 최고 사후 방문 모형을 처음 방문한 반복"""
    best = None
    for trace in traces:
        if trace.models:
            model, value = trace.best()
            if best is None or value > best[1]:
                best = (model, value)
    if best is None:
        return {"best_model": None, "iterations": [], "success_rate": 0.0}
    hits = [hitting_iteration(t.models, best[0]) for t in traces]
    found = np.array([h for h in hits if h is not None], dtype=float)
    stats: Dict[str, object] = {
        "best_model": list(best[0]),
        "best_log_post": best[1],
        "iterations": hits,
        "success_rate": found.size / len(traces),
        "median": float(np.median(found)) if found.size else None,
        "quantiles": {str(q): float(np.quantile(found, q)) for q in (0.25, 0.5, 0.75)} if found.size else {},
    }
    if truth is not None:
        stats["best_is_truth"] = tuple(best[0]) == canonical_model(truth)
    return stats
