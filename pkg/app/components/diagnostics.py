"""체인 품질 지표: MSJD, ACF, batch-means ESS, 다변량 ESS"""
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from scipy.special import gammaln
from scipy.stats import chi2

from app.components.errors import DegenerateVarianceError, SingularCovarianceError
from app.utils.logging_utils import setupLogging

logger = setupLogging()


def _as_matrix(states: Any) -> np.ndarray:
    x = np.asarray(states, dtype=float)
    if x.ndim == 1:
        return x[:, None]
    if x.ndim != 2:
        raise ValueError(f"trace 형태 {x.shape}는 (n,) 또는 (n, d)여야 합니다")
    return x


def _as_series(values: Any) -> np.ndarray:
    x = np.asarray(values, dtype=float)
    if x.ndim == 2 and x.shape[1] == 1:
        x = x[:, 0]
    if x.ndim != 1:
        raise ValueError("스칼라 계열이 필요합니다 (좌표 또는 함수값)")
    return x


def msjd(states: Any) -> float:
    """연속 상태 간 제곱 유클리드 이동거리의 평균"""
    x = _as_matrix(states)
    if x.shape[0] < 2:
        raise ValueError("MSJD는 상태가 2개 이상 필요합니다")
    jumps = np.diff(x, axis=0)
    return float(np.sum(jumps * jumps) / (x.shape[0] - 1))


def acf(values: Any, max_lag: int) -> np.ndarray:
    """편향 정규화 표본 자기상관 (lag 0..max_lag)"""
    x = _as_series(values)
    n = x.size
    if max_lag < 1 or n <= 10 * max_lag:
        raise ValueError(f"ACF는 n > 10·max_lag 가 필요합니다 (n={n}, max_lag={max_lag})")
    centered = x - x.mean()
    c0 = float(centered @ centered) / n
    if c0 <= 0.0:
        raise DegenerateVarianceError("분산이 0인 계열의 ACF는 정의되지 않습니다")
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    for k in range(1, max_lag + 1):
        out[k] = float(centered[:-k] @ centered[k:]) / n / c0
    return out


def batch_means(x: np.ndarray, batch_size: int) -> np.ndarray:
    """앞쪽 나머지를 버리고 완전한 배치들의 평균 (n_batch, d)"""
    n = x.shape[0]
    count = n // batch_size
    trimmed = x[n - count * batch_size:]
    return trimmed.reshape(count, batch_size, -1).mean(axis=1)


BATCH_EXPONENT = 1.0 / 3.0


def batch_size(n: int, nu: float = BATCH_EXPONENT) -> int:
    """배치 크기 ⌊n^ν⌋ (최소 1)"""
    if not 0.0 < nu < 1.0:
        raise ValueError(f"배치 지수 ν는 (0, 1) 범위여야 합니다: {nu}")
    return max(1, int(math.floor(n ** nu + 1e-9)))


def mc_variance(values: Any, nu: float = BATCH_EXPONENT) -> float:
    """batch-means 몬테카를로 분산 σ²_MC (배치 크기 ⌊n^ν⌋)"""
    x = _as_series(values)
    b = batch_size(x.size, nu)
    means = batch_means(x[:, None], b)[:, 0]
    return float(b * np.var(means, ddof=1))


def ess(values: Any, nu: float = BATCH_EXPONENT) -> float:
    """n · σ̂²/σ̂²_MC"""
    x = _as_series(values)
    n = x.size
    if n < 100:
        raise ValueError(f"ESS는 n ≥ 100 이 필요합니다 (n={n})")
    variance = float(np.var(x, ddof=1))
    if variance <= 0.0:
        raise DegenerateVarianceError("분산이 0인 계열의 ESS는 정의되지 않습니다")
    sigmaMc = mc_variance(x, nu)
    if sigmaMc <= 0.0:
        raise DegenerateVarianceError("batch mean 분산이 0입니다")
    return n * variance / sigmaMc


def mc_covariance(states: Any, nu: float = BATCH_EXPONENT) -> np.ndarray:
    x = _as_matrix(states)
    b = batch_size(x.shape[0], nu)
    return b * np.atleast_2d(np.cov(batch_means(x, b), rowvar=False))


def _logdet_spd(matrix: np.ndarray, label: str) -> float:
    vals = np.linalg.eigvalsh(matrix)
    if vals[0] <= 1e-12 * max(vals[-1], 1e-300):
        raise SingularCovarianceError(f"{label} 공분산이 특이합니다 (최소 고유값 {vals[0]:.3e})")
    return float(np.sum(np.log(vals)))


def multivariate_ess(states: Any, nu: float = BATCH_EXPONENT) -> float:
    """n · (|Λ̂| / |Σ̂_MC|)^{1/d}"""
    x = _as_matrix(states)
    n, d = x.shape
    if n < 20 * d:
        raise ValueError(f"mESS는 n ≥ 20·d 가 필요합니다 (n={n}, d={d})")
    logdetLambda = _logdet_spd(np.atleast_2d(np.cov(x, rowvar=False)), "표본")
    logdetSigma = _logdet_spd(mc_covariance(x, nu), "몬테카를로")
    return n * math.exp((logdetLambda - logdetSigma) / d)


def min_ess(d: int, alpha: float = 0.05, eps: float = 0.05) -> int:
    """상대 허용오차 eps, 신뢰수준 1−alpha 에 필요한 최소 mESS"""
    logMin = (2.0 / d) * math.log(2.0) + math.log(math.pi) - (2.0 / d) * math.log(d) \
        - (2.0 / d) * gammaln(d / 2.0) - 2.0 * math.log(eps) + math.log(chi2.ppf(1.0 - alpha, d))
    return int(round(math.exp(logMin)))


@dataclass
class DiagnosticsReport:
    n: int
    dimension: int
    acf: np.ndarray
    ess: np.ndarray
    mess: Optional[float]
    msjd: float
    acceptance_rate: Optional[float]
    mc_covariance: Optional[np.ndarray]
    sample_covariance: np.ndarray
    means: np.ndarray
    extras: Dict[str, Any] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        """좌표별 평균, ESS, ACF 표"""
        frame = pd.DataFrame({
            "coordinate": np.arange(1, self.dimension + 1),
            "mean": self.means,
            "ess": self.ess,
        })
        for k in range(1, self.acf.shape[1]):
            frame[f"acf_{k}"] = self.acf[:, k]
        return frame

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "dimension": self.dimension,
            "means": self.means.tolist(),
            "ess": [None if not np.isfinite(v) else float(v) for v in self.ess],
            "mess": self.mess,
            "msjd": self.msjd,
            "acceptance_rate": self.acceptance_rate,
            "acf": self.acf.tolist(),
            **self.extras,
        }

    def to_text(self) -> str:
        lines = [
            f"반복 수: {self.n}",
            f"차원: {self.dimension}",
            f"수락률: {self.acceptance_rate:.4f}" if self.acceptance_rate is not None else "수락률: -",
            f"MSJD: {self.msjd:.6g}",
            f"mESS: {self.mess:.2f}" if self.mess is not None else "mESS: -",
        ]
        for j in range(self.dimension):
            acfText = ", ".join(f"{v:.3f}" for v in self.acf[j, 1:])
            lines.append(f"x{j + 1}: 평균 {self.means[j]:.6g}, ESS {self.ess[j]:.1f}, ACF [{acfText}]")
        for key, value in sorted(self.extras.items()):
            lines.append(f"{key}: {value}")
        return "\n".join(lines) + "\n"


def diagnose(states: Any, accepted: Optional[Any] = None, max_lag: int = 8,
             nu: float = BATCH_EXPONENT) -> DiagnosticsReport:
    """trace 전체 진단. 계산 불가한 항목은 NaN/None 으로 두고 경고"""
    x = _as_matrix(states)
    n, d = x.shape
    lag = max(1, min(max_lag, (n - 1) // 10))
    acfs = np.full((d, lag + 1), np.nan)
    esses = np.full(d, np.nan)
    for j in range(d):
        try:
            acfs[j] = acf(x[:, j], lag)
            esses[j] = ess(x[:, j], nu)
        except (DegenerateVarianceError, ValueError) as e:
            logger.warning(f"⚠️ x{j + 1} 진단 일부 생략: {e}")
    mess = None
    mcCov = None
    try:
        mcCov = mc_covariance(x, nu) if n >= 4 else None
        mess = multivariate_ess(x, nu)
    except (SingularCovarianceError, ValueError) as e:
        logger.warning(f"⚠️ mESS 생략: {e}")
    rate = float(np.mean(accepted)) if accepted is not None and len(accepted) else None
    return DiagnosticsReport(
        n=n,
        dimension=d,
        acf=acfs,
        ess=esses,
        mess=mess,
        msjd=msjd(x) if n >= 2 else 0.0,
        acceptance_rate=rate,
        mc_covariance=mcCov,
        sample_covariance=np.atleast_2d(np.cov(x, rowvar=False)) if n >= 2 else np.zeros((d, d)),
        means=x.mean(axis=0),
    )
