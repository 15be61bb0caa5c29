"""YAML로 정의한 유한 상태 검증 fixture 생성과 이름 붙은 검사 실행"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import yaml
from scipy.stats import norm

from app.components.errors import ConfigValidationError, GeomMcError, VerificationFailure
from app.components.geometry import DirectionSet, GeometricProposal, finite_conditional_density
from app.components.kernels import (
    exact_transition_matrix,
    finite_kernel,
    geometric_proposal_matrix,
    geometric_transition_matrix,
)
from app.components.ordering import (
    FiniteChain,
    c_epsilon_bound,
    detailed_balance_error,
    peskun_constant,
    remark1_domination,
    stationarity_error,
    uniform_ergodicity_bound,
    verify_theorem1,
)
from app.components.targets import finite_target
from app.utils.logging_utils import setupLogging

logger = setupLogging()

CHECKS = (
    "stationarity",
    "reversibility",
    "eps0-reduction",
    "covariance",
    "spectral-gap",
    "asymptotic-variance",
    "peskun-c-epsilon",
    "remark1-domination",
    "uniform-ergodicity",
)
GENERATED_DEFAULT = CHECKS[:8]
EXPLICIT_DEFAULT = ("stationarity", "reversibility", "covariance", "spectral-gap", "asymptotic-variance")


@dataclass
class OrderingFixture:
    name: str
    psi: np.ndarray
    checks: List[str]
    base_rows: Optional[np.ndarray] = None
    direction_rows: List[np.ndarray] = field(default_factory=list)
    weights: Optional[np.ndarray] = None
    epsilon: float = 0.5
    state_free: bool = False
    explicit_p: Optional[np.ndarray] = None
    explicit_q: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return self.psi.size

    @property
    def explicit(self) -> bool:
        return self.explicit_p is not None


@dataclass
class CheckOutcome:
    passed: bool
    slack: Optional[float]
    message: str = ""


@dataclass
class FixtureResult:
    name: str
    outcomes: Dict[str, CheckOutcome]

    @property
    def passed(self) -> bool:
        return all(o.passed for o in self.outcomes.values())

    def failures(self) -> List[str]:
        return [name for name, o in self.outcomes.items() if not o.passed]


def _rows_from_pmf(pmf: np.ndarray, n: int) -> np.ndarray:
    return np.repeat(pmf[None, :] / pmf.sum(), n, axis=0)


def _grid(entry: Dict[str, Any], n: int) -> np.ndarray:
    return np.linspace(float(entry.get("lower", -5.0)), float(entry.get("upper", 5.0)), n)


def _build_target(entry: Dict[str, Any], n: int, rng: np.random.Generator) -> np.ndarray:
    kind = entry.get("kind", "random")
    if kind == "weights":
        psi = np.asarray(entry["values"], float)
        if psi.size != n:
            raise ConfigValidationError(f"목표 가중치 길이 {psi.size} != 상태 수 {n}", field="target.values")
    elif kind == "random":
        psi = rng.gamma(float(entry.get("shape", 1.0)), size=n)
    elif kind == "discretized-normal":
        psi = norm.pdf(_grid(entry, n), float(entry.get("mean", 0.0)), float(entry.get("sd", 1.0)))
    else:
        raise ConfigValidationError(f"알 수 없는 목표 종류: {kind}", field="target.kind")
    return psi / psi.sum()


def _build_base(entry: Dict[str, Any], n: int, rng: np.random.Generator) -> np.ndarray:
    kind = entry.get("kind", "ring")
    if kind == "ring":
        stay = float(entry.get("stay", 0.0))
        width = int(entry.get("width", 1))
        rows = np.zeros((n, n))
        for x in range(n):
            for step in range(1, width + 1):
                rows[x, (x + step) % n] += (1.0 - stay) / (2 * width)
                rows[x, (x - step) % n] += (1.0 - stay) / (2 * width)
            rows[x, x] += stay
        return rows
    if kind == "uniform":
        return np.full((n, n), 1.0 / n)
    if kind == "random":
        return rng.dirichlet(np.full(n, float(entry.get("concentration", 1.0))), size=n)
    if kind == "discretized-normal":
        return _rows_from_pmf(norm.pdf(_grid(entry, n), float(entry.get("mean", 0.0)), float(entry.get("sd", 1.0))), n)
    raise ConfigValidationError(f"알 수 없는 base 종류: {kind}", field="base.kind")


def _build_direction(entry: Dict[str, Any], psi: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = psi.size
    kind = entry.get("kind", "target")
    if kind == "target":
        return _rows_from_pmf(psi, n)
    if kind == "uniform":
        return np.full((n, n), 1.0 / n)
    if kind == "local-target":
        width = int(entry.get("width", 2))
        rows = np.zeros((n, n))
        for x in range(n):
            dist = np.minimum(np.abs(np.arange(n) - x), n - np.abs(np.arange(n) - x))
            rows[x] = np.where(dist <= width, psi, 0.0)
            rows[x] /= rows[x].sum()
        return rows
    if kind == "random":
        concentration = np.full(n, float(entry.get("concentration", 1.0)))
        if entry.get("state_free", False):
            return _rows_from_pmf(rng.dirichlet(concentration), n)
        return rng.dirichlet(concentration, size=n)
    if kind == "discretized-normal":
        return _rows_from_pmf(norm.pdf(_grid(entry, n), float(entry.get("mean", 0.0)), float(entry.get("sd", 1.0))), n)
    raise ConfigValidationError(f"알 수 없는 방향 종류: {kind}", field="directions.kind")


def build_fixture(entry: Dict[str, Any]) -> OrderingFixture:
    """fixture 하나를 dict 명세로부터 생성"""
    name = str(entry.get("name", "fixture"))
    if "explicit" in entry:
        explicit = entry["explicit"]
        P = np.asarray(explicit["P"], float)
        Q = np.asarray(explicit["Q"], float)
        psi = np.asarray(explicit["psi"], float)
        return OrderingFixture(name, psi / psi.sum(), list(entry.get("checks", EXPLICIT_DEFAULT)),
                               explicit_p=P, explicit_q=Q)

    n = int(entry.get("states", 20))
    if n < 2:
        raise ConfigValidationError("상태 수는 2 이상이어야 합니다", field=f"{name}.states")
    rng = np.random.default_rng(int(entry.get("seed", 0)))
    psi = _build_target(entry.get("target", {}), n, rng)
    baseEntry = entry.get("base", {})
    base = _build_base(baseEntry, n, rng)
    dirEntries = entry.get("directions", [{"kind": "target"}])
    directions = [_build_direction(d, psi, rng) for d in dirEntries]
    weights = np.asarray(entry.get("weights", [1.0 / len(directions)] * len(directions)), float)
    stateFree = baseEntry.get("kind") in ("uniform", "discretized-normal") and all(
        d.get("kind") in ("target", "uniform", "discretized-normal")
        or (d.get("kind") == "random" and d.get("state_free", False)) for d in dirEntries)
    checks = list(entry.get("checks", GENERATED_DEFAULT))
    unknown = sorted(set(checks) - set(CHECKS))
    if unknown:
        raise ConfigValidationError(f"알 수 없는 검사: {unknown}", field=f"{name}.checks")
    return OrderingFixture(name, psi, checks, base, directions, weights, float(entry.get("epsilon", 0.5)), stateFree)


def load_fixtures(path: Union[str, Path]) -> List[OrderingFixture]:
    path = Path(path)
    if not path.exists():
        raise ConfigValidationError(f"fixture 파일이 없습니다: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        document = yaml.safe_load(f) or {}
    specs = document.get("fixtures") or []
    if not specs:
        raise ConfigValidationError("fixture가 하나도 없습니다", field="fixtures")
    return [build_fixture(s) for s in specs]


def _proposal(fixture: OrderingFixture, epsilon: float) -> GeometricProposal:
    base = finite_conditional_density(fixture.base_rows, "base")
    directions = DirectionSet(tuple(finite_conditional_density(r, f"g{i + 1}")
                                    for i, r in enumerate(fixture.direction_rows)), fixture.weights)
    return GeometricProposal(base, directions, epsilon)


def _outcome(slack: float, tol: float, label: str) -> CheckOutcome:
    return CheckOutcome(slack >= -tol, slack, f"{label} 여유 {slack:.3e}")


def run_fixture_checks(fixture: OrderingFixture, trials: int = 100, seed: Optional[int] = 0) -> FixtureResult:
    """fixture의 이름 붙은 검사들을 실행. 실패는 예외 대신 결과로 기록"""
    outcomes: Dict[str, CheckOutcome] = {}
    if fixture.explicit:
        P = FiniteChain(fixture.explicit_p, fixture.psi, reversible=False, validate=False)
        Q = FiniteChain(fixture.explicit_q, fixture.psi, reversible=False, validate=False)
        single = mixture = None
    else:
        target = finite_target(fixture.psi)
        prop = _proposal(fixture, fixture.epsilon)
        single = geometric_transition_matrix(target, prop)
        mixture = geometric_transition_matrix(target, prop, mixture=True)
        P = single
        Q = exact_transition_matrix(target, finite_kernel(fixture.base_rows))

    report = None
    for check in fixture.checks:
        try:
            if check == "stationarity":
                outcomes[check] = _outcome(1e-10 - max(stationarity_error(P.P, P.psi),
                                                       stationarity_error(Q.P, Q.psi)), 0.0, "ψP − ψ")
            elif check == "reversibility":
                outcomes[check] = _outcome(1e-10 - max(detailed_balance_error(P.P, P.psi),
                                                       detailed_balance_error(Q.P, Q.psi)), 0.0, "상세균형")
            elif check == "eps0-reduction":
                zero = geometric_transition_matrix(finite_target(fixture.psi), _proposal(fixture, 0.0))
                outcomes[check] = _outcome(1e-12 - float(np.max(np.abs(zero.P - Q.P))), 0.0, "ε=0 차이")
            elif check in ("covariance", "spectral-gap", "asymptotic-variance"):
                if report is None:
                    report = verify_theorem1(P, Q, trials=trials, seed=seed, raise_on_violation=False)
                slack = report.worst_slack.get(check)
                outcomes[check] = CheckOutcome(True, None, "생략 (c = 0)") if slack is None \
                    else _outcome(slack, 1e-9, check)
            elif check == "peskun-c-epsilon":
                cEps = c_epsilon_bound(fixture.base_rows, fixture.direction_rows, fixture.weights, fixture.epsilon)
                outcomes[check] = _outcome(peskun_constant(P.P, Q.P) - cEps, 1e-9, f"c_ε = {cEps:.6f}")
            elif check == "remark1-domination":
                outcomes[check] = _outcome(remark1_domination(single.P, mixture.P), 1e-12, "단일 − 방향별")
            elif check == "uniform-ergodicity":
                if not fixture.state_free:
                    raise VerificationFailure(check, "상태 무관 제안 fixture에서만 검사할 수 있습니다")
                phi = geometric_proposal_matrix(_proposal(fixture, fixture.epsilon))[0]
                result = uniform_ergodicity_bound(phi, fixture.psi)
                outcomes[check] = CheckOutcome(True, result.beta, f"β = {result.beta:.6g}")
        except VerificationFailure as e:
            outcomes[check] = CheckOutcome(False, e.slack, str(e))
        except GeomMcError as e:
            outcomes[check] = CheckOutcome(False, None, f"{type(e).__name__}: {e}")
        except ValueError as e:
            outcomes[check] = CheckOutcome(False, None, f"ValueError: {e}")
    result = FixtureResult(fixture.name, outcomes)
    if result.passed:
        logger.info(f"✅ fixture '{fixture.name}' 검사 {len(outcomes)}개 통과")
    else:
        logger.error(f"❌ fixture '{fixture.name}' 검사 실패: {result.failures()}")
    return result
