"""실험 설정 YAML 모델, 검증, --set 덮어쓰기"""
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from strenum import StrEnum

from app.components.diagnostics import BATCH_EXPONENT
from app.components.errors import ConfigValidationError
from app.components.geometry import AffinityMode
from app.components.kernels import KernelKind
from app.components.varsel import BaseKind
from app.components.varsel_design import DesignKind
from app.utils.logging_utils import setupLogging
from app.utils.settings import getSettings

logger = setupLogging()


class TargetKind(StrEnum):
    BUILTIN = "builtin"
    TWO_MODE = "two-mode"
    SIX_MODE = "six-mode"
    LOGISTIC = "logistic"


class DirectionKind(StrEnum):
    TARGET = "target"
    BUILTIN = "builtin"
    COMPONENTS = "components"
    LAPLACE = "laplace"


class ResidualSamplerKind(StrEnum):
    TUNED_NORMAL = "tuned-normal"
    TUNED_CAUCHY = "tuned-cauchy"


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class LogisticSimulation(StrictModel):
    m: int = Field(100, ge=1)
    p: int = Field(5, ge=1)
    seed: int = 0
    beta: Optional[List[float]] = None


class TargetConfig(StrictModel):
    kind: TargetKind
    distribution: Optional[str] = None
    params: Dict[str, Any] = Field(default_factory=dict)
    data: Optional[str] = None
    response: str = "z"
    intercept: bool = False
    simulate: Optional[LogisticSimulation] = None
    prior_var: float = Field(1000.0, gt=0)
    lower: float = -10.0
    upper: float = 10.0

    @model_validator(mode="after")
    def _check_source(self) -> "TargetConfig":
        if self.kind == TargetKind.BUILTIN and not self.distribution:
            raise ValueError("builtin 목표는 distribution이 필요합니다")
        if self.kind == TargetKind.LOGISTIC and (self.data is None) == (self.simulate is None):
            raise ValueError("logistic 목표는 data 또는 simulate 중 하나만 지정합니다")
        return self


class KernelConfig(StrictModel):
    kind: KernelKind
    params: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("kind")
    @classmethod
    def _base_kind(cls, value: KernelKind) -> KernelKind:
        if value in (KernelKind.GEOMETRIC, KernelKind.CUSTOM):
            raise ValueError(f"기본 커널로 쓸 수 없는 종류: {value}")
        return value


class DirectionConfig(StrictModel):
    kind: DirectionKind
    distribution: Optional[str] = None
    params: Dict[str, Any] = Field(default_factory=dict)
    residual_sampler: Optional[ResidualSamplerKind] = None

    @model_validator(mode="after")
    def _check_builtin(self) -> "DirectionConfig":
        if self.kind == DirectionKind.BUILTIN and not self.distribution:
            raise ValueError("builtin 방향은 distribution이 필요합니다")
        return self


class GeometricConfig(StrictModel):
    epsilon: float = Field(0.5, ge=0.0, le=1.0)
    mixture: bool = False
    affinity: AffinityMode = AffinityMode.CLOSED_FORM
    mc_samples: int = Field(default_factory=lambda: getSettings().sampler.affinity_samples, ge=10)
    mc_seed: int = Field(0, ge=0)
    quadrature_half_width: Optional[float] = Field(None, gt=0)
    quadrature_points: int = Field(default_factory=lambda: getSettings().sampler.quadrature_points, ge=101)
    directions: List[DirectionConfig] = Field(min_length=1)
    weights: Optional[List[float]] = None

    @model_validator(mode="after")
    def _check_weights(self) -> "GeometricConfig":
        if self.weights is not None and len(self.weights) != len(self.directions):
            raise ValueError("weights 길이가 directions 개수와 다릅니다")
        return self


class BlockConfig(StrictModel):
    coords: List[int] = Field(min_length=1)
    kernel: KernelConfig
    geometric: Optional[GeometricConfig] = None


class GibbsConfig(StrictModel):
    blocks: List[BlockConfig] = Field(min_length=1)


class OutputConfig(StrictModel):
    directory: Optional[str] = None
    chain: str = "chain.csv"
    models: str = "models.csv"
    report: str = "diagnostics.txt"
    summary: str = "summary.json"


class VarselDesignConfig(StrictModel):
    kind: DesignKind
    p: int = Field(ge=1)
    m: int = Field(ge=3)
    r2: float = Field(gt=0.0, lt=1.0)
    seed: int = 0
    m_test: int = Field(0, ge=0)
    rho: float = Field(0.6, ge=-1.0, lt=1.0)


class VarselDataConfig(StrictModel):
    path: str
    format: str = Field("delimited", pattern="^(delimited|sparse)$")
    response: str = "z"
    response_path: Optional[str] = None


class VarselConfig(StrictModel):
    design: Optional[VarselDesignConfig] = None
    data: Optional[VarselDataConfig] = None
    lam: Optional[float] = Field(None, gt=0)
    omega: Optional[float] = Field(None, gt=0, lt=1)
    sampler: str = Field("geometric", pattern="^(geometric|rw)$")
    epsilon: float = Field(0.5, ge=0.0, le=1.0)
    base: BaseKind = BaseKind.SYMMETRIC
    b: Optional[List[float]] = None
    replicates: int = Field(1, ge=1)
    init: List[int] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_source(self) -> "VarselConfig":
        if (self.design is None) == (self.data is None):
            raise ValueError("design 또는 data 중 하나만 지정합니다")
        if self.b is not None and len(self.b) != 3:
            raise ValueError("b는 (b⁺, b⁻, b°) 세 값입니다")
        if any(j < 1 for j in self.init):
            raise ValueError("init 인덱스는 1-기반입니다")
        return self


class ExperimentConfig(StrictModel):
    name: str = "experiment"
    iterations: int = Field(ge=1)
    seed: int = 0
    init: Optional[List[float]] = None
    max_lag: int = Field(8, ge=1)
    batch_exponent: float = Field(BATCH_EXPONENT, gt=0.0, lt=1.0)
    target: Optional[TargetConfig] = None
    kernel: Optional[KernelConfig] = None
    geometric: Optional[GeometricConfig] = None
    gibbs: Optional[GibbsConfig] = None
    varsel: Optional[VarselConfig] = None
    output: OutputConfig = Field(default_factory=OutputConfig)

    @model_validator(mode="after")
    def _check_sections(self) -> "ExperimentConfig":
        if self.varsel is not None:
            if any(s is not None for s in (self.target, self.kernel, self.geometric, self.gibbs)):
                raise ValueError("varsel 설정에는 target/kernel/geometric/gibbs를 함께 쓸 수 없습니다")
            return self
        if self.target is None:
            raise ValueError("target 또는 varsel 섹션이 필요합니다")
        if self.gibbs is None and self.kernel is None:
            raise ValueError("kernel 또는 gibbs 섹션이 필요합니다")
        if self.gibbs is not None and (self.kernel is not None or self.geometric is not None):
            raise ValueError("gibbs 설정에는 최상위 kernel/geometric을 쓸 수 없습니다")
        if self.init is None:
            raise ValueError("init이 필요합니다")
        return self


# ---------------------------------------------------------------------------
# 로드와 오류 위치
# ---------------------------------------------------------------------------

def _yaml_line(text: str, loc: Sequence[Union[str, int]]) -> Optional[int]:
    """검증 오류 위치(loc)에 해당하는 YAML 줄 번호 (1-기반)"""
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return None
    line = None
    for part in loc:
        if isinstance(node, yaml.MappingNode):
            match = next(((k, v) for k, v in node.value if k.value == str(part)), None)
            if match is None:
                break
            line = match[0].start_mark.line + 1
            node = match[1]
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int) and part < len(node.value):
            node = node.value[part]
            line = node.start_mark.line + 1
        else:
            break
    if line is None and node is not None:
        line = node.start_mark.line + 1
    return line


def parse_override(item: str) -> Dict[str, Any]:
    """'a.b=value' → {"a": {"b": value}} (값은 YAML로 해석)"""
    if "=" not in item:
        raise ConfigValidationError(f"--set 형식은 key=value 입니다: {item}")
    key, raw = item.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigValidationError(f"빈 키: {item}")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as e:
        raise ConfigValidationError(f"값을 해석할 수 없습니다: {raw} ({e})", field=key)
    result: Dict[str, Any] = {}
    cursor = result
    for part in parts[:-1]:
        cursor = cursor.setdefault(part, {})
    cursor[parts[-1]] = value
    return result


def merge_overrides(document: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(document)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_overrides(merged[key], value)
        else:
            merged[key] = value
    return merged


def validate_config(document: Dict[str, Any], text: str = "") -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(document)
    except ValidationError as e:
        first = e.errors()[0]
        loc = [p for p in first["loc"] if not (isinstance(p, str) and p.startswith("function-"))]
        field = ".".join(str(p) for p in loc) or None
        raise ConfigValidationError(first["msg"], field=field, line=_yaml_line(text, loc) if text else None)


def load_experiment_config(path: Union[str, Path], overrides: Sequence[str] = (),
                           **flags: Any) -> ExperimentConfig:
    """YAML 로드 → --set/플래그 덮어쓰기 → 검증"""
    path = Path(path)
    if not path.exists():
        raise ConfigValidationError(f"설정 파일이 없습니다: {path}")
    text = path.read_text(encoding='utf-8')
    try:
        document = yaml.safe_load(text) or {}
    except yaml.YAMLError as e:
        mark = getattr(e, 'problem_mark', None)
        raise ConfigValidationError(f"YAML 구문 오류: {e}", line=mark.line + 1 if mark else None)
    if not isinstance(document, dict):
        raise ConfigValidationError("설정 최상위는 mapping이어야 합니다", line=1)
    for item in overrides:
        document = merge_overrides(document, parse_override(item))
    for key, value in flags.items():
        if value is None:
            continue
        if key == "output":
            document = merge_overrides(document, {"output": {"directory": str(value)}})
        else:
            document[key] = value
    config = validate_config(document, text)
    logger.info(f"📋 설정 로드: {path.name} ({config.name})")
    return config
