from typing import Optional


class GeomMcError(Exception):
    """샘플러 공통 예외"""


class IllConditionedInputError(GeomMcError):
    """공분산/행렬이 양정치가 아님"""


class DimensionMismatchError(GeomMcError, ValueError):
    """차원 불일치"""


class DegenerateDirectionError(GeomMcError):
    """affinity가 1에 붙어 h를 정의할 수 없음"""


class DegenerateSupportError(GeomMcError):
    """중요도 비율이 모두 0"""


class CoverageError(GeomMcError):
    """격자가 밀도 질량을 충분히 덮지 못함"""


class EnvelopeFailureError(GeomMcError):
    """기각 샘플러 시도 횟수 초과"""

    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts


class CapabilityError(GeomMcError):
    """필요한 기능(샘플러, 미분 등) 없음"""


class InvalidChainError(GeomMcError):
    """전이행렬/정상분포가 유효하지 않음"""


class NonReversibleError(GeomMcError):
    """가역성 위반"""


class ReducibleChainError(GeomMcError):
    """고윳값 1 중복 (기약 아님)"""


class DegenerateVarianceError(GeomMcError):
    """분산 0인 체인"""


class SingularCovarianceError(GeomMcError):
    """특이 공분산"""


class CholeskyError(GeomMcError):
    """Cholesky 갱신 실패"""


class VerificationFailure(GeomMcError):
    """검증 부등식 위반"""

    def __init__(self, inequality: str, message: str, slack: Optional[float] = None):
        super().__init__(f"[{inequality}] {message}")
        self.inequality = inequality
        self.slack = slack


class ConfigValidationError(GeomMcError):
    """설정 검증 실패"""

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        location = ""
        if field:
            location += f" (필드: {field}"
            location += f", 줄: {line})" if line else ")"
        elif line:
            location += f" (줄: {line})"
        super().__init__(f"{message}{location}")
        self.field = field
        self.line = line


class DataFormatError(GeomMcError, ValueError):
    """입력 파일 형식 오류"""

    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(f"{message} ({path})" if path else message)
        self.path = path
