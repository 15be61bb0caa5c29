from typing import Any, Dict, Optional

from fastapi import APIRouter, Depends, HTTPException
from pydantic import BaseModel, Field

from app.components.diagnostics import BATCH_EXPONENT
from app.components.errors import ConfigValidationError
from app.service.experiment_config import validate_config
from app.service.experiment_service import ExperimentService
from app.utils.logging_utils import setupLogging

logger = setupLogging()
router = APIRouter()

STATUS_BY_KIND = {"validation": 400, "verification": 422, "runtime": 500}


class VerifyRequest(BaseModel):
    fixtures: Optional[str] = None
    trials: int = 100
    seed: int = 0


class DiagnoseRequest(BaseModel):
    trace_path: str
    max_lag: int = 8
    output: Optional[str] = None
    batch_exponent: float = Field(BATCH_EXPONENT, gt=0.0, lt=1.0)


def get_experiment_service() -> ExperimentService:
    return ExperimentService()


def _raise_on_error(result: Dict[str, Any]) -> None:
    if "error" in result:
        raise HTTPException(
            status_code=STATUS_BY_KIND.get(result.get("error_kind"), 500),
            detail=result["error"]
        )


def _parse(config: Dict[str, Any]):
    try:
        return validate_config(config)
    except ConfigValidationError as e:
        raise HTTPException(status_code=400, detail=str(e))


@router.post("/run")
async def run_experiment(
    config: Dict[str, Any],
    service: ExperimentService = Depends(get_experiment_service)
) -> Dict[str, Any]:
    """체인 실험 실행"""
    try:
        parsed = _parse(config)
        logger.info(f"📡 실험 실행 요청: {parsed.name}")
        result = await service.run(parsed)
        _raise_on_error(result)
        return {
            "success": True,
            "data": result,
            "message": f"{parsed.name} 실행 완료"
        }
    except HTTPException:
        raise
    except Exception as e:
        logger.error(f"❌ 실험 실행 오류: {e}")
        raise HTTPException(
            status_code=500,
            detail=f"실험 실행 중 오류가 발생했습니다: {str(e)}"
        )


@router.post("/verify")
async def verify_fixtures(
    request: VerifyRequest,
    service: ExperimentService = Depends(get_experiment_service)
) -> Dict[str, Any]:
    """유한 상태 순서 검증"""
    try:
        logger.info(f"📡 검증 요청: {request.fixtures or '기본 fixture'}")
        result = await service.verify(request.fixtures, request.trials, request.seed)
        _raise_on_error(result)
        return {
            "success": True,
            "data": result["data"],
            "message": f"fixture {len(result['data'])}개 검증 통과"
        }
    except HTTPException:
        raise
    except Exception as e:
        logger.error(f"❌ 검증 오류: {e}")
        raise HTTPException(
            status_code=500,
            detail=f"검증 중 오류가 발생했습니다: {str(e)}"
        )


@router.post("/varsel")
async def run_varsel_experiment(
    config: Dict[str, Any],
    service: ExperimentService = Depends(get_experiment_service)
) -> Dict[str, Any]:
    """변수선택 실행"""
    try:
        parsed = _parse(config)
        logger.info(f"📡 변수선택 요청: {parsed.name}")
        result = await service.varsel(parsed)
        _raise_on_error(result)
        return {
            "success": True,
            "data": result,
            "message": f"{parsed.name} 변수선택 완료"
        }
    except HTTPException:
        raise
    except Exception as e:
        logger.error(f"❌ 변수선택 오류: {e}")
        raise HTTPException(
            status_code=500,
            detail=f"변수선택 중 오류가 발생했습니다: {str(e)}"
        )


@router.post("/diagnose")
async def diagnose_trace(
    request: DiagnoseRequest,
    service: ExperimentService = Depends(get_experiment_service)
) -> Dict[str, Any]:
    """저장된 chain CSV 진단"""
    try:
        result = await service.diagnose(request.trace_path, request.max_lag, request.output, request.batch_exponent)
        _raise_on_error(result)
        return {
            "success": True,
            "data": result["report"],
            "message": "진단 완료"
        }
    except HTTPException:
        raise
    except Exception as e:
        logger.error(f"❌ 진단 오류: {e}")
        raise HTTPException(
            status_code=500,
            detail=f"진단 중 오류가 발생했습니다: {str(e)}"
        )
