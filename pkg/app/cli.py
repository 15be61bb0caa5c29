"""명령줄 실행기: run, verify, varsel, diagnose

종료 코드: 0 성공, 1 설정/입력 검증 실패, 2 실행 오류, 3 검증 부등식 위반
"""
import asyncio
import json
import sys
from typing import Any, Dict, Optional, Sequence

import click

from app.components.diagnostics import BATCH_EXPONENT
from app.components.errors import ConfigValidationError
from app.service.experiment_config import load_experiment_config
from app.service.experiment_service import ExperimentService
from app.utils.logging_utils import safePrint, setupLogging

logger = setupLogging()

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_VERIFICATION = 3
EXIT_BY_KIND = {"validation": EXIT_VALIDATION, "runtime": EXIT_RUNTIME, "verification": EXIT_VERIFICATION}


def _finish(result: Dict[str, Any], quiet: bool = False) -> None:
    if "error" in result:
        safePrint(f"❌ {result['error']}")
        sys.exit(EXIT_BY_KIND.get(result.get("error_kind"), EXIT_RUNTIME))
    if not quiet:
        for label, path in sorted(result.get("paths", {}).items()):
            safePrint(f"💾 {label}: {path}")
    sys.exit(EXIT_OK)


def _load(config_path: str, overrides: Sequence[str], **flags: Any):
    try:
        return load_experiment_config(config_path, overrides, **flags)
    except ConfigValidationError as e:
        safePrint(f"❌ 설정 오류: {e}")
        sys.exit(EXIT_VALIDATION)


config_options = [
    click.option("--seed", type=int, default=None, help="마스터 시드"),
    click.option("--iterations", type=int, default=None, help="반복 수"),
    click.option("--output", type=click.Path(), default=None, help="출력 디렉터리"),
    click.option("--set", "overrides", multiple=True, help="설정 덮어쓰기 a.b=value (반복 가능)"),
]


def with_config_options(fn):
    for option in reversed(config_options):
        fn = option(fn)
    return fn


@click.group()
def cli():
    """기하 정보 MH 실험 실행기"""


@cli.command()
@click.argument("config_path", type=click.Path())
@with_config_options
def run(config_path: str, seed: Optional[int], iterations: Optional[int], output: Optional[str],
        overrides: Sequence[str]):
    """설정 파일로 체인을 실행"""
    config = _load(config_path, overrides, seed=seed, iterations=iterations, output=output)
    result = asyncio.run(ExperimentService().run(config))
    if "summary" in result:
        diag = result["summary"]["diagnostics"]
        safePrint(f"📊 수락률 {diag['acceptance_rate']}, MSJD {diag['msjd']:.6g}, mESS {diag['mess']}")
    _finish(result)


@cli.command()
@click.option("--fixtures", type=click.Path(), default=None, help="fixture YAML (기본: 내장 세트)")
@click.option("--trials", type=int, default=100, show_default=True, help="검사 함수 개수")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--json-output", is_flag=True, help="결과를 JSON으로 출력")
def verify(fixtures: Optional[str], trials: int, seed: int, json_output: bool):
    """유한 상태 fixture로 순서 부등식 검증"""
    result = asyncio.run(ExperimentService().verify(fixtures, trials, seed))
    if json_output and "data" in result:
        click.echo(json.dumps(result["data"], sort_keys=True, indent=2, ensure_ascii=False, default=str))
    for name in result.get("failed", []):
        safePrint(f"❌ 실패: {name}")
    if "error" not in result:
        safePrint(f"✅ fixture {len(result['data'])}개 통과")
    _finish(result, quiet=True)


@cli.command()
@click.argument("config_path", type=click.Path())
@with_config_options
@click.option("--lam", type=float, default=None, help="λ (기본 m/p²)")
@click.option("--omega", type=float, default=None, help="ω (기본 √m/p)")
@click.option("--epsilon", type=float, default=None)
@click.option("--base", type=click.Choice(["symmetric", "asymmetric"]), default=None)
@click.option("--sampler", type=click.Choice(["geometric", "rw"]), default=None)
@click.option("--replicates", type=int, default=None)
def varsel(config_path: str, seed: Optional[int], iterations: Optional[int], output: Optional[str],
           overrides: Sequence[str], lam: Optional[float], omega: Optional[float], epsilon: Optional[float],
           base: Optional[str], sampler: Optional[str], replicates: Optional[int]):
    """베이지안 변수선택 실행"""
    extra = [f"varsel.{key}={value}" for key, value in
             (("lam", lam), ("omega", omega), ("epsilon", epsilon), ("base", base), ("sampler", sampler),
              ("replicates", replicates)) if value is not None]
    config = _load(config_path, list(overrides) + extra, seed=seed, iterations=iterations, output=output)
    result = asyncio.run(ExperimentService().varsel(config))
    if "summary" in result:
        hitting = result["summary"]["hitting"]
        safePrint(f"📊 최고 사후 모형 {hitting.get('best_model')}, 성공률 {hitting.get('success_rate')}, "
                  f"적중 분위 {hitting.get('quantiles')}")
    _finish(result)


@cli.command()
@click.argument("trace_path", type=click.Path())
@click.option("--max-lag", type=int, default=8, show_default=True)
@click.option("--batch-exponent", type=click.FloatRange(0.0, 1.0, min_open=True, max_open=True),
              default=BATCH_EXPONENT, show_default=True, help="batch-means 배치 크기 ⌊n^ν⌋ 의 ν")
@click.option("--output", type=click.Path(), default=None, help="보고서 저장 경로")
def diagnose(trace_path: str, max_lag: int, batch_exponent: float, output: Optional[str]):
    """저장된 chain CSV의 진단 보고서"""
    result = asyncio.run(ExperimentService().diagnose(trace_path, max_lag, output, batch_exponent))
    if "text" in result:
        click.echo(result["text"], nl=False)
    _finish(result, quiet=True)


if __name__ == "__main__":
    cli()
