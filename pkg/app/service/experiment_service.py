import asyncio
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from app.components.diagnostics import BATCH_EXPONENT, diagnose
from app.components.errors import (
    CapabilityError,
    ConfigValidationError,
    DataFormatError,
    DimensionMismatchError,
    GeomMcError,
    IllConditionedInputError,
)
from app.components.geometry import Density, DirectionSet, GeometricProposal, QuadratureGrid, Support
from app.components.kernels import (
    GeometricBlock,
    GeometricStepper,
    MHBlock,
    MHStepper,
    gibbs_compose,
    make_base_kernel,
    run_chain,
)
from app.components.ordering_fixtures import load_fixtures, run_fixture_checks
from app.components.targets import (
    LogisticPosterior,
    MixtureTarget,
    SixModeTarget,
    TargetModel,
    builtin_density,
    density_target,
    example3_mixture,
    laplace_direction,
    logistic_target,
    simulate_logistic,
    tuned_cauchy_residual_sampler,
    tuned_normal_residual_sampler,
)
from app.components.varsel import ModelScorer, VSData, VSTrace, posterior_summaries, run_varsel
from app.components.varsel_design import (
    SimulatedDesign,
    coefficient_mse,
    hitting_statistics,
    mspe,
    selection_metrics,
    simulate_design,
)
from app.database.design_store import load_delimited, load_logistic_csv, read_sparse_design
from app.database.trace_store import (
    format_model,
    to_jsonable,
    read_chain_csv,
    write_chain_csv,
    write_model_trace,
    write_summary_json,
    write_text,
)
from app.service.experiment_config import (
    DirectionConfig,
    DirectionKind,
    ExperimentConfig,
    GeometricConfig,
    KernelConfig,
    ResidualSamplerKind,
    TargetKind,
)
from app.service.replicate_manager import ReplicateManager
from app.utils.logging_utils import setupLogging
from app.utils.seed_utils import makeRng
from app.utils.settings import APP_DIR, AppSettings, getSettings

logger = setupLogging()

DEFAULT_FIXTURES = APP_DIR / 'fixtures' / 'ordering_fixtures.yaml'
BUILD_ERRORS = (ConfigValidationError, CapabilityError, DimensionMismatchError, DataFormatError,
                IllConditionedInputError, ValueError, KeyError, TypeError)


@dataclass
class BuildContext:
    """설정에서 만든 목표와 부가 정보"""
    target: TargetModel
    density: Optional[Density] = None
    mixture: Optional[MixtureTarget] = None
    sixmode: Optional[SixModeTarget] = None
    logistic: Optional[LogisticPosterior] = None
    true_beta: Optional[np.ndarray] = None

    def basin(self) -> Optional[Callable[[np.ndarray], np.ndarray]]:
        if self.mixture is not None:
            return self.mixture.basin
        if self.sixmode is not None:
            return self.sixmode.basin
        return None

    @property
    def basin_count(self) -> int:
        if self.mixture is not None:
            return len(self.mixture.means)
        return 6 if self.sixmode is not None else 0


# ---------------------------------------------------------------------------
# 설정 → 샘플러
# ---------------------------------------------------------------------------

def build_target(config: ExperimentConfig) -> BuildContext:
    cfg = config.target
    if cfg.kind == TargetKind.BUILTIN:
        density = builtin_density(cfg.distribution, cfg.params)
        return BuildContext(density_target(density), density=density)
    if cfg.kind == TargetKind.TWO_MODE:
        params = dict(cfg.params)
        mixture = MixtureTarget(tuple(params.pop("means")), tuple(params.pop("covs")),
                                np.asarray(params.pop("weights", [0.5, 0.5]), float)) if params else example3_mixture()
        if params:
            raise ConfigValidationError(f"알 수 없는 파라미터: {sorted(params)}", field="target.params")
        density = mixture.density()
        return BuildContext(density_target(density), density=density, mixture=mixture)
    if cfg.kind == TargetKind.SIX_MODE:
        sixmode = SixModeTarget(cfg.lower, cfg.upper)
        return BuildContext(sixmode.target(), sixmode=sixmode)
    if cfg.data is not None:
        W, z = load_logistic_csv(cfg.data, cfg.response, cfg.intercept)
        p = W.shape[1]
        lp = LogisticPosterior(W, z, np.zeros(p), cfg.prior_var * np.eye(p))
        trueBeta = None
    else:
        sim = cfg.simulate
        lp, trueBeta = simulate_logistic(sim.m, sim.p, makeRng(sim.seed), sim.beta, cfg.intercept, cfg.prior_var)
    return BuildContext(logistic_target(lp), logistic=lp, true_beta=trueBeta)


def _directions(cfg: DirectionConfig, ctx: BuildContext, dimension: int, field: str) -> List[Density]:
    if cfg.kind == DirectionKind.TARGET:
        if ctx.density is None:
            raise ConfigValidationError("이 목표는 정규화된 밀도가 없어 direction 'target'을 쓸 수 없습니다", field=field)
        found = [ctx.density]
    elif cfg.kind == DirectionKind.BUILTIN:
        found = [builtin_density(cfg.distribution, cfg.params)]
    elif cfg.kind == DirectionKind.COMPONENTS:
        if ctx.mixture is None:
            raise ConfigValidationError("direction 'components'는 two-mode 목표에서만 씁니다", field=field)
        found = ctx.mixture.components
    else:
        if ctx.logistic is None:
            raise ConfigValidationError("direction 'laplace'는 logistic 목표에서만 씁니다", field=field)
        found = [laplace_direction(ctx.logistic)]
    for g in found:
        if g.dimension != dimension:
            raise DimensionMismatchError(f"{field}: 방향 차원 {g.dimension} != {dimension}")
    return found


def _residual_sampler(cfg: DirectionConfig, kernel: KernelConfig):
    if cfg.residual_sampler == ResidualSamplerKind.TUNED_NORMAL:
        return tuned_normal_residual_sampler()
    if cfg.residual_sampler == ResidualSamplerKind.TUNED_CAUCHY:
        return tuned_cauchy_residual_sampler(float(_kernel_params(kernel).get("df", 2.0)))
    return None


def build_proposal(cfg: GeometricConfig, kernel: KernelConfig, base: Density, ctx: BuildContext,
                   prefix: str = "geometric") -> GeometricProposal:
    densities: List[Density] = []
    samplers = []
    for i, d in enumerate(cfg.directions):
        found = _directions(d, ctx, base.dimension, f"{prefix}.directions.{i}")
        densities.extend(found)
        samplers.extend([_residual_sampler(d, kernel)] * len(found))
    if cfg.weights is not None:
        if len(densities) != len(cfg.weights):
            raise ConfigValidationError("weights 길이가 펼친 방향 수와 다릅니다", field=f"{prefix}.weights")
        weights = np.asarray(cfg.weights, float)
        directions = DirectionSet(tuple(densities), weights / weights.sum())
    else:
        directions = DirectionSet.uniform(densities)
    grid = None
    if cfg.quadrature_half_width is not None:
        grid = QuadratureGrid.symmetric(cfg.quadrature_half_width, cfg.quadrature_points)
    settings = getSettings()
    return GeometricProposal(
        base, directions, cfg.epsilon,
        affinity_mode=cfg.affinity,
        mc_samples=cfg.mc_samples,
        mc_seed=cfg.mc_seed,
        grid=grid,
        max_attempts=settings.sampler.rejection_max_attempts,
        residual_samplers=tuple(samplers) if any(s is not None for s in samplers) else None,
    )


def _kernel_params(kernel: KernelConfig) -> Dict[str, Any]:
    params = dict(kernel.params)
    nested = params.pop("params", None)
    if nested is not None:
        params.update(nested)
    return params


def build_stepper(config: ExperimentConfig, ctx: BuildContext):
    target = ctx.target
    if config.gibbs is not None:
        blocks = []
        for i, block in enumerate(config.gibbs.blocks):
            k = len(block.coords)
            stub = TargetModel(lambda x: 0.0, k, Support.continuous(k), name=f"block{i + 1}")
            kernel = make_base_kernel(block.kernel.kind, _kernel_params(block.kernel), stub)
            if block.geometric is None:
                blocks.append((block.coords, MHBlock(kernel)))
            else:
                blockCtx = BuildContext(stub)
                prop = build_proposal(block.geometric, block.kernel, kernel.density, blockCtx,
                                      f"gibbs.blocks.{i}.geometric")
                blocks.append((block.coords, GeometricBlock(prop, block.geometric.mixture)))
        return gibbs_compose(blocks, target)
    kernel = make_base_kernel(config.kernel.kind, _kernel_params(config.kernel), target)
    if config.geometric is None:
        return MHStepper(target, kernel)
    prop = build_proposal(config.geometric, config.kernel, kernel.density, ctx)
    return GeometricStepper(target, prop, config.geometric.mixture)


def build_varsel_data(config: ExperimentConfig) -> Tuple[VSData, Optional[SimulatedDesign]]:
    cfg = config.varsel
    if cfg.design is not None:
        d = cfg.design
        design = simulate_design(d.kind, d.p, d.m, d.r2, d.seed, d.m_test, d.rho, cfg.lam, cfg.omega)
        return design.data, design
    source = cfg.data
    if source.format == "sparse":
        W, z = read_sparse_design(source.path)
        if source.response_path is not None:
            z = np.loadtxt(source.response_path, dtype=float, ndmin=1)
        if z is None:
            raise DataFormatError("희소 설계 파일에 반응이 없습니다 (response_path 지정)", source.path)
    else:
        W, z, _ = load_delimited(source.path, source.response)
    return VSData(W, z, cfg.lam, cfg.omega), None


# ---------------------------------------------------------------------------
# 요약
# ---------------------------------------------------------------------------

def _occupancy(ctx: BuildContext, states: np.ndarray) -> Dict[str, Any]:
    basin = ctx.basin()
    if basin is None or states.shape[0] == 0:
        return {}
    labels = np.asarray(basin(states), dtype=int)
    counts = np.bincount(labels, minlength=ctx.basin_count)
    return {
        "occupancy": (counts / labels.size).tolist(),
        "basins_visited": int(np.count_nonzero(counts)),
    }


def _output_dir(config: ExperimentConfig, settings: AppSettings) -> Path:
    if config.output.directory:
        return Path(config.output.directory)
    return Path(settings.output.root) / config.name


class ExperimentService:
    def __init__(self, settings: Optional[AppSettings] = None):
        self._settings = settings or getSettings()
        self._logger = logger

    # -- run ---------------------------------------------------------------

    def run_sync(self, config: ExperimentConfig) -> Dict[str, Any]:
        """체인 실행 → chain CSV, 진단 보고서, 요약 JSON"""
        if config.varsel is not None:
            return {"error": "varsel 설정은 varsel 명령으로 실행합니다", "error_kind": "validation"}
        try:
            ctx = build_target(config)
            stepper = build_stepper(config, ctx)
            init = np.asarray(config.init, float)
            if init.size != ctx.target.dimension:
                raise DimensionMismatchError(f"init 차원 {init.size} != 목표 차원 {ctx.target.dimension}")
            if not ctx.target.support.contains(init):
                raise ConfigValidationError(f"init {config.init}이 support 밖입니다", field="init")
        except BUILD_ERRORS as e:
            self._logger.error(f"❌ 설정 검증 실패: {e}")
            return {"error": str(e), "error_kind": "validation"}
        except GeomMcError as e:
            self._logger.error(f"❌ 샘플러 구성 실패: {e}")
            return {"error": str(e), "error_kind": "validation"}

        self._logger.info(f"🚀 '{config.name}' 실행 시작: {config.iterations}회, seed={config.seed}")
        try:
            trace = run_chain(stepper, init, config.iterations, config.seed)
            report = diagnose(trace.states, trace.accepted, config.max_lag, config.batch_exponent)
            extras: Dict[str, Any] = {"nonfinite_rejections": trace.nonfinite}
            extras.update(_occupancy(ctx, trace.states))
            if trace.block_acceptance_rates is not None:
                extras["block_acceptance_rates"] = trace.block_acceptance_rates.tolist()
            if config.geometric is not None:
                extras["residual_draws"] = int(np.count_nonzero(trace.attempts))
                extras["mean_residual_attempts"] = float(trace.attempts[trace.attempts > 0].mean()) \
                    if np.any(trace.attempts > 0) else 0.0
            report.extras.update(extras)

            outDir = _output_dir(config, self._settings)
            fmt = self._settings.output.float_format
            paths = {
                "chain": str(write_chain_csv(outDir / config.output.chain, trace, fmt)),
                "report": str(write_text(outDir / config.output.report, report.to_text())),
            }
            summary = {
                "name": config.name,
                "seed": config.seed,
                "iterations": config.iterations,
                "completed": trace.completed,
                "error": trace.error,
                "diagnostics": report.to_dict(),
            }
            if ctx.true_beta is not None:
                summary["true_beta"] = ctx.true_beta.tolist()
            paths["summary"] = str(write_summary_json(outDir / config.output.summary, summary))
        except GeomMcError as e:
            self._logger.error(f"❌ '{config.name}' 실행 오류: {e}")
            return {"error": str(e), "error_kind": "runtime"}
        except Exception as e:
            self._logger.error(f"❌ '{config.name}' 실행 중 예기치 못한 오류: {e}")
            return {"error": f"실행 중 오류가 발생했습니다: {str(e)}", "error_kind": "runtime"}

        self._logger.info(f"🎉 '{config.name}' 완료: 수락률 {trace.acceptance_rate:.4f}, "
                          f"{trace.wall_time:.2f}초")
        result = {"summary": to_jsonable(summary), "paths": paths}
        if not trace.completed:
            result.update(error=trace.error, error_kind="runtime")
        else:
            result["success"] = True
        return result

    async def run(self, config: ExperimentConfig) -> Dict[str, Any]:
        return await asyncio.get_running_loop().run_in_executor(None, self.run_sync, config)

    # -- verify ------------------------------------------------------------

    def verify_sync(self, path: Optional[str] = None, trials: int = 100, seed: int = 0) -> Dict[str, Any]:
        try:
            fixtures = load_fixtures(path or DEFAULT_FIXTURES)
        except ConfigValidationError as e:
            self._logger.error(f"❌ fixture 로드 실패: {e}")
            return {"error": str(e), "error_kind": "validation"}
        self._logger.info(f"🧪 fixture {len(fixtures)}개 검증 시작")
        data: Dict[str, Any] = {}
        failed: List[str] = []
        for fixture in fixtures:
            result = run_fixture_checks(fixture, trials, seed)
            data[fixture.name] = to_jsonable({
                name: {"passed": o.passed, "slack": o.slack, "message": o.message}
                for name, o in result.outcomes.items()})
            failed.extend(f"{fixture.name}:{check}" for check in result.failures())
        if failed:
            return {"error": f"검증 실패: {failed}", "error_kind": "verification", "data": data,
                    "failed": failed}
        self._logger.info(f"✅ fixture {len(fixtures)}개 모두 통과")
        return {"success": True, "data": data, "failed": []}

    async def verify(self, path: Optional[str] = None, trials: int = 100, seed: int = 0) -> Dict[str, Any]:
        return await asyncio.get_running_loop().run_in_executor(None, self.verify_sync, path, trials, seed)

    # -- varsel ------------------------------------------------------------

    async def varsel(self, config: ExperimentConfig) -> Dict[str, Any]:
        """변수선택 실행: 모형 trace, MIP, median/WAM, R², 적중 통계"""
        if config.varsel is None:
            return {"error": "varsel 섹션이 필요합니다", "error_kind": "validation"}
        cfg = config.varsel
        try:
            data, design = build_varsel_data(config)
            init = tuple(j - 1 for j in cfg.init)
            if any(j >= data.p for j in init):
                raise ConfigValidationError(f"init 인덱스가 p={data.p}를 넘습니다", field="varsel.init")
        except BUILD_ERRORS as e:
            self._logger.error(f"❌ 변수선택 설정 검증 실패: {e}")
            return {"error": str(e), "error_kind": "validation"}
        except GeomMcError as e:
            self._logger.error(f"❌ 변수선택 자료 구성 실패: {e}")
            return {"error": str(e), "error_kind": "validation"}

        cacheSize = self._settings.sampler.score_cache_size

        def replicate(seed: int) -> VSTrace:
            return run_varsel(ModelScorer(data, cacheSize), config.iterations, seed, cfg.sampler, cfg.epsilon,
                              cfg.base, cfg.b, init)

        self._logger.info(f"🚀 변수선택 '{config.name}': p={data.p}, m={data.m}, 복제 {cfg.replicates}개")
        try:
            manager = ReplicateManager(self._settings.replicates.max_workers)
            traces = await manager.run_derived(replicate, config.seed, cfg.replicates)
            seeds = manager.seeds
            self._logger.info(f"📊 복제 상태 {manager.status()}, 최대 동시 실행 {manager.peak_concurrency}")
            scorer = ModelScorer(data, cacheSize)
            outDir = _output_dir(config, self._settings)
            fmt = self._settings.output.float_format
            paths: Dict[str, Any] = {"models": []}
            replicates = []
            for i, trace in enumerate(traces):
                name = config.output.models if len(traces) == 1 else \
                    f"{Path(config.output.models).stem}_{i + 1:03d}{Path(config.output.models).suffix}"
                paths["models"].append(str(write_model_trace(outDir / name, trace, fmt)))
                entry: Dict[str, Any] = {"seed": seeds[i], "completed": trace.completed, "error": trace.error,
                                         "acceptance_rate": trace.acceptance_rate}
                if trace.models:
                    post = posterior_summaries(trace.models, scorer)
                    entry.update({
                        "mip": post.mip.tolist(),
                        "mip_weighted": post.mip_weighted.tolist(),
                        "median_model": [j + 1 for j in post.median_model],
                        "wam_model": [j + 1 for j in post.wam_model],
                        "unique_models": post.unique_models,
                        "r2": post.r2,
                    })
                    if design is not None:
                        entry["metrics"] = self._design_metrics(design, post.median_model, post.wam_model)
                replicates.append(entry)
            hitting = hitting_statistics(traces, design.gamma if design is not None else None)
            if hitting.get("best_model") is not None:
                hitting["best_model"] = [j + 1 for j in hitting["best_model"]]
            summary = {
                "name": config.name,
                "seed": config.seed,
                "iterations": config.iterations,
                "p": data.p,
                "m": data.m,
                "lam": data.lam,
                "omega": data.omega,
                "sampler": cfg.sampler,
                "epsilon": cfg.epsilon,
                "base": str(cfg.base),
                "replicates": replicates,
                "hitting": hitting,
            }
            if design is not None:
                summary["true_model"] = [j + 1 for j in design.gamma]
            paths["summary"] = str(write_summary_json(outDir / config.output.summary, summary))
            paths["report"] = str(write_text(outDir / config.output.report, self._varsel_text(summary)))
        except GeomMcError as e:
            self._logger.error(f"❌ 변수선택 실행 오류: {e}")
            return {"error": str(e), "error_kind": "runtime"}
        except Exception as e:
            self._logger.error(f"❌ 변수선택 실행 중 예기치 못한 오류: {e}")
            return {"error": f"변수선택 실행 중 오류가 발생했습니다: {str(e)}", "error_kind": "runtime"}

        failed = [r for r in replicates if not r["completed"]]
        if failed:
            summary = to_jsonable(summary)
            return {"error": f"복제 {len(failed)}개가 중단되었습니다", "error_kind": "runtime",
                    "summary": summary, "paths": paths}
        self._logger.info(f"🎉 변수선택 '{config.name}' 완료: 성공률 {hitting.get('success_rate')}")
        return {"success": True, "summary": to_jsonable(summary), "paths": paths}

    @staticmethod
    def _design_metrics(design: SimulatedDesign, median: Tuple[int, ...], wam: Tuple[int, ...]) -> Dict[str, Any]:
        metrics: Dict[str, Any] = {}
        for label, model in (("median", median), ("wam", wam)):
            values = selection_metrics(model, design.gamma)
            values["mse_beta"] = coefficient_mse(design.data, model, design.beta)
            if design.W_test is not None:
                values["mspe"] = mspe(design.data, model, design.W_test, design.z_test)
            metrics[label] = values
        return metrics

    @staticmethod
    def _varsel_text(summary: Dict[str, Any]) -> str:
        lines = [
            f"실험: {summary['name']}",
            f"p = {summary['p']}, m = {summary['m']}, λ = {summary['lam']:.6g}, ω = {summary['omega']:.6g}",
            f"표집기: {summary['sampler']} (ε = {summary['epsilon']}, base = {summary['base']})",
        ]
        if "true_model" in summary:
            lines.append(f"참 모형: {format_model([j - 1 for j in summary['true_model']])}")
        for i, r in enumerate(summary["replicates"]):
            if "median_model" in r:
                lines.append(f"복제 {i + 1}: 수락률 {r['acceptance_rate']:.4f}, "
                             f"median [{' '.join(map(str, r['median_model']))}], "
                             f"WAM [{' '.join(map(str, r['wam_model']))}], R² {r['r2']['median']:.4f}")
        hitting = summary["hitting"]
        lines.append(f"최고 사후 방문 모형: {hitting.get('best_model')}")
        lines.append(f"적중 반복: {hitting.get('iterations')}")
        lines.append(f"성공률: {hitting.get('success_rate')}")
        return "\n".join(lines) + "\n"

    # -- diagnose ----------------------------------------------------------

    def diagnose_sync(self, trace_path: str, max_lag: int = 8, output: Optional[str] = None,
                      batch_exponent: float = BATCH_EXPONENT) -> Dict[str, Any]:
        try:
            states, accepted = read_chain_csv(trace_path)
        except DataFormatError as e:
            self._logger.error(f"❌ trace 로드 실패: {e}")
            return {"error": str(e), "error_kind": "validation"}
        try:
            report = diagnose(states, accepted, max_lag, batch_exponent)
        except ValueError as e:
            return {"error": str(e), "error_kind": "validation"}
        except GeomMcError as e:
            return {"error": str(e), "error_kind": "runtime"}
        text = report.to_text()
        result: Dict[str, Any] = {"success": True, "report": to_jsonable(report.to_dict()), "text": text}
        if output:
            result["path"] = str(write_text(output, text))
        return result

    async def diagnose(self, trace_path: str, max_lag: int = 8, output: Optional[str] = None,
                       batch_exponent: float = BATCH_EXPONENT) -> Dict[str, Any]:
        return await asyncio.get_running_loop().run_in_executor(None, self.diagnose_sync, trace_path, max_lag, output,
                                                                batch_exponent)
