"""
End-to-end environment-adaptive flow and its standalone steps

Each step reads the pipeline configuration plus the artifacts of the steps
before it and returns a versioned artifact, so steps compose through JSON files
exactly as they compose in memory.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Optional, Union

from pydantic import TypeAdapter, ValidationError

from src.core.config import settings
from src.core.dependencies import get_config, get_pattern_db, load_model, read_json, read_text, schema_error
from src.core.errors import INFEASIBLE_ERRORS, EnvAdaptError, NonPositiveTime, PlacementInfeasible, StepFailed
from src.core.logging import get_plain_logger
from src.models.ast import Ast
from src.models.schemas import (
    AnalysisArtifact,
    AppModel,
    CostModel,
    DirectiveSpec,
    GaConfig,
    InputBinding,
    MinCostUnderLatency,
    OffloadPattern,
    OperateArtifact,
    OperateLog,
    OutputTrace,
    PipelineConfig,
    PipelineReport,
    PlaceArtifact,
    RatioDecision,
    ScalingModel,
    SearchArtifact,
    Testcase,
    TimeSplit,
    Topology,
    TuneArtifact,
    VerificationReport,
    VerifyArtifact,
)
from src.services.analysis import analyze as analyze_loops
from src.services.gasearch import FitnessContext, brute_force, candidate_space, run_ga
from src.services.interpreter import interpret
from src.services.lifecycle import Approver, SystemState, load_trace, mix_latency, operate, scaled_app, verify_deployment
from src.services.parser import parse
from src.services.patterndb import PatternDb, match_blocks, substitute_all
from src.services.perfsim import simulate
from src.services.placement import solve_placement
from src.services.printer import to_source
from src.services.resource import compute_ratio, size_resources
from src.services.transfer import compute_directives, insert_directives

logger = get_plain_logger(__name__)

_TESTCASES = TypeAdapter(list[Testcase])
_BINDING = TypeAdapter(InputBinding)

DeployApprover = Callable[[VerificationReport], bool]


def load_pipeline_config(path: Union[str, Path], seed: Optional[int] = None) -> "Pipeline":
    config = load_model(path, PipelineConfig)
    if seed is not None:
        config = config.model_copy(update={"seed": seed})
    return Pipeline(config, Path(path).resolve().parent)


def load_testcases(path: Union[str, Path]) -> list[Testcase]:
    """testcases.json: a list of testcases, or {"testcases": [...]}"""
    data = read_json(path)
    if isinstance(data, dict) and "testcases" in data:
        data = data["testcases"]
    try:
        return _TESTCASES.validate_python(data)
    except ValidationError as e:
        raise schema_error(e, f"{Path(path).name}:") from e


def load_binding(path: Union[str, Path]) -> InputBinding:
    """A standalone input binding: {"name": scalar or list, ...}"""
    try:
        return _BINDING.validate_python(read_json(path))
    except ValidationError as e:
        raise schema_error(e, f"{Path(path).name}:") from e


@dataclass
class Pipeline:
    """Configuration documents of one pipeline run, loaded on first use"""

    config: PipelineConfig
    base_dir: Path

    def path(self, name: str) -> Optional[Path]:
        value = getattr(self.config, name)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @cached_property
    def source(self) -> Ast:
        path = self.path("source")
        return parse(read_text(path), name=path.stem)

    @cached_property
    def testcases(self) -> list[Testcase]:
        return load_testcases(self.path("testcases"))

    @cached_property
    def db(self) -> PatternDb:
        return get_pattern_db(self.path("patterns"))

    @cached_property
    def model(self) -> CostModel:
        return self.db.house(get_config(self.path("cost_model"), CostModel))

    @cached_property
    def scaling(self) -> ScalingModel:
        path = self.path("scaling")
        return get_config(path, ScalingModel) if path else ScalingModel()

    @cached_property
    def ga(self) -> GaConfig:
        path = self.path("ga")
        ga = get_config(path, GaConfig) if path else GaConfig()
        if self.config.seed is not None:
            ga = ga.model_copy(update={"seed": self.config.seed})
        return ga

    @cached_property
    def topology(self) -> Optional[Topology]:
        path = self.path("topology")
        return get_config(path, Topology) if path else None

    @cached_property
    def app(self) -> Optional[AppModel]:
        path = self.path("appmodel")
        return get_config(path, AppModel) if path else None

    def design_mix(self) -> list[tuple[str, float, float]]:
        return [(tc.id, 0.0, tc.weight) for tc in self.testcases]

    def run_source(self, binding: Optional[InputBinding] = None) -> OutputTrace:
        """Reference run of the source program, on the first testcase input by default"""
        if binding is None:
            binding = self.testcases[0].input if self.testcases else {}
        trace, _ = interpret(self.source, binding, self.db.library())
        return trace

    def analyze(self) -> AnalysisArtifact:
        """Clone matching, substitution, loop analysis and profile"""
        source = self.source
        matches = match_blocks(source, self.db)
        program = substitute_all(source, matches, self.db, strict=False)
        library = self.db.library()
        binding = self.testcases[0].input if self.testcases else {}
        _, profile = interpret(program, binding, library)

        state = SystemState(program, OffloadPattern.zeros(()), self.model, library, tuple(self.testcases))
        kernels = state.kernels()
        active: Optional[list[str]] = None
        if len(kernels) > settings.fpga_slots:
            mix = self.design_mix()
            best = min(
                itertools.combinations(kernels, settings.fpga_slots),
                key=lambda chosen: mix_latency(SystemState(
                    program, state.pattern, self.model, library, state.testcases, active_kernels=frozenset(chosen),
                ), mix),
            )
            active = list(best)
            logger.info(f"Resident kernels {active} of {kernels} ({settings.fpga_slots} slot(s))")

        return AnalysisArtifact(
            program=source.name,
            loops=analyze_loops(program),
            profile=profile,
            matches=matches,
            substituted_source=to_source(program),
            kernels=kernels,
            active_kernels=active,
        )

    def program(self, analysis: AnalysisArtifact) -> Ast:
        return parse(analysis.substituted_source, name=analysis.program)

    def search(self, analysis: AnalysisArtifact) -> SearchArtifact:
        """Offload pattern search with hoisted transfers"""
        program = self.program(analysis)
        active = frozenset(analysis.active_kernels) if analysis.active_kernels is not None else None
        space = candidate_space(analysis.loops, analysis.profile)
        fitness = FitnessContext(
            program, self.model, self.testcases, space, self.db.library(),
            penalty=self.ga.penalty, active_kernels=active,
        )
        history = []
        if space.n == 0:
            method, pattern, best_time = "none", space.zeros(), fitness.baseline
        elif self.config.search == "brute_force":
            method = "brute_force"
            pattern, best_time = brute_force(space, fitness)
        else:
            method = "ga"
            result = run_ga(space, self.ga, fitness)
            pattern, best_time, history = result.best, result.best_time, result.history

        directives = compute_directives(program, pattern)
        return SearchArtifact(
            loop_map=list(space.loop_map),
            excluded=space.excluded,
            method=method,
            pattern=pattern,
            best_time=best_time,
            baseline_time=fitness.baseline,
            history=history,
            evaluations=fitness.evaluations,
            cache_hits=fitness.cache_hits,
            directives=[DirectiveSpec(kind=d.kind, var=d.var, anchor=d.anchor) for d in directives],
            annotated_source=to_source(insert_directives(program, directives)),
        )

    def tune(self, analysis: AnalysisArtifact, search: SearchArtifact) -> TuneArtifact:
        """CPU:device ratio from the weighted time split, then the amount"""
        annotated = parse(search.annotated_source, name=analysis.program)
        active = frozenset(analysis.active_kernels) if analysis.active_kernels is not None else None
        testcases = self.testcases or [Testcase(id="default")]
        total_weight = sum(tc.weight for tc in testcases) or 1.0
        cpu = device = transfer = 0.0
        for tc in testcases:
            report = simulate(annotated, search.pattern, self.model, tc.input, self.db.library(), active)
            cpu += tc.weight * report.cpu_time
            device += tc.weight * report.device_time
            transfer += tc.weight * report.transfer_time
        split = TimeSplit(cpu_time=cpu / total_weight, device_time=device / total_weight,
                          transfer_time=transfer / total_weight)
        try:
            ratio = compute_ratio(split.cpu_time, split.device_time, self.scaling)
        except NonPositiveTime as e:
            logger.warning(f"Ratio defaults to 1:1: {e}")
            ratio = RatioDecision(cpu_units=1, device_units=1, imbalance=1.0, warning=str(e))
        resources = size_resources(ratio.pair, self.config.perf_target, self.config.budget, self.scaling, split)
        return TuneArtifact(split=split, ratio=ratio, resources=resources)

    def place(self, tune: TuneArtifact) -> PlaceArtifact:
        """Placement; an infeasible placement re-sizes resources at the next multiplier"""
        resources = tune.resources
        if self.topology is None or self.app is None:
            return PlaceArtifact(resources=resources)
        mode = self.config.placement
        solve_mode = mode or MinCostUnderLatency(bound=float("inf"))
        retries = 0
        while True:
            try:
                plan = solve_placement(self.topology, scaled_app(self.app, resources), solve_mode)
                return PlaceArtifact(resources=resources, placement=plan, mode=mode, retries=retries)
            except PlacementInfeasible:
                if retries >= settings.retry_budget:
                    logger.error(f"Placement infeasible after {retries} sizing retries")
                    raise
            retries += 1
            logger.warning(f"Placement infeasible at k={resources.multiplier}; re-sizing ({retries})")
            resources = size_resources(
                tune.ratio.pair, self.config.perf_target, self.config.budget, self.scaling, tune.split,
                min_k=resources.multiplier + 1,
            )

    def state(self, analysis: AnalysisArtifact, search: SearchArtifact, place: PlaceArtifact) -> SystemState:
        return SystemState(
            program=self.program(analysis),
            pattern=search.pattern,
            model=self.model,
            library=self.db.library(),
            testcases=tuple(self.testcases),
            scaling=self.scaling,
            resources=place.resources,
            topology=self.topology,
            app=self.app,
            placement=place.placement,
            placement_mode=place.mode,
            active_kernels=frozenset(analysis.active_kernels) if analysis.active_kernels is not None else None,
            ga=self.ga,
            reference=self.source,
        )

    def verify(self, state: SystemState, approve: Optional[DeployApprover] = None) -> VerifyArtifact:
        """Testcase run plus the user's go/no-go"""
        report = verify_deployment(state, self.testcases)
        approved = report.passed and (self.config.auto_approve or (approve is not None and approve(report)))
        return VerifyArtifact(report=report, approved=approved)

    def operate(
        self, state: SystemState, approve: Optional[Approver] = None,
    ) -> Optional[tuple[OperateArtifact, OperateLog]]:
        """Operate over the configured workload trace"""
        path = self.path("trace")
        if path is None:
            return None
        policy = self.config.policy
        if self.config.auto_approve:
            policy = policy.model_copy(update={"auto_approve": True})
        log = operate(state, load_trace(path), policy, approve)
        applies = log.of("apply")
        return OperateArtifact(
            proposals=len(log.of("proposal")),
            applied=len(applies),
            events=len(log.events),
            final_version=applies[-1].detail["version"] if applies else state.version,
        ), log


def run_full(
    pipeline: Pipeline,
    approve_deploy: Optional[DeployApprover] = None,
    approve_reconfig: Optional[Approver] = None,
) -> tuple[PipelineReport, Optional[OperateLog]]:
    """
    analyze -> search -> tune -> place -> verify -> operate

    Infeasible sizing or placement ends the run with an `infeasible` report;
    any other domain error is raised as StepFailed naming the step.
    """
    report = PipelineReport(status="pass")
    step = "analyze"
    try:
        report.analysis = pipeline.analyze()
        step = "search"
        report.search = pipeline.search(report.analysis)
        step = "tune"
        report.tune = pipeline.tune(report.analysis, report.search)
        step = "place"
        report.place = pipeline.place(report.tune)
        step = "verify"
        state = pipeline.state(report.analysis, report.search, report.place)
        report.verify = pipeline.verify(state, approve_deploy)
        if not report.verify.approved:
            report.status = "fail"
            report.failed_step = "verify"
            report.message = "deployment not approved" if report.verify.report.passed else (
                f"failing testcases: {', '.join(report.verify.report.failing)}"
            )
            return report, None
        step = "operate"
        operated = pipeline.operate(state, approve_reconfig)
    except INFEASIBLE_ERRORS as e:
        logger.warning(f"Infeasible at {step}: {e}")
        report.status = "infeasible"
        report.failed_step = step
        report.message = str(e)
        return report, None
    except EnvAdaptError as e:
        logger.error(f"Step {step} failed: {e}")
        raise StepFailed(step, e) from e

    log = None
    if operated is not None:
        report.operate, log = operated
    logger.info(f"Pipeline finished: {report.status}")
    return report, log
