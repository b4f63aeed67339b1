"""
Deployment verification and runtime operation

The production environment is the same simulator the search used: a request
of kind k at arrival rate r costs

    placement overhead + s * max(1, r * s),   s = scaled program latency / host speed

where the placement overhead is the network time plus the compute time of the
components other than the program host. Trial simulation scores candidate
states on the exact rows of the recent window, so a proposal's expected gain is
what the next window realizes when the workload holds.
"""

from __future__ import annotations

import csv
import itertools
import math
from collections import Counter, deque
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

from pydantic import ValidationError

from src.core.config import settings
from src.core.dependencies import read_text
from src.core.errors import (
    CapacityExceeded,
    Disconnected,
    EmptySpace,
    EnvAdaptError,
    PlacementInfeasible,
    SchemaError,
    SearchSpaceTooLarge,
    StaleProposal,
)
from src.core.logging import get_plain_logger
from src.models.ast import AccelCall, Ast, walk
from src.models.schemas import (
    AppModel,
    CostModel,
    GaConfig,
    MinCostUnderLatency,
    OffloadPattern,
    OperateEvent,
    OperateLog,
    OperatePolicy,
    OutputTrace,
    PlacementPlan,
    ProposalKind,
    ReconfigProposal,
    ResourcePlan,
    ScalingModel,
    Testcase,
    TestcaseVerdict,
    TimeSplit,
    Topology,
    VerificationReport,
    WorkloadEvent,
    WorkloadTrace,
)
from src.services.analysis import analyze
from src.services.gasearch import FitnessContext, candidate_space, run_ga
from src.services.interpreter import BlockImpl, interpret
from src.services.perfsim import DeployablePlan, measure
from src.services.placement import Mode, evaluate_placement, solve_placement, to_plan
from src.services.resource import plan_for
from src.services.transfer import compute_directives, insert_directives

logger = get_plain_logger(__name__)

Approver = Callable[[ReconfigProposal], bool]
MixEntry = tuple[str, float, int]  # (request kind, rate, count)


@dataclass(frozen=True)
class SystemState:
    """
    The deployed configuration: substituted program and offload pattern,
    resource plan, placement and resident accelerator kernels

    `program` carries no transfer directives; the annotated program is derived
    from it and the pattern.
    """

    program: Ast
    pattern: OffloadPattern
    model: CostModel
    library: Mapping[str, BlockImpl] = field(default_factory=dict)
    testcases: tuple[Testcase, ...] = ()
    scaling: ScalingModel = field(default_factory=ScalingModel)
    resources: Optional[ResourcePlan] = None
    topology: Optional[Topology] = None
    app: Optional[AppModel] = None
    placement: Optional[PlacementPlan] = None
    placement_mode: Optional[Mode] = None
    active_kernels: Optional[frozenset[str]] = None
    ga: GaConfig = field(default_factory=GaConfig)
    reference: Optional[Ast] = None
    version: int = 0
    _latency_cache: dict = field(default_factory=dict, compare=False, repr=False)

    @cached_property
    def annotated(self) -> Ast:
        return insert_directives(self.program, compute_directives(self.program, self.pattern))

    @cached_property
    def deployable(self) -> DeployablePlan:
        return DeployablePlan(
            ast=self.annotated,
            pattern=self.pattern,
            library=self.library,
            resources=self.resources,
            scaling=self.scaling,
            active_kernels=self.active_kernels,
        )

    @property
    def cost(self) -> float:
        return (self.resources.cost if self.resources else 0.0) + (self.placement.cost if self.placement else 0.0)

    def testcase(self, kind: str) -> Testcase:
        for tc in self.testcases:
            if tc.id == kind:
                return tc
        for tc in self.testcases:
            if kind in tc.tags:
                return tc
        raise SchemaError("trace.kind", f"no testcase for request kind '{kind}'")

    def kernels(self) -> list[str]:
        """Accelerator kernels the program uses and the cost model houses"""
        used = {s.kernel_id for s in walk(self.program.body) if isinstance(s, AccelCall)}
        return sorted(k for k in used if k in self.model.accel_formulas)


def scaled_app(app: AppModel, resources: Optional[ResourcePlan]) -> AppModel:
    """Components sized from the resource plan demand `demand` per multiplier step"""
    k = resources.multiplier if resources else 1
    return app.model_copy(update={"components": [
        c.model_copy(update={"demand": c.demand * k}) if c.from_plan else c for c in app.components
    ]})


def _host(app: AppModel) -> Optional[str]:
    return next((c.id for c in app.components if c.from_plan), None)


def _with_placement(state: SystemState, assign: Mapping[str, str], **changes) -> SystemState:
    """New state (next version) with the placement re-evaluated for its resources"""
    draft = replace(state, version=state.version + 1, _latency_cache={}, **changes)
    if draft.topology is None or draft.app is None or draft.placement is None:
        return draft
    score = evaluate_placement(draft.topology, scaled_app(draft.app, draft.resources), dict(assign))
    mode = draft.placement_mode or MinCostUnderLatency(bound=math.inf)
    return replace(draft, placement=to_plan(dict(assign), score, mode))


def _placement_terms(state: SystemState) -> tuple[float, float]:
    """(overhead outside the program host, host node speed)"""
    if state.placement is None or state.topology is None or state.app is None:
        return 0.0, 1.0
    host = _host(state.app)
    if host is None:
        return state.placement.latency, 1.0
    node = state.topology.node(state.placement.assign[host])
    comp = scaled_app(state.app, state.resources).component(host)
    host_compute = comp.work * state.app.op_cost / (comp.demand * node.speed)
    return state.placement.latency - host_compute, node.speed


def service_latency(state: SystemState, kind: str) -> float:
    """Unloaded latency of one request of this kind on the host node"""
    key = ("service", kind)
    if key not in state._latency_cache:
        _, speed = _placement_terms(state)
        state._latency_cache[key] = measure(state.deployable, state.testcase(kind), state.model).latency / speed
    return state._latency_cache[key]


def request_latency(state: SystemState, kind: str, rate: float) -> float:
    overhead, _ = _placement_terms(state)
    s = service_latency(state, kind)
    return overhead + s * max(1.0, rate * s)


def mix_latency(state: SystemState, mix: Sequence[MixEntry]) -> float:
    total = sum(count for _, _, count in mix)
    if total == 0:
        return 0.0
    return sum(count * request_latency(state, kind, rate) for kind, rate, count in mix) / total


def window_mix(rows: Iterable[WorkloadEvent]) -> list[MixEntry]:
    counts = Counter((row.kind, row.rate) for row in rows)
    return [(kind, rate, n) for (kind, rate), n in sorted(counts.items())]


def _first_diff(got: OutputTrace, expected: OutputTrace) -> Optional[int]:
    for i, (a, b) in enumerate(zip(got, expected)):
        if a != b:
            return i
    if len(got) != len(expected):
        return min(len(got), len(expected))
    return None


def expected_output(state: SystemState, tc: Testcase) -> Optional[OutputTrace]:
    """Stored expected trace, else the reference run for regression cases"""
    if tc.expected_output is not None:
        return tc.expected_output
    if "regression" in tc.tags:
        trace, _ = interpret(state.reference or state.program, tc.input, state.library)
        return trace
    return None


def verify_deployment(state: SystemState, testcases: Sequence[Testcase]) -> VerificationReport:
    entries: list[TestcaseVerdict] = []
    for tc in testcases:
        m = measure(state.deployable, tc, state.model)
        latency_ok = tc.required_latency is None or m.latency <= tc.required_latency
        expected = expected_output(state, tc)
        diff = _first_diff(m.output, expected) if expected is not None else None
        entries.append(TestcaseVerdict(
            testcase_id=tc.id,
            measurement=m,
            latency_ok=latency_ok,
            output_ok=diff is None,
            first_diff=diff,
        ))
    failing = [e.testcase_id for e in entries if not (e.latency_ok and e.output_ok)]
    resource_cost = state.resources.cost if state.resources else 0.0
    placement_cost = state.placement.cost if state.placement else 0.0
    report = VerificationReport(
        passed=not failing,
        entries=entries,
        failing=failing,
        cpu_units=state.resources.cpu_units if state.resources else 1,
        device_units=state.resources.device_units if state.resources else 1,
        resource_cost=resource_cost,
        placement_cost=placement_cost,
        total_cost=resource_cost + placement_cost,
    )
    if failing:
        logger.warning(f"Verification failed for {failing}")
    else:
        logger.info(f"Verification passed for {len(entries)} testcases")
    return report


def migration_penalty(kind: ProposalKind) -> float:
    return getattr(settings, f"penalty_{kind}")


def apply_payload(state: SystemState, kind: ProposalKind, payload: dict) -> SystemState:
    """The state a proposal of this kind and payload leads to"""
    assign = state.placement.assign if state.placement else {}
    if kind == "resource_amount":
        return _with_placement(state, assign, resources=ResourcePlan.model_validate(payload["resources"]))
    if kind == "placement":
        return _with_placement(state, payload["assign"])
    if kind == "soft_logic":
        pattern = OffloadPattern(bits=tuple(payload["bits"]), loop_map=tuple(payload["loop_map"]))
        return _with_placement(state, assign, pattern=pattern)
    return _with_placement(state, assign, active_kernels=frozenset(payload["active_kernels"]))


def _resource_candidates(state: SystemState, mix: Sequence[MixEntry]) -> Iterable[dict]:
    """Smallest multiplier at the current ratio that removes the load slowdown"""
    plan = state.resources
    if plan is None:
        return
    unloaded = mix_latency(state, [(kind, 0.0, n) for kind, _, n in mix])
    if mix_latency(state, mix) <= unloaded:
        return
    ratio = (plan.cpu_units // plan.multiplier, plan.device_units // plan.multiplier)
    total = sum(n for _, _, n in mix)
    measured = [(n, measure(state.deployable, state.testcase(kind), state.model)) for kind, _, n in mix]
    split = TimeSplit(
        cpu_time=sum(n * m.cpu_time for n, m in measured) / total,
        device_time=sum(n * m.device_time for n, m in measured) / total,
        transfer_time=sum(n * m.transfer_time for n, m in measured) / total,
    )
    last: Optional[dict] = None
    k = plan.multiplier + 1
    while ratio[0] * k <= state.scaling.max_cpu_units and ratio[1] * k <= state.scaling.max_device_units:
        payload = {"resources": plan_for(ratio, k, split, state.scaling).model_dump()}
        try:
            candidate = apply_payload(state, "resource_amount", payload)
        except CapacityExceeded:
            break
        last = payload
        if mix_latency(candidate, mix) <= unloaded:
            yield payload
            return
        k += 1
    if last is not None:
        yield last


def _placement_candidates(state: SystemState) -> Iterable[dict]:
    if state.topology is None or state.app is None or state.placement_mode is None:
        return
    try:
        plan = solve_placement(state.topology, scaled_app(state.app, state.resources), state.placement_mode)
    except (PlacementInfeasible, SearchSpaceTooLarge):
        return
    if state.placement is None or plan.assign != state.placement.assign:
        yield {"assign": plan.assign}


def _soft_logic_candidates(state: SystemState, mix: Sequence[MixEntry]) -> Iterable[dict]:
    counts = Counter()
    for kind, _, n in mix:
        counts[state.testcase(kind).id] += n
    observed = [state.testcase(kind).model_copy(update={"weight": float(n)}) for kind, n in sorted(counts.items())]
    space = candidate_space(analyze(state.program))
    try:
        fitness = FitnessContext(
            state.program, state.model, observed, space, state.library, active_kernels=state.active_kernels,
        )
        result = run_ga(space, state.ga, fitness)
    except EmptySpace:
        return
    if result.best != state.pattern:
        yield {"bits": list(result.best.bits), "loop_map": list(result.best.loop_map)}


def _hard_logic_candidates(state: SystemState) -> Iterable[dict]:
    if state.active_kernels is None:
        return
    kernels = state.kernels()
    slots = min(settings.fpga_slots, len(kernels))
    for chosen in itertools.combinations(kernels, slots):
        if frozenset(chosen) != state.active_kernels:
            yield {"active_kernels": list(chosen)}


def _candidates(state: SystemState, kind: ProposalKind, mix: Sequence[MixEntry]) -> Iterable[dict]:
    if kind == "resource_amount":
        return _resource_candidates(state, mix)
    if kind == "placement":
        return _placement_candidates(state)
    if kind == "soft_logic":
        return _soft_logic_candidates(state, mix)
    return _hard_logic_candidates(state)


def net_gain(gain: float, current: float, penalty: float, requests: float) -> float:
    """Latency gain minus the migration penalty spread over `requests` requests"""
    if penalty <= 0:
        return gain
    if requests <= 0 or current <= 0:
        return -math.inf
    return gain - penalty / (requests * current)


def trial_simulate(
    state: SystemState,
    recent: Sequence[WorkloadEvent],
    policy: Optional[OperatePolicy] = None,
) -> Optional[ReconfigProposal]:
    """
    Best reconfiguration for the observed window, or None

    Each candidate kind is re-derived against the window's request mix; the
    winner has the largest net gain above policy.min_gain.
    """
    policy = policy or OperatePolicy()
    if not recent:
        return None
    mix = window_mix(recent)
    rate = sum(row.rate for row in recent) / len(recent)
    # the penalty lands on the next window when there is no review period
    requests = policy.window if math.isinf(policy.period) else rate * policy.period
    current = mix_latency(state, mix)

    best: Optional[ReconfigProposal] = None
    for kind in policy.kinds:
        for payload in _candidates(state, kind, mix):
            try:
                candidate = apply_payload(state, kind, payload)
                expected = mix_latency(candidate, mix)
            except (CapacityExceeded, Disconnected) as e:
                logger.debug(f"Skipping {kind} candidate: {e}")
                continue
            except EnvAdaptError as e:
                logger.warning(f"Trial of {kind} candidate failed: {e}")
                continue
            gain = (current - expected) / current if current > 0 else 0.0
            penalty = migration_penalty(kind)
            net = net_gain(gain, current, penalty, requests)
            if gain <= 0 or net <= policy.min_gain:
                continue
            if best is None or net > best.net_gain:
                best = ReconfigProposal(
                    kind=kind,
                    payload=payload,
                    expected_latency_gain=gain,
                    net_gain=net,
                    expected_cost_delta=candidate.cost - state.cost,
                    migration_penalty=penalty,
                    current_latency=current,
                    expected_latency=expected,
                    state_version=state.version,
                )
    if best is not None:
        logger.info(f"Trial simulation proposes {best.kind}: gain {best.expected_latency_gain:.1%} "
                    f"(net {best.net_gain:.1%})")
    return best


def apply_reconfig(state: SystemState, proposal: ReconfigProposal) -> SystemState:
    if proposal.state_version != state.version:
        raise StaleProposal(proposal.state_version, state.version)
    new_state = apply_payload(state, proposal.kind, proposal.payload)
    logger.info(f"Applied {proposal.kind} reconfiguration (state v{state.version} -> v{new_state.version})")
    return new_state


class _Recorder:
    def __init__(self):
        self.log = OperateLog()

    def __call__(self, time: float, event: str, **detail) -> None:
        self.log.events.append(OperateEvent(seq=len(self.log.events), time=time, event=event, detail=detail))


def operate(
    state: SystemState,
    trace: WorkloadTrace,
    policy: Optional[OperatePolicy] = None,
    approve: Optional[Approver] = None,
) -> OperateLog:
    """
    Replay a workload trace against the deployed state

    A trial simulation runs when the rolling window mean exceeds the latency
    threshold, and at every review period. Without auto-approval an approver
    callback decides; with neither, proposals are declined. An applied
    reconfiguration adds its migration penalty to the next request.
    """
    policy = policy or OperatePolicy()
    record = _Recorder()
    window: deque[tuple[WorkloadEvent, float]] = deque(maxlen=policy.window)
    next_review = (trace.events[0].time + policy.period) if trace.events else math.inf
    # migration cost still owed by the first request after an apply
    owed = 0.0

    for row in trace.events:
        latency = request_latency(state, row.kind, row.rate) + owed
        charged = {"penalty": owed} if owed else {}
        owed = 0.0
        record(row.time, "measurement", kind=row.kind, rate=row.rate, latency=latency, version=state.version,
               **charged)
        window.append((row, latency))

        mean = sum(lat for _, lat in window) / len(window)
        reason = None
        if len(window) == policy.window and mean > policy.latency_threshold:
            reason = "threshold"
        elif row.time >= next_review:
            reason = "period"
        if row.time >= next_review:
            while next_review <= row.time:
                next_review += policy.period
        if reason is None:
            continue

        record(row.time, "trigger", reason=reason, window_mean=mean, window_size=len(window))
        proposal = trial_simulate(state, [r for r, _ in window], policy)
        if proposal is None:
            continue
        record(row.time, "proposal", **proposal.model_dump())
        approved = policy.auto_approve or (approve is not None and approve(proposal))
        record(row.time, "decision", kind=proposal.kind, approved=approved)
        if not approved:
            continue
        state = apply_reconfig(state, proposal)
        record(row.time, "apply", kind=proposal.kind, payload=proposal.payload, version=state.version)
        if proposal.migration_penalty > 0:
            record(row.time, "penalty", kind=proposal.kind, migration_penalty=proposal.migration_penalty)
            owed = proposal.migration_penalty
        window.clear()

    logger.info(f"Operated over {len(trace.events)} requests: {len(record.log.of('apply'))} reconfigurations")
    return record.log


def load_trace(path: Union[str, Path]) -> WorkloadTrace:
    """trace.csv with a `time,kind,rate` header"""
    rows = csv.DictReader(read_text(path).splitlines())
    events = []
    for line, row in enumerate(rows, start=2):
        try:
            events.append(WorkloadEvent(time=float(row["time"]), kind=row["kind"], rate=float(row["rate"])))
        except (KeyError, TypeError, ValueError, ValidationError) as e:
            raise SchemaError(f"{Path(path).name}:{line}", str(e)) from e
    try:
        return WorkloadTrace(events=events)
    except ValidationError as e:
        raise SchemaError(Path(path).name, e.errors()[0]["msg"]) from e
