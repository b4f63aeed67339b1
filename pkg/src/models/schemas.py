from __future__ import annotations

from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.core.config import settings

Number = Union[int, float]
InputValue = Union[Number, list[Number]]
InputBinding = dict[str, InputValue]
OutputTrace = list[Number]


class SourceProgram(BaseModel):
    text: str
    name: str = "program"


class LoopInfo(BaseModel):
    id: int
    kind: Literal["for", "while"]
    depth: int
    parent: Optional[int] = None
    var: Optional[str] = None
    defs: list[str]
    uses: list[str]
    parallelizable: bool
    reason: str = ""
    static_trip: Optional[int] = None


class ProfileReport(BaseModel):
    iterations: dict[int, int] = Field(default_factory=dict)
    ops: dict[int, int] = Field(default_factory=dict)


class AccelFormula(BaseModel):
    fixed: float = Field(ge=0)
    per_element: float = Field(ge=0)


class CostModel(BaseModel):
    cpu_op_cost: float = Field(default=1.0, ge=0)
    gpu_speedup: float = Field(default=10.0, gt=0)
    kernel_launch: float = Field(default=0.0, ge=0)
    xfer_latency: float = Field(default=0.0, ge=0)
    xfer_per_byte: float = Field(default=0.0, ge=0)
    elem_bytes: int = Field(default=8, ge=0)
    accel_formulas: dict[str, AccelFormula] = Field(default_factory=dict)
    noise_sigma: float = Field(default=0.0, ge=0)
    noise_seed: int = 0


class ExecutionReport(BaseModel):
    total: float = 0.0
    cpu_time: float = 0.0
    device_time: float = 0.0
    transfer_time: float = 0.0
    transfer_events: int = 0
    transfer_bytes: int = 0
    cpu_ops: int = 0
    device_ops: int = 0
    output: OutputTrace = Field(default_factory=list)


class PerfMeasurement(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    testcase_id: str
    latency: float
    throughput: float
    makespan: float
    total: float
    cpu_time: float
    device_time: float
    transfer_time: float
    output: OutputTrace = Field(default_factory=list)


class PatternRecordSpec(BaseModel):
    """One entry of patterns.json; the signature is computed at load"""

    model_config = ConfigDict(extra="forbid")

    name: str
    reference_source: str
    kernel_id: str
    fixed_cost: float = Field(ge=0)
    per_element_cost: float = Field(ge=0)
    min_similarity: float = Field(default=0.8, gt=0, le=1)
    params: list[str] = Field(default_factory=list)
    description: str = ""


class BlockMatch(BaseModel):
    """
    A program region recognized as a registered functional block

    `path` navigates from the program body to the block holding the region:
    each step is (statement index, child block) with child block 0 = loop body
    or then-branch, 1 = else-branch. The region is statements [start, end).
    """

    model_config = ConfigDict(frozen=True)

    pattern: str
    kernel_id: str
    path: tuple[tuple[int, int], ...] = ()
    start: int
    end: int
    similarity: float = Field(ge=0, le=1)
    via_call: bool = False
    size_expr: str
    digest: str


class OffloadPattern(BaseModel):
    model_config = ConfigDict(frozen=True)

    bits: tuple[int, ...]
    loop_map: tuple[int, ...]

    @model_validator(mode="after")
    def _shape(self) -> "OffloadPattern":
        if len(self.bits) != len(self.loop_map):
            raise ValueError("bits and loop_map lengths differ")
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError("bits must be 0 or 1")
        return self

    @classmethod
    def zeros(cls, loop_map: tuple[int, ...]) -> "OffloadPattern":
        return cls(bits=(0,) * len(loop_map), loop_map=tuple(loop_map))

    def offloaded(self) -> frozenset[int]:
        return frozenset(lid for lid, b in zip(self.loop_map, self.bits) if b)

    def label(self) -> str:
        return "".join(str(b) for b in self.bits) or "-"


class GaConfig(BaseModel):
    population: int = Field(default=16, ge=2)
    generations: int = Field(default=20, ge=1)
    crossover_rate: float = Field(default=0.9, ge=0, le=1)
    mutation_rate: Optional[float] = Field(default=None, ge=0, le=1)
    elite: int = Field(default=1, ge=0)
    seed: int = 0
    penalty: Optional[float] = Field(default=None, ge=0)

    @model_validator(mode="after")
    def _elite_below_population(self) -> "GaConfig":
        if self.elite >= self.population:
            raise ValueError("elite must be smaller than population")
        return self


class GenerationStats(BaseModel):
    best: float
    mean: float


class SearchResult(BaseModel):
    best: OffloadPattern
    best_time: float
    history: list[GenerationStats]
    evaluations: int
    cache_hits: int


class ScalingModel(BaseModel):
    cpu_serial_frac: float = Field(default=0.0, ge=0, le=1)
    device_serial_frac: float = Field(default=0.0, ge=0, le=1)
    max_cpu_units: int = Field(default=64, ge=1)
    max_device_units: int = Field(default=16, ge=1)
    price_cpu: float = Field(default=1.0, ge=0)
    price_device: float = Field(default=4.0, ge=0)


class TimeSplit(BaseModel):
    cpu_time: float = Field(ge=0)
    device_time: float = Field(ge=0)
    transfer_time: float = Field(default=0.0, ge=0)


class RatioDecision(BaseModel):
    cpu_units: int
    device_units: int
    imbalance: float
    warning: Optional[str] = None

    @property
    def pair(self) -> tuple[int, int]:
        return (self.cpu_units, self.device_units)


class ResourcePlan(BaseModel):
    cpu_units: int = Field(ge=1)
    device_units: int = Field(ge=1)
    multiplier: int = Field(ge=1)
    ratio: float
    est_cpu_time: float
    est_device_time: float
    transfer_time: float
    est_latency: float
    cost: float


class Node(BaseModel):
    id: str
    kind: Literal["cloud", "edge", "gw", "device"]
    capacity: float = Field(ge=0)
    unit_price: float = Field(default=0.0, ge=0)
    available: Optional[float] = Field(default=None, ge=0)
    speed: float = Field(default=1.0, gt=0)

    @model_validator(mode="after")
    def _available(self) -> "Node":
        if self.available is None:
            self.available = self.capacity
        if self.available > self.capacity:
            raise ValueError(f"node {self.id}: available exceeds capacity")
        return self


class Link(BaseModel):
    a: str
    b: str
    latency: float = Field(ge=0)
    bandwidth: float = Field(gt=0)


class Topology(BaseModel):
    nodes: list[Node]
    links: list[Link] = Field(default_factory=list)

    @model_validator(mode="after")
    def _endpoints(self) -> "Topology":
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate node id")
        for link in self.links:
            if link.a not in ids or link.b not in ids:
                raise ValueError(f"link {link.a}-{link.b} references unknown node")
        return self

    def node(self, node_id: str) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)


class Component(BaseModel):
    id: str
    demand: float = Field(gt=0)
    work: float = Field(default=0.0, ge=0)
    from_plan: bool = False


class Flow(BaseModel):
    src: str
    dst: str
    bytes_per_request: float = Field(ge=0)


class AppModel(BaseModel):
    components: list[Component]
    flows: list[Flow] = Field(default_factory=list)
    pinned: dict[str, str] = Field(default_factory=dict)
    op_cost: float = Field(default=1.0, ge=0)

    def component(self, comp_id: str) -> Component:
        for c in self.components:
            if c.id == comp_id:
                return c
        raise KeyError(comp_id)


class MaxPerfUnderBudget(BaseModel):
    mode: Literal["max_perf"] = "max_perf"
    budget: float


class MinCostUnderLatency(BaseModel):
    mode: Literal["min_cost"] = "min_cost"
    bound: float


PlacementMode = Annotated[Union[MaxPerfUnderBudget, MinCostUnderLatency], Field(discriminator="mode")]


class PlacementPlan(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    assign: dict[str, str]
    latency: float
    throughput: float
    cost: float
    objective_value: float
    network_latency: float = 0.0
    compute_latency: float = 0.0


class Testcase(BaseModel):
    __test__ = False

    id: str
    input: InputBinding = Field(default_factory=dict)
    request_count: int = Field(default=1, ge=1)
    required_latency: Optional[float] = None
    tags: list[str] = Field(default_factory=list)
    expected_output: Optional[OutputTrace] = None
    weight: float = Field(default=1.0, ge=0)


class WorkloadEvent(BaseModel):
    time: float
    kind: str
    rate: float = Field(ge=0)


class WorkloadTrace(BaseModel):
    events: list[WorkloadEvent]

    @field_validator("events")
    @classmethod
    def _monotone(cls, events: list[WorkloadEvent]) -> list[WorkloadEvent]:
        for prev, cur in zip(events, events[1:]):
            if cur.time < prev.time:
                raise ValueError(f"trace time decreases at t={cur.time}")
        return events


ProposalKind = Literal["resource_amount", "placement", "soft_logic", "hard_logic"]
PROPOSAL_KINDS: tuple[ProposalKind, ...] = ("resource_amount", "placement", "soft_logic", "hard_logic")


class OperatePolicy(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    period: float = Field(default=float("inf"), gt=0)
    latency_threshold: float = Field(default=float("inf"), gt=0)
    window: int = Field(default=20, ge=1)
    min_gain: float = Field(default=0.10, ge=0)
    auto_approve: bool = False
    kinds: list[ProposalKind] = Field(default_factory=lambda: list(PROPOSAL_KINDS))


class ReconfigProposal(BaseModel):
    kind: ProposalKind
    payload: dict
    expected_latency_gain: float
    net_gain: float
    expected_cost_delta: float
    migration_penalty: float
    current_latency: float
    expected_latency: float
    state_version: int


class TestcaseVerdict(BaseModel):
    __test__ = False

    testcase_id: str
    measurement: PerfMeasurement
    latency_ok: bool
    output_ok: bool
    first_diff: Optional[int] = None


class VerificationReport(BaseModel):
    passed: bool
    entries: list[TestcaseVerdict]
    failing: list[str]
    cpu_units: int
    device_units: int
    resource_cost: float
    placement_cost: float
    total_cost: float


class OperateEvent(BaseModel):
    seq: int
    time: float
    event: Literal["measurement", "trigger", "proposal", "decision", "apply", "penalty"]
    detail: dict = Field(default_factory=dict)


class OperateLog(BaseModel):
    events: list[OperateEvent] = Field(default_factory=list)

    def of(self, event: str) -> list[OperateEvent]:
        return [e for e in self.events if e.event == event]

    def to_jsonl(self) -> str:
        return "".join(e.model_dump_json() + "\n" for e in self.events)


class PipelineConfig(BaseModel):
    """pipeline.json; relative paths resolve against the file's directory"""

    model_config = ConfigDict(extra="forbid")

    source: str
    testcases: str
    cost_model: str
    patterns: str
    topology: Optional[str] = None
    appmodel: Optional[str] = None
    scaling: Optional[str] = None
    ga: Optional[str] = None
    trace: Optional[str] = None
    perf_target: Optional[float] = Field(default=None, gt=0)
    budget: Optional[float] = Field(default=None, ge=0)
    placement: Optional[PlacementMode] = None
    search: Literal["ga", "brute_force"] = "ga"
    policy: OperatePolicy = Field(default_factory=OperatePolicy)
    auto_approve: bool = False
    seed: Optional[int] = None


class Artifact(BaseModel):
    """Every intermediate document carries the schema version it was written with"""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    schema_version: int = Field(default_factory=lambda: settings.schema_version)

    @field_validator("schema_version")
    @classmethod
    def _supported(cls, version: int) -> int:
        if version != settings.schema_version:
            raise ValueError(f"unsupported schema version {version} (expected {settings.schema_version})")
        return version


class DirectiveSpec(BaseModel):
    kind: Literal["copyin", "copyout"]
    var: str
    anchor: int


class AnalysisArtifact(Artifact):
    program: str
    loops: list[LoopInfo]
    profile: ProfileReport
    matches: list[BlockMatch]
    substituted_source: str
    kernels: list[str]
    active_kernels: Optional[list[str]] = None


class SearchArtifact(Artifact):
    loop_map: list[int]
    excluded: dict[int, str] = Field(default_factory=dict)
    method: Literal["ga", "brute_force", "none"]
    pattern: OffloadPattern
    best_time: float
    baseline_time: float
    history: list[GenerationStats] = Field(default_factory=list)
    evaluations: int = 0
    cache_hits: int = 0
    directives: list[DirectiveSpec]
    annotated_source: str


class TuneArtifact(Artifact):
    split: TimeSplit
    ratio: RatioDecision
    resources: ResourcePlan


class PlaceArtifact(Artifact):
    resources: ResourcePlan
    placement: Optional[PlacementPlan] = None
    mode: Optional[PlacementMode] = None
    retries: int = 0


class VerifyArtifact(Artifact):
    report: VerificationReport
    approved: bool


class OperateArtifact(Artifact):
    proposals: int
    applied: int
    events: int
    final_version: int


class PipelineReport(Artifact):
    status: Literal["pass", "fail", "infeasible"]
    failed_step: Optional[str] = None
    message: str = ""
    analysis: Optional[AnalysisArtifact] = None
    search: Optional[SearchArtifact] = None
    tune: Optional[TuneArtifact] = None
    place: Optional[PlaceArtifact] = None
    verify: Optional[VerifyArtifact] = None
    operate: Optional[OperateArtifact] = None
