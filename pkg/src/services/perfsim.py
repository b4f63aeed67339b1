"""
Simulated verification environment

Runs an annotated program under the cost model: ops outside offloaded loops
cost cpu_op_cost each, every execution of an offloaded loop costs
kernel_launch + ops * cpu_op_cost / gpu_speedup, every executed directive costs
xfer_latency + bytes * xfer_per_byte. Resident accelerator calls cost
fixed + per_element * n plus one transfer per input and output variable.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from src.core.errors import UnhousedKernel
from src.core.logging import get_plain_logger
from src.models.ast import AccelCall, Ast, Loop
from src.models.schemas import (
    CostModel,
    ExecutionReport,
    InputBinding,
    OffloadPattern,
    PerfMeasurement,
    ResourcePlan,
    ScalingModel,
    Testcase,
    TimeSplit,
)
from src.services.interpreter import BlockImpl, Interpreter
from src.services.resource import scaled_times
from src.services.transfer import check_pattern

logger = get_plain_logger(__name__)


class _CostInterpreter(Interpreter):
    def __init__(
        self,
        ast: Ast,
        offloaded: frozenset[int],
        model: CostModel,
        library: Optional[Mapping[str, BlockImpl]],
        active_kernels: Optional[frozenset[str]],
    ):
        super().__init__(ast, library)
        self.offloaded = offloaded
        self.model = model
        self.active_kernels = active_kernels
        self.device_time = 0.0
        self.device_ops = 0
        self.transfer_time = 0.0
        self.transfer_events = 0
        self.transfer_bytes = 0
        self._region_start = 0

    def _transfer(self, var: str) -> None:
        nbytes = len(self.frame.memory[var]) * self.model.elem_bytes
        self.transfer_events += 1
        self.transfer_bytes += nbytes
        self.transfer_time += self.model.xfer_latency + nbytes * self.model.xfer_per_byte

    def enter_loop(self, loop: Loop) -> None:
        for d in loop.pragmas:
            if d.kind == "copyin":
                self._transfer(d.var)
        if loop.loop_id in self.offloaded:
            self._region_start = self.ops

    def exit_loop(self, loop: Loop) -> None:
        if loop.loop_id in self.offloaded:
            ops = self.ops - self._region_start
            self.device_ops += ops
            self.device_time += self.model.kernel_launch + ops * self.model.cpu_op_cost / self.model.gpu_speedup
        for d in loop.pragmas:
            if d.kind == "copyout":
                self._transfer(d.var)

    def exec_accel(self, stmt: AccelCall) -> None:
        resident = self.active_kernels is None or stmt.kernel_id in self.active_kernels
        if self.block_depth or not resident:
            super().exec_accel(stmt)
            return
        formula = self.model.accel_formulas.get(stmt.kernel_id)
        if formula is None:
            raise UnhousedKernel(stmt.kernel_id)
        n = self._eval_free(stmt.size)
        for var in stmt.inputs:
            self._transfer(var)
        before = self.ops
        super().exec_accel(stmt)
        self.ops = before
        self.device_time += formula.fixed + formula.per_element * n
        for var in stmt.outputs:
            self._transfer(var)


def _noise_factor(model: CostModel, pattern: OffloadPattern, active_kernels: Optional[frozenset[str]]) -> float:
    if model.noise_sigma <= 0:
        return 1.0
    key = f"{pattern.loop_map}:{pattern.label()}:{sorted(active_kernels or ())}"
    pattern_hash = int(hashlib.sha256(key.encode("utf-8")).hexdigest()[:16], 16)
    rng = np.random.default_rng([model.noise_seed, pattern_hash])
    return max(0.0, 1.0 + model.noise_sigma * float(rng.standard_normal()))


def simulate(
    annotated: Ast,
    pattern: OffloadPattern,
    model: CostModel,
    binding: Optional[InputBinding] = None,
    library: Optional[Mapping[str, BlockImpl]] = None,
    active_kernels: Optional[frozenset[str]] = None,
) -> ExecutionReport:
    """
    Execution time split of one run

    active_kernels=None means every accelerator kernel is resident.
    """
    offloaded = check_pattern(annotated, pattern)
    sim = _CostInterpreter(annotated, offloaded, model, library, active_kernels)
    result = sim.run(binding)

    cpu_ops = sim.ops - sim.device_ops
    factor = _noise_factor(model, pattern, active_kernels)
    cpu_time = cpu_ops * model.cpu_op_cost * factor
    device_time = sim.device_time * factor
    transfer_time = sim.transfer_time * factor
    return ExecutionReport(
        total=cpu_time + device_time + transfer_time,
        cpu_time=cpu_time,
        device_time=device_time,
        transfer_time=transfer_time,
        transfer_events=sim.transfer_events,
        transfer_bytes=sim.transfer_bytes,
        cpu_ops=cpu_ops,
        device_ops=sim.device_ops,
        output=result.output,
    )


@dataclass(frozen=True)
class DeployablePlan:
    """Everything needed to run the deployed configuration of one program"""

    ast: Ast
    pattern: OffloadPattern
    library: Mapping[str, BlockImpl] = field(default_factory=dict)
    resources: Optional[ResourcePlan] = None
    scaling: ScalingModel = field(default_factory=ScalingModel)
    active_kernels: Optional[frozenset[str]] = None


def scaled_latency(report: ExecutionReport, resources: Optional[ResourcePlan], scaling: ScalingModel) -> float:
    if resources is None:
        return report.total
    split = TimeSplit(cpu_time=report.cpu_time, device_time=report.device_time, transfer_time=report.transfer_time)
    return scaled_times(split, resources.cpu_units, resources.device_units, scaling)[2]


def measure(plan: DeployablePlan, testcase: Testcase, model: CostModel) -> PerfMeasurement:
    """Latency of one request and throughput of serially served request_count requests"""
    report = simulate(plan.ast, plan.pattern, model, testcase.input, plan.library, plan.active_kernels)
    latency = scaled_latency(report, plan.resources, plan.scaling)
    makespan = testcase.request_count * latency
    throughput = testcase.request_count / makespan if makespan > 0 else float("inf")
    return PerfMeasurement(
        testcase_id=testcase.id,
        latency=latency,
        throughput=throughput,
        makespan=makespan,
        total=report.total,
        cpu_time=report.cpu_time,
        device_time=report.device_time,
        transfer_time=report.transfer_time,
        output=report.output,
    )
