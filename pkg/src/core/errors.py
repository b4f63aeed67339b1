"""
Error hierarchy shared by every service

Services raise these; the CLI maps them to exit codes and step attribution.
"""

from typing import Optional


class EnvAdaptError(Exception):
    """Base class for all domain errors"""


# --- frontend -------------------------------------------------------------

class ElcSyntaxError(EnvAdaptError):
    def __init__(self, line: int, column: int, expected: str, found: str = ""):
        self.line = line
        self.column = column
        self.expected = expected
        self.found = found
        detail = f" (found {found!r})" if found else ""
        super().__init__(f"syntax error at {line}:{column}: expected {expected}{detail}")


class UndeclaredVariable(EnvAdaptError):
    def __init__(self, name: str, line: int, column: int):
        self.name = name
        self.line = line
        self.column = column
        super().__init__(f"undeclared variable '{name}' at {line}:{column}")


class UnknownLoopId(EnvAdaptError):
    def __init__(self, loop_id: int):
        self.loop_id = loop_id
        super().__init__(f"unknown loop id {loop_id}")


# --- interpreter ------------------------------------------------------------

class OutOfBounds(EnvAdaptError):
    def __init__(self, array: str, index: int, line: int = 0, column: int = 0):
        self.array = array
        self.index = index
        self.line = line
        self.column = column
        super().__init__(f"index {index} out of bounds for '{array}' at {line}:{column}")


class DivergentLoop(EnvAdaptError):
    def __init__(self, loop_id: Optional[int], budget: int):
        self.loop_id = loop_id
        self.budget = budget
        super().__init__(f"loop {loop_id} exceeded step budget {budget}")


class ArithmeticFault(EnvAdaptError):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        super().__init__(f"{message} at {line}:{column}")


class InputBindingError(EnvAdaptError):
    def __init__(self, name: str, reason: str):
        self.name = name
        self.reason = reason
        super().__init__(f"input '{name}': {reason}")


class UnknownBlock(EnvAdaptError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"no implementation registered for block '{name}'")


class ShadowFault(EnvAdaptError):
    """Stale data observed by the host/device shadow interpreter"""

    def __init__(self, side: str, var: str, index: int, what: str = "read"):
        self.side = side
        self.var = var
        self.index = index
        self.what = what
        super().__init__(f"stale {what} of {var}[{index}] on {side}")


# --- pattern DB ---------------------------------------------------------------

class InputFileNotFound(EnvAdaptError):
    def __init__(self, path: str):
        self.path = path
        super().__init__(f"input file not found: {path}")


class SchemaError(EnvAdaptError):
    def __init__(self, field: str, reason: str = "invalid"):
        self.field = field
        self.reason = reason
        super().__init__(f"schema error in '{field}': {reason}")


class DuplicateKernel(EnvAdaptError):
    def __init__(self, kernel_id: str):
        self.kernel_id = kernel_id
        super().__init__(f"duplicate kernel id '{kernel_id}'")


class RegionStale(EnvAdaptError):
    def __init__(self):
        super().__init__("program changed since the block match was computed")


class BindingMismatch(EnvAdaptError):
    def __init__(self, detail: str):
        self.detail = detail
        super().__init__(f"cannot bind region to reference implementation: {detail}")


# --- simulation / transfer -------------------------------------------------------

class UnhousedKernel(EnvAdaptError):
    def __init__(self, kernel_id: str):
        self.kernel_id = kernel_id
        super().__init__(f"kernel '{kernel_id}' has no cost formula in the cost model")


class PatternShapeMismatch(EnvAdaptError):
    def __init__(self, detail: str):
        self.detail = detail
        super().__init__(f"offload pattern shape mismatch: {detail}")


class UnknownAnchor(EnvAdaptError):
    def __init__(self, anchor: int):
        self.anchor = anchor
        super().__init__(f"directive anchor loop {anchor} does not exist")


# --- search -------------------------------------------------------------------

class EmptySpace(EnvAdaptError):
    def __init__(self):
        super().__init__("no parallelizable loops to search")


class SpaceTooLarge(EnvAdaptError):
    def __init__(self, n: int, cap: int):
        self.n = n
        self.cap = cap
        super().__init__(f"2^{n} patterns exceed brute-force cap 2^{cap}")


# --- resources / placement ----------------------------------------------------------

class NonPositiveTime(EnvAdaptError):
    def __init__(self, cpu_time: float, device_time: float):
        self.cpu_time = cpu_time
        self.device_time = device_time
        super().__init__(f"ratio needs positive times (cpu={cpu_time}, device={device_time})")


class ResourceInfeasible(EnvAdaptError):
    LATENCY_UNREACHABLE = "latency_unreachable"
    BUDGET_EXCEEDED = "budget_exceeded"

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        super().__init__(f"resource sizing infeasible: {reason} {detail}".strip())


class CapacityExceeded(EnvAdaptError):
    def __init__(self, node: str, demand: float, available: float):
        self.node = node
        self.demand = demand
        self.available = available
        super().__init__(f"node '{node}' demand {demand} exceeds available {available}")


class Disconnected(EnvAdaptError):
    def __init__(self, a: str, b: str):
        self.pair = (a, b)
        super().__init__(f"no path between '{a}' and '{b}'")


class PlacementInfeasible(EnvAdaptError):
    def __init__(self, detail: str = ""):
        super().__init__(f"no placement satisfies the constraints {detail}".strip())


class SearchSpaceTooLarge(EnvAdaptError):
    def __init__(self, size: int, cap: int):
        self.size = size
        self.cap = cap
        super().__init__(f"{size} assignments exceed exact-search cap {cap}")


# --- lifecycle -------------------------------------------------------------------

class StaleProposal(EnvAdaptError):
    def __init__(self, expected_version: int, actual_version: int):
        self.expected_version = expected_version
        self.actual_version = actual_version
        super().__init__(
            f"proposal built for state v{expected_version}, current is v{actual_version}"
        )


INFEASIBLE_ERRORS = (ResourceInfeasible, PlacementInfeasible)


class StepFailed(EnvAdaptError):
    """A pipeline step failed; `cause` is the domain error it raised"""

    def __init__(self, step: str, cause: EnvAdaptError):
        self.step = step
        self.cause = cause
        super().__init__(f"{step}: {cause}")
