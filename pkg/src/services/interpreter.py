"""
Deterministic ELC interpreter with exact loop profiling

This is the reference semantics every transformed program is checked against.
Subclasses (the cost simulator, the host/device shadow interpreter) hook into
loop entry/exit, loop bodies, memory access and block execution.

Op accounting: arithmetic/comparison op = 1, array element read = 1,
assignment store = 1, output = 1. Scalar reads, literals and loop control
(for/while headers) are free.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterator, Mapping, Optional, Union

from src.core.config import settings
from src.core.errors import (
    ArithmeticFault,
    DivergentLoop,
    InputBindingError,
    OutOfBounds,
    UnknownBlock,
)
from src.core.logging import get_plain_logger
from src.models.ast import (
    AccelCall,
    Assign,
    Ast,
    BinOp,
    Call,
    Expr,
    For,
    If,
    Index,
    Loop,
    Num,
    Output,
    Stmt,
    Unary,
    Var,
    While,
    walk,
    walk_expr,
)
from src.models.schemas import InputBinding, OutputTrace, ProfileReport

logger = get_plain_logger(__name__)

Value = Union[int, float]


@dataclass(frozen=True)
class BlockImpl:
    """Reference implementation of a functional block, run by call/accel"""

    name: str
    ast: Ast
    params: tuple[str, ...]


@dataclass
class RunResult:
    output: OutputTrace
    profile: ProfileReport
    memory: dict[str, list[Value]]
    ops: int


@dataclass
class _Frame:
    memory: dict[str, list[Value]]
    kinds: dict[str, str]
    arrays: frozenset[str] = frozenset()


def coerce(kind: str, value: Value, pos: tuple[int, int]) -> Value:
    if kind == "int":
        if isinstance(value, float):
            if value != value or value in (float("inf"), float("-inf")):
                raise ArithmeticFault("non-finite value stored to int", *pos)
            return int(value)
        return value
    return float(value)


class Interpreter:
    def __init__(
        self,
        ast: Ast,
        library: Optional[Mapping[str, BlockImpl]] = None,
        step_budget: Optional[int] = None,
        reversed_loops: frozenset[int] = frozenset(),
    ):
        self.ast = ast
        self.library = dict(library or {})
        self.step_budget = step_budget if step_budget is not None else settings.step_budget
        self.reversed_loops = reversed_loops
        self.frame = _Frame({}, {})
        self.trace: OutputTrace = []
        self.ops = 0
        self._unbounded_cache: dict[int, bool] = {}
        self.iterations: dict[int, int] = {}
        self.loop_ops: dict[int, int] = {}
        self.block_depth = 0

    def run(self, binding: Optional[InputBinding] = None) -> RunResult:
        self.frame = self._allocate(self.ast, binding or {}, strict=True)
        self._exec_block(self.ast.body)
        profile = ProfileReport(iterations=dict(self.iterations), ops=dict(self.loop_ops))
        return RunResult(list(self.trace), profile, self.frame.memory, self.ops)

    def _allocate(
        self,
        ast: Ast,
        binding: Mapping[str, object],
        strict: bool,
        aliases: Optional[dict[str, tuple[list[Value], str]]] = None,
    ) -> _Frame:
        aliases = aliases or {}
        memory: dict[str, list[Value]] = {}
        kinds: dict[str, str] = {}
        declared = {d.name for d in ast.decls}
        if strict:
            for name in binding:
                if name not in declared:
                    raise InputBindingError(name, "not declared in program")
        frame = _Frame(memory, kinds, frozenset(d.name for d in ast.decls if d.is_array))
        saved, self.frame = self.frame, frame
        try:
            for decl in ast.decls:
                if decl.name in aliases:
                    memory[decl.name], kinds[decl.name] = aliases[decl.name]
                    continue
                kinds[decl.name] = decl.kind
                if decl.is_array:
                    length = decl.length if isinstance(decl.length, int) else int(memory[decl.length][0])
                    if length < 0:
                        raise InputBindingError(decl.name, f"negative length {length}")
                    if decl.name in binding:
                        values = binding[decl.name]
                        if not isinstance(values, list) or len(values) != length:
                            raise InputBindingError(decl.name, f"expected list of {length} values")
                        memory[decl.name] = [coerce(decl.kind, v, decl.pos) for v in values]
                    else:
                        memory[decl.name] = [coerce(decl.kind, 0, decl.pos)] * length
                else:
                    if decl.name in binding:
                        value = binding[decl.name]
                        if isinstance(value, list):
                            raise InputBindingError(decl.name, "scalar bound to a list")
                    elif decl.init is not None:
                        value = self._eval_free(decl.init)
                    else:
                        value = 0
                    memory[decl.name] = [coerce(decl.kind, value, decl.pos)]
            for var in ast.loop_vars:
                if var in aliases:
                    memory[var], kinds[var] = aliases[var]
                elif var not in memory:
                    memory[var] = [0]
                    kinds[var] = "int"
        finally:
            self.frame = saved
        return frame

    def load(self, name: str, index: int) -> Value:
        return self.frame.memory[name][index]

    def store(self, name: str, index: int, value: Value, pos: tuple[int, int] = (0, 0)) -> None:
        self.frame.memory[name][index] = coerce(self.frame.kinds[name], value, pos)

    def enter_loop(self, loop: Loop) -> None:
        pass

    def exit_loop(self, loop: Loop) -> None:
        pass

    def run_body(self, loop: Loop) -> None:
        self._exec_block(loop.body)

    def _eval_free(self, expr: Expr) -> Value:
        before = self.ops
        value = self.eval(expr)
        self.ops = before
        return value

    def _checked_index(self, name: str, expr: Expr, pos: tuple[int, int]) -> int:
        idx = self.eval(expr)
        if isinstance(idx, float):
            raise ArithmeticFault(f"non-integer index into '{name}'", *pos)
        if idx < 0 or idx >= len(self.frame.memory[name]):
            raise OutOfBounds(name, idx, *pos)
        return idx

    def eval(self, expr: Expr) -> Value:
        if isinstance(expr, Num):
            return expr.value
        if isinstance(expr, Var):
            return self.load(expr.name, 0)
        if isinstance(expr, Index):
            idx = self._checked_index(expr.name, expr.index, expr.pos)
            self.ops += 1
            return self.load(expr.name, idx)
        if isinstance(expr, BinOp):
            left = self.eval(expr.left)
            right = self.eval(expr.right)
            self.ops += 1
            return self._binop(expr.op, left, right, expr.pos)
        if isinstance(expr, Unary):
            value = self.eval(expr.operand)
            self.ops += 1
            return -value
        raise TypeError(f"not an expression: {expr!r}")

    @staticmethod
    def _binop(op: str, a: Value, b: Value, pos: tuple[int, int]) -> Value:
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            if b == 0:
                raise ArithmeticFault("division by zero", *pos)
            if isinstance(a, int) and isinstance(b, int):
                q = abs(a) // abs(b)
                return q if (a >= 0) == (b > 0) else -q
            return a / b
        if op == "<":
            return int(a < b)
        if op == "<=":
            return int(a <= b)
        if op == ">":
            return int(a > b)
        if op == ">=":
            return int(a >= b)
        if op == "==":
            return int(a == b)
        if op == "!=":
            return int(a != b)
        raise ArithmeticFault(f"unknown operator {op}", *pos)

    def _exec_block(self, stmts: tuple[Stmt, ...]) -> None:
        for stmt in stmts:
            self.exec_stmt(stmt)

    def exec_stmt(self, stmt: Stmt) -> None:
        if isinstance(stmt, Assign):
            value = self.eval(stmt.value)
            if isinstance(stmt.target, Index):
                idx = self._checked_index(stmt.target.name, stmt.target.index, stmt.pos)
            else:
                idx = 0
            self.ops += 1
            self.store(stmt.target.name, idx, value, stmt.pos)
        elif isinstance(stmt, For):
            self._exec_loop(stmt)
        elif isinstance(stmt, While):
            self._exec_loop(stmt)
        elif isinstance(stmt, If):
            if self.eval(stmt.cond) != 0:
                self._exec_block(stmt.then)
            else:
                self._exec_block(stmt.orelse)
        elif isinstance(stmt, Output):
            value = self.eval(stmt.value)
            self.ops += 1
            self.trace.append(value)
        elif isinstance(stmt, Call):
            self.exec_call(stmt)
        elif isinstance(stmt, AccelCall):
            self.exec_accel(stmt)
        else:
            raise TypeError(f"not a statement: {stmt!r}")

    def _tick(self, loop_id: int, steps: int) -> int:
        """Iterations of the current execution of one loop; raises past the budget"""
        steps += 1
        if steps > self.step_budget:
            raise DivergentLoop(loop_id, self.step_budget)
        return steps

    def _unbounded(self, loop: For) -> bool:
        """Whether the body can move the loop variable or the limit"""
        if id(loop) not in self._unbounded_cache:
            limit = {n.name for n in walk_expr(loop.limit) if isinstance(n, (Var, Index))}
            written = set()
            for stmt in walk(loop.body):
                if isinstance(stmt, Assign):
                    written.add(stmt.target.name)
                elif isinstance(stmt, For):
                    written.add(stmt.var)
                elif isinstance(stmt, Call):
                    written |= {a.name for a in stmt.args if isinstance(a, Var)}
                elif isinstance(stmt, AccelCall):
                    written |= set(stmt.outputs)
            self._unbounded_cache[id(loop)] = bool(written & (limit | {loop.var}))
        return self._unbounded_cache[id(loop)]

    def _exec_loop(self, loop: Loop) -> None:
        if self.block_depth:
            self._iterate(loop, record=False)
            return
        self.enter_loop(loop)
        self.iterations.setdefault(loop.loop_id, 0)
        before = self.ops
        self._iterate(loop, record=True)
        self.loop_ops[loop.loop_id] = self.loop_ops.get(loop.loop_id, 0) + self.ops - before
        self.exit_loop(loop)

    def _iterate(self, loop: Loop, record: bool) -> None:
        body = self.run_body if record else (lambda lp: self._exec_block(lp.body))
        steps = 0
        if isinstance(loop, While):
            while self._eval_free(loop.cond) != 0:
                steps = self._tick(loop.loop_id, steps)
                if record:
                    self.iterations[loop.loop_id] += 1
                body(loop)
            return
        start = self._eval_free(loop.start)
        if record and loop.loop_id in self.reversed_loops:
            limit = self._eval_free(loop.limit)
            values = list(range(int(start), int(limit), loop.step)) if limit > start else []
            for value in reversed(values):
                self.store(loop.var, 0, value)
                self.iterations[loop.loop_id] += 1
                body(loop)
            self.store(loop.var, 0, values[-1] + loop.step if values else start)
            return
        guarded = self._unbounded(loop)
        self.store(loop.var, 0, start)
        while self.load(loop.var, 0) < self._eval_free(loop.limit):
            if guarded:
                steps = self._tick(loop.loop_id, steps)
            if record:
                self.iterations[loop.loop_id] += 1
            body(loop)
            self.store(loop.var, 0, self.load(loop.var, 0) + loop.step)

    def _block(self, name: str) -> BlockImpl:
        impl = self.library.get(name)
        if impl is None:
            raise UnknownBlock(name)
        return impl

    @contextmanager
    def _enter_block(self, impl: BlockImpl, bindings: list[tuple[str, Expr]]) -> Iterator[None]:
        """
        Switch to a frame of the reference implementation with params bound

        Plain variable arguments are passed by reference, other expressions by value.
        """
        aliases: dict[str, tuple[list[Value], str]] = {}
        values: dict[str, object] = {}
        caller = self.frame
        block_arrays = {d.name for d in impl.ast.decls if d.is_array}
        for param, arg in bindings:
            if isinstance(arg, Var):
                if (arg.name in caller.arrays) != (param in block_arrays):
                    raise InputBindingError(param, f"shape of '{arg.name}' does not match block '{impl.name}'")
                aliases[param] = (caller.memory[arg.name], caller.kinds[arg.name])
            elif param in block_arrays:
                raise InputBindingError(param, f"block '{impl.name}' expects an array")
            else:
                values[param] = self.eval(arg)
        frame = self._allocate(impl.ast, values, strict=False, aliases=aliases)
        self.frame = frame
        self.block_depth += 1
        try:
            yield
        finally:
            self.block_depth -= 1
            self.frame = caller

    def exec_call(self, stmt: Call) -> None:
        impl = self._block(stmt.name)
        if len(stmt.args) != len(impl.params):
            raise UnknownBlock(f"{stmt.name}/{len(stmt.args)}")
        with self._enter_block(impl, list(zip(impl.params, stmt.args))):
            self._exec_block(impl.ast.body)

    def exec_accel(self, stmt: AccelCall) -> None:
        impl = self._block(stmt.block)
        with self._enter_block(impl, list(stmt.bindings)):
            self._exec_block(impl.ast.body)


def interpret(
    ast: Ast,
    binding: Optional[InputBinding] = None,
    library: Optional[Mapping[str, BlockImpl]] = None,
    step_budget: Optional[int] = None,
) -> tuple[OutputTrace, ProfileReport]:
    """Run a program; returns its output trace and exact per-loop profile"""
    result = Interpreter(ast, library, step_budget).run(binding)
    return result.output, result.profile


def format_trace(trace: OutputTrace) -> str:
    """One value per line; floats with 9 significant digits"""
    return "".join((f"{v:.9g}" if isinstance(v, float) else str(v)) + "\n" for v in trace)
