"""
Explicit CPU<->device transfer directives for an offload pattern

A copy-in of v is hoisted up the offloaded loop's ancestor chain until an
ancestor whose subtree sets v on the CPU side. A copy-out is hoisted until an
ancestor whose subtree reads or sets v on the CPU side, or that contains a
copy-in of v anchored strictly inside it. CPU side means everything except
bodies of offloaded loops; loop headers are CPU side.

ShadowInterpreter applies directives literally to separate host/device
memories and faults on any stale access, which is how directive sets are
validated.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Mapping, Optional, Sequence

from src.core.errors import PatternShapeMismatch, ShadowFault, UnknownAnchor, UnknownLoopId
from src.core.logging import get_plain_logger
from src.models.ast import AccelCall, Ast, Call, For, If, Loop, Stmt, TransferDirective, Var, While, iter_loops
from src.models.schemas import InputBinding, OffloadPattern, OutputTrace
from src.services.analysis import LoopTable, collect_accesses, loop_defs_uses, loop_table, parallelizable
from src.services.interpreter import BlockImpl, Interpreter, Value, coerce

logger = get_plain_logger(__name__)


def check_pattern(ast: Ast, pattern: OffloadPattern, table: Optional[LoopTable] = None) -> frozenset[int]:
    """Offloaded loop ids, after checking they are parallelizable and not nested"""
    table = table or loop_table(ast)
    offloaded = pattern.offloaded()
    for loop_id in pattern.loop_map:
        try:
            loop = table.get(loop_id)
        except UnknownLoopId as e:
            raise PatternShapeMismatch(f"loop {loop_id} does not exist") from e
        if loop_id in offloaded:
            ok, reason = parallelizable(loop)
            if not ok:
                raise PatternShapeMismatch(f"loop {loop_id} is not parallelizable ({reason})")
    for loop_id in offloaded:
        for outer in table.ancestors(loop_id):
            if outer in offloaded:
                raise PatternShapeMismatch(f"loop {loop_id} is nested in offloaded loop {outer}")
    return offloaded


def _nested_vars(loop: Loop) -> set[str]:
    return {inner.var for inner in iter_loops(loop.body) if isinstance(inner, For)}


def device_sets(ast: Ast, loop: Loop) -> tuple[set[str], set[str]]:
    """(variables to copy in, variables to copy out) for one offloaded loop"""
    defs, uses = loop_defs_uses(ast, loop)
    private = _nested_vars(loop)
    own = {loop.var} if isinstance(loop, For) else set()
    return uses - own - private, defs


def naive_directives(ast: Ast, pattern: OffloadPattern) -> list[TransferDirective]:
    """Every transfer at the offloaded loop itself, once per loop execution"""
    table = loop_table(ast)
    offloaded = check_pattern(ast, pattern, table)
    out: set[TransferDirective] = set()
    for loop_id in offloaded:
        copyin, copyout = device_sets(ast, table.get(loop_id))
        out |= {TransferDirective("copyin", v, loop_id) for v in copyin}
        out |= {TransferDirective("copyout", v, loop_id) for v in copyout}
    return sorted(out, key=lambda d: (d.anchor, d.kind, d.var))


def compute_directives(ast: Ast, pattern: OffloadPattern) -> list[TransferDirective]:
    table = loop_table(ast)
    offloaded = check_pattern(ast, pattern, table)
    cpu_side: dict[int, tuple[set[str], set[str]]] = {}

    def cpu_accesses(loop_id: int) -> tuple[set[str], set[str]]:
        if loop_id not in cpu_side:
            acc = collect_accesses((table.get(loop_id),), skip_bodies=offloaded)
            cpu_side[loop_id] = (acc.reads, acc.writes)
        return cpu_side[loop_id]

    copyins: set[TransferDirective] = set()
    copyout_vars: list[tuple[int, str]] = []
    for loop_id in sorted(offloaded):
        ins, outs = device_sets(ast, table.get(loop_id))
        for var in ins:
            anchor = loop_id
            for outer in table.ancestors(loop_id):
                if var in cpu_accesses(outer)[1]:
                    break
                anchor = outer
            copyins.add(TransferDirective("copyin", var, anchor))
        copyout_vars += [(loop_id, var) for var in outs]

    copyouts: set[TransferDirective] = set()
    for loop_id, var in copyout_vars:
        anchor = loop_id
        for outer in table.ancestors(loop_id):
            reads, writes = cpu_accesses(outer)
            inner_copyin = any(
                d.var == var and d.anchor != outer and table.is_nested_in(d.anchor, outer)
                for d in copyins
            )
            if var in reads or var in writes or inner_copyin:
                break
            anchor = outer
        copyouts.add(TransferDirective("copyout", var, anchor))

    directives = sorted(copyins | copyouts, key=lambda d: (d.anchor, d.kind, d.var))
    logger.debug(f"Directives for {pattern.label()}: {len(directives)}")
    return directives


def insert_directives(ast: Ast, directives: Sequence[TransferDirective]) -> Ast:
    """Attach directives to their anchor loops; existing pragmas are replaced"""
    table = loop_table(ast)
    by_anchor: dict[int, set[TransferDirective]] = {}
    for d in directives:
        if d.anchor not in table.nodes:
            raise UnknownAnchor(d.anchor)
        by_anchor.setdefault(d.anchor, set()).add(d)

    def rebuild(stmts: tuple[Stmt, ...]) -> tuple[Stmt, ...]:
        out = []
        for stmt in stmts:
            if isinstance(stmt, (For, While)):
                pragmas = tuple(sorted(by_anchor.get(stmt.loop_id, ()), key=lambda d: (d.kind, d.var)))
                stmt = replace(stmt, body=rebuild(stmt.body), pragmas=pragmas)
            elif isinstance(stmt, If):
                stmt = replace(stmt, then=rebuild(stmt.then), orelse=rebuild(stmt.orelse))
            out.append(stmt)
        return tuple(out)

    return replace(ast, body=rebuild(ast.body))


def strip_directives(ast: Ast) -> Ast:
    return insert_directives(ast, [])


class ShadowInterpreter(Interpreter):
    """
    Separate host and device memories with per-element validity

    Device code runs only in bodies of offloaded loops. Block calls and
    accelerator calls are host-side accesses.
    """

    def __init__(
        self,
        ast: Ast,
        offloaded: frozenset[int],
        library: Optional[Mapping[str, BlockImpl]] = None,
        step_budget: Optional[int] = None,
    ):
        super().__init__(ast, library, step_budget)
        self.offloaded = offloaded
        self.on_device = False
        self.device: dict[str, list[Value]] = {}
        self.host_valid: dict[str, list[bool]] = {}
        self.device_valid: dict[str, list[bool]] = {}

    def _track(self, name: str) -> None:
        if name not in self.host_valid:
            n = len(self.frame.memory[name])
            self.host_valid[name] = [True] * n
            self.device_valid[name] = [False] * n
            self.device[name] = [0] * n

    def load(self, name: str, index: int) -> Value:
        if self.block_depth:
            return super().load(name, index)
        self._track(name)
        if self.on_device:
            if not self.device_valid[name][index]:
                raise ShadowFault("device", name, index)
            return self.device[name][index]
        if not self.host_valid[name][index]:
            raise ShadowFault("host", name, index)
        return self.frame.memory[name][index]

    def store(self, name: str, index: int, value: Value, pos: tuple[int, int] = (0, 0)) -> None:
        if self.block_depth:
            super().store(name, index, value, pos)
            return
        self._track(name)
        if self.on_device:
            self.device[name][index] = coerce(self.frame.kinds[name], value, pos)
            self.device_valid[name][index] = True
            self.host_valid[name][index] = False
        else:
            super().store(name, index, value, pos)
            self.host_valid[name][index] = True
            self.device_valid[name][index] = False

    def enter_loop(self, loop: Loop) -> None:
        for d in loop.pragmas:
            if d.kind != "copyin":
                continue
            self._track(d.var)
            host = self.frame.memory[d.var]
            for i, ok in enumerate(self.host_valid[d.var]):
                if not ok:
                    raise ShadowFault("host", d.var, i, "copy-in")
                self.device[d.var][i] = host[i]
                self.device_valid[d.var][i] = True

    def exit_loop(self, loop: Loop) -> None:
        for d in loop.pragmas:
            if d.kind != "copyout":
                continue
            self._track(d.var)
            host = self.frame.memory[d.var]
            for i, ok in enumerate(self.device_valid[d.var]):
                if ok:
                    host[i] = self.device[d.var][i]
                    self.host_valid[d.var][i] = True

    def run_body(self, loop: Loop) -> None:
        if loop.loop_id not in self.offloaded or self.on_device:
            super().run_body(loop)
            return
        if isinstance(loop, For):
            # each device thread sees its own iteration index
            self._track(loop.var)
            self.device[loop.var][0] = self.frame.memory[loop.var][0]
            self.device_valid[loop.var][0] = True
        self.on_device = True
        try:
            super().run_body(loop)
        finally:
            self.on_device = False

    def _host_reads(self, reads: set[str]) -> None:
        for name in sorted(reads):
            self._track(name)
            for i, ok in enumerate(self.host_valid[name]):
                if not ok:
                    raise ShadowFault("host", name, i)

    def _host_written(self, names: set[str]) -> None:
        for name in names:
            self._track(name)
            n = len(self.host_valid[name])
            self.host_valid[name] = [True] * n
            self.device_valid[name] = [False] * n

    def exec_call(self, stmt: Call) -> None:
        if self.block_depth:
            super().exec_call(stmt)
            return
        names = {a.name for a in stmt.args if isinstance(a, Var)}
        self._host_reads(names)
        super().exec_call(stmt)
        self._host_written(names)

    def exec_accel(self, stmt: AccelCall) -> None:
        if self.block_depth:
            super().exec_accel(stmt)
            return
        bound = {a.name for _, a in stmt.bindings if isinstance(a, Var)}
        self._host_reads(bound | set(stmt.inputs))
        super().exec_accel(stmt)
        self._host_written(set(stmt.outputs))


def shadow_run(
    annotated: Ast,
    pattern: OffloadPattern,
    binding: Optional[InputBinding] = None,
    library: Optional[Mapping[str, BlockImpl]] = None,
) -> OutputTrace:
    """Output trace under literal directive semantics; raises ShadowFault on stale data"""
    offloaded = check_pattern(annotated, pattern)
    result = ShadowInterpreter(annotated, offloaded, library).run(binding)
    return result.output
