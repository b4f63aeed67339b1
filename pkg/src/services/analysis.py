"""
Code analysis: loop structure, def/use sets, parallelizability

Def/use sets are path-insensitive (both branches of an if contribute).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

from src.core.errors import UnknownLoopId
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
    child_blocks,
    iter_loops,
    walk,
    walk_expr,
)
from src.models.schemas import LoopInfo

logger = get_plain_logger(__name__)


@dataclass
class LoopTable:
    nodes: dict[int, Loop] = field(default_factory=dict)
    parent: dict[int, Optional[int]] = field(default_factory=dict)
    depth: dict[int, int] = field(default_factory=dict)

    def ancestors(self, loop_id: int) -> list[int]:
        """Enclosing loops, nearest first"""
        chain = []
        cur = self.parent[loop_id]
        while cur is not None:
            chain.append(cur)
            cur = self.parent[cur]
        return chain

    def is_nested_in(self, inner: int, outer: int) -> bool:
        return outer in self.ancestors(inner)

    def get(self, loop_id: int) -> Loop:
        if loop_id not in self.nodes:
            raise UnknownLoopId(loop_id)
        return self.nodes[loop_id]


def loop_table(ast: Ast) -> LoopTable:
    table = LoopTable()

    def visit(stmts: tuple[Stmt, ...], parent: Optional[int], depth: int) -> None:
        for stmt in stmts:
            if isinstance(stmt, (For, While)):
                table.nodes[stmt.loop_id] = stmt
                table.parent[stmt.loop_id] = parent
                table.depth[stmt.loop_id] = depth
                visit(stmt.body, stmt.loop_id, depth + 1)
            else:
                for block in child_blocks(stmt):
                    visit(block, parent, depth)

    visit(ast.body, None, 0)
    return table


def expr_reads(expr: Expr) -> set[str]:
    names: set[str] = set()
    for node in walk_expr(expr):
        if isinstance(node, (Var, Index)):
            names.add(node.name)
    return names


@dataclass
class Accesses:
    reads: set[str] = field(default_factory=set)
    writes: set[str] = field(default_factory=set)


def collect_accesses(
    stmts: Iterable[Stmt],
    skip_bodies: frozenset[int] = frozenset(),
    acc: Optional[Accesses] = None,
) -> Accesses:
    """
    Variables read/written by statements, recursing into nested blocks

    Bodies of loops listed in skip_bodies are not entered (their headers are).
    Plain-variable arguments of block calls are passed by reference and count
    as both read and written.
    """
    acc = acc if acc is not None else Accesses()
    for stmt in stmts:
        if isinstance(stmt, Assign):
            acc.writes.add(stmt.target.name)
            if isinstance(stmt.target, Index):
                acc.reads |= expr_reads(stmt.target.index)
            acc.reads |= expr_reads(stmt.value)
        elif isinstance(stmt, For):
            acc.writes.add(stmt.var)
            acc.reads |= expr_reads(stmt.start) | expr_reads(stmt.limit)
            if stmt.loop_id not in skip_bodies:
                collect_accesses(stmt.body, skip_bodies, acc)
        elif isinstance(stmt, While):
            acc.reads |= expr_reads(stmt.cond)
            if stmt.loop_id not in skip_bodies:
                collect_accesses(stmt.body, skip_bodies, acc)
        elif isinstance(stmt, If):
            acc.reads |= expr_reads(stmt.cond)
            collect_accesses(stmt.then, skip_bodies, acc)
            collect_accesses(stmt.orelse, skip_bodies, acc)
        elif isinstance(stmt, Call):
            for arg in stmt.args:
                acc.reads |= expr_reads(arg)
                if isinstance(arg, Var):
                    acc.writes.add(arg.name)
        elif isinstance(stmt, Output):
            acc.reads |= expr_reads(stmt.value)
        elif isinstance(stmt, AccelCall):
            acc.reads |= set(stmt.inputs)
            for _, arg in stmt.bindings:
                acc.reads |= expr_reads(arg)
            acc.reads |= expr_reads(stmt.size)
            acc.writes |= set(stmt.outputs)
    return acc


def loop_defs_uses(ast: Ast, loop: Loop) -> tuple[set[str], set[str]]:
    acc = collect_accesses(loop.body)
    defs = set(acc.writes)
    uses = set(acc.reads)
    if isinstance(loop, For):
        uses.add(loop.var)
        defs.discard(loop.var)
    return defs, uses


def affine(expr: Expr) -> Optional[tuple[dict[str, int], int]]:
    """Integer affine form (coefficients, constant), or None"""
    if isinstance(expr, Num):
        return ({}, expr.value) if isinstance(expr.value, int) else None
    if isinstance(expr, Var):
        return ({expr.name: 1}, 0)
    if isinstance(expr, Unary):
        inner = affine(expr.operand)
        if inner is None:
            return None
        return ({k: -v for k, v in inner[0].items()}, -inner[1])
    if isinstance(expr, BinOp) and expr.op in ("+", "-", "*"):
        left, right = affine(expr.left), affine(expr.right)
        if left is None or right is None:
            return None
        if expr.op == "*":
            if left[0] and right[0]:
                return None
            const_side, other = (left, right) if not left[0] else (right, left)
            k = const_side[1]
            return ({v: c * k for v, c in other[0].items() if c * k}, other[1] * k)
        sign = 1 if expr.op == "+" else -1
        coeffs = dict(left[0])
        for v, c in right[0].items():
            coeffs[v] = coeffs.get(v, 0) + sign * c
        return ({v: c for v, c in coeffs.items() if c}, left[1] + sign * right[1])
    return None


def _unit_offset(expr: Expr, var: str) -> Optional[int]:
    form = affine(expr)
    if form is None or form[0] != {var: 1}:
        return None
    return form[1]


def _stmt_exprs(stmt: Stmt) -> list[Expr]:
    """Expressions a statement evaluates itself, not those of nested blocks"""
    if isinstance(stmt, Assign):
        out = [stmt.value]
        if isinstance(stmt.target, Index):
            out.append(stmt.target.index)
        return out
    if isinstance(stmt, For):
        return [stmt.start, stmt.limit]
    if isinstance(stmt, (While, If)):
        return [stmt.cond]
    if isinstance(stmt, Output):
        return [stmt.value]
    if isinstance(stmt, Call):
        return list(stmt.args)
    return []


def _array_accesses(stmts: tuple[Stmt, ...]) -> tuple[list[Index], list[Index]]:
    """(writes, reads) of array elements, including nested headers and conditions"""
    writes: list[Index] = []
    reads: list[Index] = []
    for stmt in walk(stmts):
        if isinstance(stmt, Assign) and isinstance(stmt.target, Index):
            writes.append(stmt.target)
        for expr in _stmt_exprs(stmt):
            reads += [n for n in walk_expr(expr) if isinstance(n, Index)]
    return writes, reads


def _uncovered_reads(stmts: tuple[Stmt, ...], covered: frozenset[str] = frozenset()) -> set[str]:
    """
    Names read where no enclosing nested loop has assigned them yet

    A nested for covers its variable in its limit and body, not in its start
    expression, and not after it ends (the loop may sit in an untaken branch).
    """
    names: set[str] = set()
    for stmt in stmts:
        if isinstance(stmt, For):
            inner = covered | {stmt.var}
            names |= expr_reads(stmt.start) - covered
            names |= expr_reads(stmt.limit) - inner
            names |= _uncovered_reads(stmt.body, inner)
            continue
        for expr in _stmt_exprs(stmt):
            names |= expr_reads(expr) - covered
        for block in child_blocks(stmt):
            names |= _uncovered_reads(block, covered)
    return names


def parallelizable(loop: Loop) -> tuple[bool, str]:
    if isinstance(loop, While):
        return False, "while loop"
    body = loop.body
    for stmt in walk(body):
        if isinstance(stmt, While):
            return False, "nested while loop"
        if isinstance(stmt, Output):
            return False, "output statement in body"
        if isinstance(stmt, (Call, AccelCall)):
            return False, "block call in body"

    reads = collect_accesses(body).reads
    for stmt in walk(body):
        if isinstance(stmt, Assign) and isinstance(stmt.target, Var):
            name = stmt.target.name
            if name == loop.var:
                return False, f"loop variable {name} modified in body"
            if name in reads:
                return False, f"scalar recurrence on {name}"
            return False, f"scalar write to {name} (last-value dependence)"
        if isinstance(stmt, For) and stmt.var == loop.var:
            return False, f"loop variable {loop.var} reused by nested loop"

    nested = {inner.var for inner in iter_loops(body) if isinstance(inner, For)}
    stale = sorted(_uncovered_reads(body) & nested)
    if stale:
        return False, f"nested loop variable {stale[0]} read outside its loop"

    writes, array_reads = _array_accesses(body)
    written = sorted({w.name for w in writes})
    for name in written:
        offsets = set()
        for w in writes:
            if w.name != name:
                continue
            off = _unit_offset(w.index, loop.var)
            if off is None:
                return False, f"non-unit index form on {name}"
            offsets.add(off)
        for r in array_reads:
            if r.name == name:
                offsets.add(_unit_offset(r.index, loop.var))
        if len(offsets) != 1 or None in offsets:
            return False, f"loop-carried dependence on {name}"
    return True, ""


def check_parallelizable(ast: Ast, loop_id: int) -> tuple[bool, str]:
    table = loop_table(ast)
    return parallelizable(table.get(loop_id))


def _static_trip(loop: Loop) -> Optional[int]:
    if not isinstance(loop, For):
        return None
    if isinstance(loop.start, Num) and isinstance(loop.limit, Num):
        span = loop.limit.value - loop.start.value
        if isinstance(span, int):
            return max(0, -(-span // loop.step))
    return None


def analyze(ast: Ast) -> list[LoopInfo]:
    """One LoopInfo per loop, preorder"""
    table = loop_table(ast)
    infos: list[LoopInfo] = []
    for loop_id in sorted(table.nodes):
        loop = table.nodes[loop_id]
        defs, uses = loop_defs_uses(ast, loop)
        ok, reason = parallelizable(loop)
        infos.append(LoopInfo(
            id=loop_id,
            kind="for" if isinstance(loop, For) else "while",
            depth=table.depth[loop_id],
            parent=table.parent[loop_id],
            var=loop.var if isinstance(loop, For) else None,
            defs=sorted(defs),
            uses=sorted(uses),
            parallelizable=ok,
            reason=reason,
            static_trip=_static_trip(loop),
        ))
    n_par = sum(1 for i in infos if i.parallelizable)
    logger.info(f"Analyzed '{ast.name}': {len(infos)} loops, {n_par} parallelizable")
    return infos
