"""
ELC syntax tree

Frozen dataclasses so trees can be shared between threads and compared
structurally. Source positions never take part in equality.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Literal, Optional, Union

Pos = tuple[int, int]
NO_POS: Pos = (0, 0)

ElemKind = Literal["int", "float"]


@dataclass(frozen=True)
class Num:
    value: Union[int, float]
    pos: Pos = field(default=NO_POS, compare=False)

    @property
    def is_float(self) -> bool:
        return isinstance(self.value, float)


@dataclass(frozen=True)
class Var:
    name: str
    pos: Pos = field(default=NO_POS, compare=False)


@dataclass(frozen=True)
class Index:
    name: str
    index: "Expr"
    pos: Pos = field(default=NO_POS, compare=False)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"
    pos: Pos = field(default=NO_POS, compare=False)


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Expr"
    pos: Pos = field(default=NO_POS, compare=False)


Expr = Union[Num, Var, Index, BinOp, Unary]


@dataclass(frozen=True, order=True)
class TransferDirective:
    """copyin runs at entry of the anchor loop statement, copyout at its exit"""

    kind: Literal["copyin", "copyout"]
    var: str
    anchor: int


@dataclass(frozen=True)
class Assign:
    target: Union[Var, Index]
    value: Expr
    pos: Pos = field(default=NO_POS, compare=False)


@dataclass(frozen=True)
class For:
    loop_id: int
    var: str
    start: Expr
    limit: Expr
    step: int
    body: tuple["Stmt", ...]
    pragmas: tuple[TransferDirective, ...] = ()
    pos: Pos = field(default=NO_POS, compare=False)


@dataclass(frozen=True)
class While:
    loop_id: int
    cond: Expr
    body: tuple["Stmt", ...]
    pragmas: tuple[TransferDirective, ...] = ()
    pos: Pos = field(default=NO_POS, compare=False)


@dataclass(frozen=True)
class If:
    cond: Expr
    then: tuple["Stmt", ...]
    orelse: tuple["Stmt", ...] = ()
    pos: Pos = field(default=NO_POS, compare=False)


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple[Expr, ...]
    pos: Pos = field(default=NO_POS, compare=False)


@dataclass(frozen=True)
class Output:
    value: Expr
    pos: Pos = field(default=NO_POS, compare=False)


@dataclass(frozen=True)
class AccelCall:
    """A functional block replaced by a registered accelerator kernel"""

    kernel_id: str
    block: str
    bindings: tuple[tuple[str, Expr], ...]
    size: Expr
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    pos: Pos = field(default=NO_POS, compare=False)


Stmt = Union[Assign, For, While, If, Call, Output, AccelCall]
Loop = Union[For, While]


@dataclass(frozen=True)
class Decl:
    name: str
    kind: ElemKind
    length: Optional[Union[int, str]] = None
    init: Optional[Expr] = None
    pos: Pos = field(default=NO_POS, compare=False)

    @property
    def is_array(self) -> bool:
        return self.length is not None


@dataclass(frozen=True)
class Ast:
    decls: tuple[Decl, ...]
    body: tuple[Stmt, ...]
    loop_vars: tuple[str, ...] = ()
    name: str = field(default="program", compare=False)

    def decl(self, name: str) -> Optional[Decl]:
        for d in self.decls:
            if d.name == name:
                return d
        return None


def child_blocks(stmt: Stmt) -> tuple[tuple[Stmt, ...], ...]:
    if isinstance(stmt, (For, While)):
        return (stmt.body,)
    if isinstance(stmt, If):
        return (stmt.then, stmt.orelse)
    return ()


def walk(stmts: tuple[Stmt, ...]) -> Iterator[Stmt]:
    """Preorder over statements, entering loop bodies and both if branches"""
    for stmt in stmts:
        yield stmt
        for block in child_blocks(stmt):
            yield from walk(block)


def iter_loops(stmts: tuple[Stmt, ...]) -> Iterator[Loop]:
    for stmt in walk(stmts):
        if isinstance(stmt, (For, While)):
            yield stmt


def walk_expr(expr: Expr) -> Iterator[Expr]:
    yield expr
    if isinstance(expr, Index):
        yield from walk_expr(expr.index)
    elif isinstance(expr, BinOp):
        yield from walk_expr(expr.left)
        yield from walk_expr(expr.right)
    elif isinstance(expr, Unary):
        yield from walk_expr(expr.operand)
