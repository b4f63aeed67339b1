"""
ELC pretty printer and token stream

to_source() output re-parses to a structurally equal Ast, pragmas included.
stmt_tokens() is the raw token stream the clone matcher normalizes.
"""

from __future__ import annotations

from typing import Iterator

from src.models.ast import (
    AccelCall,
    Assign,
    Ast,
    BinOp,
    Call,
    Decl,
    Expr,
    For,
    If,
    Index,
    Num,
    Output,
    Stmt,
    Unary,
    Var,
    While,
)

_PREC = {"<": 1, "<=": 1, ">": 1, ">=": 1, "==": 1, "!=": 1, "+": 2, "-": 2, "*": 3, "/": 3}
_UNARY_PREC = 4
_ATOM_PREC = 5


def _prec(expr: Expr) -> int:
    if isinstance(expr, BinOp):
        return _PREC[expr.op]
    if isinstance(expr, Unary):
        return _UNARY_PREC
    return _ATOM_PREC


def format_number(value: int | float) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def expr_tokens(expr: Expr) -> Iterator[tuple[str, str]]:
    """Yields (kind, text) with kind in ID, NUM, OP"""
    if isinstance(expr, Num):
        yield ("NUM", format_number(expr.value))
    elif isinstance(expr, Var):
        yield ("ID", expr.name)
    elif isinstance(expr, Index):
        yield ("ID", expr.name)
        yield ("OP", "[")
        yield from expr_tokens(expr.index)
        yield ("OP", "]")
    elif isinstance(expr, Unary):
        yield ("OP", expr.op)
        yield from _wrapped(expr.operand, _prec(expr.operand) < _ATOM_PREC and not isinstance(expr.operand, Unary))
    elif isinstance(expr, BinOp):
        prec = _PREC[expr.op]
        left_parens = _prec(expr.left) < prec or (prec == 1 and _prec(expr.left) == 1)
        right_parens = _prec(expr.right) <= prec
        yield from _wrapped(expr.left, left_parens)
        yield ("OP", expr.op)
        yield from _wrapped(expr.right, right_parens)


def _wrapped(expr: Expr, parens: bool) -> Iterator[tuple[str, str]]:
    if parens:
        yield ("OP", "(")
    yield from expr_tokens(expr)
    if parens:
        yield ("OP", ")")


def stmt_tokens(stmts: tuple[Stmt, ...]) -> Iterator[tuple[str, str]]:
    """Token stream of statements; ';' terminators are omitted"""
    for stmt in stmts:
        if isinstance(stmt, Assign):
            yield from expr_tokens(stmt.target)
            yield ("OP", "=")
            yield from expr_tokens(stmt.value)
        elif isinstance(stmt, For):
            yield ("KW", "for")
            yield ("OP", "(")
            yield ("ID", stmt.var)
            yield ("OP", "=")
            yield from expr_tokens(stmt.start)
            yield ("ID", stmt.var)
            yield ("OP", "<")
            yield from expr_tokens(stmt.limit)
            yield ("ID", stmt.var)
            yield ("OP", "=")
            yield ("ID", stmt.var)
            yield ("OP", "+")
            yield ("NUM", str(stmt.step))
            yield ("OP", ")")
            yield from _block_tokens(stmt.body)
        elif isinstance(stmt, While):
            yield ("KW", "while")
            yield ("OP", "(")
            yield from expr_tokens(stmt.cond)
            yield ("OP", ")")
            yield from _block_tokens(stmt.body)
        elif isinstance(stmt, If):
            yield ("KW", "if")
            yield ("OP", "(")
            yield from expr_tokens(stmt.cond)
            yield ("OP", ")")
            yield from _block_tokens(stmt.then)
            if stmt.orelse:
                yield ("KW", "else")
                yield from _block_tokens(stmt.orelse)
        elif isinstance(stmt, Call):
            yield ("KW", "call")
            yield ("ID", stmt.name)
            yield ("OP", "(")
            for i, arg in enumerate(stmt.args):
                if i:
                    yield ("OP", ",")
                yield from expr_tokens(arg)
            yield ("OP", ")")
        elif isinstance(stmt, Output):
            yield ("KW", "output")
            yield from expr_tokens(stmt.value)
        elif isinstance(stmt, AccelCall):
            yield ("KW", "accel")
            yield ("ID", stmt.kernel_id)
            yield ("ID", stmt.block)
            yield ("OP", "(")
            for i, (param, arg) in enumerate(stmt.bindings):
                if i:
                    yield ("OP", ",")
                yield ("ID", param)
                yield ("OP", "=")
                yield from expr_tokens(arg)
            yield ("OP", ")")


def _block_tokens(stmts: tuple[Stmt, ...]) -> Iterator[tuple[str, str]]:
    yield ("OP", "{")
    yield from stmt_tokens(stmts)
    yield ("OP", "}")


def render_expr(expr: Expr) -> str:
    if isinstance(expr, Num):
        return format_number(expr.value)
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, Index):
        return f"{expr.name}[{render_expr(expr.index)}]"
    if isinstance(expr, Unary):
        inner = render_expr(expr.operand)
        return f"-({inner})" if isinstance(expr.operand, BinOp) else f"-{inner}"
    prec = _PREC[expr.op]
    left = render_expr(expr.left)
    right = render_expr(expr.right)
    if _prec(expr.left) < prec or (prec == 1 and _prec(expr.left) == 1):
        left = f"({left})"
    if _prec(expr.right) <= prec:
        right = f"({right})"
    return f"{left} {expr.op} {right}"


def _render_decl(decl: Decl) -> str:
    text = f"{decl.kind} {decl.name}"
    if decl.length is not None:
        text += f"[{decl.length}]"
    if decl.init is not None:
        text += f" = {render_expr(decl.init)}"
    return text + ";"


def _render_block(stmts: tuple[Stmt, ...], depth: int) -> list[str]:
    lines: list[str] = []
    pad = "    " * depth
    for stmt in stmts:
        if isinstance(stmt, (For, While)):
            for d in stmt.pragmas:
                lines.append(f"{pad}#pragma xfer {d.kind}({d.var})")
        if isinstance(stmt, Assign):
            lines.append(f"{pad}{render_expr(stmt.target)} = {render_expr(stmt.value)};")
        elif isinstance(stmt, For):
            v = stmt.var
            lines.append(
                f"{pad}for ({v} = {render_expr(stmt.start)}; {v} < {render_expr(stmt.limit)}; "
                f"{v} = {v} + {stmt.step}) {{"
            )
            lines += _render_block(stmt.body, depth + 1)
            lines.append(f"{pad}}}")
        elif isinstance(stmt, While):
            lines.append(f"{pad}while ({render_expr(stmt.cond)}) {{")
            lines += _render_block(stmt.body, depth + 1)
            lines.append(f"{pad}}}")
        elif isinstance(stmt, If):
            lines.append(f"{pad}if ({render_expr(stmt.cond)}) {{")
            lines += _render_block(stmt.then, depth + 1)
            if stmt.orelse:
                lines.append(f"{pad}}} else {{")
                lines += _render_block(stmt.orelse, depth + 1)
            lines.append(f"{pad}}}")
        elif isinstance(stmt, Call):
            args = ", ".join(render_expr(a) for a in stmt.args)
            lines.append(f"{pad}call {stmt.name}({args});")
        elif isinstance(stmt, Output):
            lines.append(f"{pad}output {render_expr(stmt.value)};")
        elif isinstance(stmt, AccelCall):
            binds = ", ".join(f"{p} = {render_expr(e)}" for p, e in stmt.bindings)
            lines.append(
                f"{pad}accel {stmt.kernel_id} {stmt.block}({binds}) size {render_expr(stmt.size)} "
                f"in({', '.join(stmt.inputs)}) out({', '.join(stmt.outputs)});"
            )
    return lines


def to_source(ast: Ast) -> str:
    lines = [_render_decl(d) for d in ast.decls]
    lines += _render_block(ast.body, 0)
    return "\n".join(lines) + ("\n" if lines else "")
