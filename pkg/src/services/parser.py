"""
ELC frontend: tokenizer and recursive-descent parser

Grammar: docs/elc-grammar.md. LoopIds are assigned in source preorder, so
re-parsing the same text always yields the same ids.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Union

from src.core.errors import ElcSyntaxError, UndeclaredVariable
from src.core.logging import get_plain_logger
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
    TransferDirective,
    Unary,
    Var,
    While,
)
from src.models.schemas import SourceProgram

logger = get_plain_logger(__name__)

KEYWORDS = {"int", "float", "for", "while", "if", "else", "call", "output", "accel"}
COMPARISONS = ("<=", ">=", "==", "!=", "<", ">")

_TOKEN_SPEC = [
    ("PRAGMA", r"\#pragma[ \t]+xfer[ \t]+(?P<pkind>copyin|copyout)[ \t]*\([ \t]*(?P<pvar>[A-Za-z_]\w*)[ \t]*\)"),
    ("COMMENT", r"//[^\n]*"),
    ("NUM", r"\d+\.\d*(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+|\d+"),
    ("ID", r"[A-Za-z_]\w*"),
    ("OP", r"<=|>=|==|!=|[-+*/<>=;,()\[\]{}]"),
    ("NEWLINE", r"\n"),
    ("SKIP", r"[ \t\r]+"),
    ("MISMATCH", r"."),
]
_TOKEN_RE = re.compile("|".join(f"(?P<{name}>{pattern})" for name, pattern in _TOKEN_SPEC))


@dataclass(frozen=True)
class Token:
    kind: str          # NUM, ID, KW, OP, PRAGMA, EOF
    text: str
    line: int
    column: int
    extra: tuple[str, ...] = ()


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    line, line_start = 1, 0
    for m in _TOKEN_RE.finditer(text):
        kind = m.lastgroup
        if kind in ("pkind", "pvar"):
            kind = "PRAGMA"
        value = m.group()
        column = m.start() - line_start + 1
        if kind == "NEWLINE":
            line += 1
            line_start = m.end()
            continue
        if kind in ("SKIP", "COMMENT"):
            continue
        if kind == "MISMATCH":
            raise ElcSyntaxError(line, column, "a token", value)
        if kind == "PRAGMA":
            tokens.append(Token("PRAGMA", value, line, column, (m.group("pkind"), m.group("pvar"))))
            continue
        if kind == "ID" and value in KEYWORDS:
            kind = "KW"
        tokens.append(Token(kind, value, line, column))
    tokens.append(Token("EOF", "", line, len(text) - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, text: str, name: str):
        self.tokens = tokenize(text)
        self.pos = 0
        self.name = name
        self.decls: list[Decl] = []
        self.scalars: dict[str, str] = {}
        self.arrays: dict[str, str] = {}
        self.loop_vars: list[str] = []
        self.next_loop_id = 0

    # --- token helpers ---------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.kind != "EOF":
            self.pos += 1
        return tok

    def at(self, text: str) -> bool:
        return self.tok.text == text and self.tok.kind in ("OP", "KW")

    def error(self, expected: str) -> ElcSyntaxError:
        tok = self.tok
        return ElcSyntaxError(tok.line, tok.column, expected, tok.text or "end of input")

    def expect(self, text: str) -> Token:
        if not self.at(text):
            raise self.error(f"'{text}'")
        return self.advance()

    def expect_id(self) -> Token:
        if self.tok.kind != "ID":
            raise self.error("identifier")
        return self.advance()

    def expect_word(self, word: str) -> Token:
        if self.tok.kind != "ID" or self.tok.text != word:
            raise self.error(f"'{word}'")
        return self.advance()

    # --- program -----------------------------------------------------------

    def parse_program(self) -> Ast:
        body: list[Stmt] = []
        while self.tok.kind != "EOF":
            if self.at("int") or self.at("float"):
                self.parse_decl()
            else:
                body.append(self.parse_stmt())
        return Ast(
            decls=tuple(self.decls),
            body=tuple(body),
            loop_vars=tuple(self.loop_vars),
            name=self.name,
        )

    def parse_decl(self) -> None:
        kind_tok = self.advance()
        name_tok = self.expect_id()
        name = name_tok.text
        if name in self.scalars or name in self.arrays:
            raise ElcSyntaxError(name_tok.line, name_tok.column, "a fresh name", name)
        length: Optional[Union[int, str]] = None
        init: Optional[Expr] = None
        if self.at("["):
            self.advance()
            if self.tok.kind == "NUM" and self.tok.text.isdigit():
                length = int(self.advance().text)
            elif self.tok.kind == "ID":
                len_tok = self.advance()
                if self.scalars.get(len_tok.text) != "int":
                    raise UndeclaredVariable(len_tok.text, len_tok.line, len_tok.column)
                length = len_tok.text
            else:
                raise self.error("array length")
            self.expect("]")
            self.arrays[name] = kind_tok.text
        else:
            self.scalars[name] = kind_tok.text
            if self.at("="):
                self.advance()
                init = self.parse_expr()
        self.expect(";")
        self.decls.append(Decl(name, kind_tok.text, length, init, (name_tok.line, name_tok.column)))

    # --- statements -----------------------------------------------------------

    def parse_block(self) -> tuple[Stmt, ...]:
        self.expect("{")
        stmts: list[Stmt] = []
        while not self.at("}"):
            if self.tok.kind == "EOF":
                raise self.error("'}'")
            if self.at("int") or self.at("float"):
                raise self.error("statement (declarations are top-level only)")
            stmts.append(self.parse_stmt())
        self.advance()
        return tuple(stmts)

    def parse_stmt(self) -> Stmt:
        pragmas: list[tuple[str, str]] = []
        while self.tok.kind == "PRAGMA":
            pragma = self.advance()
            pragmas.append(pragma.extra)
        if pragmas and not (self.at("for") or self.at("while")):
            raise self.error("loop after #pragma xfer")

        tok = self.tok
        if self.at("for"):
            return self.parse_for(pragmas)
        if self.at("while"):
            return self.parse_while(pragmas)
        if self.at("if"):
            return self.parse_if()
        if self.at("call"):
            return self.parse_call()
        if self.at("output"):
            self.advance()
            value = self.parse_expr()
            self.expect(";")
            return Output(value, (tok.line, tok.column))
        if self.at("accel"):
            return self.parse_accel()
        if tok.kind == "ID":
            return self.parse_assign()
        raise self.error("statement")

    def _take_loop_id(self) -> int:
        loop_id = self.next_loop_id
        self.next_loop_id += 1
        return loop_id

    def _directives(self, pragmas: list[tuple[str, str]], loop_id: int) -> tuple[TransferDirective, ...]:
        out = []
        for kind, var in pragmas:
            if var not in self.scalars and var not in self.arrays:
                raise UndeclaredVariable(var, self.tok.line, self.tok.column)
            out.append(TransferDirective(kind, var, loop_id))  # type: ignore[arg-type]
        return tuple(out)

    def parse_for(self, pragmas: list[tuple[str, str]]) -> For:
        start_tok = self.advance()
        loop_id = self._take_loop_id()
        self.expect("(")
        var_tok = self.expect_id()
        var = var_tok.text
        if var in self.arrays:
            raise ElcSyntaxError(var_tok.line, var_tok.column, "scalar loop variable", var)
        if var not in self.scalars:
            self.scalars[var] = "int"
            self.loop_vars.append(var)
        elif var not in self.loop_vars:
            self.loop_vars.append(var)
        self.expect("=")
        start = self.parse_expr()
        self.expect(";")
        self._expect_same_var(var)
        self.expect("<")
        limit = self.parse_expr()
        self.expect(";")
        self._expect_same_var(var)
        self.expect("=")
        self._expect_same_var(var)
        self.expect("+")
        if self.tok.kind != "NUM" or not self.tok.text.isdigit() or int(self.tok.text) < 1:
            raise self.error("positive integer step")
        step = int(self.advance().text)
        self.expect(")")
        body = self.parse_block()
        return For(
            loop_id, var, start, limit, step, body,
            self._directives(pragmas, loop_id), (start_tok.line, start_tok.column),
        )

    def _expect_same_var(self, var: str) -> None:
        if self.tok.kind != "ID" or self.tok.text != var:
            raise self.error(f"loop variable '{var}'")
        self.advance()

    def parse_while(self, pragmas: list[tuple[str, str]]) -> While:
        start_tok = self.advance()
        loop_id = self._take_loop_id()
        self.expect("(")
        cond = self.parse_expr()
        self.expect(")")
        body = self.parse_block()
        return While(loop_id, cond, body, self._directives(pragmas, loop_id), (start_tok.line, start_tok.column))

    def parse_if(self) -> If:
        start_tok = self.advance()
        self.expect("(")
        cond = self.parse_expr()
        self.expect(")")
        then = self.parse_block()
        orelse: tuple[Stmt, ...] = ()
        if self.at("else"):
            self.advance()
            orelse = (self.parse_if(),) if self.at("if") else self.parse_block()
        return If(cond, then, orelse, (start_tok.line, start_tok.column))

    def parse_call(self) -> Call:
        start_tok = self.advance()
        name = self.expect_id().text
        self.expect("(")
        args: list[Expr] = []
        if not self.at(")"):
            args.append(self.parse_expr(allow_array=True))
            while self.at(","):
                self.advance()
                args.append(self.parse_expr(allow_array=True))
        self.expect(")")
        self.expect(";")
        return Call(name, tuple(args), (start_tok.line, start_tok.column))

    def parse_accel(self) -> AccelCall:
        start_tok = self.advance()
        kernel_id = self.expect_id().text
        block = self.expect_id().text
        self.expect("(")
        bindings: list[tuple[str, Expr]] = []
        if not self.at(")"):
            while True:
                param = self.expect_id().text
                self.expect("=")
                bindings.append((param, self.parse_expr(allow_array=True)))
                if not self.at(","):
                    break
                self.advance()
        self.expect(")")
        self.expect_word("size")
        size = self.parse_expr()
        self.expect_word("in")
        inputs = self._name_list()
        self.expect_word("out")
        outputs = self._name_list()
        self.expect(";")
        return AccelCall(
            kernel_id, block, tuple(bindings), size, inputs, outputs,
            (start_tok.line, start_tok.column),
        )

    def _name_list(self) -> tuple[str, ...]:
        self.expect("(")
        names: list[str] = []
        if not self.at(")"):
            while True:
                tok = self.expect_id()
                self._check_declared(tok)
                names.append(tok.text)
                if not self.at(","):
                    break
                self.advance()
        self.expect(")")
        return tuple(names)

    def parse_assign(self) -> Assign:
        tok = self.advance()
        self._check_declared(tok)
        target: Union[Var, Index]
        if self.at("["):
            if tok.text not in self.arrays:
                raise ElcSyntaxError(tok.line, tok.column, "array name before '['", tok.text)
            self.advance()
            idx = self.parse_expr()
            self.expect("]")
            target = Index(tok.text, idx, (tok.line, tok.column))
        else:
            if tok.text in self.arrays:
                raise ElcSyntaxError(tok.line, tok.column, "'[' after array name", tok.text)
            target = Var(tok.text, (tok.line, tok.column))
        self.expect("=")
        value = self.parse_expr()
        self.expect(";")
        return Assign(target, value, (tok.line, tok.column))

    # --- expressions -------------------------------------------------------------

    def parse_expr(self, allow_array: bool = False) -> Expr:
        left = self.parse_sum(allow_array)
        if self.tok.kind == "OP" and self.tok.text in COMPARISONS:
            op_tok = self.advance()
            right = self.parse_sum(False)
            left = BinOp(op_tok.text, left, right, (op_tok.line, op_tok.column))
        return left

    def parse_sum(self, allow_array: bool) -> Expr:
        left = self.parse_term(allow_array)
        while self.at("+") or self.at("-"):
            op_tok = self.advance()
            right = self.parse_term(False)
            left = BinOp(op_tok.text, left, right, (op_tok.line, op_tok.column))
        return left

    def parse_term(self, allow_array: bool) -> Expr:
        left = self.parse_unary(allow_array)
        while self.at("*") or self.at("/"):
            op_tok = self.advance()
            right = self.parse_unary(False)
            left = BinOp(op_tok.text, left, right, (op_tok.line, op_tok.column))
        return left

    def parse_unary(self, allow_array: bool) -> Expr:
        if self.at("-"):
            op_tok = self.advance()
            return Unary("-", self.parse_unary(False), (op_tok.line, op_tok.column))
        return self.parse_primary(allow_array)

    def parse_primary(self, allow_array: bool) -> Expr:
        tok = self.tok
        if tok.kind == "NUM":
            self.advance()
            text = tok.text
            value: Union[int, float] = int(text) if text.isdigit() else float(text)
            return Num(value, (tok.line, tok.column))
        if tok.kind == "ID":
            self.advance()
            self._check_declared(tok)
            if self.at("["):
                if tok.text not in self.arrays:
                    raise ElcSyntaxError(tok.line, tok.column, "array name before '['", tok.text)
                self.advance()
                idx = self.parse_expr()
                self.expect("]")
                return Index(tok.text, idx, (tok.line, tok.column))
            if tok.text in self.arrays and not allow_array:
                raise ElcSyntaxError(tok.line, tok.column, "'[' after array name", tok.text)
            return Var(tok.text, (tok.line, tok.column))
        if self.at("("):
            self.advance()
            inner = self.parse_expr()
            self.expect(")")
            return inner
        raise self.error("expression")

    def _check_declared(self, tok: Token) -> None:
        if tok.text not in self.scalars and tok.text not in self.arrays:
            raise UndeclaredVariable(tok.text, tok.line, tok.column)


def parse(source: Union[SourceProgram, str], name: str = "program") -> Ast:
    """Parse ELC text into an Ast, or raise a position-bearing error"""
    if isinstance(source, SourceProgram):
        text, name = source.text, source.name
    else:
        text = source
    ast = _Parser(text, name).parse_program()
    logger.debug(f"Parsed '{name}': {len(ast.decls)} decls, {len(ast.body)} top-level statements")
    return ast
