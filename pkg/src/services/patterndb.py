"""
Code pattern DB: token clone matching and accelerator substitution

Regions are compared to each registered reference implementation by the
longest-common-subsequence ratio of their normalized token streams
(identifiers -> ID, literals -> NUM, keywords and operators verbatim).
A matched region is replaced by one AccelCall whose semantics are those of the
reference implementation with the region's variables bound by reference.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence, Union

from pydantic import TypeAdapter, ValidationError

from src.core.dependencies import read_json, schema_error
from src.core.errors import BindingMismatch, DuplicateKernel, ElcSyntaxError, RegionStale, SchemaError
from src.core.logging import get_plain_logger
from src.models.ast import AccelCall, Ast, Call, Decl, Expr, For, If, Num, Stmt, Var, While, child_blocks
from src.models.schemas import AccelFormula, BlockMatch, CostModel, PatternRecordSpec
from src.services.analysis import collect_accesses, expr_reads
from src.services.interpreter import BlockImpl
from src.services.parser import parse
from src.services.printer import render_expr, stmt_tokens, to_source

logger = get_plain_logger(__name__)

Signature = tuple[str, ...]
BlockPath = tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class PatternRecord:
    name: str
    kernel_id: str
    reference: Ast
    signature: Signature
    fixed_cost: float
    per_element_cost: float
    min_similarity: float
    params: tuple[str, ...]
    description: str = ""

    @property
    def region_length(self) -> int:
        return len(self.reference.body)


class PatternDb:
    """Immutable registry of functional blocks and their accelerator kernels"""

    def __init__(self, records: Iterable[PatternRecord] = ()):
        self.records: tuple[PatternRecord, ...] = tuple(records)
        seen: set[str] = set()
        for record in self.records:
            if record.kernel_id in seen:
                raise DuplicateKernel(record.kernel_id)
            seen.add(record.kernel_id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[PatternRecord]:
        return iter(self.records)

    def by_name(self, name: str) -> Optional[PatternRecord]:
        return next((r for r in self.records if r.name == name), None)

    def by_kernel(self, kernel_id: str) -> Optional[PatternRecord]:
        return next((r for r in self.records if r.kernel_id == kernel_id), None)

    def library(self) -> dict[str, BlockImpl]:
        """Reference implementations keyed by block name, for the interpreter"""
        return {r.name: BlockImpl(r.name, r.reference, r.params) for r in self.records}

    def formulas(self) -> dict[str, AccelFormula]:
        return {r.kernel_id: AccelFormula(fixed=r.fixed_cost, per_element=r.per_element_cost) for r in self.records}

    def house(self, model: CostModel) -> CostModel:
        """Cost model with DB kernel formulas added; formulas already in the model win"""
        merged = {**self.formulas(), **model.accel_formulas}
        return model.model_copy(update={"accel_formulas": merged})

    @classmethod
    def from_specs(cls, specs: Sequence[PatternRecordSpec]) -> "PatternDb":
        records = []
        for i, spec in enumerate(specs):
            try:
                reference = parse(spec.reference_source, name=spec.name)
            except ElcSyntaxError as e:
                raise SchemaError(f"{i}.reference_source", str(e)) from e
            params = tuple(spec.params) or tuple(d.name for d in reference.decls)
            declared = {d.name for d in reference.decls} | set(reference.loop_vars)
            for p in params:
                if p not in declared:
                    raise SchemaError(f"{i}.params", f"'{p}' is not declared in the reference")
            records.append(PatternRecord(
                name=spec.name,
                kernel_id=spec.kernel_id,
                reference=reference,
                signature=token_signature(reference),
                fixed_cost=spec.fixed_cost,
                per_element_cost=spec.per_element_cost,
                min_similarity=spec.min_similarity,
                params=params,
                description=spec.description,
            ))
        return cls(records)


_SPECS = TypeAdapter(list[PatternRecordSpec])


def load_db(path: Union[str, Path]) -> PatternDb:
    """Load patterns.json (a list of records, or {"patterns": [...]})"""
    data = read_json(path)
    if isinstance(data, dict) and "patterns" in data:
        data = data["patterns"]
    try:
        specs = _SPECS.validate_python(data)
    except ValidationError as e:
        raise schema_error(e) from e
    db = PatternDb.from_specs(specs)
    logger.info(f"Loaded pattern DB {path}: {len(db)} records")
    return db


def _normalize(tokens: Iterable[tuple[str, str]]) -> Signature:
    return tuple(kind if kind in ("ID", "NUM") else text for kind, text in tokens)


def token_signature(region: Union[Ast, Sequence[Stmt]]) -> Signature:
    stmts = region.body if isinstance(region, Ast) else tuple(region)
    return _normalize(stmt_tokens(stmts))


def _lcs_table(a: Sequence[str], b: Sequence[str]) -> list[list[int]]:
    """Suffix LCS table: table[i][j] = LCS(a[i:], b[j:])"""
    n, m = len(a), len(b)
    table = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        row, below = table[i], table[i + 1]
        ai = a[i]
        for j in range(m - 1, -1, -1):
            row[j] = below[j + 1] + 1 if ai == b[j] else max(below[j], row[j + 1])
    return table


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(b) > len(a):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for ai in a:
        cur = [0]
        for j, bj in enumerate(b):
            cur.append(prev[j] + 1 if ai == bj else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def similarity(a: Sequence[str], b: Sequence[str]) -> float:
    if not a and not b:
        return 1.0
    return lcs_length(a, b) / max(len(a), len(b))


def lcs_alignment(a: Sequence[str], b: Sequence[str]) -> list[tuple[int, int]]:
    """Index pairs of one longest common subsequence, leftmost-first"""
    table = _lcs_table(a, b)
    pairs: list[tuple[int, int]] = []
    i = j = 0
    while i < len(a) and j < len(b):
        if a[i] == b[j] and table[i][j] == table[i + 1][j + 1] + 1:
            pairs.append((i, j))
            i += 1
            j += 1
        elif table[i + 1][j] >= table[i][j + 1]:
            i += 1
        else:
            j += 1
    return pairs


def ast_digest(ast: Ast) -> str:
    return hashlib.sha256(to_source(ast).encode("utf-8")).hexdigest()


def _block_at(body: tuple[Stmt, ...], path: BlockPath) -> tuple[Stmt, ...]:
    for idx, branch in path:
        if idx >= len(body):
            raise RegionStale()
        blocks = child_blocks(body[idx])
        if branch >= len(blocks):
            raise RegionStale()
        body = blocks[branch]
    return body


def region_stmts(ast: Ast, match: BlockMatch) -> tuple[Stmt, ...]:
    block = _block_at(ast.body, match.path)
    if match.end > len(block) or match.start >= match.end:
        raise RegionStale()
    return block[match.start:match.end]


def _replace_region(body: tuple[Stmt, ...], path: BlockPath, start: int, end: int, new: Stmt) -> tuple[Stmt, ...]:
    if not path:
        return body[:start] + (new,) + body[end:]
    (idx, branch), rest = path[0], path[1:]
    stmt = body[idx]
    inner = _replace_region(child_blocks(stmt)[branch], rest, start, end, new)
    if isinstance(stmt, (For, While)):
        stmt = replace(stmt, body=inner)
    elif isinstance(stmt, If):
        stmt = replace(stmt, then=inner) if branch == 0 else replace(stmt, orelse=inner)
    return body[:idx] + (stmt,) + body[idx + 1:]


def _blocks(body: tuple[Stmt, ...], path: BlockPath = ()) -> Iterator[tuple[BlockPath, tuple[Stmt, ...]]]:
    yield path, body
    for idx, stmt in enumerate(body):
        for branch, block in enumerate(child_blocks(stmt)):
            yield from _blocks(block, path + ((idx, branch),))


def _covers(a: BlockMatch, b: BlockMatch) -> bool:
    if a.path == b.path:
        return a.start < b.end and b.start < a.end
    n = len(a.path)
    return len(b.path) > n and b.path[:n] == a.path and a.start <= b.path[n][0] < a.end


def overlaps(a: BlockMatch, b: BlockMatch) -> bool:
    return _covers(a, b) or _covers(b, a)


def _dominant_size(ast: Ast, arrays: Iterable[str]) -> Expr:
    """
    Element count of the region's dominant array: a runtime-sized array if any
    (first by name), else the largest literal length
    """
    decls = [d for d in (ast.decl(name) for name in sorted(set(arrays))) if d is not None and d.is_array]
    symbolic = [d for d in decls if isinstance(d.length, str)]
    if symbolic:
        return Var(symbolic[0].length)  # type: ignore[arg-type]
    if decls:
        return Num(max(d.length for d in decls))  # type: ignore[type-var]
    return Num(1)


def _region_arrays(ast: Ast, stmts: tuple[Stmt, ...]) -> set[str]:
    acc = collect_accesses(stmts)
    return {n for n in acc.reads | acc.writes if (d := ast.decl(n)) is not None and d.is_array}


def match_blocks(ast: Ast, db: PatternDb) -> list[BlockMatch]:
    """
    Candidate regions: every loop nest, every statement span as long as a
    reference body (when it contains a loop), and every call whose name equals
    a pattern name. Overlaps keep the higher-similarity match.
    """
    digest = ast_digest(ast)
    span_lengths = {r.region_length for r in db if r.region_length > 1}
    found: list[BlockMatch] = []

    for path, block in _blocks(ast.body):
        for start, stmt in enumerate(block):
            if isinstance(stmt, Call) and (record := db.by_name(stmt.name)) is not None:
                arrays = [a.name for a in stmt.args if isinstance(a, Var)]
                found.append(BlockMatch(
                    pattern=record.name, kernel_id=record.kernel_id, path=path, start=start,
                    end=start + 1, similarity=1.0, via_call=True,
                    size_expr=render_expr(_dominant_size(ast, arrays)), digest=digest,
                ))
        spans = [(i, i + 1) for i, s in enumerate(block) if isinstance(s, (For, While))]
        for length in sorted(span_lengths):
            for i in range(len(block) - length + 1):
                if any(isinstance(s, (For, While)) for s in block[i:i + length]):
                    spans.append((i, i + length))
        for start, end in spans:
            stmts = block[start:end]
            sig = token_signature(stmts)
            for record in db:
                if end - start > 1 and end - start != record.region_length:
                    continue
                score = similarity(sig, record.signature)
                if score >= record.min_similarity:
                    found.append(BlockMatch(
                        pattern=record.name, kernel_id=record.kernel_id, path=path, start=start,
                        end=end, similarity=score,
                        size_expr=render_expr(_dominant_size(ast, _region_arrays(ast, stmts))),
                        digest=digest,
                    ))

    found.sort(key=lambda m: (-m.similarity, m.path, m.start, -(m.end - m.start), m.pattern))
    accepted: list[BlockMatch] = []
    for match in found:
        if not any(overlaps(match, kept) for kept in accepted):
            accepted.append(match)
    for match in accepted:
        logger.info(f"Block match {match.pattern} at {list(match.path)}[{match.start}:{match.end}] "
                    f"similarity {match.similarity:.3f}")
    return accepted


def _variables(ast: Ast) -> set[str]:
    return {d.name for d in ast.decls} | set(ast.loop_vars)


def _region_bindings(ast: Ast, stmts: tuple[Stmt, ...], record: PatternRecord) -> list[tuple[str, Expr]]:
    """Reference variable -> program variable, read off the token alignment"""
    region_raw = list(stmt_tokens(stmts))
    ref_raw = list(stmt_tokens(record.reference.body))
    pairs = lcs_alignment(_normalize(region_raw), _normalize(ref_raw))
    user_vars, ref_vars = _variables(ast), _variables(record.reference)

    forward: dict[str, str] = {}
    backward: dict[str, str] = {}
    aligned: set[int] = set()
    for i, j in pairs:
        kind, text = region_raw[i]
        ref_text = ref_raw[j][1]
        aligned.add(i)
        if kind == "NUM":
            if text != ref_text:
                raise BindingMismatch(f"literal {text} aligned with {ref_text}")
            continue
        if kind != "ID":
            continue
        if ref_text not in ref_vars or text not in user_vars:
            if text != ref_text:
                raise BindingMismatch(f"name {text} aligned with {ref_text}")
            continue
        if forward.setdefault(ref_text, text) != text or backward.setdefault(text, ref_text) != ref_text:
            raise BindingMismatch(f"inconsistent renaming of {ref_text}/{text}")
    for i, (kind, text) in enumerate(region_raw):
        if kind == "ID" and i not in aligned:
            raise BindingMismatch(f"identifier {text} has no counterpart")

    bindings = []
    for ref_name in [d.name for d in record.reference.decls] + list(record.reference.loop_vars):
        if ref_name not in forward:
            continue
        user_name = forward[ref_name]
        ref_decl, user_decl = record.reference.decl(ref_name), ast.decl(user_name)
        ref_array = ref_decl is not None and ref_decl.is_array
        user_array = user_decl is not None and user_decl.is_array
        if ref_array != user_array:
            raise BindingMismatch(f"{user_name} and {ref_name} differ in shape")
        bindings.append((ref_name, Var(user_name)))
    return bindings


def _call_bindings(ast: Ast, call: Call, record: PatternRecord) -> tuple[list[tuple[str, Expr]], set[str], set[str]]:
    if len(call.args) != len(record.params):
        raise BindingMismatch(f"{call.name} takes {len(record.params)} arguments, got {len(call.args)}")
    ref = collect_accesses(record.reference.body)
    inputs: set[str] = set()
    outputs: set[str] = set()
    for param, arg in zip(record.params, call.args):
        if isinstance(arg, Var):
            if param in ref.reads:
                inputs.add(arg.name)
            if param in ref.writes:
                outputs.add(arg.name)
        else:
            inputs |= expr_reads(arg)
    return list(zip(record.params, call.args)), inputs, outputs


def _accel_for(ast: Ast, match: BlockMatch, db: PatternDb) -> AccelCall:
    record = db.by_name(match.pattern)
    if record is None:
        raise BindingMismatch(f"pattern {match.pattern} is not in the DB")
    stmts = region_stmts(ast, match)
    if match.via_call:
        call = stmts[0]
        if not isinstance(call, Call):
            raise RegionStale()
        bindings, inputs, outputs = _call_bindings(ast, call, record)
        arrays = [a.name for a in call.args if isinstance(a, Var)]
    else:
        bindings = _region_bindings(ast, stmts, record)
        acc = collect_accesses(stmts)
        inputs, outputs = acc.reads, acc.writes
        arrays = list(_region_arrays(ast, stmts))
    return AccelCall(
        kernel_id=record.kernel_id,
        block=record.name,
        bindings=tuple(bindings),
        size=_dominant_size(ast, arrays),
        inputs=tuple(sorted(inputs)),
        outputs=tuple(sorted(outputs)),
    )


def _renumber(ast: Ast, body: tuple[Stmt, ...], accels: list[AccelCall]) -> Ast:
    """
    Re-parse so LoopIds stay dense

    Loop variables an AccelCall refers to are declared at top level, since the
    loop header that introduced them may be gone or come later in the text.
    """
    declared = {d.name for d in ast.decls}
    referenced: set[str] = set()
    for accel in accels:
        referenced |= set(accel.inputs) | set(accel.outputs)
        for _, arg in accel.bindings:
            referenced |= expr_reads(arg)
    extra = tuple(Decl(v, "int") for v in ast.loop_vars if v in referenced and v not in declared)
    draft = replace(ast, decls=ast.decls + extra, body=body)
    return parse(to_source(draft), name=ast.name)


def substitute(ast: Ast, match: BlockMatch, db: PatternDb) -> Ast:
    """Replace one matched region by an AccelCall"""
    return substitute_all(ast, [match], db)


def substitute_all(ast: Ast, matches: Sequence[BlockMatch], db: PatternDb, strict: bool = True) -> Ast:
    """
    Replace every non-overlapping match computed on this exact program

    With strict=False, matches whose region cannot be bound are skipped.
    """
    digest = ast_digest(ast)
    for match in matches:
        if match.digest != digest:
            raise RegionStale()
    body = ast.body
    applied: list[AccelCall] = []
    # later regions first so earlier paths and indices stay valid
    for match in sorted(matches, key=lambda m: (m.path, m.start), reverse=True):
        try:
            accel = _accel_for(ast, match, db)
        except BindingMismatch as e:
            if strict:
                raise
            logger.warning(f"Skipping {match.pattern} match: {e}")
            continue
        body = _replace_region(body, match.path, match.start, match.end, accel)
        applied.append(accel)
    if not applied:
        return ast
    logger.info(f"Substituted {len(applied)} block(s) in '{ast.name}'")
    return _renumber(ast, body, applied)
