import json

import numpy as np
import pytest

from src.core.dependencies import load_model
from src.core.errors import DuplicateKernel, InputFileNotFound, RegionStale, SchemaError
from src.models.ast import AccelCall, For, iter_loops, walk
from src.models.schemas import CostModel, OffloadPattern, PatternRecordSpec
from src.services.interpreter import interpret
from src.services.parser import parse
from src.services.patterndb import (
    PatternDb,
    lcs_length,
    load_db,
    match_blocks,
    region_stmts,
    similarity,
    substitute,
    token_signature,
)
from src.services.perfsim import simulate


def _fft_binding(rng: np.random.Generator, length: int) -> dict:
    w = np.arange(length)
    return {
        "len": length,
        "xr": rng.uniform(-1.0, 1.0, size=length).tolist(),
        "xi": rng.uniform(-1.0, 1.0, size=length).tolist(),
        "cr": np.cos(-2.0 * np.pi * w / length).tolist(),
        "ci": np.sin(-2.0 * np.pi * w / length).tolist(),
    }


@pytest.fixture(scope="module")
def fft_app(demo_dir):
    return parse((demo_dir / "fft_app.elc").read_text(encoding="utf-8"), name="fft_app")


def test_shipped_db(pattern_db):
    assert len(pattern_db) == 4
    assert [r.name for r in pattern_db] == ["fft", "matmul", "sqlscan", "kvlookup"]
    assert pattern_db.by_kernel("fft_kernel_v1").params == ("re", "im", "wr", "wi", "n")
    assert set(pattern_db.library()) == {"fft", "matmul", "sqlscan", "kvlookup"}


def test_fft_and_matmul_records_only(demo_dir, tmp_path):
    data = json.loads((demo_dir / "patterns.json").read_text(encoding="utf-8"))
    path = tmp_path / "patterns.json"
    path.write_text(json.dumps([p for p in data["patterns"] if p["name"] in ("fft", "matmul")]), encoding="utf-8")
    db = load_db(path)
    assert len(db) == 2
    assert db.by_name("matmul").kernel_id == "matmul_kernel_v1"


def test_empty_db_matches_nothing(tmp_path, demo_dir):
    path = tmp_path / "patterns.json"
    path.write_text("[]", encoding="utf-8")
    db = load_db(path)
    assert len(db) == 0
    ast = parse((demo_dir / "fft_app.elc").read_text(encoding="utf-8"))
    assert match_blocks(ast, db) == []


def test_min_similarity_above_one_is_rejected(tmp_path):
    path = tmp_path / "patterns.json"
    path.write_text(json.dumps([{
        "name": "copy", "reference_source": "int n;\nfloat a[n];\n", "kernel_id": "copy_v1",
        "fixed_cost": 1, "per_element_cost": 1, "min_similarity": 1.2,
    }]), encoding="utf-8")
    with pytest.raises(SchemaError) as exc:
        load_db(path)
    assert "min_similarity" in exc.value.field


def test_duplicate_kernel_ids(tmp_path):
    record = {"name": "copy", "reference_source": "int n;\n", "kernel_id": "copy_v1",
              "fixed_cost": 1, "per_element_cost": 1}
    path = tmp_path / "patterns.json"
    path.write_text(json.dumps([record, {**record, "name": "copy2"}]), encoding="utf-8")
    with pytest.raises(DuplicateKernel):
        load_db(path)


def test_missing_db_file(tmp_path):
    with pytest.raises(InputFileNotFound):
        load_db(tmp_path / "nope.json")


def test_cost_formulas_are_housed(pattern_db):
    model = pattern_db.house(CostModel(accel_formulas={"fft_kernel_v1": {"fixed": 1, "per_element": 2}}))
    assert model.accel_formulas["fft_kernel_v1"].fixed == 1
    assert model.accel_formulas["matmul_kernel_v1"].fixed == 200


def test_token_signature_normalizes_names_and_numbers():
    ast = parse("int i;\nfloat a[4];\nfloat b[4];\na[i] = b[i] * 2;\n")
    assert token_signature(ast) == ("ID", "[", "ID", "]", "=", "ID", "[", "ID", "]", "*", "NUM")


def test_alpha_renamed_loops_share_a_signature():
    first = parse("float a[8];\nfloat b[8];\nfor (i = 0; i < 8; i = i + 1) {\n  a[i] = b[i] + 1.0;\n}\n")
    second = parse("float x[8];\nfloat y[8];\nfor (k = 0; k < 8; k = k + 1) {\n  y[k] = x[k] + 3.5;\n}\n")
    assert token_signature(first) == token_signature(second)


def test_similarity_is_an_lcs_ratio():
    assert lcs_length("abcde", "ace") == 3
    assert similarity("abc", "abd") == pytest.approx(2 / 3)
    assert similarity((), ()) == 1.0


def test_renamed_fft_has_the_reference_signature(fft_app, pattern_db):
    reference = pattern_db.by_name("fft")
    region = fft_app.body[:reference.region_length]
    assert similarity(token_signature(region), reference.signature) == 1.0


def test_renamed_fft_is_matched(fft_app, pattern_db):
    matches = match_blocks(fft_app, pattern_db)
    assert len(matches) == 1
    match = matches[0]
    assert match.pattern == "fft"
    assert match.kernel_id == "fft_kernel_v1"
    assert match.similarity >= 0.8
    assert (match.path, match.start, match.end) == ((), 0, 4)
    assert match.size_expr == "len"
    assert not match.via_call


def test_substitution_replaces_the_loop_nest(fft_app, pattern_db):
    match = match_blocks(fft_app, pattern_db)[0]
    program = substitute(fft_app, match, pattern_db)
    accels = [s for s in walk(program.body) if isinstance(s, AccelCall)]
    assert len(accels) == 1
    assert accels[0].kernel_id == "fft_kernel_v1"
    # only the energy loop is left
    assert [loop.loop_id for loop in iter_loops(program.body)] == [0]
    assert isinstance(program.body[1], For)


def test_substitution_preserves_outputs(fft_app, pattern_db):
    match = match_blocks(fft_app, pattern_db)[0]
    program = substitute(fft_app, match, pattern_db)
    library = pattern_db.library()
    rng = np.random.default_rng(2024)
    for trial in range(50):
        binding = _fft_binding(rng, [8, 16, 32][trial % 3])
        expected, _ = interpret(fft_app, binding)
        got, _ = interpret(program, binding, library)
        assert got == expected


def test_renamed_fft_computes_the_dft(fft_app):
    rng = np.random.default_rng(5)
    binding = _fft_binding(rng, 64)
    x = np.array(binding["xr"]) + 1j * np.array(binding["xi"])
    spectrum = np.fft.fft(x)
    energy, re1, im1 = interpret(fft_app, binding)[0]
    assert energy == pytest.approx(float(np.sum(np.abs(spectrum) ** 2)), rel=1e-9)
    assert re1 == pytest.approx(spectrum[1].real, abs=1e-9)
    assert im1 == pytest.approx(spectrum[1].imag, abs=1e-9)


def test_substituted_fft_is_faster_at_1024(fft_app, pattern_db, demo_dir):
    model = pattern_db.house(load_model(demo_dir / "costmodel.json", CostModel))
    program = substitute(fft_app, match_blocks(fft_app, pattern_db)[0], pattern_db)
    no_offload = OffloadPattern.zeros(())
    before = simulate(fft_app, no_offload, model)
    after = simulate(program, no_offload, model, library=pattern_db.library())
    assert after.total < before.total
    assert after.output == before.output
    assert after.device_time == 500 + 4 * 1024


def test_library_call_matches_by_name(pattern_db):
    ast = parse(
        "int len = 8;\nfloat xr[len];\nfloat xi[len];\nfloat cr[len];\nfloat ci[len];\n"
        "call fft(xr, xi, cr, ci, len);\noutput xr[1];\n"
    )
    matches = match_blocks(ast, pattern_db)
    assert len(matches) == 1
    assert matches[0].via_call
    assert matches[0].similarity == 1.0
    program = substitute(ast, matches[0], pattern_db)
    binding = _fft_binding(np.random.default_rng(3), 8)
    library = pattern_db.library()
    assert interpret(program, binding, library)[0] == interpret(ast, binding, library)[0]


def test_unrelated_stencil_is_not_matched(pattern_db):
    ast = parse(
        "int n = 16;\nfloat a[n];\nfloat b[n];\n"
        "for (i = 1; i < n - 1; i = i + 1) {\n  b[i] = (a[i - 1] + a[i] + a[i + 1]) / 3.0;\n}\n"
    )
    assert match_blocks(ast, pattern_db) == []


def test_demo_program_has_no_false_matches(demo_dir, pattern_db):
    ast = parse((demo_dir / "demo.elc").read_text(encoding="utf-8"))
    assert match_blocks(ast, pattern_db) == []


def test_storage_handler_matches_both_calls(demo_dir, pattern_db):
    ast = parse((demo_dir / "kvs.elc").read_text(encoding="utf-8"))
    matches = match_blocks(ast, pattern_db)
    assert {m.pattern: m.path for m in matches} == {"sqlscan": ((1, 0),), "kvlookup": ((1, 1),)}
    assert all(m.via_call for m in matches)


def test_stale_match_is_refused(fft_app, pattern_db):
    match = match_blocks(fft_app, pattern_db)[0]
    changed = parse(
        "int len = 4;\nfloat xr[len];\noutput xr[0];\n"
    )
    with pytest.raises(RegionStale):
        substitute(changed, match, pattern_db)
    assert len(region_stmts(fft_app, match)) == 4


def test_db_from_no_specs_is_empty():
    assert len(PatternDb.from_specs([])) == 0


def test_raising_min_similarity_never_adds_a_match(demo_dir):
    data = json.loads((demo_dir / "patterns.json").read_text(encoding="utf-8"))["patterns"]
    fft_text = (demo_dir / "fft_app.elc").read_text(encoding="utf-8")
    programs = [
        parse(fft_text),
        parse(fft_text.replace("xr[lo] = xr[lo] + pr;", "xr[lo] = xr[lo] * pr;")),
        parse(fft_text.replace("      tw = r * ts;\n", "")),
        parse((demo_dir / "kvs.elc").read_text(encoding="utf-8")),
        parse((demo_dir / "demo.elc").read_text(encoding="utf-8")),
    ]

    def matched(threshold: float) -> set:
        db = PatternDb.from_specs([PatternRecordSpec(**{**spec, "min_similarity": threshold}) for spec in data])
        return {
            (k, m.pattern, m.path, m.start, m.end)
            for k, program in enumerate(programs)
            for m in match_blocks(program, db)
        }

    thresholds = (0.3, 0.5, 0.7, 0.8, 0.9, 0.95, 1.0)
    found = [matched(t) for t in thresholds]
    for looser, stricter in zip(found, found[1:]):
        assert stricter <= looser
    # the edited transforms fall out somewhere on the way to an exact match
    assert len(found[-1]) < len(found[0])
