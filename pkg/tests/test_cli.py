import json

import pytest

from src.cli import ARTIFACTS, EXIT_ERROR, EXIT_INFEASIBLE, EXIT_PASS, main


def _config(tmp_path, demo_dir, **overrides):
    config = json.loads((demo_dir / "pipeline.json").read_text())
    for key in ("source", "testcases", "cost_model", "patterns", "topology", "appmodel", "scaling", "ga", "trace"):
        config[key] = str(demo_dir / config[key])
    config.update(overrides)
    path = tmp_path / "pipeline.json"
    path.write_text(json.dumps(config))
    return str(path)


def test_full_run(tmp_path, demo_dir, capsys):
    out = tmp_path / "out"
    code = main(["full", "-c", str(demo_dir / "pipeline.json"), "-o", str(out), "--yes"])
    assert code == EXIT_PASS
    assert "Pipeline pass" in capsys.readouterr().out
    for name in ARTIFACTS.values():
        assert (out / name).is_file()
    assert (out / "operate.jsonl").is_file()
    report = json.loads((out / "report.json").read_text())
    assert report["status"] == "pass"
    assert report["search"]["pattern"]["bits"] == [1, 1, 1, 1]
    assert report["place"]["placement"]["assign"]["analysis"] == "edge1"


def test_zero_budget_exits_infeasible(tmp_path, demo_dir):
    out = tmp_path / "out"
    code = main(["full", "-c", _config(tmp_path, demo_dir, budget=0), "-o", str(out), "--yes"])
    assert code == EXIT_INFEASIBLE
    report = json.loads((out / "report.json").read_text())
    assert report["status"] == "infeasible"
    assert report["failed_step"] == "tune"


def test_missing_topology_exits_with_step(tmp_path, demo_dir, capsys):
    config = _config(tmp_path, demo_dir, topology="missing_topology.json")
    code = main(["full", "-c", config, "-o", str(tmp_path / "out"), "--yes"])
    assert code == EXIT_ERROR
    err = capsys.readouterr().err
    assert "Error at place" in err
    assert "missing_topology.json" in err


def test_missing_config(tmp_path, capsys):
    code = main(["analyze", "-c", str(tmp_path / "nope.json"), "-o", str(tmp_path)])
    assert code == EXIT_ERROR
    assert "Error at analyze" in capsys.readouterr().err


def test_step_needs_previous_artifact(tmp_path, demo_dir, capsys):
    code = main(["search", "-c", str(demo_dir / "pipeline.json"), "-o", str(tmp_path / "empty")])
    assert code == EXIT_ERROR
    assert "analysis.json" in capsys.readouterr().err


def test_unknown_subcommand_is_rejected():
    with pytest.raises(SystemExit):
        main(["deploy", "-c", "pipeline.json"])


def test_chained_steps_match_full_run(tmp_path, demo_dir):
    config = str(demo_dir / "pipeline.json")
    full = tmp_path / "full"
    chained = tmp_path / "chained"
    assert main(["full", "-c", config, "-o", str(full), "--yes", "--seed", "5"]) == EXIT_PASS
    for step in ARTIFACTS:
        assert main([step, "-c", config, "-o", str(chained), "--yes", "--seed", "5"]) == EXIT_PASS, step

    for name in [*ARTIFACTS.values(), "operate.jsonl"]:
        assert (chained / name).read_bytes() == (full / name).read_bytes(), name


def test_run_writes_output_trace(tmp_path, demo_dir, capsys):
    binding = tmp_path / "binding.json"
    binding.write_text(json.dumps({"n": 4, "b": [1, 2, 3, 4]}))
    out = tmp_path / "out"
    code = main(["run", "-c", str(demo_dir / "pipeline.json"), "-o", str(out), "--input", str(binding)])
    assert code == EXIT_PASS
    assert "7 output value(s)" in capsys.readouterr().out
    # a = 2b, four refinement rounds, then s, t and u
    assert (out / "output.txt").read_text() == "2\n4\n6\n8\n-33.75\n30\n11.5625\n"


def test_run_defaults_to_first_testcase_input(tmp_path, demo_dir):
    out = tmp_path / "out"
    assert main(["run", "-c", str(demo_dir / "pipeline.json"), "-o", str(out)]) == EXIT_PASS
    assert len((out / "output.txt").read_text().splitlines()) == 7


def test_run_rejects_malformed_binding(tmp_path, demo_dir, capsys):
    binding = tmp_path / "binding.json"
    binding.write_text(json.dumps({"n": "many"}))
    code = main(["run", "-c", str(demo_dir / "pipeline.json"), "-o", str(tmp_path / "out"), "-i", str(binding)])
    assert code == EXIT_ERROR
    err = capsys.readouterr().err
    assert "Error at run" in err
    assert "binding.json:n" in err
