"""
Command-line entry point
Runs the whole flow or one step at a time; steps exchange JSON artifacts
through the --out directory. `run` executes the source program alone and
writes its output trace, one value per line
"""

import argparse
import sys
from pathlib import Path
from typing import Callable, Optional, TypeVar

from pydantic import BaseModel

from src.core.dependencies import load_model
from src.core.errors import INFEASIBLE_ERRORS, EnvAdaptError, StepFailed
from src.core.logging import get_plain_logger
from src.models.schemas import (
    AnalysisArtifact,
    PlaceArtifact,
    ReconfigProposal,
    SearchArtifact,
    TuneArtifact,
    VerificationReport,
)
from src.services.interpreter import format_trace
from src.services.pipeline import Pipeline, load_binding, load_pipeline_config, run_full

logger = get_plain_logger("envadapt.cli")

A = TypeVar("A", bound=BaseModel)

EXIT_PASS = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2

ARTIFACTS = {
    "analyze": "analysis.json",
    "search": "search.json",
    "tune": "tune.json",
    "place": "place.json",
    "verify": "verify.json",
    "operate": "operate.json",
}


def _write(out: Path, name: str, artifact: BaseModel) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(artifact.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path


def _read(out: Path, step: str, model: type[A]) -> A:
    return load_model(out / ARTIFACTS[step], model)


def _confirm(question: str, assume_yes: bool) -> bool:
    if assume_yes:
        return True
    if not sys.stdin.isatty():
        print(f"{question} [y/N] (non-interactive: declined)")
        return False
    return input(f"{question} [y/N] ").strip().lower() in ("y", "yes")


def _deploy_approver(assume_yes: bool) -> Callable[[VerificationReport], bool]:
    def approve(report: VerificationReport) -> bool:
        print(f"Verification passed: {report.cpu_units} cpu / {report.device_units} device units, "
              f"total cost {report.total_cost:g}")
        return _confirm("Start the service with this configuration?", assume_yes)
    return approve


def _reconfig_approver(assume_yes: bool) -> Callable[[ReconfigProposal], bool]:
    def approve(proposal: ReconfigProposal) -> bool:
        print(f"Proposal {proposal.kind}: latency {proposal.current_latency:.4g} -> "
              f"{proposal.expected_latency:.4g} ({proposal.expected_latency_gain:.1%}), "
              f"cost delta {proposal.expected_cost_delta:+g}")
        return _confirm("Apply this reconfiguration?", assume_yes)
    return approve


def cmd_run(pipeline: Pipeline, out: Path, args: argparse.Namespace) -> int:
    binding = load_binding(args.input) if args.input else None
    trace = pipeline.run_source(binding)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "output.txt"
    path.write_text(format_trace(trace), encoding="utf-8")
    print(f"{pipeline.source.name}: {len(trace)} output value(s) -> {path}")
    return EXIT_PASS


def cmd_analyze(pipeline: Pipeline, out: Path, args: argparse.Namespace) -> int:
    analysis = pipeline.analyze()
    _write(out, ARTIFACTS["analyze"], analysis)
    parallel = sum(1 for loop in analysis.loops if loop.parallelizable)
    print(f"{analysis.program}: {len(analysis.loops)} loops ({parallel} parallelizable), "
          f"{len(analysis.matches)} block match(es)")
    for match in analysis.matches:
        print(f"  {match.pattern} -> {match.kernel_id} (similarity {match.similarity:.3f})")
    return EXIT_PASS


def cmd_search(pipeline: Pipeline, out: Path, args: argparse.Namespace) -> int:
    search = pipeline.search(_read(out, "analyze", AnalysisArtifact))
    _write(out, ARTIFACTS["search"], search)
    print(f"Pattern {search.pattern.label()} ({search.method}): time {search.best_time:.6g} "
          f"vs all-CPU {search.baseline_time:.6g}, {len(search.directives)} directives")
    return EXIT_PASS


def cmd_tune(pipeline: Pipeline, out: Path, args: argparse.Namespace) -> int:
    tune = pipeline.tune(_read(out, "analyze", AnalysisArtifact), _read(out, "search", SearchArtifact))
    _write(out, ARTIFACTS["tune"], tune)
    r = tune.resources
    print(f"Ratio {tune.ratio.cpu_units}:{tune.ratio.device_units}, sized {r.cpu_units} cpu / "
          f"{r.device_units} device, latency {r.est_latency:.4g}, cost {r.cost:g}")
    if tune.ratio.warning:
        print(f"  warning: {tune.ratio.warning}")
    return EXIT_PASS


def cmd_place(pipeline: Pipeline, out: Path, args: argparse.Namespace) -> int:
    place = pipeline.place(_read(out, "tune", TuneArtifact))
    _write(out, ARTIFACTS["place"], place)
    if place.placement is None:
        print("No topology configured; placement skipped")
    else:
        p = place.placement
        print(f"Placement {p.assign}: latency {p.latency:.4g}, cost {p.cost:g} ({place.retries} retries)")
    return EXIT_PASS


def _state(pipeline: Pipeline, out: Path):
    return pipeline.state(
        _read(out, "analyze", AnalysisArtifact),
        _read(out, "search", SearchArtifact),
        _read(out, "place", PlaceArtifact),
    )


def cmd_verify(pipeline: Pipeline, out: Path, args: argparse.Namespace) -> int:
    verify = pipeline.verify(_state(pipeline, out), _deploy_approver(args.yes))
    _write(out, ARTIFACTS["verify"], verify)
    for entry in verify.report.entries:
        flag = "ok" if entry.latency_ok and entry.output_ok else "FAIL"
        print(f"  {entry.testcase_id}: latency {entry.measurement.latency:.4g} {flag}")
    if not verify.report.passed:
        print(f"Verification failed: {', '.join(verify.report.failing)}")
        return EXIT_ERROR
    return EXIT_PASS if verify.approved else EXIT_ERROR


def cmd_operate(pipeline: Pipeline, out: Path, args: argparse.Namespace) -> int:
    operated = pipeline.operate(_state(pipeline, out), _reconfig_approver(args.yes))
    if operated is None:
        print("No workload trace configured")
        return EXIT_ERROR
    artifact, log = operated
    _write(out, ARTIFACTS["operate"], artifact)
    (out / "operate.jsonl").write_text(log.to_jsonl(), encoding="utf-8")
    print(f"{artifact.proposals} proposal(s), {artifact.applied} applied over {artifact.events} events")
    return EXIT_PASS


def cmd_full(pipeline: Pipeline, out: Path, args: argparse.Namespace) -> int:
    report, log = run_full(pipeline, _deploy_approver(args.yes), _reconfig_approver(args.yes))
    for step, name in ARTIFACTS.items():
        artifact = getattr(report, "analysis" if step == "analyze" else step)
        if artifact is not None:
            _write(out, name, artifact)
    if log is not None:
        (out / "operate.jsonl").write_text(log.to_jsonl(), encoding="utf-8")
    _write(out, "report.json", report)
    print(f"Pipeline {report.status}" + (f" at {report.failed_step}: {report.message}" if report.failed_step else ""))
    if report.status == "infeasible":
        return EXIT_INFEASIBLE
    return EXIT_PASS if report.status == "pass" else EXIT_ERROR


COMMANDS = {
    "run": cmd_run,
    "analyze": cmd_analyze,
    "search": cmd_search,
    "tune": cmd_tune,
    "place": cmd_place,
    "verify": cmd_verify,
    "operate": cmd_operate,
    "full": cmd_full,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="envadapt", description="Environment-adaptive offload pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", "-c", required=True, help="pipeline.json")
        cmd.add_argument("--out", "-o", default="envadapt-out", help="artifact directory")
        cmd.add_argument("--seed", type=int, default=None, help="override the GA seed")
        cmd.add_argument("--yes", "-y", action="store_true", help="approve deployment and reconfigurations")
        if name == "run":
            cmd.add_argument("--input", "-i", default=None, help="input binding JSON (default: first testcase input)")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        pipeline = load_pipeline_config(args.config, seed=args.seed)
        if args.yes:
            pipeline.config = pipeline.config.model_copy(update={"auto_approve": True})
        return COMMANDS[args.command](pipeline, Path(args.out), args)
    except INFEASIBLE_ERRORS as e:
        print(f"Infeasible at {args.command}: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except StepFailed as e:
        print(f"Error at {e.step}: {e.cause}", file=sys.stderr)
        return EXIT_ERROR
    except EnvAdaptError as e:
        print(f"Error at {args.command}: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
