
from .parser import parse
from .printer import to_source
from .interpreter import Interpreter, interpret
from .analysis import analyze
from .patterndb import PatternDb, load_db, match_blocks, substitute_all
from .transfer import compute_directives, insert_directives
from .perfsim import DeployablePlan, measure, simulate
from .gasearch import FitnessContext, brute_force, candidate_space, run_ga
from .resource import compute_ratio, size_resources
from .placement import solve_placement
from .lifecycle import SystemState, operate, trial_simulate, verify_deployment
from .pipeline import Pipeline, load_pipeline_config, run_full

__all__ = [
    "parse",
    "to_source",
    "Interpreter",
    "interpret",
    "analyze",
    "PatternDb",
    "load_db",
    "match_blocks",
    "substitute_all",
    "compute_directives",
    "insert_directives",
    "DeployablePlan",
    "measure",
    "simulate",
    "FitnessContext",
    "brute_force",
    "candidate_space",
    "run_ga",
    "compute_ratio",
    "size_resources",
    "solve_placement",
    "SystemState",
    "operate",
    "trial_simulate",
    "verify_deployment",
    "Pipeline",
    "load_pipeline_config",
    "run_full",
]
