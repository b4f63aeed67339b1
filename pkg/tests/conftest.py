from pathlib import Path

import pytest

from src.models.schemas import CostModel
from src.services.patterndb import load_db
from src.services.pipeline import load_pipeline_config

DEMO_DIR = Path(__file__).resolve().parents[1] / "src" / "data" / "demo"


@pytest.fixture(scope="session")
def demo_dir() -> Path:
    return DEMO_DIR


@pytest.fixture(scope="session")
def pattern_db():
    return load_db(DEMO_DIR / "patterns.json")


@pytest.fixture
def cost_model() -> CostModel:
    """The hand-computation model: launch 100, 50 + 0.01/byte per transfer"""
    return CostModel(
        cpu_op_cost=1.0,
        gpu_speedup=10.0,
        kernel_launch=100.0,
        xfer_latency=50.0,
        xfer_per_byte=0.01,
        elem_bytes=8,
    )


@pytest.fixture(scope="session")
def demo_run():
    """Demo pipeline steps up to placement, shared across modules"""
    pipeline = load_pipeline_config(DEMO_DIR / "pipeline.json")
    analysis = pipeline.analyze()
    search = pipeline.search(analysis)
    tune = pipeline.tune(analysis, search)
    place = pipeline.place(tune)
    return pipeline, analysis, search, tune, place


@pytest.fixture(scope="session")
def kvs_run():
    pipeline = load_pipeline_config(DEMO_DIR / "kvs_pipeline.json")
    analysis = pipeline.analyze()
    search = pipeline.search(analysis)
    tune = pipeline.tune(analysis, search)
    place = pipeline.place(tune)
    return pipeline, analysis, search, tune, place
