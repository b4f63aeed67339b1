import itertools

import numpy as np
import pytest

from src.core.dependencies import load_model
from src.core.errors import EmptySpace, SpaceTooLarge
from src.models.schemas import CostModel, GaConfig, Testcase
from src.services.analysis import analyze
from src.services.gasearch import FitnessContext, SearchSpace, brute_force, candidate_space, run_ga
from src.services.interpreter import interpret
from src.services.parser import parse

from tests.corpus import COUPLED_PROGRAM, ten_loop_program, wide_program

SINGLE = "int n = 1000;\nfloat a[n];\nfloat b[n];\nfor (i = 0; i < n; i = i + 1) {\n  a[i] = b[i] * 2;\n}\n"

THREE = (
    "int n = 300;\nfloat a[n];\nfloat b[n];\nfloat c[n];\nfloat s;\n"
    "for (i = 0; i < n; i = i + 1) {\n  a[i] = b[i] + 1.0;\n}\n"
    "for (i = 0; i < 8; i = i + 1) {\n  c[i] = a[i] * 2.0;\n}\n"
    "for (i = 0; i < n; i = i + 1) {\n  s = s + c[i];\n}\n"
    "for (i = 0; i < n; i = i + 1) {\n  b[i] = a[i] * c[i] - 1.0;\n}\n"
    "output s;\n"
)

# outer and inner loops are both admissible, and both offloaded is a nest
NESTED_CANDIDATES = (
    "float a[4];\n"
    "for (t = 0; t < 4; t = t + 1) {\n  for (i = 0; i < 4; i = i + 1) {\n  }\n}\n"
    "for (i = 0; i < 4; i = i + 1) {\n  a[i] = 1.0;\n}\n"
    "output a[0];\n"
)


def _context(text: str, model: CostModel, **kwargs) -> FitnessContext:
    ast = parse(text)
    space = candidate_space(analyze(ast))
    return FitnessContext(ast, model, [Testcase(id="default")], space, **kwargs)


def test_candidate_space_follows_the_analysis(demo_dir):
    demo = analyze(parse((demo_dir / "demo.elc").read_text(encoding="utf-8")))
    space = candidate_space(demo)
    assert space.loop_map == (0, 3, 4, 5)
    assert set(space.excluded) == {1, 2, 6, 7, 8}

    ten = candidate_space(analyze(parse(ten_loop_program())))
    assert ten.n == 10
    assert ten.size == 1024

    three = candidate_space(analyze(parse(THREE)))
    assert three.loop_map == (0, 1, 3)


def test_candidate_space_drops_rarely_run_loops():
    ast = parse(THREE)
    _, profile = interpret(ast)
    space = candidate_space(analyze(ast), profile, min_trip=100)
    assert space.loop_map == (0, 3)
    assert "only 8 iterations" in space.excluded[1]


def test_all_zero_pattern_is_the_cpu_baseline(cost_model):
    fitness = _context(SINGLE, cost_model)
    assert fitness.baseline == 3000
    assert fitness(fitness.space.zeros()) == 3000


def test_nested_offload_gets_the_penalty(cost_model):
    fitness = _context(NESTED_CANDIDATES, cost_model)
    assert fitness.space.loop_map == (0, 1, 2)
    # four stores, one read and one output
    assert fitness.baseline == 6
    assert fitness(fitness.space.pattern((1, 1, 0))) == 60


def test_fitness_memo_counts(cost_model):
    fitness = _context(SINGLE, cost_model)
    pattern = fitness.space.pattern((1,))
    assert fitness(pattern) == pytest.approx(660)
    assert fitness(pattern) == pytest.approx(660)
    assert (fitness.evaluations, fitness.cache_hits) == (1, 1)


def test_single_loop_ga_finds_the_better_bit(cost_model):
    fitness = _context(SINGLE, cost_model)
    result = run_ga(fitness.space, GaConfig(population=4, generations=3, seed=1), fitness)
    assert result.best.bits == (1,)
    assert result.best_time == pytest.approx(660)
    assert len(result.history) == 3


def test_fixed_seed_is_deterministic(cost_model):
    config = GaConfig(population=16, generations=10, seed=42)
    runs = []
    for _ in range(2):
        fitness = _context(wide_program(3), cost_model)
        runs.append(run_ga(fitness.space, config, fitness))
    assert runs[0] == runs[1]


def test_worker_threads_do_not_change_the_result(cost_model):
    config = GaConfig(population=16, generations=8, seed=9)
    runs = []
    for workers in (1, 4):
        fitness = _context(wide_program(4), cost_model)
        runs.append(run_ga(fitness.space, config, fitness, workers=workers))
    serial, threaded = runs
    assert serial.best == threaded.best
    assert serial.best_time == threaded.best_time
    assert serial.history == threaded.history


def test_brute_force_scans_every_pattern(cost_model):
    fitness = _context(THREE, cost_model)
    best, best_time = brute_force(fitness.space, fitness)
    assert fitness.evaluations == 8
    by_hand = {bits: fitness(fitness.space.pattern(bits)) for bits in itertools.product((0, 1), repeat=3)}
    assert best_time == min(by_hand.values())
    assert by_hand[best.bits] == best_time
    # the eight-iteration loop is not worth a kernel launch
    assert best.bits == (1, 0, 1)


def test_brute_force_refuses_large_spaces():
    space = SearchSpace(tuple(range(21)))
    with pytest.raises(SpaceTooLarge):
        brute_force(space, lambda pattern: 0.0, cap=20)


def test_empty_space():
    with pytest.raises(EmptySpace):
        run_ga(SearchSpace(()), GaConfig(), lambda pattern: 0.0)


@pytest.mark.parametrize("seed", range(6))
def test_generation_best_never_gets_worse_with_elitism(seed, cost_model):
    fitness = _context(wide_program(seed % 3), cost_model)
    config = GaConfig(population=10, generations=12, seed=seed, elite=1 + seed % 2)
    result = run_ga(fitness.space, config, fitness)
    bests = [g.best for g in result.history]
    assert all(later <= earlier for earlier, later in zip(bests, bests[1:]))
    assert result.best_time == bests[-1]
    # the all-zero individual is in the first generation
    assert result.best_time <= fitness.baseline


@pytest.mark.parametrize("text", [wide_program(2), NESTED_CANDIDATES, COUPLED_PROGRAM])
def test_memoized_fitness_matches_a_fresh_evaluation(text, cost_model):
    fitness = _context(text, cost_model)
    rng = np.random.default_rng(17)
    for _ in range(12):
        pattern = fitness.space.pattern([int(b) for b in rng.integers(0, 2, size=fitness.space.n)])
        first = fitness(pattern)
        assert fitness(pattern) == first
        assert fitness.evaluate_fresh(pattern) == first
    assert fitness.cache_hits >= 12


def test_best_combination_is_not_built_from_individual_winners():
    slow_link = CostModel(gpu_speedup=10, kernel_launch=100, xfer_latency=300, xfer_per_byte=0.01, elem_bytes=8)
    fitness = _context(COUPLED_PROGRAM, slow_link)
    assert fitness.space.loop_map == (1, 2)
    alone = [fitness(fitness.space.pattern(bits)) for bits in ((1, 0), (0, 1))]
    # neither inner loop helps on its own
    assert all(t > fitness.baseline for t in alone)
    best, best_time = brute_force(fitness.space, fitness)
    assert best.bits == (1, 1)
    assert best_time < fitness.baseline
    result = run_ga(fitness.space, GaConfig(population=8, generations=5, seed=0), fitness)
    assert result.best.bits == (1, 1)


def test_demo_optimum_is_not_the_individual_winners_combined(demo_dir):
    model = load_model(demo_dir / "costmodel.json", CostModel)
    fitness = _context((demo_dir / "demo.elc").read_text(encoding="utf-8"), model)
    assert fitness.space.loop_map == (0, 3, 4, 5)
    assert fitness.baseline == pytest.approx(65011)

    singles = [fitness(fitness.space.pattern(bits)) for bits in ((1, 0, 0, 0), (0, 1, 0, 0), (0, 0, 1, 0), (0, 0, 0, 1))]
    assert singles == pytest.approx([64211, 58211, 59111, 65411])
    # the last refinement pass only moves arrays back and forth on its own
    winners = tuple(int(t < fitness.baseline) for t in singles)
    assert winners == (1, 1, 1, 0)
    combined = fitness(fitness.space.pattern(winners))
    assert combined == pytest.approx(46111)

    best, best_time = brute_force(fitness.space, fitness)
    assert best.bits == (1, 1, 1, 1)
    assert best_time == pytest.approx(35711)
    assert best_time < combined


@pytest.mark.slow
@pytest.mark.parametrize("program_seed", range(5))
def test_ga_stays_close_to_the_brute_force_optimum(program_seed, cost_model):
    fitness = _context(wide_program(program_seed), cost_model)
    assert 8 <= fitness.space.n <= 12
    _, optimum = brute_force(fitness.space, fitness)
    close = 0
    for seed in range(20):
        result = run_ga(fitness.space, GaConfig(population=16, generations=20, seed=seed), fitness)
        assert result.best_time >= optimum
        if result.best_time <= 1.05 * optimum:
            close += 1
    assert close >= 18
