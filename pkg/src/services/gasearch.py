"""
Offload pattern search

The genome is one bit per parallelizable loop (preorder). Fitness is the
simulated time of the pattern with its transfer directives inserted; shape
violations and failed runs score a penalty of 10x the all-CPU time.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Literal, Mapping, Optional, Sequence

import numpy as np

from src.core.config import settings
from src.core.errors import EmptySpace, EnvAdaptError, SpaceTooLarge
from src.core.logging import get_plain_logger
from src.models.ast import Ast
from src.models.schemas import (
    CostModel,
    GaConfig,
    GenerationStats,
    LoopInfo,
    OffloadPattern,
    ProfileReport,
    SearchResult,
    Testcase,
)
from src.services.interpreter import BlockImpl
from src.services.perfsim import simulate
from src.services.transfer import compute_directives, insert_directives, naive_directives

logger = get_plain_logger(__name__)

Fitness = Callable[[OffloadPattern], float]
Genome = tuple[int, ...]


@dataclass(frozen=True)
class SearchSpace:
    loop_map: tuple[int, ...]
    excluded: dict[int, str] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.loop_map)

    @property
    def size(self) -> int:
        return 2 ** self.n

    def pattern(self, bits: Sequence[int]) -> OffloadPattern:
        return OffloadPattern(bits=tuple(int(b) for b in bits), loop_map=self.loop_map)

    def zeros(self) -> OffloadPattern:
        return OffloadPattern.zeros(self.loop_map)


def candidate_space(
    analysis: Sequence[LoopInfo],
    profile: Optional[ProfileReport] = None,
    min_trip: Optional[int] = None,
) -> SearchSpace:
    """
    Parallelizable loops in preorder

    With a profile, loops whose total executed iterations fall below min_trip
    (settings.min_trip_count by default) are left out of the genome.
    """
    threshold = settings.min_trip_count if min_trip is None else min_trip
    loop_map: list[int] = []
    excluded: dict[int, str] = {}
    for info in sorted(analysis, key=lambda i: i.id):
        if not info.parallelizable:
            excluded[info.id] = info.reason
            continue
        if profile is not None and threshold > 0:
            trips = profile.iterations.get(info.id, 0)
            if trips < threshold:
                excluded[info.id] = f"only {trips} iterations profiled (< {threshold})"
                continue
        loop_map.append(info.id)
    logger.info(f"Search space: {len(loop_map)} loops, {2 ** len(loop_map)} patterns")
    return SearchSpace(tuple(loop_map), excluded)


class FitnessContext:
    """
    Memoized pattern -> simulated time over a weighted testcase mix

    Safe to call from several threads; the memo only ever receives the value
    a fresh evaluation would produce.
    """

    def __init__(
        self,
        ast: Ast,
        model: CostModel,
        testcases: Sequence[Testcase],
        space: SearchSpace,
        library: Optional[Mapping[str, BlockImpl]] = None,
        mode: Literal["hoisted", "naive"] = "hoisted",
        penalty: Optional[float] = None,
        active_kernels: Optional[frozenset[str]] = None,
    ):
        self.ast = ast
        self.model = model
        self.testcases = list(testcases) or [Testcase(id="default")]
        self.space = space
        self.library = dict(library or {})
        self.mode = mode
        self.active_kernels = active_kernels
        self.evaluations = 0
        self.cache_hits = 0
        self._memo: dict[Genome, float] = {}
        self._lock = threading.Lock()
        # all-CPU time has no transfers and no device work; failures here are real errors
        self.baseline = self._simulate(space.zeros())
        self.penalty = penalty if penalty is not None else 10.0 * self.baseline

    def _simulate(self, pattern: OffloadPattern) -> float:
        directives = (compute_directives if self.mode == "hoisted" else naive_directives)(self.ast, pattern)
        annotated = insert_directives(self.ast, directives)
        total_weight = sum(tc.weight for tc in self.testcases) or 1.0
        time = 0.0
        for tc in self.testcases:
            report = simulate(annotated, pattern, self.model, tc.input, self.library, self.active_kernels)
            time += tc.weight * report.total
        return time / total_weight

    def evaluate_fresh(self, pattern: OffloadPattern) -> float:
        try:
            return self._simulate(pattern)
        except EnvAdaptError as e:
            logger.debug(f"Pattern {pattern.label()} penalized: {e}")
            return self.penalty

    def __call__(self, pattern: OffloadPattern) -> float:
        key = pattern.bits
        with self._lock:
            if key in self._memo:
                self.cache_hits += 1
                return self._memo[key]
        value = self.evaluate_fresh(pattern)
        with self._lock:
            if key in self._memo:
                self.cache_hits += 1
            else:
                self._memo[key] = value
                self.evaluations += 1
        return value


def _evaluate(population: list[Genome], space: SearchSpace, fitness: Fitness, workers: int) -> list[float]:
    patterns = [space.pattern(bits) for bits in population]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fitness, patterns))
    return [fitness(p) for p in patterns]


def run_ga(space: SearchSpace, config: GaConfig, fitness: Fitness, workers: Optional[int] = None) -> SearchResult:
    """
    Generational GA: tournament of two, single-point crossover, per-bit
    mutation, elitism. The all-zero individual is always in the first
    generation.
    """
    n = space.n
    if n == 0:
        raise EmptySpace()
    workers = settings.ga_workers if workers is None else workers
    rng = np.random.default_rng(config.seed)
    mutation_rate = config.mutation_rate if config.mutation_rate is not None else 1.0 / n

    population: list[Genome] = [
        tuple(int(b) for b in rng.integers(0, 2, size=n)) for _ in range(config.population)
    ]
    population[0] = (0,) * n

    best_bits: Genome = population[0]
    best_time = float("inf")
    history: list[GenerationStats] = []

    for generation in range(config.generations):
        scores = _evaluate(population, space, fitness, workers)
        for bits, score in zip(population, scores):
            if score < best_time:
                best_bits, best_time = bits, score
        history.append(GenerationStats(best=min(scores), mean=float(np.mean(scores))))
        logger.debug(f"Generation {generation}: best {history[-1].best:.6g} mean {history[-1].mean:.6g}")
        if generation == config.generations - 1:
            break

        def tournament() -> Genome:
            i, j = (int(x) for x in rng.integers(0, len(population), size=2))
            if (scores[j], j) < (scores[i], i):
                i = j
            return population[i]

        ranked = sorted(range(len(population)), key=lambda i: (scores[i], i))
        offspring: list[Genome] = [population[i] for i in ranked[:config.elite]]
        while len(offspring) < config.population:
            a, b = tournament(), tournament()
            if n > 1 and rng.random() < config.crossover_rate:
                point = int(rng.integers(1, n))
                a, b = a[:point] + b[point:], b[:point] + a[point:]
            for child in (a, b):
                flips = rng.random(n) < mutation_rate
                mutated = tuple(bit ^ int(flip) for bit, flip in zip(child, flips))
                if len(offspring) < config.population:
                    offspring.append(mutated)
        population = offspring

    result = SearchResult(
        best=space.pattern(best_bits),
        best_time=best_time,
        history=history,
        evaluations=getattr(fitness, "evaluations", 0),
        cache_hits=getattr(fitness, "cache_hits", 0),
    )
    logger.info(f"GA best {result.best.label()} time {best_time:.6g} "
                f"({result.evaluations} evaluations, {result.cache_hits} cache hits)")
    return result


def brute_force(space: SearchSpace, fitness: Fitness, cap: Optional[int] = None) -> tuple[OffloadPattern, float]:
    """Exact minimum over all 2^n patterns; ties keep the first found"""
    cap = settings.brute_force_cap if cap is None else cap
    n = space.n
    if n > cap:
        raise SpaceTooLarge(n, cap)
    best = space.zeros()
    best_time = fitness(best)
    for k in range(1, 2 ** n):
        pattern = space.pattern([(k >> i) & 1 for i in range(n)])
        time = fitness(pattern)
        if time < best_time:
            best, best_time = pattern, time
    return best, best_time
