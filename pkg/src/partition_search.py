"""Monte-Carlo search over layer-to-chunk partitions of a fixed template.

The template fixes degrees, placement, schedule and chunk count; only the
chunk sizes move. Small spaces are enumerated outright. Larger ones are
explored by sampling stage totals and then chunkings of each stage, with a
linear model on (largest chunk, size variance) steering later samples, and
the best partitions found are then perturbed one move at a time.
"""

from dataclasses import dataclass
from itertools import islice
import logging
import math
import time
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import Field

from .assumptions import DEFAULT_ASSUMPTIONS, Assumptions
from .evaluator import CandidateEvaluator
from .workload import BatchSpec, ModelSpec, ParallelismConfig, Topology, _Document

logger = logging.getLogger(__name__)

Partition = Tuple[int, ...]


class SearchBudget(_Document):
    """Limits of the configuration search.

    Attributes:
        top_k: Survivors perturbed in the exploitation phase, and entries kept
            in the report
        perturbations_m: Neighbors generated per survivor
        chunk_configs_per_partition: Chunkings sampled per stage partition
        stage_partitions: Stage partitions sampled in the exploration phase
        refine_templates: Best templates handed to the partition search
        max_wall_time_s: Wall-clock limit; None searches to completion
        seed: Seed of every random choice
        workers: Worker processes for template evaluation
    """

    top_k: int = Field(default=1000, ge=1)
    perturbations_m: int = Field(default=100, ge=1)
    chunk_configs_per_partition: int = Field(default=100, ge=1)
    stage_partitions: int = Field(default=10, ge=1)
    refine_templates: int = Field(default=10, ge=1)
    max_wall_time_s: Optional[float] = Field(default=None, gt=0)
    seed: int = 0
    workers: int = Field(default=1, ge=1)

    @property
    def exhaustive_limit(self) -> int:
        """Largest partition space enumerated outright."""
        return self.stage_partitions * self.chunk_configs_per_partition


@dataclass
class PartitionSearchResult:
    """Best partition found for a template."""

    partition: Partition
    iteration_time: float
    evaluated: int
    exhaustive: bool
    truncated: bool


def spread_ok(sizes: Sequence[int], cap: float) -> bool:
    """True when the largest chunk is at most ``cap`` times the smallest."""
    return max(sizes) <= cap * min(sizes)


def near_uniform_partition(num_layers: int, num_chunks: int) -> Partition:
    """Split layers as evenly as possible, larger chunks first."""
    base, extra = divmod(num_layers, num_chunks)
    return tuple(base + 1 if i < extra else base for i in range(num_chunks))


def iter_partitions(num_layers: int, num_chunks: int, cap: float) -> Iterator[Partition]:
    """Every composition of the layers into chunks that respects the spread cap.

    Yields in lexicographic order. Branches that can no longer satisfy the
    cap are cut early, so taking a prefix with islice stays cheap.
    """
    prefix: List[int] = []

    def walk(remaining: int, parts: int, lo: int, hi: int) -> Iterator[Partition]:
        if parts == 0:
            if remaining == 0:
                yield tuple(prefix)
            return
        floor_size = max(1, math.ceil(hi / cap)) if prefix else 1
        for size in range(floor_size, remaining - (parts - 1) * floor_size + 1):
            new_lo = min(lo, size) if prefix else size
            new_hi = max(hi, size)
            if new_hi > cap * new_lo:
                if size > hi:
                    break
                continue
            rest = parts - 1
            if rest and not (
                rest * max(1, math.ceil(new_hi / cap)) <= remaining - size
                <= rest * math.floor(cap * new_lo)
            ):
                continue
            prefix.append(size)
            yield from walk(remaining - size, rest, new_lo, new_hi)
            prefix.pop()

    yield from walk(num_layers, num_chunks, num_layers, 0)


def sample_composition(rng: np.random.Generator, total: int, parts: int) -> List[int]:
    """Uniformly random composition of ``total`` into ``parts`` positive parts."""
    if parts == 1:
        return [total]
    cuts = np.sort(rng.choice(total - 1, size=parts - 1, replace=False)) + 1
    bounds = [0, *cuts.tolist(), total]
    return [b - a for a, b in zip(bounds, bounds[1:])]


def chunk_features(sizes: Sequence[int]) -> Tuple[float, float]:
    """Largest chunk size and chunk-size variance."""
    return float(max(sizes)), float(np.var(sizes))


class FeatureModel:
    """Least-squares fit of iteration time on partition features."""

    MIN_SAMPLES = 4

    def __init__(self) -> None:
        """Start with no observations."""
        self.features: List[Tuple[float, float]] = []
        self.times: List[float] = []
        self._weights: Optional[np.ndarray] = None

    def observe(self, sizes: Sequence[int], seconds: float) -> None:
        """Add an evaluated partition."""
        self.features.append(chunk_features(sizes))
        self.times.append(seconds)
        self._weights = None

    @property
    def ready(self) -> bool:
        """Enough samples to fit."""
        return len(self.times) >= self.MIN_SAMPLES

    def predict(self, sizes: Sequence[int]) -> float:
        """Predicted iteration time of a partition."""
        if self._weights is None:
            x = np.column_stack([np.ones(len(self.features)), np.array(self.features)])
            self._weights, *_ = np.linalg.lstsq(x, np.array(self.times), rcond=None)
        big, var = chunk_features(sizes)
        return float(self._weights @ np.array([1.0, big, var]))

    def accept_probability(self, sizes: Sequence[int]) -> float:
        """Acceptance odds, 1 at the best observed time falling to 0.1 at the worst."""
        lo, hi = min(self.times), max(self.times)
        if hi <= lo:
            return 1.0
        score = (hi - self.predict(sizes)) / (hi - lo)
        return float(min(1.0, max(0.1, score)))


class PartitionSampler:
    """Draws chunk partitions shaped like a template."""

    MAX_TRIES = 50

    def __init__(self, template: ParallelismConfig, num_layers: int, cap: float) -> None:
        """Record which chunk positions belong to each stage."""
        self.num_layers = num_layers
        self.cap = cap
        self.pp = template.pp
        self.num_chunks = template.num_chunks
        self.positions: List[List[int]] = [[] for _ in range(template.pp)]
        for index, stage in enumerate(template.chunk_stages):
            self.positions[stage].append(index)

    @property
    def single_chunk_stages(self) -> bool:
        """True when every stage holds one chunk (stage totals fix the partition)."""
        return all(len(p) == 1 for p in self.positions)

    def sample_stage_totals(self, rng: np.random.Generator) -> List[int]:
        """Uniform layer totals per stage with room for each stage's chunks."""
        floors = [len(p) for p in self.positions]
        spare = self.num_layers - sum(floors)
        extra = [x - 1 for x in sample_composition(rng, spare + self.pp, self.pp)]
        return [f + e for f, e in zip(floors, extra)]

    def sample_chunking(
        self, rng: np.random.Generator, stage_totals: Sequence[int]
    ) -> Optional[Partition]:
        """Random chunking of the given stage totals within the spread cap."""
        for _ in range(self.MAX_TRIES):
            sizes = [0] * self.num_chunks
            for stage, positions in enumerate(self.positions):
                parts = sample_composition(rng, stage_totals[stage], len(positions))
                for index, size in zip(positions, parts):
                    sizes[index] = size
            if spread_ok(sizes, self.cap):
                return tuple(sizes)
        return None


def neighbors(partition: Partition, cap: float) -> List[Partition]:
    """Partitions one move away: a layer moved between adjacent chunks, or
    two adjacent chunks merged while the largest chunk is split in two."""
    out: List[Partition] = []
    n = len(partition)
    for i in range(n - 1):
        for src, dst in ((i, i + 1), (i + 1, i)):
            if partition[src] > 1:
                sizes = list(partition)
                sizes[src] -= 1
                sizes[dst] += 1
                out.append(tuple(sizes))
        pair = partition[i] + partition[i + 1]
        merged = list(partition[:i]) + [pair] + list(partition[i + 2 :])
        big = max(range(len(merged)), key=lambda k: (merged[k], -k))
        if merged[big] >= 2:
            half = merged[big] // 2
            merged[big : big + 1] = [merged[big] - half, half]
            out.append(tuple(merged))
    seen = set()
    unique = []
    for sizes in out:
        if sizes != partition and sizes not in seen and spread_ok(sizes, cap):
            seen.add(sizes)
            unique.append(sizes)
    return unique


def mc_partition_search(
    model: ModelSpec,
    batch: BatchSpec,
    template: ParallelismConfig,
    topo: Topology,
    budget: SearchBudget,
    evaluator: Optional[CandidateEvaluator] = None,
    rng: Optional[np.random.Generator] = None,
    deadline: Optional[float] = None,
    assumptions: Assumptions = DEFAULT_ASSUMPTIONS,
) -> PartitionSearchResult:
    """Find the fastest chunk partition for a template.

    Args:
        model: Model architecture
        batch: Batch sizes
        template: Configuration whose chunk count and layout are kept
        topo: Topology
        budget: Search limits
        evaluator: Shared evaluator (a private one is made if omitted)
        rng: Random generator (seeded from the budget if omitted)
        deadline: time.monotonic() value after which the search stops
        assumptions: Modeling constants

    Returns:
        Best partition, its iteration time and search bookkeeping; the
        iteration time is infinite if no partition could be evaluated
    """
    evaluator = evaluator or CandidateEvaluator(model, topo, assumptions)
    rng = rng or np.random.default_rng(budget.seed)
    cap = assumptions.chunk_spread_cap
    num_layers = model.num_layers
    n = template.num_chunks
    scores: Dict[Partition, float] = {}
    truncated = False

    def out_of_time() -> bool:
        nonlocal truncated
        if deadline is not None and time.monotonic() >= deadline:
            truncated = True
        return truncated

    def score(sizes: Partition) -> None:
        if sizes in scores:
            return
        config = template.model_copy(update={"chunk_partition": sizes})
        result = evaluator.evaluate(batch, config)
        scores[sizes] = result.iteration_time if result else math.inf

    if spread_ok(template.chunk_partition, cap):
        score(template.chunk_partition)

    space = list(islice(iter_partitions(num_layers, n, cap), budget.exhaustive_limit + 1))
    exhaustive = len(space) <= budget.exhaustive_limit
    if exhaustive:
        for sizes in space:
            if out_of_time():
                break
            score(sizes)
    else:
        sampler = PartitionSampler(template, num_layers, cap)
        features = FeatureModel()
        per_stage = 1 if sampler.single_chunk_stages else budget.chunk_configs_per_partition
        for _ in range(budget.stage_partitions):
            if out_of_time():
                break
            totals = sampler.sample_stage_totals(rng)
            for _ in range(per_stage):
                if out_of_time():
                    break
                sizes = sampler.sample_chunking(rng, totals)
                if sizes is None or sizes in scores:
                    continue
                if features.ready and rng.random() > features.accept_probability(sizes):
                    continue
                score(sizes)
                if math.isfinite(scores[sizes]):
                    features.observe(sizes, scores[sizes])

        survivors = sorted(scores, key=lambda s: (scores[s], s))[: budget.top_k]
        for base in survivors:
            if out_of_time() or not math.isfinite(scores[base]):
                break
            moves = neighbors(base, cap)
            order = rng.permutation(len(moves)) if moves else []
            for index in order[: budget.perturbations_m]:
                if out_of_time():
                    break
                score(moves[int(index)])

    if not scores:
        return PartitionSearchResult(
            template.chunk_partition, math.inf, 0, exhaustive, truncated
        )
    best = min(scores, key=lambda s: (scores[s], s))
    if truncated:
        logger.warning("Partition search for %s hit the wall-time limit", template.label())
    logger.debug(
        "Partition search for %s: %d partitions, best %s (%.6f s)",
        template.label(),
        len(scores),
        best,
        scores[best],
    )
    return PartitionSearchResult(best, scores[best], len(scores), exhaustive, truncated)
