"""Tests for the chunk partition search."""

from itertools import product
from typing import Callable

import numpy as np
import pytest

from src.evaluator import CandidateEvaluator
from src.partition_search import (
    FeatureModel,
    PartitionSampler,
    SearchBudget,
    iter_partitions,
    mc_partition_search,
    near_uniform_partition,
    neighbors,
    sample_composition,
    spread_ok,
)
from src.workload import BatchSpec, ModelSpec, ParallelismConfig, ScheduleKind, Topology

BATCH = BatchSpec(global_batch_size=8, microbatch_size=1)
TINY_BUDGET = SearchBudget(
    stage_partitions=2,
    chunk_configs_per_partition=2,
    top_k=2,
    perturbations_m=2,
    refine_templates=1,
)


def test_near_uniform_partition() -> None:
    """Remainder layers go to the leading chunks."""
    assert near_uniform_partition(10, 4) == (3, 3, 2, 2)
    assert near_uniform_partition(8, 4) == (2, 2, 2, 2)


def test_spread_ok() -> None:
    """Largest chunk at most cap times the smallest."""
    assert spread_ok((1, 3), 3.0)
    assert not spread_ok((1, 4), 3.0)


def test_iter_partitions_small_case() -> None:
    """Compositions of 6 into 3 parts within a 3x spread, in lexicographic order."""
    assert list(iter_partitions(6, 3, 3.0)) == [
        (1, 2, 3),
        (1, 3, 2),
        (2, 1, 3),
        (2, 2, 2),
        (2, 3, 1),
        (3, 1, 2),
        (3, 2, 1),
    ]


@pytest.mark.parametrize("layers,chunks,cap", [(8, 4, 2.0), (10, 3, 3.0), (7, 2, 1.5)])
def test_iter_partitions_matches_brute_force(layers: int, chunks: int, cap: float) -> None:
    """Pruned enumeration finds exactly the compositions a full scan keeps."""
    expected = [
        sizes
        for sizes in product(range(1, layers + 1), repeat=chunks)
        if sum(sizes) == layers and spread_ok(sizes, cap)
    ]
    assert list(iter_partitions(layers, chunks, cap)) == expected


def test_sample_composition() -> None:
    """Samples are positive and sum to the total."""
    rng = np.random.default_rng(0)
    for _ in range(50):
        parts = sample_composition(rng, 12, 4)
        assert len(parts) == 4
        assert sum(parts) == 12
        assert min(parts) >= 1
    assert sample_composition(rng, 5, 1) == [5]


def test_neighbors() -> None:
    """Adjacent transfers; a merge that re-splits to the start is dropped."""
    assert set(neighbors((2, 2, 2), 3.0)) == {
        (1, 3, 2),
        (3, 1, 2),
        (2, 1, 3),
        (2, 3, 1),
    }
    for sizes in neighbors((4, 2, 1, 1), 4.0):
        assert sum(sizes) == 8
        assert len(sizes) == 4
        assert spread_ok(sizes, 4.0)


def test_feature_model() -> None:
    """The fit reproduces a linear response and bounds acceptance odds."""
    model = FeatureModel()
    samples = {(3, 3): 4.0, (4, 2): 5.0, (5, 1): 6.0}
    for sizes, seconds in samples.items():
        model.observe(sizes, seconds)
    assert not model.ready
    model.observe((2, 4), 5.0)
    assert model.ready
    assert model.predict((3, 3)) == pytest.approx(4.0)
    assert model.accept_probability((3, 3)) == pytest.approx(1.0)
    assert model.accept_probability((5, 1)) == pytest.approx(0.1)


def test_sampler_respects_stage_layout() -> None:
    """Sampled partitions keep the chunk count and the layer total."""
    template = ParallelismConfig(
        tp=2, pp=2, dp=2, schedule=ScheduleKind.DORAPP, chunk_partition=(3, 3, 3, 3)
    )
    sampler = PartitionSampler(template, 12, 3.0)
    assert sampler.positions == [[0, 2], [1, 3]]
    assert not sampler.single_chunk_stages
    rng = np.random.default_rng(1)
    for _ in range(20):
        totals = sampler.sample_stage_totals(rng)
        assert sum(totals) == 12
        sizes = sampler.sample_chunking(rng, totals)
        if sizes is not None:
            assert sum(sizes) == 12
            assert spread_ok(sizes, 3.0)
            assert sizes[0] + sizes[2] == totals[0]


def test_exhaustive_search_finds_the_minimum(
    make_model: Callable[..., ModelSpec], make_topology: Callable[..., Topology]
) -> None:
    """A tiny space is enumerated and its fastest partition returned."""
    model = make_model()
    topo = make_topology()
    template = ParallelismConfig(
        tp=2, pp=2, dp=2, schedule=ScheduleKind.DORAPP, chunk_partition=(3, 3)
    )
    evaluator = CandidateEvaluator(model, topo)
    result = mc_partition_search(model, BATCH, template, topo, SearchBudget(), evaluator)
    times = {}
    for sizes in [(2, 4), (3, 3), (4, 2)]:
        ev = evaluator.evaluate(BATCH, template.model_copy(update={"chunk_partition": sizes}))
        assert ev is not None
        times[sizes] = ev.iteration_time
    assert result.exhaustive
    assert result.evaluated == 3
    assert result.iteration_time == pytest.approx(min(times.values()))
    assert result.iteration_time <= times[(3, 3)]


def test_sampled_search_is_deterministic(
    make_model: Callable[..., ModelSpec], make_topology: Callable[..., Topology]
) -> None:
    """Past the exhaustive limit, a seeded search repeats and never loses to its start."""
    model = make_model(num_layers=12)
    topo = make_topology()
    template = ParallelismConfig(
        tp=2, pp=2, dp=2, schedule=ScheduleKind.DORAPP, chunk_partition=(3, 3, 3, 3)
    )
    first = mc_partition_search(model, BATCH, template, topo, TINY_BUDGET)
    second = mc_partition_search(model, BATCH, template, topo, TINY_BUDGET)
    start = CandidateEvaluator(model, topo).evaluate(BATCH, template)
    assert start is not None
    assert not first.exhaustive
    assert first.partition == second.partition
    assert first.iteration_time == second.iteration_time
    assert first.iteration_time <= start.iteration_time
    assert sum(first.partition) == 12
