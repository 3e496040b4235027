"""Tests for enumeration, pruning and the end-to-end search."""

from typing import Callable

import pytest

from src.errors import NoFeasibleConfigError
from src.evaluator import CandidateEvaluator
from src.exploration_stats import ExplorationStats
from src.explorer import (
    PPOutSearchState,
    PruneDecision,
    SearchSpace,
    divisors,
    enumerate_configs,
    explore,
    prune_ppout,
)
from src.feasibility import validate_config
from src.partition_search import SearchBudget
from src.workload import (
    BatchSpec,
    DPSchemeKind,
    ModelSpec,
    ParallelismConfig,
    Placement,
    ScheduleKind,
    Topology,
)

BATCH = BatchSpec(global_batch_size=8, microbatch_size=1)
TINY_BUDGET = SearchBudget(
    stage_partitions=2,
    chunk_configs_per_partition=2,
    top_k=2,
    perturbations_m=2,
    refine_templates=1,
)


def test_divisors() -> None:
    """Ascending divisors."""
    assert divisors(12) == [1, 2, 3, 4, 6, 12]
    assert divisors(1) == [1]


def test_prune_ppout() -> None:
    """Stop once a larger stage count fails to beat every smaller one."""
    state = PPOutSearchState()
    assert prune_ppout(state) == PruneDecision.CONTINUE
    state.record(1, 5.0)
    state.record(2, 4.0)
    assert prune_ppout(state) == PruneDecision.CONTINUE
    state.record(4, 4.5)
    assert prune_ppout(state) == PruneDecision.STOP


def test_single_gpu_has_one_configuration(
    make_model: Callable[..., ModelSpec], make_topology: Callable[..., Topology]
) -> None:
    """One GPU and one sequence leave a single 1F1B DP-out layout."""
    topo = make_topology(buildings=1, gpus_per_building=1, gpus_per_server=1)
    batch = BatchSpec(global_batch_size=1, microbatch_size=1)
    configs = list(enumerate_configs(make_model(), batch, topo))
    assert len(configs) == 1
    sized, config = configs[0]
    assert sized.microbatch_size == 1
    assert config.schedule == ScheduleKind.ONE_F_ONE_B
    assert config.placement == Placement.DP_OUT
    assert config.chunk_partition == (6,)


def test_single_building_only_emits_dpout(
    make_model: Callable[..., ModelSpec], make_topology: Callable[..., Topology]
) -> None:
    """Placements coincide inside one building."""
    topo = make_topology(buildings=1, gpus_per_building=8)
    configs = list(enumerate_configs(make_model(), BATCH, topo))
    assert configs
    assert {c.placement for _, c in configs} == {Placement.DP_OUT}


def test_enumeration_rules(
    make_model: Callable[..., ModelSpec], make_topology: Callable[..., Topology]
) -> None:
    """Every template is valid; pp=1 only runs 1F1B."""
    model = make_model()
    topo = make_topology()
    stats = ExplorationStats()
    configs = list(enumerate_configs(model, BATCH, topo, stats=stats))
    assert configs
    assert stats.feasible == len(configs)
    assert {c.placement for _, c in configs} == set(Placement)
    for batch, config in configs:
        assert validate_config(model, batch, config, topo) == []
        if config.pp == 1:
            assert config.schedule == ScheduleKind.ONE_F_ONE_B
        assert config.tp == 2


def test_chunk_layer_filter(
    make_model: Callable[..., ModelSpec], make_topology: Callable[..., Topology]
) -> None:
    """Restricting chunk sizes keeps only templates with those sizes."""
    space = SearchSpace(chunk_layers=(3,), schedules=(ScheduleKind.DORAPP,), pp=(2,))
    configs = list(enumerate_configs(make_model(), BATCH, make_topology(), space))
    assert configs
    for _, config in configs:
        assert config.chunk_partition == (3, 3)
        assert config.schedule == ScheduleKind.DORAPP


def test_best_beats_every_template(
    make_model: Callable[..., ModelSpec], make_topology: Callable[..., Topology]
) -> None:
    """The reported best is no slower than any enumerated template."""
    model = make_model()
    topo = make_topology()
    space = SearchSpace(placements=(Placement.DP_OUT,))
    report = explore(model, BATCH, topo, TINY_BUDGET, space)
    evaluator = CandidateEvaluator(model, topo)
    for batch, config in enumerate_configs(model, BATCH, topo, space):
        ev = evaluator.evaluate(batch, config)
        if ev is not None:
            assert report.best.iteration_time <= ev.iteration_time
    assert len(report.entries) <= TINY_BUDGET.top_k
    assert report.best.config.placement == Placement.DP_OUT


def test_report_is_deterministic(
    make_model: Callable[..., ModelSpec], make_topology: Callable[..., Topology]
) -> None:
    """Same inputs and seed give the same report."""
    model = make_model()
    topo = make_topology()
    first = explore(model, BATCH, topo, TINY_BUDGET).to_dict()
    second = explore(model, BATCH, topo, TINY_BUDGET).to_dict()
    assert first == second
    assert first["ranking"][0]["rank"] == 1
    assert first["best"] == {k: v for k, v in first["ranking"][0].items() if k != "rank"}
    report = explore(model, BATCH, topo, TINY_BUDGET)
    assert ParallelismConfig.model_validate(first["config"]) == report.best.config
    assert BatchSpec.model_validate(first["batch"]) == report.best.batch


def test_dense_reference_space_picks_dpout(
    dense_model: ModelSpec,
    dense_batch: BatchSpec,
    dense_config: ParallelismConfig,
    topo64: Topology,
) -> None:
    """Large batch, heavy pipeline traffic: DP-out wins at 1:16."""
    space = SearchSpace.pinned_to(
        dense_config,
        dense_batch.microbatch_size,
        schedules=(ScheduleKind.DORAPP,),
        dp_schemes=(DPSchemeKind.FSDP,),
        chunk_layers=(1, 2),
    )
    report = explore(
        dense_model, dense_batch, topo64, TINY_BUDGET, space, reference=dense_config
    )
    assert report.best.config.placement == Placement.DP_OUT
    assert report.reference is not None
    assert report.reference["feasible"]
    assert report.reference["gain_pct"] >= 0.0


def test_small_dense_batch_picks_ppout(
    dense_model: ModelSpec, dense_config: ParallelismConfig, topo64: Topology
) -> None:
    """With few microbatches pipeline traffic is light and PP-out wins."""
    batch = BatchSpec(global_batch_size=8, microbatch_size=1)
    space = SearchSpace.pinned_to(
        dense_config,
        1,
        schedules=(ScheduleKind.DORAPP,),
        dp_schemes=(DPSchemeKind.FSDP,),
        chunk_layers=(1, 2),
    )
    report = explore(dense_model, batch, topo64, TINY_BUDGET, space)
    assert report.best.config.placement == Placement.PP_OUT


def test_empty_space_raises(
    make_model: Callable[..., ModelSpec], make_topology: Callable[..., Topology]
) -> None:
    """A space with no valid degrees names the binding constraint."""
    with pytest.raises(NoFeasibleConfigError):
        explore(make_model(), BATCH, make_topology(), TINY_BUDGET, SearchSpace(tp=(3,)))


def test_unknown_baseline(
    make_model: Callable[..., ModelSpec], make_topology: Callable[..., Topology]
) -> None:
    """Only the sailor-like baseline exists."""
    topo = make_topology(buildings=1, gpus_per_building=1, gpus_per_server=1)
    batch = BatchSpec(global_batch_size=1, microbatch_size=1)
    with pytest.raises(ValueError):
        explore(make_model(), batch, topo, TINY_BUDGET, baseline="megatron")


def test_sailor_like_baseline(
    make_model: Callable[..., ModelSpec], make_topology: Callable[..., Topology]
) -> None:
    """The restricted search reports its own best 1F1B layout."""
    report = explore(
        make_model(), BATCH, make_topology(), TINY_BUDGET, baseline="sailor-like"
    )
    assert report.baseline is not None
    assert report.baseline["mode"] == "sailor-like"
    assert report.baseline["feasible"]
    assert "OneFOneB FSDP" in report.baseline["label"]
    assert report.to_dict()["baseline"] == report.baseline
