"""Tests for cached candidate evaluation."""

from typing import Callable

import pytest

from src.errors import InfeasibleConfigError
from src.evaluator import CandidateEvaluator, cache_key, evaluate_outcome
from src.exploration_stats import ExplorationStats, RejectReason
from src.workload import (
    BatchSpec,
    ModelSpec,
    ParallelismConfig,
    Placement,
    ScheduleKind,
    Topology,
)

BATCH = BatchSpec(global_batch_size=8, microbatch_size=1)


@pytest.fixture
def tiny_config() -> ParallelismConfig:
    """2-1-1-2-2 DoraPP over six one-layer chunks."""
    return ParallelismConfig(
        tp=2, pp=2, dp=2, schedule=ScheduleKind.DORAPP, chunk_partition=(1,) * 6
    )


def test_placement_twin_is_a_cache_hit(
    make_model: Callable[..., ModelSpec],
    make_topology: Callable[..., Topology],
    tiny_config: ParallelismConfig,
) -> None:
    """One DAG answers both placements."""
    stats = ExplorationStats()
    evaluator = CandidateEvaluator(make_model(), make_topology(), stats=stats)
    dp_out = evaluator.evaluate(BATCH, tiny_config)
    pp_out = evaluator.evaluate(
        BATCH, tiny_config.model_copy(update={"placement": Placement.PP_OUT})
    )
    assert dp_out is not None and pp_out is not None
    assert stats.evaluated == 1
    assert stats.cache_hits == 1
    assert dp_out.outcome == pp_out.outcome
    assert dp_out.iteration_time == dp_out.outcome.t_dpout
    assert pp_out.iteration_time == pp_out.outcome.t_ppout
    assert cache_key(BATCH, tiny_config) == cache_key(
        BATCH, tiny_config.model_copy(update={"placement": Placement.PP_OUT})
    )


def test_invalid_candidates_are_rejected(
    make_model: Callable[..., ModelSpec],
    make_topology: Callable[..., Topology],
    tiny_config: ParallelismConfig,
) -> None:
    """Validation failures are counted, not raised."""
    stats = ExplorationStats()
    evaluator = CandidateEvaluator(make_model(), make_topology(), stats=stats)
    uneven = BatchSpec(global_batch_size=7, microbatch_size=1)
    assert evaluator.evaluate(uneven, tiny_config) is None
    assert stats.reject_reasons[RejectReason.BATCH] >= 1
    assert stats.evaluated == 0


def test_evaluate_many_keeps_input_order(
    make_model: Callable[..., ModelSpec],
    make_topology: Callable[..., Topology],
    tiny_config: ParallelismConfig,
) -> None:
    """Results line up with candidates and repeats come from the cache."""
    evaluator = CandidateEvaluator(make_model(), make_topology())
    coarse = tiny_config.model_copy(update={"chunk_partition": (3, 3)})
    candidates = [(BATCH, tiny_config), (BATCH, coarse), (BATCH, tiny_config)]
    results = evaluator.evaluate_many(candidates)
    assert [r.config.chunk_partition if r else None for r in results] == [
        (1,) * 6,
        (3, 3),
        (1,) * 6,
    ]
    assert results[0] is not None and results[2] is not None
    assert results[0].iteration_time == results[2].iteration_time


def test_evaluation_row(
    make_model: Callable[..., ModelSpec],
    make_topology: Callable[..., Topology],
    tiny_config: ParallelismConfig,
) -> None:
    """Rows carry the label, degrees and both placement times."""
    evaluation = CandidateEvaluator(make_model(), make_topology()).evaluate(BATCH, tiny_config)
    assert evaluation is not None
    row = evaluation.to_row()
    assert row["label"] == "2-1-1-2-2 DPOut DoraPP FSDP [1x6] m=1"
    assert row["chunk_partition"] == "1-1-1-1-1-1"
    assert row["iteration_time_s"] == row["t_dpout_s"]
    assert 0.0 <= row["bubble_mean"] < 1.0


def test_outcome_refuses_infeasible_configs(
    make_model: Callable[..., ModelSpec],
    make_topology: Callable[..., Topology],
    tiny_config: ParallelismConfig,
) -> None:
    """One microbatch per replica cannot fill two stages."""
    short = BatchSpec(global_batch_size=2, microbatch_size=1)
    with pytest.raises(InfeasibleConfigError) as err:
        evaluate_outcome(make_model(), short, tiny_config, make_topology())
    assert any("microbatches < pipeline stages" in v for v in err.value.violations)
