"""End-to-end placement, DP scheme and schedule comparisons on the bundled workloads."""

from typing import Dict, List

import pandas as pd
from src.comm_volume import cross_building_traffic
from src.evaluator import evaluate_outcome
from src.sweep import SweepAxis, placement_gap, run_sweep
from src.workload import (
    BatchSpec,
    DPSchemeKind,
    ModelSpec,
    ParallelismConfig,
    Placement,
    ScheduleKind,
    Topology,
)

LOSS_RATE = 2e-4


def times(frame: pd.DataFrame, placement: Placement, column: str) -> Dict[float, float]:
    """Iteration time per ``column`` value for one placement."""
    rows = frame[frame["placement"] == placement.value]
    return dict(zip(rows[column], rows["iteration_time_s"]))


def sign_changes(values: List[float]) -> int:
    """Number of adjacent pairs with opposite signs."""
    return sum(1 for a, b in zip(values, values[1:]) if (a < 0) != (b < 0))


def test_dpout_traffic_is_flat_and_ppout_traffic_is_linear(
    dense_model: ModelSpec, dense_config: ParallelismConfig, topo64: Topology
) -> None:
    """Cross-building bytes across 2 to 44 microbatches per pipeline."""
    per_step = dense_config.dp * 4
    dp_bytes, pp_bytes = [], []
    microbatches = [2, 4, 11, 22, 44]
    for n in microbatches:
        batch = BatchSpec(global_batch_size=n * per_step, microbatch_size=4)
        dp_bytes.append(
            cross_building_traffic(
                dense_model, batch, dense_config, topo64, Placement.DP_OUT
            ).total_bytes
        )
        pp_bytes.append(
            cross_building_traffic(
                dense_model, batch, dense_config, topo64, Placement.PP_OUT
            ).total_bytes
        )
    assert len(set(dp_bytes)) == 1
    per_microbatch = pp_bytes[0] // microbatches[0]
    assert pp_bytes == [per_microbatch * n for n in microbatches]


def test_dpout_advantage_grows_with_oversubscription(
    dense_model: ModelSpec,
    dense_batch: BatchSpec,
    dense_config: ParallelismConfig,
    topo64: Topology,
) -> None:
    """Dense batch 176: level at 1:1.33, DP-out 15% ahead at 1:16, monotone between."""
    ratios = [1.33, 2, 4, 8, 16]
    frame = run_sweep(
        SweepAxis.OVERSUB, ratios, dense_model, dense_batch, dense_config, topo64
    )
    dp = times(frame, Placement.DP_OUT, "value")
    pp = times(frame, Placement.PP_OUT, "value")
    speedup = [(pp[x] - dp[x]) / pp[x] for x in ratios]
    assert abs(speedup[0]) <= 0.05
    assert speedup[-1] >= 0.15
    assert all(later >= earlier for earlier, later in zip(speedup, speedup[1:]))


def test_batch_sweep_has_one_placement_crossover(
    moe_model: ModelSpec,
    moe_batch: BatchSpec,
    moe_config: ParallelismConfig,
    topo128: Topology,
) -> None:
    """Shrinking the batch hands the lead from DP-out to PP-out exactly once.

    Runs on the MoE workload: each of its microbatches sends far fewer
    pipeline bytes across buildings than one iteration's DP sync, so the
    switch falls between 2 and 32 microbatches. The dense workload sends as
    much per microbatch as its whole DP sync, which puts its switch below
    the smallest feasible count (pp microbatches).
    """
    batches = [32, 64, 128, 256, 512]
    frame = run_sweep(
        SweepAxis.BATCH, batches, moe_model, moe_batch, moe_config, topo128
    )
    assert frame["feasible"].all()
    gap = placement_gap(frame).set_index("value")["pp_minus_dp_pct"]
    ordered = [gap[b] for b in batches]
    assert ordered[0] < 0
    assert ordered[-1] > 0
    assert sign_changes(ordered) == 1


def test_expert_count_hurts_dpout_more(
    moe_model: ModelSpec,
    moe_batch: BatchSpec,
    moe_config: ParallelismConfig,
    topo128: Topology,
) -> None:
    """DP-out slows with every doubling of experts; at 128 PP-out is 25% faster."""
    experts = [16, 32, 64, 128]
    frame = run_sweep(
        SweepAxis.EXPERTS, experts, moe_model, moe_batch, moe_config, topo128
    )
    dp = [times(frame, Placement.DP_OUT, "value")[e] for e in experts]
    pp = [times(frame, Placement.PP_OUT, "value")[e] for e in experts]
    assert all(later > earlier for earlier, later in zip(dp, dp[1:]))
    for i in range(1, len(experts)):
        assert dp[i] - dp[i - 1] > pp[i] - pp[i - 1]
    assert (dp[-1] - pp[-1]) / dp[-1] >= 0.25


def test_hsdp_pays_off_only_when_oversubscribed(
    dense_model: ModelSpec,
    dense_batch: BatchSpec,
    dense_config: ParallelismConfig,
    topo64: Topology,
) -> None:
    """Under DP-out FSDP wins at 1:1.33 and HSDP wins by 2-15% at 1:16."""
    frame = run_sweep(
        SweepAxis.OVERSUB,
        [1.33, 16],
        dense_model,
        dense_batch,
        dense_config,
        topo64,
        dp_schemes=[DPSchemeKind.FSDP, DPSchemeKind.HSDP],
    )
    dpout = frame[frame["placement"] == Placement.DP_OUT.value]
    seconds = dpout.set_index(["value", "dp_scheme"])["iteration_time_s"]
    assert seconds[(1.33, "FSDP")] < seconds[(1.33, "HSDP(2x2)")]
    gain = (seconds[(16, "FSDP")] - seconds[(16, "HSDP(2x2)")]) / seconds[(16, "FSDP")]
    assert 0.02 <= gain <= 0.15


def test_zbv_takes_over_from_dorapp_under_oversubscription(
    dense_model: ModelSpec,
    dense_batch: BatchSpec,
    dense_config: ParallelismConfig,
    topo64: Topology,
) -> None:
    """Dense workload under PP-out: DoraPP at 1:1.33, interleaved ZBV from 1:8 on.

    Checked on the dense workload only; with the MoE workload ZBV already
    leads at 1:1.33.
    """
    frame = run_sweep(
        SweepAxis.OVERSUB,
        [1.33, 8, 16],
        dense_model,
        dense_batch,
        dense_config,
        topo64,
        schedules=[ScheduleKind.DORAPP, ScheduleKind.INTERLEAVED_ZBV],
    )
    ppout = frame[frame["placement"] == Placement.PP_OUT.value]
    seconds = ppout.set_index(["value", "schedule"])["iteration_time_s"]
    dorapp, zbv = ScheduleKind.DORAPP.value, ScheduleKind.INTERLEAVED_ZBV.value
    assert seconds[(1.33, dorapp)] < seconds[(1.33, zbv)]
    for ratio in (8, 16):
        assert seconds[(ratio, zbv)] < seconds[(ratio, dorapp)]


def test_loss_hurts_ppout_more_at_long_distance(
    dense_model: ModelSpec,
    dense_batch: BatchSpec,
    dense_config: ParallelismConfig,
    topo64: Topology,
) -> None:
    """Going from 50 to 1000 us at 0.02% loss inflates PP-out more than DP-out."""

    def inflation(latency_us: float, loss_rate: float) -> Dict[Placement, float]:
        lossy = topo64.with_cross_building(latency_us=latency_us, loss_rate=loss_rate)
        clean = topo64.with_cross_building(latency_us=latency_us, loss_rate=0.0)
        slow = evaluate_outcome(dense_model, dense_batch, dense_config, lossy)
        fast = evaluate_outcome(dense_model, dense_batch, dense_config, clean)
        return {pl: slow.time(pl) / fast.time(pl) for pl in Placement}

    near = inflation(50, LOSS_RATE)
    far = inflation(1000, LOSS_RATE)
    growth = {pl: far[pl] / near[pl] for pl in Placement}
    assert growth[Placement.PP_OUT] > growth[Placement.DP_OUT]
    assert inflation(1000, 0.0) == {pl: 1.0 for pl in Placement}
