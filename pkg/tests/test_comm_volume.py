"""Tests for closed-form PP and DP traffic volumes."""

from src.comm_volume import (
    chunks_crossing,
    cross_building_traffic,
    dp_layer_elements,
    pp_p2p_count,
    pp_p2p_elements,
    stage_boundaries,
)
from src.workload import (
    BatchSpec,
    ModelSpec,
    ParallelismConfig,
    Placement,
    ScheduleKind,
    Topology,
)

DENSE_P2P = 2 * (6144 // 8) * 8192 * 4
DENSE_LAYER = (4 * 6144**2 + 3 * 6144 * 20480) // 8


def test_p2p_elements(
    dense_model: ModelSpec, dense_batch: BatchSpec, dense_config: ParallelismConfig
) -> None:
    """One transfer carries 2 * H/tp * S/cp * m elements."""
    assert pp_p2p_elements(dense_model, dense_batch, dense_config) == DENSE_P2P == 50331648


def test_stage_boundaries() -> None:
    """Adjacent pairs plus the wrap pair once pp > 2."""
    two = ParallelismConfig(pp=2, chunk_partition=(1, 1))
    four = ParallelismConfig(pp=4, chunk_partition=(1, 1, 1, 1))
    assert stage_boundaries(two) == [(0, 1)]
    assert stage_boundaries(four) == [(0, 1), (1, 2), (2, 3), (0, 3)]
    assert stage_boundaries(ParallelismConfig(chunk_partition=(4,))) == []


def test_chunks_crossing_by_schedule() -> None:
    """Round-robin wraps once per pass; the V never wraps."""
    dora = ParallelismConfig(pp=4, schedule=ScheduleKind.DORAPP, chunk_partition=(1,) * 8)
    zbv = ParallelismConfig(
        pp=4, schedule=ScheduleKind.INTERLEAVED_ZBV, chunk_partition=(1,) * 8
    )
    assert chunks_crossing(dora, (0, 3)) == 1
    assert chunks_crossing(dora, (0, 1)) == 2
    assert chunks_crossing(zbv, (0, 3)) == 0
    assert chunks_crossing(zbv, (0, 1)) == 2


def test_p2p_count(dense_batch: BatchSpec, dense_config: ParallelismConfig) -> None:
    """31 crossing chunk pairs, 11 microbatches, both directions."""
    assert pp_p2p_count(dense_batch, dense_config, (0, 1)) == 2 * 11 * 31


def test_dp_layer_elements(
    dense_model: ModelSpec, moe_model: ModelSpec, moe_config: ParallelismConfig
) -> None:
    """Dense layers shard by tp; expert weights also shard by ep."""
    dense = ParallelismConfig(tp=8, chunk_partition=(32,))
    assert dp_layer_elements(dense_model, dense) == DENSE_LAYER
    expected = (4 * 2048**2 + 3 * 2048 * 2048 * 128 / 16) / 4
    assert dp_layer_elements(moe_model, moe_config) == expected


def test_cross_building_split(
    dense_model: ModelSpec,
    dense_batch: BatchSpec,
    dense_config: ParallelismConfig,
    topo64: Topology,
) -> None:
    """DP-out moves only DP bytes across buildings, PP-out only PP bytes."""
    dp_out = cross_building_traffic(
        dense_model, dense_batch, dense_config, topo64, Placement.DP_OUT
    )
    pp_out = cross_building_traffic(
        dense_model, dense_batch, dense_config, topo64, Placement.PP_OUT
    )
    assert dp_out.pp_bytes == 0
    assert dp_out.dp_bytes == 2 * 32 * DENSE_LAYER * 2 == 8455716864
    assert pp_out.dp_bytes == 0
    assert pp_out.pp_bytes == 682 * DENSE_P2P * 2 == 68652367872


def test_ppout_bytes_grow_with_microbatches(
    dense_model: ModelSpec, dense_config: ParallelismConfig, topo64: Topology
) -> None:
    """Doubling the global batch doubles PP-out traffic and leaves DP-out alone."""
    small = BatchSpec(global_batch_size=96, microbatch_size=4)
    large = BatchSpec(global_batch_size=192, microbatch_size=4)

    def total(batch: BatchSpec, placement: Placement) -> int:
        return cross_building_traffic(
            dense_model, batch, dense_config, topo64, placement
        ).total_bytes

    assert total(large, Placement.PP_OUT) == 2 * total(small, Placement.PP_OUT)
    assert total(large, Placement.DP_OUT) == total(small, Placement.DP_OUT)
