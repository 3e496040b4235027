"""Closed-form communication volumes for PP and DP traffic.

Formulas return element counts; byte totals multiply by the model's
``bytes_per_element``. Ring overheads belong to the link model, not here.
"""

from dataclasses import dataclass
import logging
from typing import List, Tuple

from .feasibility import num_microbatches
from .placement import resolve_placement
from .workload import (
    BatchSpec,
    LinkTier,
    ModelSpec,
    ParallelismConfig,
    Placement,
    Topology,
)

logger = logging.getLogger(__name__)

Boundary = Tuple[int, int]


def pp_p2p_elements(model: ModelSpec, batch: BatchSpec, p: ParallelismConfig) -> float:
    """Elements in one activation (or activation-gradient) transfer.

    2 * (H / tp) * (S / cp) * m
    """
    return (
        2
        * (model.hidden_dim / p.tp)
        * (model.seq_len / p.cp)
        * batch.microbatch_size
    )


def stage_boundaries(p: ParallelismConfig) -> List[Boundary]:
    """Adjacent stage pairs plus the last-to-first wrap pair, as (low, high)."""
    if p.pp < 2:
        return []
    pairs = [(s, s + 1) for s in range(p.pp - 1)]
    if p.pp > 2:
        pairs.append((0, p.pp - 1))
    return pairs


def chunks_crossing(p: ParallelismConfig, boundary: Boundary) -> int:
    """Consecutive chunk pairs whose stages sit on either side of a boundary."""
    stages = p.chunk_stages
    low, high = boundary
    crossings = 0
    for a, b in zip(stages, stages[1:]):
        if a != b and (min(a, b), max(a, b)) == (low, high):
            crossings += 1
    return crossings


def pp_p2p_count(batch: BatchSpec, p: ParallelismConfig, boundary: Boundary) -> int:
    """Transfers per iteration across one stage boundary.

    Every crossing chunk pair moves one activation forward and one gradient
    backward per microbatch.
    """
    if p.pp < 2:
        return 0
    return 2 * num_microbatches(batch, p) * chunks_crossing(p, boundary)


def dp_layer_elements(model: ModelSpec, p: ParallelismConfig) -> float:
    """Elements exchanged per layer per direction by data parallelism.

    Dense: (4H^2 + 3HF) / tp. MoE: (4H^2 + 3H * F_e * E / ep) / tp.
    """
    return model.sharded_layer_elements(p.tp, p.ep)


@dataclass(frozen=True)
class CrossBuildingTraffic:
    """Cross-building bytes per iteration for one pipeline replica."""

    pp_bytes: int
    dp_bytes: int

    @property
    def total_bytes(self) -> int:
        """PP plus DP bytes."""
        return self.pp_bytes + self.dp_bytes


def cross_building_traffic(
    model: ModelSpec,
    batch: BatchSpec,
    p: ParallelismConfig,
    topo: Topology,
    placement: Placement,
) -> CrossBuildingTraffic:
    """Break down cross-building bytes into PP and DP shares.

    Args:
        model: Model architecture
        batch: Batch sizes
        p: Parallelism configuration
        topo: Topology
        placement: Placement whose links to classify

    Returns:
        Cross-building traffic of one iteration
    """
    groups = resolve_placement(topo, p, placement)
    bpe = model.bytes_per_element

    pp_bytes = 0.0
    send_bytes = pp_p2p_elements(model, batch, p) * bpe
    for boundary in stage_boundaries(p):
        if groups.stage_link(*boundary).tier == LinkTier.CROSS_BUILDING:
            pp_bytes += pp_p2p_count(batch, p, boundary) * send_bytes

    dp_bytes = 0.0
    if p.dp > 1:
        layer_bytes = dp_layer_elements(model, p) * bpe
        if groups.shard.tier == LinkTier.CROSS_BUILDING:
            dp_bytes += 2 * model.num_layers * layer_bytes
        if groups.replica is not None and groups.replica.tier == LinkTier.CROSS_BUILDING:
            dp_bytes += model.num_layers * layer_bytes / p.shard_degree
    return CrossBuildingTraffic(round(pp_bytes), round(dp_bytes))


def cross_building_bytes(
    model: ModelSpec,
    batch: BatchSpec,
    p: ParallelismConfig,
    topo: Topology,
    placement: Placement,
) -> int:
    """Bytes per iteration crossing buildings under a placement.

    DP-out traffic is a per-layer constant; PP-out traffic grows linearly with
    the number of microbatches.
    """
    return cross_building_traffic(model, batch, p, topo, placement).total_bytes
