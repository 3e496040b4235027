"""Rank layout and group-to-topology placement.

Ranks are laid out with TP innermost and CP next. DP-out then stacks PP
before DP, so the data-parallel dimension is outermost and spans buildings;
PP-out stacks DP before PP so pipeline stages span buildings.
"""

from dataclasses import dataclass
from functools import lru_cache
import logging
from typing import Dict, List, Optional, Sequence, Tuple

from .workload import LinkTier, ParallelismConfig, Placement, Topology

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GpuLocation:
    """Building, zone and server of one GPU."""

    building: int
    zone: int
    server: int


@dataclass(frozen=True)
class GroupLink:
    """Link class a group of GPUs communicates over.

    Attributes:
        tier: Outermost tier spanned by any pair of members
        latency_us: One-way latency; for cross-building groups the largest
            pairwise entry of the latency matrix
        buildings: Buildings the group touches
    """

    tier: LinkTier
    latency_us: float
    buildings: Tuple[int, ...]


def locate_gpu(topo: Topology, gpu: int) -> GpuLocation:
    """Find the building, zone and server of a global GPU index.

    Args:
        topo: Topology
        gpu: Global GPU index

    Returns:
        Location of the GPU

    Raises:
        ValueError: If the index is outside the topology
    """
    start = 0
    for b, building in enumerate(topo.buildings):
        if gpu < start + building.gpu_count:
            zone = (gpu - start) // building.gpus_per_zone
            return GpuLocation(b, zone, gpu // topo.gpu.gpus_per_server)
        start += building.gpu_count
    raise ValueError(f"GPU {gpu} outside topology of {start} GPUs")


def tier_between(topo: Topology, a: int, b: int) -> LinkTier:
    """Tier of the link between two GPUs."""
    la, lb = locate_gpu(topo, a), locate_gpu(topo, b)
    if la.building != lb.building:
        return LinkTier.CROSS_BUILDING
    if la.zone != lb.zone:
        return LinkTier.CROSS_ZONE
    if la.server != lb.server:
        return LinkTier.INTRA_ZONE
    return LinkTier.INTRA_SERVER


def gpu_index(p: ParallelismConfig, placement: Placement, stage: int, dp_rank: int) -> int:
    """Global index of the first GPU (tp=cp=0) of a (stage, dp rank) pair."""
    inner = p.tp * p.cp
    if placement == Placement.DP_OUT:
        return inner * (stage + p.pp * dp_rank)
    return inner * (dp_rank + p.dp * stage)


def group_link(topo: Topology, gpus: Sequence[int]) -> GroupLink:
    """Classify the link a group of GPUs communicates over.

    Args:
        topo: Topology
        gpus: Member GPU indices

    Returns:
        GroupLink with the outermost tier spanned
    """
    tier = LinkTier.INTRA_SERVER
    latency = 0.0
    matrix = topo.latency_matrix
    buildings = sorted({locate_gpu(topo, g).building for g in gpus})
    for i, a in enumerate(gpus):
        for b in gpus[i + 1 :]:
            t = tier_between(topo, a, b)
            if t.rank > tier.rank:
                tier = t
    if tier == LinkTier.CROSS_BUILDING:
        latency = max(matrix[x][y] for x in buildings for y in buildings)
    else:
        latency = topo.tier_link(tier).latency_us
    return GroupLink(tier, latency, tuple(buildings))


@dataclass(frozen=True)
class GroupPlacement:
    """Link classes traversed by every parallel dimension under one placement.

    Attributes:
        placement: DP-out or PP-out
        tp: Tier of a TP group
        cp: Tier of a CP group
        dp: Link of the full DP group
        shard: Link of the HSDP shard group (the DP group under FSDP)
        replica: Link across HSDP replica leaders, None unless hierarchical
        stage_links: Link between the representative GPUs of two stages, keyed
            by (from stage, to stage) for every adjacent and wrap-around pair
    """

    placement: Placement
    tp: LinkTier
    cp: LinkTier
    dp: GroupLink
    shard: GroupLink
    replica: Optional[GroupLink]
    stage_links: Dict[Tuple[int, int], GroupLink]

    def stage_link(self, src: int, dst: int) -> GroupLink:
        """Link between two pipeline stages."""
        key = (min(src, dst), max(src, dst))
        return self.stage_links[key]


def resolve_placement(
    topo: Topology, p: ParallelismConfig, placement: Placement
) -> GroupPlacement:
    """Resolve every group of a configuration onto the topology.

    Args:
        topo: Topology
        p: Parallelism configuration
        placement: Placement to resolve

    Returns:
        GroupPlacement for the placement
    """
    return _resolve_cached(topo, p, placement)


@lru_cache(maxsize=256)
def _resolve_cached(
    topo: Topology, p: ParallelismConfig, placement: Placement
) -> GroupPlacement:
    tp_tier = group_link(topo, list(range(p.tp))).tier
    cp_tier = group_link(topo, [k * p.tp for k in range(p.cp)]).tier
    members = [gpu_index(p, placement, 0, d) for d in range(p.dp)]
    dp_link = group_link(topo, members)
    shard_link = dp_link
    replica_link = None
    if p.is_hierarchical:
        s, r = p.shard_degree, p.replica_groups
        shard_link = group_link(topo, members[:s])
        replica_link = group_link(topo, [members[k * s] for k in range(r)])
    stage_links: Dict[Tuple[int, int], GroupLink] = {}
    for a in range(p.pp):
        for b in range(a + 1, p.pp):
            stage_links[(a, b)] = group_link(
                topo,
                [gpu_index(p, placement, a, 0), gpu_index(p, placement, b, 0)],
            )
    return GroupPlacement(
        placement=placement,
        tp=tp_tier,
        cp=cp_tier,
        dp=dp_link,
        shard=shard_link,
        replica=replica_link,
        stage_links=stage_links,
    )


def placement_violations(
    topo: Topology, p: ParallelismConfig, placement: Placement
) -> List[str]:
    """Layout problems of a placement: inner blocks that straddle buildings.

    Under DP-out a whole replica (tp*cp*pp GPUs) must sit in one building;
    under PP-out a whole stage (tp*cp*dp GPUs) must.
    """
    if p.world_size != topo.world_size:
        return []
    inner = p.tp * p.cp
    if placement == Placement.DP_OUT:
        block, count, what = inner * p.pp, p.dp, "replica"
    else:
        block, count, what = inner * p.dp, p.pp, "stage"
    for k in range(count):
        first = locate_gpu(topo, k * block).building
        last = locate_gpu(topo, (k + 1) * block - 1).building
        if first != last:
            return [f"{placement.value}: {what} {k} straddles buildings {first} and {last}"]
    return []
