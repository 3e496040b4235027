"""Network-layer recommendations for a topology and a chosen configuration."""

from dataclasses import dataclass, field
from enum import Enum
import logging
import math
from typing import Any, Dict, Optional, Tuple

from .assumptions import DEFAULT_ASSUMPTIONS, Assumptions
from .link_model import BYTES_PER_GBIT, throughput_bound
from .placement import resolve_placement
from .workload import LoadBalancing, ParallelismConfig, Topology

logger = logging.getLogger(__name__)


class CongestionControl(str, Enum):
    """Congestion control setting on cross-building links."""

    ENABLED = "Enabled"
    DISABLED = "Disabled"


class LossMitigation(str, Enum):
    """Loss handling on cross-building links."""

    NONE = "None"
    SELECTIVE_REDUNDANCY = "SelectiveRedundancy"


class ChunkingHint(str, Enum):
    """Whether chunk sizes should lean toward a distant building."""

    BALANCED = "Balanced"
    IMBALANCED = "ImbalancedTowardDistancedBuilding"


@dataclass
class NetworkRecommendation:
    """Recommended network settings, each with a one-line rationale.

    Attributes:
        load_balancing: ECMP or PacketSpraying
        required_qp_count: QPs per connection needed for spraying to reach line rate
        congestion_control: Enabled or Disabled
        loss_mitigation: None or SelectiveRedundancy
        chunking_hint: Balanced or ImbalancedTowardDistancedBuilding
        rationale: Field name to machine-readable ``key=value`` reasoning
        suggested_partition: Imbalanced partition for the configuration, if hinted
        lossless_iteration_time_s: Iteration time with redundancy hiding losses
    """

    load_balancing: LoadBalancing
    required_qp_count: int
    congestion_control: CongestionControl
    loss_mitigation: LossMitigation
    chunking_hint: ChunkingHint
    rationale: Dict[str, str] = field(default_factory=dict)
    suggested_partition: Optional[Tuple[int, ...]] = None
    lossless_iteration_time_s: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        """JSON-ready form."""
        return {
            "load_balancing": self.load_balancing.value,
            "required_qp_count": self.required_qp_count,
            "congestion_control": self.congestion_control.value,
            "loss_mitigation": self.loss_mitigation.value,
            "chunking_hint": self.chunking_hint.value,
            "rationale": dict(sorted(self.rationale.items())),
            "suggested_partition": (
                list(self.suggested_partition) if self.suggested_partition else None
            ),
            "lossless_iteration_time_s": self.lossless_iteration_time_s,
        }


def imbalanced_partition(
    num_layers: int, num_chunks: int, factor: int = 2, heavy: int = 0
) -> Tuple[int, ...]:
    """Partition in which one chunk carries ``factor`` times the layers of the rest.

    Sizes are rounded by largest remainder so they sum to ``num_layers``.

    Args:
        num_layers: Model layers
        num_chunks: Number of chunks
        factor: Weight of the heavy chunk relative to the others
        heavy: Index of the heavy chunk

    Returns:
        Chunk sizes, each at least 1

    Raises:
        ValueError: If there are fewer layers than chunks
    """
    if num_layers < num_chunks:
        raise ValueError(f"{num_layers} layers cannot fill {num_chunks} chunks")
    weights = [factor if i == heavy else 1 for i in range(num_chunks)]
    total = sum(weights)
    shares = [num_layers * w / total for w in weights]
    sizes = [max(1, math.floor(s)) for s in shares]
    order = sorted(range(num_chunks), key=lambda i: (-(shares[i] - math.floor(shares[i])), i))
    k = 0
    while sum(sizes) < num_layers:
        sizes[order[k % num_chunks]] += 1
        k += 1
    while sum(sizes) > num_layers:
        big = max(range(num_chunks), key=lambda i: (sizes[i], i != heavy))
        sizes[big] -= 1
    return tuple(sizes)


def _heavy_chunk(topo: Topology, config: ParallelismConfig) -> int:
    """First chunk on the sending side of the slowest stage boundary."""
    groups = resolve_placement(topo, config, config.placement)
    if not groups.stage_links:
        return 0
    (a, _), _ = max(groups.stage_links.items(), key=lambda kv: (kv[1].latency_us, -kv[0][0]))
    return config.chunk_stages.index(a)


def recommend_network(
    topo: Topology,
    config: Optional[ParallelismConfig] = None,
    assumptions: Assumptions = DEFAULT_ASSUMPTIONS,
    num_layers: Optional[int] = None,
) -> NetworkRecommendation:
    """Recommend load balancing, congestion control, loss handling and chunking.

    Args:
        topo: Topology
        config: Chosen configuration, used for the imbalanced partition
        assumptions: Thresholds
        num_layers: Model layers (defaults to the configuration's total)

    Returns:
        The recommendation
    """
    link = topo.cross_building
    nic = topo.nic
    latency = topo.max_cross_latency_us
    rationale: Dict[str, str] = {}

    if len(topo.buildings) < 2 or latency <= 0:
        lb, qps = LoadBalancing.PACKET_SPRAYING, nic.qp_count
        rationale["load_balancing"] = "single_building=true"
    else:
        window = nic.max_inflight_packets * nic.packet_payload
        per_qp = throughput_bound(window, 2 * latency) / BYTES_PER_GBIT
        qps = max(1, math.ceil(link.bandwidth_gbps / per_qp))
        cap = nic.qp_count * per_qp
        if cap >= link.bandwidth_gbps:
            lb = LoadBalancing.PACKET_SPRAYING
            rationale["load_balancing"] = (
                f"window_cap_gbps={cap:.3f}>=line_rate_gbps={link.bandwidth_gbps:g};"
                f"qp_count={nic.qp_count}"
            )
        else:
            lb = LoadBalancing.ECMP
            rationale["load_balancing"] = (
                f"window_cap_gbps={cap:.3f}<line_rate_gbps={link.bandwidth_gbps:g};"
                f"spraying_needs_qp>={qps}"
            )

    if latency > assumptions.cc_latency_threshold_us:
        cc = CongestionControl.DISABLED
        op = ">"
    else:
        cc = CongestionControl.ENABLED
        op = "<="
    rationale["congestion_control"] = (
        f"max_latency_us={latency:g}{op}threshold_us={assumptions.cc_latency_threshold_us:g}"
    )

    lossy = link.loss_rate > 0
    if latency > assumptions.redundancy_latency_threshold_us and lossy:
        loss = LossMitigation.SELECTIVE_REDUNDANCY
    else:
        loss = LossMitigation.NONE
    rationale["loss_mitigation"] = (
        f"max_latency_us={latency:g};"
        f"threshold_us={assumptions.redundancy_latency_threshold_us:g};"
        f"loss_rate={link.loss_rate:g}"
    )

    pairs = [
        value
        for i, row in enumerate(topo.latency_matrix)
        for j, value in enumerate(row)
        if i != j
    ]
    spread = (max(pairs) - min(pairs)) if pairs else 0.0
    heterogeneous = spread > 0
    if heterogeneous and latency >= assumptions.imbalance_latency_threshold_us:
        hint = ChunkingHint.IMBALANCED
    else:
        hint = ChunkingHint.BALANCED
    rationale["chunking_hint"] = (
        f"latency_spread_us={spread:g};max_latency_us={latency:g};"
        f"threshold_us={assumptions.imbalance_latency_threshold_us:g}"
    )

    suggested = None
    if hint == ChunkingHint.IMBALANCED and config is not None:
        layers = num_layers or sum(config.chunk_partition)
        if layers >= config.num_chunks:
            suggested = imbalanced_partition(
                layers,
                config.num_chunks,
                assumptions.imbalance_factor,
                _heavy_chunk(topo, config),
            )

    rec = NetworkRecommendation(
        load_balancing=lb,
        required_qp_count=qps,
        congestion_control=cc,
        loss_mitigation=loss,
        chunking_hint=hint,
        rationale=rationale,
        suggested_partition=suggested,
    )
    logger.info(
        "Network recommendation: %s, CC %s, %s, %s",
        lb.value,
        cc.value,
        loss.value,
        hint.value,
    )
    return rec
