"""Time model for communication and compute kernels.

Units: bytes, seconds, one-way latency in microseconds, rates in Gbps
(1 Gbps = 1e9 / 8 bytes per second). rtt is twice the one-way latency.
"""

from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache
import logging
import math

import numpy as np

from .assumptions import DEFAULT_ASSUMPTIONS, Assumptions
from .placement import GroupLink
from .workload import (
    LinkTier,
    LoadBalancing,
    ModelSpec,
    ParallelismConfig,
    ScheduleKind,
    Topology,
)

logger = logging.getLogger(__name__)

BYTES_PER_GBIT = 1e9 / 8
US = 1e-6


class CollectiveKind(str, Enum):
    """Ring collectives used by data parallelism."""

    ALL_GATHER = "AllGather"
    REDUCE_SCATTER = "ReduceScatter"
    ALL_REDUCE = "AllReduce"


class Phase(str, Enum):
    """Compute phases of a model chunk."""

    FWD = "fwd"
    BWD_DX = "bwd_dx"
    BWD_DW = "bwd_dw"
    BWD_FUSED = "bwd_fused"


@dataclass(frozen=True)
class LinkProfile:
    """A classified link as seen by one GPU pair.

    Attributes:
        bandwidth_gbps: Nominal per-pair bandwidth before oversubscription
        latency_us: One-way latency
        loss_rate: Packet loss probability
        load_balancing: Multipath mode
        qp_count: Queue pairs per connection
        packet_payload: Bytes per packet
        max_inflight_packets: Outstanding packets tracked per QP
        oversubscription: Tier oversubscription x of a 1:x ratio
        path_count: Equal-cost paths available to ECMP
        tier: Topology tier the link belongs to
    """

    bandwidth_gbps: float
    latency_us: float
    loss_rate: float = 0.0
    load_balancing: LoadBalancing = LoadBalancing.PACKET_SPRAYING
    qp_count: int = 1
    packet_payload: int = 4096
    max_inflight_packets: int = 512
    oversubscription: float = 1.0
    path_count: int = 8
    tier: LinkTier = LinkTier.CROSS_BUILDING

    def __post_init__(self) -> None:
        values = (self.bandwidth_gbps, self.latency_us, self.loss_rate, self.oversubscription)
        if not all(math.isfinite(v) and v >= 0 for v in values):
            raise ValueError(f"LinkProfile fields must be finite and non-negative: {self}")
        if self.oversubscription < 1:
            raise ValueError("oversubscription must be >= 1")

    @property
    def rtt_us(self) -> float:
        """Round-trip time in microseconds."""
        return 2 * self.latency_us

    @property
    def effective_gbps(self) -> float:
        """Bandwidth left after oversubscription."""
        return self.bandwidth_gbps / self.oversubscription

    def lossless(self) -> "LinkProfile":
        """Same link with loss removed."""
        return replace(self, loss_rate=0.0)


def link_profile(topo: Topology, group: GroupLink) -> LinkProfile:
    """Build the LinkProfile a resolved group communicates over.

    Tier bandwidth, loss and oversubscription come from the topology; latency
    comes from the group (so heterogeneous building pairs are honored). NIC
    limits apply to every tier.
    """
    tier = topo.tier_link(group.tier)
    nic = topo.nic
    return LinkProfile(
        bandwidth_gbps=tier.bandwidth_gbps,
        latency_us=group.latency_us,
        loss_rate=tier.loss_rate,
        load_balancing=nic.load_balancing,
        qp_count=nic.qp_count,
        packet_payload=nic.packet_payload,
        max_inflight_packets=nic.max_inflight_packets,
        oversubscription=tier.oversubscription,
        path_count=nic.path_count,
        tier=group.tier,
    )


def latency_from_distance(
    km: float, us_per_km: float = DEFAULT_ASSUMPTIONS.us_per_km
) -> float:
    """One-way fiber latency in microseconds for a distance."""
    return km * us_per_km


def throughput_bound(message_bytes: float, rtt_us: float) -> float:
    """Latency-bounded throughput of one message, in bytes per second.

    Args:
        message_bytes: Message size
        rtt_us: Round-trip time in microseconds

    Returns:
        message_bytes / rtt

    Raises:
        ValueError: If rtt is not positive
    """
    if rtt_us <= 0:
        raise ValueError("rtt must be positive")
    return message_bytes / (rtt_us * US)


def spraying_goodput(link: LinkProfile) -> float:
    """Per-pair goodput in Gbps under packet spraying.

    The NIC tracks at most ``max_inflight_packets`` per QP, so throughput is
    capped at qp_count * window / rtt.
    """
    if link.rtt_us <= 0:
        return link.effective_gbps
    window_bytes = link.qp_count * link.max_inflight_packets * link.packet_payload
    cap_gbps = throughput_bound(window_bytes, link.rtt_us) / BYTES_PER_GBIT
    return min(link.effective_gbps, cap_gbps)


def ecmp_goodput(
    link: LinkProfile,
    concurrent_flows: int,
    path_count: int,
    seed: int = 0,
    trials: int = DEFAULT_ASSUMPTIONS.ecmp_trials,
) -> float:
    """Mean per-flow goodput in Gbps when flows are hashed onto paths.

    Each trial hashes every flow to a uniformly random path; flows sharing a
    path split its rate evenly.

    Args:
        link: Link whose effective bandwidth is the per-path rate
        concurrent_flows: Flows hashed together
        path_count: Equal-cost paths
        seed: RNG seed
        trials: Monte-Carlo trials

    Returns:
        Mean per-flow goodput

    Raises:
        ValueError: If path_count < 1
    """
    if path_count < 1:
        raise ValueError("path_count must be >= 1")
    share = _ecmp_share(max(1, concurrent_flows), path_count, seed, trials)
    return link.effective_gbps * share


@lru_cache(maxsize=1024)
def _ecmp_share(flows: int, paths: int, seed: int, trials: int) -> float:
    if flows == 1:
        return 1.0
    rng = np.random.default_rng(seed)
    choices = rng.integers(0, paths, size=(trials, flows))
    load = np.zeros((trials, paths), dtype=np.int64)
    rows = np.repeat(np.arange(trials), flows)
    np.add.at(load, (rows, choices.ravel()), 1)
    per_flow = 1.0 / np.take_along_axis(load, choices, axis=1)
    return float(per_flow.mean())


def goodput(
    link: LinkProfile, seed: int = 0, trials: int = DEFAULT_ASSUMPTIONS.ecmp_trials
) -> float:
    """Goodput in Gbps under the link's load-balancing mode."""
    if link.load_balancing == LoadBalancing.ECMP:
        return ecmp_goodput(link, link.path_count, link.path_count, seed, trials)
    return spraying_goodput(link)


def gobackn_inflation(
    p: float,
    rtt_us: float,
    window_bytes: float,
    rate: float,
    packet_payload: int = 4096,
) -> float:
    """Expected transfer-time multiplier of Go-Back-N under loss.

    With W packets in flight, efficiency is (1 - p) / (1 + p * (W - 1)) where
    W = min(window, rate * rtt / payload); the multiplier is its inverse.

    Args:
        p: Packet loss probability in [0, 1)
        rtt_us: Round-trip time in microseconds
        window_bytes: Maximum in-flight bytes
        rate: Sending rate in bytes per second
        packet_payload: Bytes per packet

    Returns:
        Multiplier >= 1

    Raises:
        ValueError: If p is outside [0, 1)
    """
    if not 0 <= p < 1:
        raise ValueError(f"loss rate must be in [0, 1), got {p}")
    if p == 0:
        return 1.0
    max_packets = window_bytes / packet_payload
    bdp_packets = rate * rtt_us * US / packet_payload
    w = max(1.0, min(max_packets, bdp_packets))
    efficiency = (1 - p) / (1 + p * (w - 1))
    return 1 / efficiency


def _link_inflation(link: LinkProfile, rate: float) -> float:
    return gobackn_inflation(
        link.loss_rate,
        link.rtt_us,
        link.max_inflight_packets * link.packet_payload,
        rate,
        link.packet_payload,
    )


def p2p_time(
    bytes_: float,
    link: LinkProfile,
    concurrency: int = 1,
    seed: int = 0,
    trials: int = DEFAULT_ASSUMPTIONS.ecmp_trials,
) -> float:
    """Send/receive completion time in seconds.

    (latency + bytes / min(goodput share, bytes / rtt)) * Go-Back-N multiplier.

    Args:
        bytes_: Message size
        link: Link profile
        concurrency: Transfers sharing the link class (static fair share)
        seed: Seed for ECMP sampling
        trials: ECMP Monte-Carlo trials

    Returns:
        Seconds
    """
    if bytes_ < 0:
        raise ValueError("bytes must be non-negative")
    rate = goodput(link, seed, trials) * BYTES_PER_GBIT / max(1, concurrency)
    multiplier = _link_inflation(link, rate)
    latency = link.latency_us * US
    if bytes_ == 0:
        return latency * multiplier
    if link.rtt_us > 0:
        rate = min(rate, throughput_bound(bytes_, link.rtt_us))
    return (latency + bytes_ / rate) * multiplier


def collective_time(
    kind: CollectiveKind,
    total_bytes: float,
    group_size: int,
    link: LinkProfile,
    concurrency: int = 1,
    seed: int = 0,
    trials: int = DEFAULT_ASSUMPTIONS.ecmp_trials,
) -> float:
    """Ring collective time in seconds.

    (n - 1) * (total_bytes / (n * rate_eff) + latency), with AllReduce paying
    the data term twice. rate_eff folds in load balancing, fair share and
    the Go-Back-N multiplier.

    Args:
        kind: Collective type
        total_bytes: Bytes of the full (unsharded) buffer
        group_size: Ring members n
        link: Link profile
        concurrency: Transfers sharing the link class
        seed: Seed for ECMP sampling
        trials: ECMP Monte-Carlo trials

    Returns:
        Seconds, 0 for a single-member group
    """
    if group_size < 1:
        raise ValueError("group size must be >= 1")
    if group_size == 1:
        return 0.0
    rate = goodput(link, seed, trials) * BYTES_PER_GBIT / max(1, concurrency)
    rate_eff = rate / _link_inflation(link, rate)
    data = total_bytes / (group_size * rate_eff)
    if kind == CollectiveKind.ALL_REDUCE:
        data *= 2
    return (group_size - 1) * (data + link.latency_us * US)


def hsdp_sync_time(
    layer_bytes: float,
    replica_groups: int,
    shard_degree: int,
    intra_link: LinkProfile,
    cross_link: LinkProfile,
) -> float:
    """Gradient synchronization time of one layer under HSDP.

    ReduceScatter inside the shard group, then an AllReduce of the per-leader
    shard (layer_bytes / shard_degree) across replica groups.
    """
    intra = collective_time(
        CollectiveKind.REDUCE_SCATTER, layer_bytes, shard_degree, intra_link
    )
    cross = collective_time(
        CollectiveKind.ALL_REDUCE,
        layer_bytes / shard_degree,
        replica_groups,
        cross_link,
    )
    return intra + cross


def split_overhead(
    schedule: ScheduleKind, assumptions: Assumptions = DEFAULT_ASSUMPTIONS
) -> float:
    """Extra compute fraction paid by split backward kernels."""
    if schedule == ScheduleKind.INTERLEAVED_ZBV:
        return assumptions.eps_zbv
    if schedule == ScheduleKind.DORAPP:
        return assumptions.eps_dora
    return 0.0


def layer_flops(model: ModelSpec, microbatch_size: int, p: ParallelismConfig) -> float:
    """Forward FLOPs of one layer on one GPU."""
    tokens = microbatch_size * model.seq_len / p.cp
    h = model.hidden_dim
    return 2 * tokens * (4 * h * h + 3 * h * model.active_ffn_dim) / p.tp


def chunk_compute_time(
    model: ModelSpec,
    chunk_layers: int,
    microbatch_size: int,
    p: ParallelismConfig,
    phase: Phase,
    topo: Topology,
    assumptions: Assumptions = DEFAULT_ASSUMPTIONS,
) -> float:
    """Duration of one chunk kernel in seconds.

    TP/CP/EP communication is folded in through the intra-zone efficiency.
    Fused backward is twice the forward; split dx and dw each cost the
    forward plus the schedule's split overhead.
    """
    flops = layer_flops(model, microbatch_size, p) * chunk_layers
    fwd = flops / (topo.gpu.effective_flops * assumptions.intra_zone_efficiency)
    if phase == Phase.FWD:
        return fwd
    if phase == Phase.BWD_FUSED:
        return 2 * fwd
    return fwd * (1 + split_overhead(p.schedule, assumptions))
