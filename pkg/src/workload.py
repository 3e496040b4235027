"""Domain types: model, batch, parallelism configuration and topology.

All types are immutable pydantic models. Unknown fields are rejected so a
typo in an input document fails loudly instead of silently taking a default.
"""

from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

GIB = 2**30


class _Document(BaseModel):
    """Frozen, closed-schema base for every ingested document."""

    model_config = ConfigDict(extra="forbid", frozen=True)


class Placement(str, Enum):
    """Which dimension sits on the cross-building network layer."""

    DP_OUT = "DPOut"
    PP_OUT = "PPOut"


class ScheduleKind(str, Enum):
    """Pipeline schedules the builders know how to lay out."""

    ONE_F_ONE_B = "OneFOneB"
    DORAPP = "DoraPP"
    INTERLEAVED_ZBV = "InterleavedZBV"


class DPSchemeKind(str, Enum):
    """Data-parallel sharding schemes."""

    FSDP = "FSDP"
    HSDP = "HSDP"


class LoadBalancing(str, Enum):
    """Multipath load-balancing modes on cross-building links."""

    ECMP = "ECMP"
    PACKET_SPRAYING = "PacketSpraying"


class LinkTier(str, Enum):
    """Topology tiers ordered from innermost to outermost."""

    INTRA_SERVER = "intra_server"
    INTRA_ZONE = "intra_zone"
    CROSS_ZONE = "cross_zone"
    CROSS_BUILDING = "cross_building"

    @property
    def rank(self) -> int:
        """Position of the tier, 0 for innermost."""
        return _TIER_ORDER.index(self)


_TIER_ORDER: List[LinkTier] = [
    LinkTier.INTRA_SERVER,
    LinkTier.INTRA_ZONE,
    LinkTier.CROSS_ZONE,
    LinkTier.CROSS_BUILDING,
]


class ModelSpec(_Document):
    """Transformer architecture parameters.

    ``num_experts == 0`` means a dense model using ``ffn_dim``; otherwise the
    FFN is replaced by ``num_experts`` experts of width ``expert_ffn_dim`` with
    ``top_k`` routed per token.
    """

    name: Optional[str] = None
    num_layers: int = Field(gt=0)
    hidden_dim: int = Field(gt=0)
    ffn_dim: int = Field(default=0, ge=0)
    seq_len: int = Field(gt=0)
    num_experts: int = Field(default=0, ge=0)
    expert_ffn_dim: int = Field(default=0, ge=0)
    top_k: int = Field(default=0, ge=0)
    bytes_per_element: int = Field(default=2, gt=0)

    @model_validator(mode="after")
    def _check_ffn(self) -> "ModelSpec":
        if self.num_experts == 0:
            if self.ffn_dim <= 0:
                raise ValueError("dense models need ffn_dim > 0")
        else:
            if self.expert_ffn_dim <= 0:
                raise ValueError("MoE models need expert_ffn_dim > 0")
            if not 1 <= self.top_k <= self.num_experts:
                raise ValueError("top_k must be in [1, num_experts]")
        return self

    @property
    def is_moe(self) -> bool:
        """True when the FFN is a mixture of experts."""
        return self.num_experts > 0

    @property
    def active_ffn_dim(self) -> int:
        """FFN width touched by one token (top_k experts for MoE)."""
        if self.is_moe:
            return self.top_k * self.expert_ffn_dim
        return self.ffn_dim

    @property
    def params_per_layer(self) -> int:
        """Unsharded parameter count of one transformer layer."""
        h = self.hidden_dim
        if self.is_moe:
            return 4 * h * h + 3 * h * self.expert_ffn_dim * self.num_experts
        return 4 * h * h + 3 * h * self.ffn_dim

    def sharded_layer_elements(self, tp: int, ep: int = 1) -> float:
        """Parameters of one layer held per GPU after TP (and EP for experts)."""
        h = self.hidden_dim
        if self.is_moe:
            ffn = 3 * h * self.expert_ffn_dim * self.num_experts / ep
        else:
            ffn = 3 * h * self.ffn_dim
        return (4 * h * h + ffn) / tp


class BatchSpec(_Document):
    """Global batch and microbatch sizes, in sequences."""

    global_batch_size: int = Field(gt=0)
    microbatch_size: int = Field(ge=1)

    @model_validator(mode="after")
    def _check_sizes(self) -> "BatchSpec":
        if self.global_batch_size < self.microbatch_size:
            raise ValueError("global_batch_size must be >= microbatch_size")
        return self


class DPScheme(_Document):
    """FSDP, or HSDP with ``replica_groups`` groups each sharded ``shard_degree`` ways."""

    kind: DPSchemeKind = DPSchemeKind.FSDP
    replica_groups: int = Field(default=1, ge=1)
    shard_degree: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _check_kind(self) -> "DPScheme":
        if self.kind == DPSchemeKind.FSDP and self.replica_groups != 1:
            raise ValueError("FSDP has exactly one replica group")
        return self

    @classmethod
    def fsdp(cls) -> "DPScheme":
        """Plain fully sharded data parallelism."""
        return cls()

    @classmethod
    def hsdp(cls, replica_groups: int, shard_degree: int) -> "DPScheme":
        """Hierarchical sharding over ``replica_groups`` x ``shard_degree``."""
        return cls(
            kind=DPSchemeKind.HSDP,
            replica_groups=replica_groups,
            shard_degree=shard_degree,
        )

    def label(self) -> str:
        """Short display form, e.g. ``FSDP`` or ``HSDP(2x2)``."""
        if self.kind == DPSchemeKind.FSDP:
            return "FSDP"
        return f"HSDP({self.replica_groups}x{self.shard_degree})"


class ParallelismConfig(_Document):
    """Degrees, placement, schedule, DP scheme and layer-to-chunk partition."""

    tp: int = Field(default=1, ge=1)
    cp: int = Field(default=1, ge=1)
    ep: int = Field(default=1, ge=1)
    pp: int = Field(default=1, ge=1)
    dp: int = Field(default=1, ge=1)
    placement: Placement = Placement.DP_OUT
    schedule: ScheduleKind = ScheduleKind.ONE_F_ONE_B
    dp_scheme: DPScheme = Field(default_factory=DPScheme.fsdp)
    chunk_partition: Tuple[int, ...] = Field(min_length=1)

    @model_validator(mode="after")
    def _check_partition(self) -> "ParallelismConfig":
        if any(size <= 0 for size in self.chunk_partition):
            raise ValueError("chunk sizes must be positive")
        if self.dp_scheme.kind == DPSchemeKind.HSDP:
            r = self.dp_scheme.replica_groups
            s = self.dp_scheme.shard_degree
            if s is None:
                if self.dp % r:
                    raise ValueError("replica_groups must divide dp")
            elif r * s != self.dp:
                raise ValueError("replica_groups * shard_degree must equal dp")
        return self

    @property
    def world_size(self) -> int:
        """GPUs used by the configuration."""
        return self.tp * self.cp * self.pp * self.dp

    @property
    def num_chunks(self) -> int:
        """Number of model chunks."""
        return len(self.chunk_partition)

    @property
    def replica_groups(self) -> int:
        """Replica groups r (1 under FSDP)."""
        return self.dp_scheme.replica_groups

    @property
    def shard_degree(self) -> int:
        """Shard degree s of parameters and gradients."""
        return self.dp // self.dp_scheme.replica_groups

    @property
    def is_hierarchical(self) -> bool:
        """True for HSDP with more than one replica group."""
        return (
            self.dp_scheme.kind == DPSchemeKind.HSDP
            and self.dp_scheme.replica_groups > 1
        )

    @property
    def chunk_stages(self) -> Tuple[int, ...]:
        """Stage index of every chunk, following the schedule's assignment rule."""
        return assign_chunk_stages(self.schedule, self.num_chunks, self.pp)

    def stage_layers(self) -> List[int]:
        """Layers held by each stage."""
        totals = [0] * self.pp
        for size, stage in zip(self.chunk_partition, self.chunk_stages):
            if 0 <= stage < self.pp:
                totals[stage] += size
        return totals

    def label(self) -> str:
        """Compact label, e.g. ``8-1-1-2-4 DPOut DoraPP FSDP [1x32]``."""
        degrees = f"{self.tp}-{self.cp}-{self.ep}-{self.pp}-{self.dp}"
        sizes = sorted(set(self.chunk_partition))
        if len(sizes) == 1:
            chunks = f"[{sizes[0]}x{self.num_chunks}]"
        else:
            chunks = "[" + ",".join(str(s) for s in self.chunk_partition) + "]"
        return (
            f"{degrees} {self.placement.value} {self.schedule.value} "
            f"{self.dp_scheme.label()} {chunks}"
        )


def assign_chunk_stages(
    schedule: ScheduleKind, num_chunks: int, pp: int
) -> Tuple[int, ...]:
    """Map chunk index to stage index.

    1F1B places chunk i on stage i. DoraPP assigns round-robin (i mod pp).
    Interleaved ZBV walks first-to-last then last-to-first, so consecutive
    chunks on the turn share a stage and no chunk wraps from the last stage
    back to the first.

    Args:
        schedule: Pipeline schedule
        num_chunks: Number of model chunks
        pp: Pipeline stages

    Returns:
        Tuple of stage indices, one per chunk
    """
    if schedule == ScheduleKind.ONE_F_ONE_B:
        return tuple(range(num_chunks))
    if schedule == ScheduleKind.DORAPP:
        return tuple(i % pp for i in range(num_chunks))
    stages = []
    for i in range(num_chunks):
        k = i % (2 * pp)
        stages.append(k if k < pp else 2 * pp - 1 - k)
    return tuple(stages)


class TierLink(_Document):
    """Nominal link properties of one topology tier."""

    bandwidth_gbps: float = Field(gt=0)
    latency_us: float = Field(ge=0)
    loss_rate: float = Field(default=0.0, ge=0.0, lt=1.0)
    oversubscription: float = Field(default=1.0, ge=1.0)


class BuildingSpec(_Document):
    """One building: its GPU count split evenly across zones."""

    gpu_count: int = Field(gt=0)
    zones: int = Field(default=1, gt=0)

    @model_validator(mode="after")
    def _check_zones(self) -> "BuildingSpec":
        if self.gpu_count % self.zones:
            raise ValueError("gpu_count must be divisible by zones")
        return self

    @property
    def gpus_per_zone(self) -> int:
        """GPUs in each zone of the building."""
        return self.gpu_count // self.zones


class NicSpec(_Document):
    """NIC transport limits and the multipath mode in use."""

    packet_payload: int = Field(default=4096, gt=0)
    max_inflight_packets: int = Field(default=512, gt=0)
    qp_count: int = Field(default=1, ge=1)
    load_balancing: LoadBalancing = LoadBalancing.PACKET_SPRAYING
    path_count: int = Field(default=8, ge=1)


class GpuSpec(_Document):
    """Accelerator capacity."""

    hbm_bytes: int = Field(default=80 * GIB, gt=0)
    effective_flops: float = Field(default=989e12, gt=0)
    gpus_per_server: int = Field(default=8, ge=1)


class Topology(_Document):
    """Hierarchical building/zone/server description with per-tier links.

    ``cross_building_latency_us`` is an optional symmetric matrix with a zero
    diagonal; when absent every building pair uses
    ``cross_building.latency_us``.
    """

    name: Optional[str] = None
    buildings: Tuple[BuildingSpec, ...] = Field(min_length=1)
    intra_server: TierLink
    intra_zone: TierLink
    cross_zone: TierLink
    cross_building: TierLink
    cross_building_latency_us: Optional[Tuple[Tuple[float, ...], ...]] = None
    nic: NicSpec = Field(default_factory=NicSpec)
    gpu: GpuSpec = Field(default_factory=GpuSpec)

    @model_validator(mode="after")
    def _check_matrix(self) -> "Topology":
        matrix = self.cross_building_latency_us
        if matrix is None:
            return self
        n = len(self.buildings)
        if len(matrix) != n or any(len(row) != n for row in matrix):
            raise ValueError(f"cross_building_latency_us must be {n}x{n}")
        for i in range(n):
            if matrix[i][i] != 0:
                raise ValueError("cross_building_latency_us diagonal must be zero")
            for j in range(n):
                if matrix[i][j] < 0:
                    raise ValueError("latencies must be non-negative")
                if matrix[i][j] != matrix[j][i]:
                    raise ValueError("cross_building_latency_us must be symmetric")
        return self

    @property
    def world_size(self) -> int:
        """Total GPUs across buildings."""
        return sum(b.gpu_count for b in self.buildings)

    @property
    def gpus_per_zone(self) -> int:
        """Smallest zone size in the topology."""
        return min(b.gpus_per_zone for b in self.buildings)

    @property
    def latency_matrix(self) -> Tuple[Tuple[float, ...], ...]:
        """Resolved one-way cross-building latency matrix in microseconds."""
        if self.cross_building_latency_us is not None:
            return self.cross_building_latency_us
        n = len(self.buildings)
        lat = self.cross_building.latency_us
        return tuple(
            tuple(0.0 if i == j else lat for j in range(n)) for i in range(n)
        )

    @property
    def max_cross_latency_us(self) -> float:
        """Largest one-way latency between any two buildings (0 for one building)."""
        return max((max(row) for row in self.latency_matrix), default=0.0)

    def tier_link(self, tier: LinkTier) -> TierLink:
        """Nominal link of a tier."""
        link: TierLink = getattr(self, tier.value)
        return link

    def with_cross_building(self, **updates: Any) -> "Topology":
        """Copy with cross-building link fields replaced.

        Setting ``latency_us`` also resets a uniform latency matrix.

        Args:
            **updates: TierLink fields to override

        Returns:
            New topology
        """
        link = self.cross_building.model_copy(update=updates)
        changes: Dict[str, Any] = {"cross_building": link}
        if "latency_us" in updates:
            changes["cross_building_latency_us"] = None
        return self.model_copy(update=changes)

    def with_latency_matrix(
        self, matrix: Tuple[Tuple[float, ...], ...]
    ) -> "Topology":
        """Copy with an explicit heterogeneous latency matrix (validated)."""
        data = self.model_dump()
        data["cross_building_latency_us"] = matrix
        return Topology.model_validate(data)
