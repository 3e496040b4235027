"""Kernel dependency graph shared by the schedule builders and the reconstructor."""

from dataclasses import dataclass, field
from enum import Enum
import logging
from typing import Any, Dict, Iterator, List, Optional, Tuple

import networkx as nx

from .errors import CycleError
from .link_model import CollectiveKind, Phase
from .workload import LinkTier, Placement

logger = logging.getLogger(__name__)


class KernelKind(str, Enum):
    """Kernel families."""

    CHUNK_COMPUTE = "ChunkCompute"
    PP_SEND = "PPSend"
    DP_COLLECTIVE = "DPCollective"


class CollectiveLevel(str, Enum):
    """Where a DP collective runs."""

    FLAT = "flat"
    INTRA = "intra"
    CROSS = "cross"


@dataclass(slots=True)
class Kernel:
    """One schedulable unit of work.

    A PP send stands for the matching send/receive pair: it starts when the
    producer finishes and the consumer waits for it.

    Attributes:
        id: Position in the DAG
        kind: Kernel family
        rank: Pipeline stage that issues the kernel
        chunk: Model chunk the kernel belongs to
        microbatch: Microbatch index, -1 for DP collectives
        phase: Compute phase for chunk kernels
        dest: Destination stage of a send
        direction: ``fwd`` (activation) or ``bwd`` (gradient) for sends
        collective: Collective type for DP kernels
        level: Flat, intra-group or cross-group for DP kernels
        layer: Global layer index for DP kernels
        payload_bytes: Bytes moved (0 for compute)
        group_size: Ring size for DP collectives
        stream: Comm stream label used for fair-share counting
        parents: Kernels this one depends on
        duration_dpout: Seconds under DP-out links
        duration_ppout: Seconds under PP-out links
        tier_dpout: Link tier under DP-out
        tier_ppout: Link tier under PP-out
    """

    id: int
    kind: KernelKind
    rank: int
    chunk: int
    microbatch: int = -1
    phase: Optional[Phase] = None
    dest: int = -1
    direction: Optional[str] = None
    collective: Optional[CollectiveKind] = None
    level: Optional[CollectiveLevel] = None
    layer: int = -1
    payload_bytes: float = 0.0
    group_size: int = 1
    stream: str = "compute"
    parents: List[int] = field(default_factory=list)
    duration_dpout: Optional[float] = None
    duration_ppout: Optional[float] = None
    tier_dpout: Optional[LinkTier] = None
    tier_ppout: Optional[LinkTier] = None

    @property
    def is_compute(self) -> bool:
        """True for chunk compute kernels."""
        return self.kind == KernelKind.CHUNK_COMPUTE

    def duration(self, placement: Placement) -> Optional[float]:
        """Duration under a placement."""
        if placement == Placement.DP_OUT:
            return self.duration_dpout
        return self.duration_ppout

    def tier(self, placement: Placement) -> Optional[LinkTier]:
        """Link tier under a placement (None for compute)."""
        if placement == Placement.DP_OUT:
            return self.tier_dpout
        return self.tier_ppout

    def set_duration(self, placement: Placement, seconds: float, tier: LinkTier) -> None:
        """Record the duration and link tier under a placement."""
        if placement == Placement.DP_OUT:
            self.duration_dpout, self.tier_dpout = seconds, tier
        else:
            self.duration_ppout, self.tier_ppout = seconds, tier

    def cross_bytes(self, placement: Placement) -> float:
        """Bytes this kernel sends across buildings under a placement."""
        if self.tier(placement) == LinkTier.CROSS_BUILDING:
            return self.payload_bytes
        return 0.0

    def label(self) -> str:
        """Short human-readable name, e.g. ``F(c0,m3)`` or ``RS(l5)``."""
        if self.kind == KernelKind.CHUNK_COMPUTE:
            assert self.phase is not None
            tag = {
                Phase.FWD: "F",
                Phase.BWD_FUSED: "B",
                Phase.BWD_DX: "DX",
                Phase.BWD_DW: "DW",
            }[self.phase]
            return f"{tag}(c{self.chunk},m{self.microbatch})"
        if self.kind == KernelKind.PP_SEND:
            where = f"c{self.chunk},m{self.microbatch},{self.direction}"
            return f"SEND{self.rank}->{self.dest}({where})"
        assert self.collective is not None
        tag = {
            CollectiveKind.ALL_GATHER: "AG",
            CollectiveKind.REDUCE_SCATTER: "RS",
            CollectiveKind.ALL_REDUCE: "AR",
        }[self.collective]
        return f"{tag}(l{self.layer})"

    def to_dict(self) -> Dict[str, Any]:
        """JSON-ready form."""
        return {
            "id": self.id,
            "label": self.label(),
            "kind": self.kind.value,
            "rank": self.rank,
            "chunk": self.chunk,
            "microbatch": self.microbatch,
            "phase": self.phase.value if self.phase else None,
            "dest": self.dest,
            "collective": self.collective.value if self.collective else None,
            "level": self.level.value if self.level else None,
            "layer": self.layer,
            "payload_bytes": self.payload_bytes,
            "parents": list(self.parents),
            "duration_dpout": self.duration_dpout,
            "duration_ppout": self.duration_ppout,
            "tier_dpout": self.tier_dpout.value if self.tier_dpout else None,
            "tier_ppout": self.tier_ppout.value if self.tier_ppout else None,
        }


class KernelDAG:
    """Kernels, dependency edges and per-rank compute order.

    Attributes:
        kernels: Kernels indexed by id
        compute_order: Per-rank compute kernel ids in stream order
        concurrency: Per placement, transfers sharing a (rank, tier) class
        num_ranks: Pipeline stages
        meta: Free-form build metadata (schedule, microbatches...)
    """

    def __init__(self, num_ranks: int = 1) -> None:
        self.kernels: List[Kernel] = []
        self.compute_order: Dict[int, List[int]] = {r: [] for r in range(num_ranks)}
        self.concurrency: Dict[Placement, Dict[Tuple[int, LinkTier], int]] = {
            Placement.DP_OUT: {},
            Placement.PP_OUT: {},
        }
        self.num_ranks = num_ranks
        self.meta: Dict[str, Any] = {}

    def __len__(self) -> int:
        return len(self.kernels)

    def __iter__(self) -> Iterator[Kernel]:
        return iter(self.kernels)

    def add(self, kind: KernelKind, rank: int, chunk: int, **fields: Any) -> Kernel:
        """Append a kernel and return it."""
        kernel = Kernel(id=len(self.kernels), kind=kind, rank=rank, chunk=chunk, **fields)
        self.kernels.append(kernel)
        return kernel

    def add_edge(self, parent: int, child: int) -> None:
        """Make ``child`` depend on ``parent``."""
        self.kernels[child].parents.append(parent)

    def comm_kernels(self) -> List[Kernel]:
        """Every non-compute kernel."""
        return [k for k in self.kernels if not k.is_compute]

    def count(self, kind: KernelKind) -> int:
        """Number of kernels of a family."""
        return sum(1 for k in self.kernels if k.kind == kind)

    def to_networkx(self) -> "nx.DiGraph":
        """Directed graph with an edge parent -> child for every dependency."""
        graph = nx.DiGraph()
        graph.add_nodes_from(k.id for k in self.kernels)
        for k in self.kernels:
            graph.add_edges_from((p, k.id) for p in k.parents)
        return graph

    def topological_order(self) -> List[int]:
        """Kahn order of kernel ids.

        Raises:
            CycleError: Naming a kernel on a cycle
        """
        n = len(self.kernels)
        indegree = [0] * n
        children: List[List[int]] = [[] for _ in range(n)]
        for k in self.kernels:
            for p in k.parents:
                indegree[k.id] += 1
                children[p].append(k.id)
        queue = [i for i in range(n) if indegree[i] == 0]
        order: List[int] = []
        head = 0
        while head < len(queue):
            i = queue[head]
            head += 1
            order.append(i)
            for c in children[i]:
                indegree[c] -= 1
                if indegree[c] == 0:
                    queue.append(c)
        if len(order) < n:
            self._raise_cycle()
        return order

    def _raise_cycle(self) -> None:
        graph = self.to_networkx()
        edges = nx.find_cycle(graph)
        members = [u for u, _ in edges]
        logger.error("Kernel graph has a cycle through %s", members)
        raise CycleError(members[0], members)

    def to_dict(self) -> Dict[str, Any]:
        """JSON-ready form of the whole graph."""
        return {
            "meta": self.meta,
            "kernels": [k.to_dict() for k in self.kernels],
            "compute_order": {str(r): ids for r, ids in self.compute_order.items()},
        }
