"""Dependency-driven reconstruction of iteration time.

Every kernel starts when its latest parent finishes and runs for its
placement-specific duration. Both placements are swept together; resource
exclusivity is already encoded as DAG edges by the builders.
"""

from dataclasses import dataclass
import logging
from typing import Dict, List

from .errors import UnsetDurationError
from .kernel_dag import KernelDAG
from .logging_utils import log_timing
from .workload import Placement

logger = logging.getLogger(__name__)


@dataclass
class Timeline:
    """Per-kernel start and finish times under one placement."""

    placement: Placement
    start: List[float]
    finish: List[float]

    @property
    def iteration_time(self) -> float:
        """Latest finish over all kernels (0 for an empty DAG)."""
        return max(self.finish, default=0.0)


@dataclass
class Reconstruction:
    """Result of reconstructing a DAG under both placements.

    Attributes:
        t_dpout: Iteration time with DP on cross-building links
        t_ppout: Iteration time with PP on cross-building links
        timelines: Per-placement timelines
        bubble: Per-placement bubble fraction of every rank
        cross_building_bytes: Per-placement cross-building bytes
    """

    t_dpout: float
    t_ppout: float
    timelines: Dict[Placement, Timeline]
    bubble: Dict[Placement, List[float]]
    cross_building_bytes: Dict[Placement, int]

    @property
    def best(self) -> float:
        """Faster of the two placements."""
        return min(self.t_dpout, self.t_ppout)

    @property
    def best_placement(self) -> Placement:
        """Placement achieving ``best`` (DP-out on ties)."""
        return Placement.DP_OUT if self.t_dpout <= self.t_ppout else Placement.PP_OUT

    def time(self, placement: Placement) -> float:
        """Iteration time under a placement."""
        return self.t_dpout if placement == Placement.DP_OUT else self.t_ppout


def _durations(dag: KernelDAG, placement: Placement) -> List[float]:
    durations = []
    for kernel in dag.kernels:
        d = kernel.duration(placement)
        if d is None:
            raise UnsetDurationError(kernel.id)
        durations.append(d)
    return durations


def bubble_fraction(dag: KernelDAG, timeline: Timeline, rank: int) -> float:
    """Idle share of a rank's compute stream over the iteration.

    Args:
        dag: Reconstructed DAG
        timeline: Timeline of one placement
        rank: Pipeline rank

    Returns:
        1 - compute busy time / iteration time (0 for an empty iteration)
    """
    total = timeline.iteration_time
    if total <= 0:
        return 0.0
    busy = 0.0
    for kid in dag.compute_order.get(rank, []):
        busy += timeline.finish[kid] - timeline.start[kid]
    return 1.0 - busy / total


@log_timing
def reconstruct(dag: KernelDAG) -> Reconstruction:
    """Reconstruct iteration time under DP-out and PP-out in one sweep.

    Args:
        dag: DAG with durations set for both placements

    Returns:
        Both iteration times, timelines, bubbles and byte totals

    Raises:
        CycleError: If the DAG has a cycle
        UnsetDurationError: If a kernel has no duration
    """
    placements = (Placement.DP_OUT, Placement.PP_OUT)
    durations = {pl: _durations(dag, pl) for pl in placements}
    order = dag.topological_order()
    n = len(dag.kernels)
    starts = {pl: [0.0] * n for pl in placements}
    finishes = {pl: [0.0] * n for pl in placements}
    for kid in order:
        parents = dag.kernels[kid].parents
        for pl in placements:
            fin = finishes[pl]
            begin = max((fin[p] for p in parents), default=0.0)
            starts[pl][kid] = begin
            fin[kid] = begin + durations[pl][kid]

    timelines = {pl: Timeline(pl, starts[pl], finishes[pl]) for pl in placements}
    bubble = {
        pl: [bubble_fraction(dag, timelines[pl], r) for r in range(dag.num_ranks)]
        for pl in placements
    }
    cross = {
        pl: round(sum(k.cross_bytes(pl) for k in dag.kernels)) for pl in placements
    }
    result = Reconstruction(
        t_dpout=timelines[Placement.DP_OUT].iteration_time,
        t_ppout=timelines[Placement.PP_OUT].iteration_time,
        timelines=timelines,
        bubble=bubble,
        cross_building_bytes=cross,
    )
    logger.debug(
        "Reconstructed %d kernels: DP-out %.6f s, PP-out %.6f s",
        n,
        result.t_dpout,
        result.t_ppout,
    )
    return result


def compute_lower_bound(dag: KernelDAG, placement: Placement) -> float:
    """Largest per-rank compute total, a lower bound on iteration time."""
    totals = [
        sum(dag.kernels[k].duration(placement) or 0.0 for k in ids)
        for ids in dag.compute_order.values()
    ]
    return max(totals, default=0.0)
