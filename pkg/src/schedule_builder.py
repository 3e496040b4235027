"""Schedule builder interface and the pieces every builder shares.

A builder turns a configuration into a pipeline DAG: chunk compute kernels
in the planned per-rank order plus one send kernel for every cross-stage
data dependency. ``attach_dp`` then adds DP collectives and
``assign_link_durations`` prices every comm kernel under both placements.
"""

from dataclasses import dataclass, field
import logging
from typing import Dict, List, Optional, Protocol, Set, Tuple

from .assumptions import DEFAULT_ASSUMPTIONS, Assumptions
from .comm_volume import pp_p2p_elements
from .feasibility import num_microbatches
from .kernel_dag import CollectiveLevel, KernelDAG, KernelKind
from .link_model import (
    LinkProfile,
    Phase,
    chunk_compute_time,
    collective_time,
    link_profile,
    p2p_time,
)
from .placement import GroupLink, GroupPlacement, resolve_placement
from .schedules.planner import PipelinePlan, TaskKind, plan_pipeline
from .workload import (
    BatchSpec,
    LinkTier,
    ModelSpec,
    ParallelismConfig,
    Placement,
    ScheduleKind,
    Topology,
)

logger = logging.getLogger(__name__)

PHASE_OF_TASK: Dict[TaskKind, Phase] = {
    TaskKind.F: Phase.FWD,
    TaskKind.B: Phase.BWD_FUSED,
    TaskKind.DX: Phase.BWD_DX,
    TaskKind.DW: Phase.BWD_DW,
}


@dataclass
class BuildContext:
    """Everything a builder needs for one configuration.

    Attributes:
        model: Model architecture
        batch: Batch sizes
        config: Parallelism configuration
        topo: Topology
        assumptions: Modeling constants
        hop: Planner hop delay override (defaults to the assumptions value)
    """

    model: ModelSpec
    batch: BatchSpec
    config: ParallelismConfig
    topo: Topology
    assumptions: Assumptions = DEFAULT_ASSUMPTIONS
    hop: Optional[float] = None
    _placements: Dict[Placement, GroupPlacement] = field(default_factory=dict, repr=False)

    @property
    def num_microbatches(self) -> int:
        """Microbatches per iteration."""
        return num_microbatches(self.batch, self.config)

    @property
    def planner_hop(self) -> float:
        """Hop delay handed to the planner."""
        if self.hop is not None:
            return self.hop
        return self.assumptions.planner_hop_slots

    def placement(self, placement: Placement) -> GroupPlacement:
        """Resolved groups under a placement."""
        if placement not in self._placements:
            self._placements[placement] = resolve_placement(
                self.topo, self.config, placement
            )
        return self._placements[placement]


class ScheduleBuilder(Protocol):
    """Interface for pipeline schedule builders."""

    schedule: ScheduleKind

    def can_handle(self, config: ParallelismConfig) -> bool:
        """Check if this builder lays out the configuration's schedule.

        Args:
            config: Parallelism configuration

        Returns:
            True if this builder handles the schedule
        """
        ...

    def build(self, ctx: BuildContext) -> KernelDAG:
        """Build the pipeline DAG (compute and PP send kernels).

        Args:
            ctx: Build context

        Returns:
            DAG whose compute kernels carry durations
        """
        ...


def plan_for(ctx: BuildContext) -> PipelinePlan:
    """Run the planner for a context."""
    p = ctx.config
    return plan_pipeline(
        p.chunk_partition,
        p.chunk_stages,
        p.pp,
        ctx.num_microbatches,
        p.schedule,
        ctx.planner_hop,
    )


def pipeline_dag(ctx: BuildContext, plan: PipelinePlan) -> KernelDAG:
    """Turn a plan into compute kernels, stream edges and send kernels.

    Compute kernels are numbered by planned start time (ties by rank). Sends
    between a pair of stages share one stream and are serialized in producer
    order.

    Args:
        ctx: Build context
        plan: Planner output

    Returns:
        Pipeline DAG without DP kernels
    """
    p = ctx.config
    dag = KernelDAG(num_ranks=p.pp)
    dag.meta.update(
        {
            "schedule": p.schedule.value,
            "num_microbatches": ctx.num_microbatches,
            "chunk_partition": list(p.chunk_partition),
            "chunk_stages": list(p.chunk_stages),
            "planner_makespan_units": plan.makespan,
        }
    )
    tasks = plan.tasks
    timeline = sorted(
        (tasks[ti].start, stage, pos, ti)
        for stage, order in enumerate(plan.orders)
        for pos, ti in enumerate(order)
    )
    kernel_of: Dict[int, int] = {}
    durations: Dict[Tuple[int, Phase], float] = {}
    for _, stage, _, ti in timeline:
        task = tasks[ti]
        phase = PHASE_OF_TASK[task.kind]
        size = p.chunk_partition[task.chunk]
        if (size, phase) not in durations:
            durations[(size, phase)] = chunk_compute_time(
                ctx.model, size, ctx.batch.microbatch_size, p, phase, ctx.topo, ctx.assumptions
            )
        seconds = durations[(size, phase)]
        kernel = dag.add(
            KernelKind.CHUNK_COMPUTE,
            stage,
            task.chunk,
            microbatch=task.microbatch,
            phase=phase,
            duration_dpout=seconds,
            duration_ppout=seconds,
        )
        kernel_of[ti] = kernel.id

    for stage, order in enumerate(plan.orders):
        ids = [kernel_of[ti] for ti in order]
        dag.compute_order[stage] = ids
        for prev, nxt in zip(ids, ids[1:]):
            dag.add_edge(prev, nxt)

    edges = [(dep, ti) for _, _, _, ti in timeline for dep in tasks[ti].deps]
    edges.sort(key=lambda e: (tasks[e[0]].start, tasks[e[0]].stage, tasks[e[1]].start))
    send_bytes = pp_p2p_elements(ctx.model, ctx.batch, p) * ctx.model.bytes_per_element
    last_send: Dict[Tuple[int, int], int] = {}
    for prod, cons in edges:
        producer, consumer = tasks[prod], tasks[cons]
        if producer.stage == consumer.stage:
            dag.add_edge(kernel_of[prod], kernel_of[cons])
            continue
        send = dag.add(
            KernelKind.PP_SEND,
            producer.stage,
            consumer.chunk,
            microbatch=consumer.microbatch,
            dest=consumer.stage,
            direction="fwd" if consumer.kind == TaskKind.F else "bwd",
            payload_bytes=send_bytes,
            stream=f"pp{consumer.stage}",
        )
        dag.add_edge(kernel_of[prod], send.id)
        key = (producer.stage, consumer.stage)
        if key in last_send:
            dag.add_edge(last_send[key], send.id)
        last_send[key] = send.id
        dag.add_edge(send.id, kernel_of[cons])
    return dag


def _kernel_group(
    groups: GroupPlacement, kernel_level: Optional[CollectiveLevel]
) -> GroupLink:
    if kernel_level == CollectiveLevel.CROSS:
        assert groups.replica is not None
        return groups.replica
    return groups.shard


def assign_link_durations(dag: KernelDAG, ctx: BuildContext) -> KernelDAG:
    """Price every comm kernel under DP-out and PP-out links.

    Concurrency for the static fair share is the number of distinct comm
    streams a rank drives over the same tier.

    Args:
        dag: DAG with compute, send and DP kernels
        ctx: Build context

    Returns:
        The same DAG, durations filled in
    """
    comm = dag.comm_kernels()
    seed, trials = ctx.assumptions.ecmp_seed, ctx.assumptions.ecmp_trials
    for placement in (Placement.DP_OUT, Placement.PP_OUT):
        groups = ctx.placement(placement)
        profiles: Dict[GroupLink, LinkProfile] = {}

        def profile_of(group: GroupLink) -> LinkProfile:
            if group not in profiles:
                profiles[group] = link_profile(ctx.topo, group)
            return profiles[group]

        links: List[GroupLink] = []
        streams: Dict[Tuple[int, LinkTier], Set[str]] = {}
        for kernel in comm:
            if kernel.kind == KernelKind.PP_SEND:
                group = groups.stage_link(kernel.rank, kernel.dest)
            else:
                group = _kernel_group(groups, kernel.level)
            links.append(group)
            streams.setdefault((kernel.rank, group.tier), set()).add(kernel.stream)
        dag.concurrency[placement] = {key: len(ids) for key, ids in streams.items()}

        for kernel, group in zip(comm, links):
            profile = profile_of(group)
            concurrency = dag.concurrency[placement][(kernel.rank, group.tier)]
            if kernel.kind == KernelKind.PP_SEND:
                seconds = p2p_time(kernel.payload_bytes, profile, concurrency, seed, trials)
            else:
                assert kernel.collective is not None
                seconds = collective_time(
                    kernel.collective,
                    kernel.payload_bytes,
                    kernel.group_size,
                    profile,
                    concurrency,
                    seed,
                    trials,
                )
            kernel.set_duration(placement, seconds, group.tier)
    return dag
