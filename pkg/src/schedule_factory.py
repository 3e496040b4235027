"""Factory selecting a schedule builder and producing fully priced DAGs."""

import logging
from typing import List, Optional, Union, cast

from .assumptions import DEFAULT_ASSUMPTIONS, Assumptions
from .errors import InfeasibleConfigError
from .kernel_dag import KernelDAG
from .schedule_builder import BuildContext, ScheduleBuilder, assign_link_durations
from .schedules.dorapp import DoraPPBuilder
from .schedules.dp_attach import attach_dp
from .schedules.one_f_one_b import OneFOneBBuilder
from .schedules.zbv import ZBVBuilder
from .workload import BatchSpec, ModelSpec, ParallelismConfig, Topology

logger = logging.getLogger(__name__)

BuilderType = Union[OneFOneBBuilder, DoraPPBuilder, ZBVBuilder]


class ScheduleFactory:
    """Creates and dispatches to schedule builders."""

    def __init__(self, assumptions: Assumptions = DEFAULT_ASSUMPTIONS) -> None:
        """Initialize the factory.

        Args:
            assumptions: Modeling constants handed to every build
        """
        self.assumptions = assumptions
        builders: List[BuilderType] = [
            OneFOneBBuilder(),
            DoraPPBuilder(),
            ZBVBuilder(),
        ]
        self.builders = cast(List[ScheduleBuilder], builders)

    def get_builder(self, config: ParallelismConfig) -> Optional[ScheduleBuilder]:
        """Get the builder for a configuration's schedule.

        Args:
            config: Parallelism configuration

        Returns:
            Matching builder, or None if no builder handles the schedule
        """
        for builder in self.builders:
            if builder.can_handle(config):
                return builder
        return None

    def context(
        self,
        model: ModelSpec,
        batch: BatchSpec,
        config: ParallelismConfig,
        topo: Topology,
        hop: Optional[float] = None,
    ) -> BuildContext:
        """Bundle inputs into a build context."""
        return BuildContext(model, batch, config, topo, self.assumptions, hop)

    def build_dag(
        self,
        model: ModelSpec,
        batch: BatchSpec,
        config: ParallelismConfig,
        topo: Topology,
        hop: Optional[float] = None,
    ) -> KernelDAG:
        """Build the pipeline, attach DP collectives and price comm kernels.

        Args:
            model: Model architecture
            batch: Batch sizes
            config: Parallelism configuration
            topo: Topology
            hop: Optional planner hop override

        Returns:
            DAG ready for reconstruction

        Raises:
            InfeasibleConfigError: If no builder handles the schedule or the
                chunk layout does not suit it
        """
        builder = self.get_builder(config)
        if builder is None:
            raise InfeasibleConfigError([f"no builder for schedule {config.schedule}"])
        ctx = self.context(model, batch, config, topo, hop)
        dag = builder.build(ctx)
        attach_dp(dag, ctx)
        assign_link_durations(dag, ctx)
        dag.meta["config"] = config.label()
        logger.debug("Built %s with %d kernels", config.label(), len(dag))
        return dag
