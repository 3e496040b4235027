"""Interleaved ZBV: V-shaped chunk placement with split backward kernels."""

import logging

from ..errors import InfeasibleConfigError
from ..kernel_dag import KernelDAG
from ..logging_utils import log_timing
from ..schedule_builder import BuildContext, pipeline_dag, plan_for
from ..workload import ParallelismConfig, ScheduleKind

logger = logging.getLogger(__name__)


class ZBVBuilder:
    """Builds interleaved ZBV DAGs.

    Chunks walk the stages first-to-last and then last-to-first, so the turn
    stays on one stage and nothing wraps from the last stage to the first.
    """

    schedule = ScheduleKind.INTERLEAVED_ZBV

    def can_handle(self, config: ParallelismConfig) -> bool:
        """Check if the configuration asks for interleaved ZBV."""
        return config.schedule == self.schedule

    @log_timing
    def build(self, ctx: BuildContext) -> KernelDAG:
        """Build the ZBV pipeline DAG.

        Raises:
            InfeasibleConfigError: If the chunk count cannot form complete Vs
        """
        p = ctx.config
        if p.num_chunks % (2 * p.pp):
            raise InfeasibleConfigError(
                [f"V-shape needs a multiple of 2*pp chunks ({p.num_chunks}, pp={p.pp})"]
            )
        return pipeline_dag(ctx, plan_for(ctx))
