"""DoraPP: round-robin chunks with split input/weight backward kernels."""

import logging

from ..errors import InfeasibleConfigError
from ..kernel_dag import KernelDAG
from ..logging_utils import log_timing
from ..schedule_builder import BuildContext, pipeline_dag, plan_for
from ..workload import ParallelismConfig, ScheduleKind

logger = logging.getLogger(__name__)


class DoraPPBuilder:
    """Builds DoraPP DAGs.

    Chunk i runs on stage i mod pp, so consecutive chunks wrap from the last
    stage back to the first. Backward is split into dx, scheduled eagerly, and
    dw, which fills idle slots.
    """

    schedule = ScheduleKind.DORAPP

    def can_handle(self, config: ParallelismConfig) -> bool:
        """Check if the configuration asks for DoraPP."""
        return config.schedule == self.schedule

    @log_timing
    def build(self, ctx: BuildContext) -> KernelDAG:
        """Build the DoraPP pipeline DAG.

        Raises:
            InfeasibleConfigError: If the chunk count is not a multiple of pp
        """
        p = ctx.config
        if p.num_chunks % p.pp:
            raise InfeasibleConfigError(
                [f"round-robin needs a multiple of pp chunks ({p.num_chunks}, pp={p.pp})"]
            )
        return pipeline_dag(ctx, plan_for(ctx))
