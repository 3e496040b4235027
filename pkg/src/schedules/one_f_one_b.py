"""Classic 1F1B schedule with fused backward kernels."""

import logging

from ..errors import InfeasibleConfigError
from ..kernel_dag import KernelDAG
from ..logging_utils import log_timing
from ..schedule_builder import BuildContext, pipeline_dag, plan_for
from ..workload import ParallelismConfig, ScheduleKind

logger = logging.getLogger(__name__)


class OneFOneBBuilder:
    """Builds 1F1B DAGs: one chunk per stage, pp - s warm-up forwards."""

    schedule = ScheduleKind.ONE_F_ONE_B

    def can_handle(self, config: ParallelismConfig) -> bool:
        """Check if the configuration asks for 1F1B."""
        return config.schedule == self.schedule

    @log_timing
    def build(self, ctx: BuildContext) -> KernelDAG:
        """Build the 1F1B pipeline DAG.

        Raises:
            InfeasibleConfigError: If a stage holds more than one chunk
        """
        p = ctx.config
        if p.num_chunks != p.pp:
            raise InfeasibleConfigError(
                [f"1F1B needs one chunk per stage ({p.num_chunks} chunks, pp={p.pp})"]
            )
        return pipeline_dag(ctx, plan_for(ctx))
