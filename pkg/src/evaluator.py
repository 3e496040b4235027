"""Cached candidate evaluation: build, price and reconstruct one configuration.

One DAG serves both placements, so the cache is keyed on everything except
the placement and a PP-out twin of an evaluated DP-out candidate is free.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
import logging
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .assumptions import DEFAULT_ASSUMPTIONS, Assumptions
from .errors import InfeasibleConfigError
from .exploration_stats import ExplorationStats
from .feasibility import memory_estimate, require_valid, validate_config
from .reconstructor import reconstruct
from .schedule_factory import ScheduleFactory
from .schedules.planner import PlannerStuckError
from .workload import BatchSpec, ModelSpec, ParallelismConfig, Placement, Topology

logger = logging.getLogger(__name__)

CacheKey = Tuple[Any, ...]


@dataclass(frozen=True)
class Outcome:
    """Placement-indexed results of one reconstruction."""

    t_dpout: float
    t_ppout: float
    cross_bytes_dpout: int
    cross_bytes_ppout: int
    bubble_dpout: float
    bubble_ppout: float

    def time(self, placement: Placement) -> float:
        """Iteration time under a placement."""
        return self.t_dpout if placement == Placement.DP_OUT else self.t_ppout

    def cross_bytes(self, placement: Placement) -> int:
        """Cross-building bytes under a placement."""
        if placement == Placement.DP_OUT:
            return self.cross_bytes_dpout
        return self.cross_bytes_ppout

    def bubble(self, placement: Placement) -> float:
        """Mean per-rank bubble fraction under a placement."""
        return self.bubble_dpout if placement == Placement.DP_OUT else self.bubble_ppout


@dataclass(frozen=True)
class Evaluation:
    """A candidate together with its outcome under its own placement."""

    batch: BatchSpec
    config: ParallelismConfig
    outcome: Outcome
    memory_bytes: float

    @property
    def iteration_time(self) -> float:
        """Iteration time in seconds."""
        return self.outcome.time(self.config.placement)

    @property
    def cross_building_bytes(self) -> int:
        """Bytes crossing buildings per iteration."""
        return self.outcome.cross_bytes(self.config.placement)

    @property
    def bubble_mean(self) -> float:
        """Mean bubble fraction over pipeline ranks."""
        return self.outcome.bubble(self.config.placement)

    @property
    def label(self) -> str:
        """Configuration label with the microbatch size."""
        return f"{self.config.label()} m={self.batch.microbatch_size}"

    def sort_key(self) -> Tuple[float, int, float, str]:
        """Ranking key: time, then cross-building bytes, memory and label."""
        return (
            self.iteration_time,
            self.cross_building_bytes,
            self.memory_bytes,
            self.label,
        )

    def to_row(self) -> Dict[str, Any]:
        """Flat record for CSV and JSON output."""
        p = self.config
        return {
            "label": self.label,
            "tp": p.tp,
            "cp": p.cp,
            "ep": p.ep,
            "pp": p.pp,
            "dp": p.dp,
            "microbatch_size": self.batch.microbatch_size,
            "placement": p.placement.value,
            "schedule": p.schedule.value,
            "dp_scheme": p.dp_scheme.label(),
            "chunk_partition": "-".join(str(s) for s in p.chunk_partition),
            "iteration_time_s": self.iteration_time,
            "t_dpout_s": self.outcome.t_dpout,
            "t_ppout_s": self.outcome.t_ppout,
            "cross_building_bytes": self.cross_building_bytes,
            "memory_bytes": round(self.memory_bytes),
            "bubble_mean": self.bubble_mean,
        }


def cache_key(batch: BatchSpec, config: ParallelismConfig) -> CacheKey:
    """Placement-free identity of a candidate."""
    scheme = config.dp_scheme
    return (
        batch.global_batch_size,
        batch.microbatch_size,
        config.tp,
        config.cp,
        config.ep,
        config.pp,
        config.dp,
        config.schedule,
        scheme.kind,
        scheme.replica_groups,
        config.chunk_partition,
    )


def evaluate_outcome(
    model: ModelSpec,
    batch: BatchSpec,
    config: ParallelismConfig,
    topo: Topology,
    assumptions: Assumptions = DEFAULT_ASSUMPTIONS,
) -> Outcome:
    """Validate a configuration, build its DAG and reconstruct both placements.

    Raises:
        InfeasibleConfigError: If the configuration violates a constraint (for
            example fewer microbatches than stages) or the schedule cannot lay
            it out
    """
    require_valid(model, batch, config, topo, assumptions)
    dag = ScheduleFactory(assumptions).build_dag(model, batch, config, topo)
    rec = reconstruct(dag)

    def mean(values: Sequence[float]) -> float:
        return sum(values) / len(values) if values else 0.0

    return Outcome(
        t_dpout=rec.t_dpout,
        t_ppout=rec.t_ppout,
        cross_bytes_dpout=rec.cross_building_bytes[Placement.DP_OUT],
        cross_bytes_ppout=rec.cross_building_bytes[Placement.PP_OUT],
        bubble_dpout=mean(rec.bubble[Placement.DP_OUT]),
        bubble_ppout=mean(rec.bubble[Placement.PP_OUT]),
    )


def _evaluate_remote(
    args: Tuple[ModelSpec, BatchSpec, ParallelismConfig, Topology, Assumptions]
) -> Optional[Outcome]:
    model, batch, config, topo, assumptions = args
    try:
        return evaluate_outcome(model, batch, config, topo, assumptions)
    except (InfeasibleConfigError, PlannerStuckError):
        return None


class CandidateEvaluator:
    """Evaluates candidates for one model and topology, memoizing outcomes."""

    def __init__(
        self,
        model: ModelSpec,
        topo: Topology,
        assumptions: Assumptions = DEFAULT_ASSUMPTIONS,
        stats: Optional[ExplorationStats] = None,
    ) -> None:
        """Initialize the evaluator.

        Args:
            model: Model architecture
            topo: Topology
            assumptions: Modeling constants
            stats: Optional statistics sink
        """
        self.model = model
        self.topo = topo
        self.assumptions = assumptions
        self.stats = stats or ExplorationStats()
        self._cache: Dict[CacheKey, Optional[Outcome]] = {}

    def _wrap(
        self, batch: BatchSpec, config: ParallelismConfig, outcome: Outcome
    ) -> Evaluation:
        memory = memory_estimate(self.model, batch, config, self.assumptions)
        return Evaluation(batch, config, outcome, memory)

    def evaluate(
        self, batch: BatchSpec, config: ParallelismConfig, validate: bool = True
    ) -> Optional[Evaluation]:
        """Evaluate one candidate.

        Args:
            batch: Batch sizes
            config: Parallelism configuration
            validate: Run validate_config first and skip invalid candidates

        Returns:
            The evaluation, or None if the candidate is invalid or cannot be built
        """
        if validate:
            violations = validate_config(
                self.model, batch, config, self.topo, self.assumptions
            )
            if violations:
                self.stats.record_rejected(violations)
                return None
        key = cache_key(batch, config)
        if key in self._cache:
            self.stats.record_evaluated(cached=True)
            outcome = self._cache[key]
        else:
            try:
                outcome = evaluate_outcome(
                    self.model, batch, config, self.topo, self.assumptions
                )
            except (InfeasibleConfigError, PlannerStuckError) as e:
                self.stats.record_failure(config.label(), str(e))
                outcome = None
            self._cache[key] = outcome
            self.stats.record_evaluated()
        if outcome is None:
            return None
        return self._wrap(batch, config, outcome)

    def evaluate_many(
        self,
        candidates: Sequence[Tuple[BatchSpec, ParallelismConfig]],
        workers: int = 1,
    ) -> List[Optional[Evaluation]]:
        """Evaluate pre-validated candidates, optionally in worker processes.

        Results come back in input order whatever order workers finish in.

        Args:
            candidates: (batch, config) pairs that already passed validation
            workers: Worker processes; 1 evaluates inline

        Returns:
            One evaluation (or None) per candidate
        """
        pending: Dict[CacheKey, Tuple[BatchSpec, ParallelismConfig]] = {}
        for batch, config in candidates:
            key = cache_key(batch, config)
            if key not in self._cache and key not in pending:
                pending[key] = (batch, config)

        if workers > 1 and len(pending) > 1:
            keys = list(pending)
            jobs = [
                (self.model, b, c, self.topo, self.assumptions)
                for b, c in (pending[k] for k in keys)
            ]
            logger.info("Evaluating %d candidates on %d workers", len(jobs), workers)
            with ProcessPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(_evaluate_remote, jobs))
            for key, outcome in zip(keys, outcomes):
                self._cache[key] = outcome
                self.stats.record_evaluated()
                if outcome is None:
                    self.stats.record_failure(pending[key][1].label(), "build failed")

        return [self.evaluate(b, c, validate=False) for b, c in candidates]
