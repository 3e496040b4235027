"""Configuration search: enumerate, evaluate, refine partitions, recommend.

``explore`` runs three steps. Enumeration yields every valid uniform
template (degrees, microbatch size, placement, schedule, DP scheme, chunk
count). Templates are evaluated by building and reconstructing their DAG,
with the PP-out branch grown one stage count at a time and cut once it stops
improving. The best templates then get a Monte-Carlo partition search, and
the winner gets network recommendations.
"""

from dataclasses import dataclass, field
from enum import Enum
import logging
import math
import time
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .assumptions import DEFAULT_ASSUMPTIONS, Assumptions
from .errors import NoFeasibleConfigError
from .evaluator import CandidateEvaluator, Evaluation
from .exploration_stats import ExplorationStats
from .feasibility import validate_config
from .logging_utils import log_block_timing
from .network_advisor import LossMitigation, NetworkRecommendation, recommend_network
from .partition_search import (
    SearchBudget,
    mc_partition_search,
    near_uniform_partition,
    spread_ok,
)
from .progress_manager import ProgressManager
from .workload import (
    BatchSpec,
    DPScheme,
    DPSchemeKind,
    ModelSpec,
    ParallelismConfig,
    Placement,
    ScheduleKind,
    Topology,
    _Document,
)

logger = logging.getLogger(__name__)

__all__ = [
    "SearchBudget",
    "SearchSpace",
    "ExplorationReport",
    "PruneDecision",
    "PPOutSearchState",
    "divisors",
    "enumerate_configs",
    "prune_ppout",
    "explore",
]

Candidate = Tuple[BatchSpec, ParallelismConfig]


class SearchSpace(_Document):
    """Optional restrictions of the enumerated space.

    ``None`` means every feasible value. ``tp`` defaults to the GPUs per
    server; ``ep`` defaults to the largest feasible expert degree.
    """

    tp: Optional[Tuple[int, ...]] = None
    cp: Optional[Tuple[int, ...]] = None
    ep: Optional[Tuple[int, ...]] = None
    pp: Optional[Tuple[int, ...]] = None
    dp: Optional[Tuple[int, ...]] = None
    microbatch_sizes: Optional[Tuple[int, ...]] = None
    placements: Tuple[Placement, ...] = (Placement.DP_OUT, Placement.PP_OUT)
    schedules: Tuple[ScheduleKind, ...] = tuple(ScheduleKind)
    dp_schemes: Tuple[DPSchemeKind, ...] = tuple(DPSchemeKind)
    chunk_layers: Optional[Tuple[int, ...]] = None

    @classmethod
    def pinned_to(
        cls, config: ParallelismConfig, microbatch_size: int, **updates: Any
    ) -> "SearchSpace":
        """Space with the degrees and microbatch size of a configuration."""
        fields: Dict[str, Any] = {
            "tp": (config.tp,),
            "cp": (config.cp,),
            "ep": (config.ep,),
            "pp": (config.pp,),
            "dp": (config.dp,),
            "microbatch_sizes": (microbatch_size,),
        }
        fields.update(updates)
        return cls(**fields)

    def sailor_like(self) -> "SearchSpace":
        """Same space restricted to 1F1B with FSDP (one chunk per stage)."""
        return self.model_copy(
            update={
                "schedules": (ScheduleKind.ONE_F_ONE_B,),
                "dp_schemes": (DPSchemeKind.FSDP,),
                "chunk_layers": None,
            }
        )


class PruneDecision(str, Enum):
    """Outcome of the PP-out pruning rule."""

    CONTINUE = "continue"
    STOP = "stop"


@dataclass
class PPOutSearchState:
    """Best PP-out iteration time seen at each stage count, in search order."""

    history: List[Tuple[int, float]] = field(default_factory=list)

    def record(self, pp: int, best_time: float) -> None:
        """Append the best time found for a stage count."""
        self.history.append((pp, best_time))


def prune_ppout(state: PPOutSearchState) -> PruneDecision:
    """Stop growing PP-out stage counts once an increase fails to improve.

    Args:
        state: Stage counts tried so far, smallest first

    Returns:
        STOP when the latest stage count is no faster than every earlier one
    """
    if len(state.history) < 2:
        return PruneDecision.CONTINUE
    latest = state.history[-1][1]
    best_before = min(t for _, t in state.history[:-1])
    if latest >= best_before:
        return PruneDecision.STOP
    return PruneDecision.CONTINUE


def divisors(n: int) -> List[int]:
    """Positive divisors of n in ascending order."""
    return [d for d in range(1, n + 1) if n % d == 0]


def _default_tp(topo: Topology, model: ModelSpec) -> List[int]:
    per_server = topo.gpu.gpus_per_server
    candidates = [
        d
        for d in divisors(topo.world_size)
        if d <= per_server and model.hidden_dim % d == 0
    ]
    return [max(candidates)] if candidates else [1]


def _expert_degrees(
    model: ModelSpec, topo: Topology, tp: int, cp: int, dp: int
) -> List[int]:
    if not model.is_moe:
        return [1]
    fits = [
        e
        for e in divisors(dp * cp)
        if model.num_experts % e == 0 and tp * e <= topo.gpus_per_zone
    ]
    return [max(fits)] if fits else []


def _chunk_counts(
    schedule: ScheduleKind, num_layers: int, pp: int, chunk_layers: Optional[Sequence[int]]
) -> List[int]:
    if schedule == ScheduleKind.ONE_F_ONE_B:
        counts = [pp]
    else:
        step = pp if schedule == ScheduleKind.DORAPP else 2 * pp
        counts = [
            n
            for n in range(step, num_layers + 1, step)
            if num_layers % n == 0 or n == step
        ]
    if chunk_layers is not None:
        counts = [n for n in counts if num_layers % n == 0 and num_layers // n in chunk_layers]
    return counts


def _dp_schemes(dp: int, kinds: Sequence[DPSchemeKind]) -> List[DPScheme]:
    schemes = []
    if DPSchemeKind.FSDP in kinds:
        schemes.append(DPScheme.fsdp())
    if DPSchemeKind.HSDP in kinds and dp >= 2:
        schemes.extend(DPScheme.hsdp(r, dp // r) for r in divisors(dp) if r >= 2)
    return schemes


def _pick(values: Optional[Sequence[int]], default: List[int]) -> List[int]:
    return default if values is None else [v for v in default if v in values]


def enumerate_configs(
    model: ModelSpec,
    batch: BatchSpec,
    topo: Topology,
    space: Optional[SearchSpace] = None,
    assumptions: Assumptions = DEFAULT_ASSUMPTIONS,
    stats: Optional[ExplorationStats] = None,
) -> Iterator[Candidate]:
    """Yield every valid, memory-feasible uniform template.

    TP defaults to the GPUs per server and CP is limited to shards of at
    least ``min_cp_shard_tokens``. Chunk counts are the schedule's multiples
    of pp that split the layers evenly (or exactly one chunk per slot),
    and every partition respects the spread cap. When pp is 1 only 1F1B is
    emitted, and a single building emits only DP-out, since the alternatives
    coincide.

    Args:
        model: Model architecture
        batch: Global batch size (microbatch sizes are enumerated)
        topo: Topology
        space: Optional restrictions
        assumptions: Modeling constants
        stats: Optional statistics sink

    Yields:
        (batch, config) pairs that pass validate_config
    """
    space = space or SearchSpace()
    stats = stats or ExplorationStats()
    world = topo.world_size
    gbs = batch.global_batch_size
    placements = list(space.placements)
    if len(topo.buildings) == 1:
        placements = [Placement.DP_OUT]
    tp_values = list(space.tp) if space.tp is not None else _default_tp(topo, model)

    for tp in tp_values:
        if world % tp:
            continue
        rest_tp = world // tp
        cp_default = [
            c
            for c in divisors(rest_tp)
            if c == 1
            or (
                model.seq_len % c == 0
                and model.seq_len // c >= assumptions.min_cp_shard_tokens
            )
        ]
        for cp in _pick(space.cp, cp_default):
            if rest_tp % cp:
                continue
            rest = rest_tp // cp
            pp_default = [p for p in divisors(rest) if p <= model.num_layers]
            for pp in _pick(space.pp, pp_default):
                dp = rest // pp
                if space.dp is not None and dp not in space.dp:
                    continue
                ep_values = _expert_degrees(model, topo, tp, cp, dp)
                if space.ep is not None:
                    ep_values = list(space.ep)
                if gbs % dp:
                    stats.record_rejected(
                        [f"global_batch_size {gbs} not divisible by dp={dp}"]
                    )
                    continue
                m_default = [m for m in divisors(gbs // dp) if gbs // (dp * m) >= pp]
                for m in _pick(space.microbatch_sizes, m_default):
                    sized = BatchSpec(global_batch_size=gbs, microbatch_size=m)
                    schedules = list(space.schedules)
                    if pp == 1:
                        schedules = [ScheduleKind.ONE_F_ONE_B]
                    for ep in ep_values:
                        for schedule in schedules:
                            counts = _chunk_counts(
                                schedule, model.num_layers, pp, space.chunk_layers
                            )
                            for n in counts:
                                if n > model.num_layers:
                                    continue
                                partition = near_uniform_partition(model.num_layers, n)
                                if not spread_ok(partition, assumptions.chunk_spread_cap):
                                    stats.record_spread_rejected()
                                    continue
                                for scheme in _dp_schemes(dp, space.dp_schemes):
                                    for placement in placements:
                                        config = ParallelismConfig(
                                            tp=tp,
                                            cp=cp,
                                            ep=ep,
                                            pp=pp,
                                            dp=dp,
                                            placement=placement,
                                            schedule=schedule,
                                            dp_scheme=scheme,
                                            chunk_partition=partition,
                                        )
                                        stats.record_enumerated()
                                        violations = validate_config(
                                            model, sized, config, topo, assumptions
                                        )
                                        if violations:
                                            stats.record_rejected(violations)
                                            continue
                                        stats.record_feasible()
                                        yield sized, config


@dataclass
class ExplorationReport:
    """Ranked search results with the context needed to reproduce them.

    Attributes:
        entries: Evaluations, fastest first
        recommendation: Network recommendation for the best entry
        assumptions: Modeling constants used
        search: Budget and space that produced the ranking
        stats: Exploration counters
        truncated: True if the wall-time limit cut the search short
        baseline: Optional restricted-search comparison
        reference: Optional comparison against a given configuration
        model_name: Name of the model document
        topology_name: Name of the topology document
    """

    entries: List[Evaluation]
    recommendation: NetworkRecommendation
    assumptions: Dict[str, Any]
    search: Dict[str, Any]
    stats: Dict[str, Any]
    truncated: bool = False
    baseline: Optional[Dict[str, Any]] = None
    reference: Optional[Dict[str, Any]] = None
    model_name: Optional[str] = None
    topology_name: Optional[str] = None

    @property
    def best(self) -> Evaluation:
        """Fastest configuration."""
        return self.entries[0]

    def to_dict(self) -> Dict[str, Any]:
        """JSON-ready form; no wall-clock fields so reruns compare equal."""
        return {
            "version": __version__,
            "model": self.model_name,
            "topology": self.topology_name,
            "best": self.best.to_row(),
            "config": self.best.config.model_dump(mode="json"),
            "batch": self.best.batch.model_dump(mode="json"),
            "ranking": [
                {"rank": i + 1, **entry.to_row()} for i, entry in enumerate(self.entries)
            ],
            "recommendation": self.recommendation.to_dict(),
            "assumptions": self.assumptions,
            "search": self.search,
            "stats": self.stats,
            "truncated": self.truncated,
            "baseline": self.baseline,
            "reference": self.reference,
        }


def _rank(evaluations: Sequence[Optional[Evaluation]]) -> List[Evaluation]:
    unique: Dict[str, Evaluation] = {}
    for ev in evaluations:
        if ev is not None and math.isfinite(ev.iteration_time):
            unique.setdefault(ev.label, ev)
    return sorted(unique.values(), key=lambda ev: ev.sort_key())


def _evaluate_templates(
    templates: List[Candidate],
    evaluator: CandidateEvaluator,
    budget: SearchBudget,
    progress: ProgressManager,
) -> List[Evaluation]:
    """Evaluate templates, growing the PP-out branch stage count by stage count."""
    stats = evaluator.stats
    others = [c for c in templates if c[1].placement != Placement.PP_OUT]
    by_pp: Dict[int, List[Candidate]] = {}
    for cand in templates:
        if cand[1].placement == Placement.PP_OUT:
            by_pp.setdefault(cand[1].pp, []).append(cand)

    progress.start_candidate_progress(len(templates))
    results = evaluator.evaluate_many(others, budget.workers)
    progress.update_candidate_progress(len(others))

    state = PPOutSearchState()
    stage_counts = sorted(by_pp)
    for position, pp in enumerate(stage_counts):
        group = by_pp[pp]
        evaluated = evaluator.evaluate_many(group, budget.workers)
        progress.update_candidate_progress(len(group))
        results.extend(evaluated)
        times = [ev.iteration_time for ev in evaluated if ev is not None]
        state.record(pp, min(times, default=math.inf))
        if prune_ppout(state) == PruneDecision.STOP:
            skipped = sum(len(by_pp[p]) for p in stage_counts[position + 1 :])
            if skipped:
                logger.info("PP-out pruned after pp=%d, skipping %d candidates", pp, skipped)
                stats.record_pruned(skipped)
                progress.update_candidate_progress(skipped)
            break
    return _rank(results)


def _refine(
    model: ModelSpec,
    topo: Topology,
    ranked: List[Evaluation],
    evaluator: CandidateEvaluator,
    budget: SearchBudget,
    assumptions: Assumptions,
    deadline: Optional[float],
    progress: ProgressManager,
) -> Tuple[List[Evaluation], bool]:
    refined: List[Evaluation] = []
    truncated = False
    chosen = ranked[: budget.refine_templates]
    progress.start_partition_progress(len(chosen))
    for index, template in enumerate(chosen):
        if deadline is not None and time.monotonic() >= deadline:
            truncated = True
            break
        rng = np.random.default_rng([budget.seed, index])
        result = mc_partition_search(
            model,
            template.batch,
            template.config,
            topo,
            budget,
            evaluator,
            rng,
            deadline,
            assumptions,
        )
        evaluator.stats.record_refined(result.evaluated, result.truncated)
        truncated = truncated or result.truncated
        best = evaluator.evaluate(
            template.batch,
            template.config.model_copy(update={"chunk_partition": result.partition}),
        )
        if best is not None:
            refined.append(best)
        progress.update_partition_progress()
    return refined, truncated


def _gap_pct(slower: float, faster: float) -> float:
    return (slower - faster) / slower * 100 if slower > 0 else 0.0


def explore(
    model: ModelSpec,
    batch: BatchSpec,
    topo: Topology,
    budget: Optional[SearchBudget] = None,
    space: Optional[SearchSpace] = None,
    assumptions: Assumptions = DEFAULT_ASSUMPTIONS,
    reference: Optional[ParallelismConfig] = None,
    baseline: Optional[str] = None,
    progress: Optional[ProgressManager] = None,
    stats: Optional[ExplorationStats] = None,
) -> ExplorationReport:
    """Search for the configuration with the lowest iteration time.

    Args:
        model: Model architecture
        batch: Global batch size; its microbatch size applies to ``reference``
        topo: Topology
        budget: Search limits
        space: Optional restrictions of the enumerated space
        assumptions: Modeling constants
        reference: Configuration to compare against; it also joins the ranking
        baseline: ``"sailor-like"`` to also search 1F1B with one chunk per stage
        progress: Progress bars (disabled if omitted)
        stats: Statistics sink

    Returns:
        The exploration report

    Raises:
        NoFeasibleConfigError: If enumeration yields nothing
    """
    budget = budget or SearchBudget()
    space = space or SearchSpace()
    stats = stats or ExplorationStats()
    progress = progress or ProgressManager(enabled=False)
    deadline = (
        time.monotonic() + budget.max_wall_time_s if budget.max_wall_time_s else None
    )

    with log_block_timing("enumeration"):
        templates = list(
            enumerate_configs(model, batch, topo, space, assumptions, stats)
        )
    logger.info(
        "Enumerated %d configurations, %d feasible", stats.enumerated, len(templates)
    )
    if not templates:
        binding = stats.binding_constraints(limit=5) or ["empty search space"]
        raise NoFeasibleConfigError(binding)

    evaluator = CandidateEvaluator(model, topo, assumptions, stats)
    with log_block_timing("template evaluation"):
        ranked = _evaluate_templates(templates, evaluator, budget, progress)
    if not ranked:
        raise NoFeasibleConfigError(["no feasible configuration could be evaluated"])
    with log_block_timing("partition search"):
        refined, truncated = _refine(
            model, topo, ranked, evaluator, budget, assumptions, deadline, progress
        )

    ref = evaluator.evaluate(batch, reference) if reference is not None else None
    entries = _rank([*ranked, *refined, ref])[: budget.top_k]
    best = entries[0]
    reference_info = None
    if reference is not None:
        reference_info = {"label": reference.label(), "feasible": ref is not None}
        if ref is not None:
            gain = _gap_pct(ref.iteration_time, best.iteration_time)
            reference_info.update(iteration_time_s=ref.iteration_time, gain_pct=gain)
            logger.info("Best is %.2f%% faster than reference %s", gain, ref.label)

    recommendation = recommend_network(topo, best.config, assumptions, model.num_layers)
    if recommendation.loss_mitigation == LossMitigation.SELECTIVE_REDUNDANCY:
        lossless = CandidateEvaluator(
            model, topo.with_cross_building(loss_rate=0.0), assumptions
        ).evaluate(best.batch, best.config, validate=False)
        if lossless is not None:
            recommendation.lossless_iteration_time_s = lossless.iteration_time

    baseline_info = None
    if baseline == "sailor-like":
        baseline_info = _sailor_like(
            model, batch, topo, budget, space, assumptions, best
        )
    elif baseline is not None:
        raise ValueError(f"Unknown baseline: {baseline}")

    logger.info("Best configuration: %s (%.6f s)", best.label, best.iteration_time)
    return ExplorationReport(
        entries=entries,
        recommendation=recommendation,
        assumptions=assumptions.echo(),
        search={
            "budget": budget.model_dump(mode="json"),
            "space": space.model_dump(mode="json"),
            "exploration_bias": "linear fit on (largest chunk, chunk-size variance)",
            "perturbation_moves": ["adjacent transfer", "merge and split"],
        },
        stats=stats.get_statistics(),
        truncated=truncated or stats.truncated,
        baseline=baseline_info,
        reference=reference_info,
        model_name=model.name,
        topology_name=topo.name,
    )


def _sailor_like(
    model: ModelSpec,
    batch: BatchSpec,
    topo: Topology,
    budget: SearchBudget,
    space: SearchSpace,
    assumptions: Assumptions,
    best: Evaluation,
) -> Dict[str, Any]:
    """Search the 1F1B / FSDP subspace and compare with the overall best."""
    try:
        report = explore(model, batch, topo, budget, space.sailor_like(), assumptions)
    except NoFeasibleConfigError as e:
        return {"mode": "sailor-like", "feasible": False, "violations": e.violations}
    base = report.best
    gap = _gap_pct(base.iteration_time, best.iteration_time)
    logger.info("Best is %.2f%% faster than the sailor-like baseline", gap)
    return {
        "mode": "sailor-like",
        "feasible": True,
        "label": base.label,
        "iteration_time_s": base.iteration_time,
        "gap_pct": gap,
    }
