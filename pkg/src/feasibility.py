"""Derived quantities and feasibility checks for a configuration."""

from dataclasses import dataclass
import logging
import math
from typing import List, Optional

from .assumptions import DEFAULT_ASSUMPTIONS, Assumptions
from .errors import InfeasibleConfigError
from .placement import placement_violations
from .workload import (
    GIB,
    BatchSpec,
    DPSchemeKind,
    ModelSpec,
    ParallelismConfig,
    ScheduleKind,
    Topology,
)

logger = logging.getLogger(__name__)


def num_microbatches(batch: BatchSpec, p: ParallelismConfig) -> int:
    """Microbatches each pipeline processes per iteration.

    Args:
        batch: Batch sizes
        p: Parallelism configuration

    Returns:
        global_batch_size / (dp * microbatch_size)

    Raises:
        InfeasibleConfigError: If the global batch does not split evenly
    """
    per_step = p.dp * batch.microbatch_size
    if batch.global_batch_size % per_step:
        raise InfeasibleConfigError(
            [
                f"global_batch_size {batch.global_batch_size} not divisible by "
                f"dp*microbatch_size = {p.dp}*{batch.microbatch_size}"
            ]
        )
    return batch.global_batch_size // per_step


@dataclass(frozen=True)
class MemoryBreakdown:
    """Per-GPU memory estimate split into its two terms."""

    model_state_bytes: float
    activation_bytes: float

    @property
    def total_bytes(self) -> float:
        """Sum of both terms."""
        return self.model_state_bytes + self.activation_bytes


def inflight_microbatches(
    schedule: ScheduleKind, pp: int, assumptions: Assumptions = DEFAULT_ASSUMPTIONS
) -> int:
    """Microbatches whose activations are live at the peak of a stage."""
    factor = {
        ScheduleKind.ONE_F_ONE_B: assumptions.inflight_multiplier_1f1b,
        ScheduleKind.DORAPP: assumptions.inflight_multiplier_dorapp,
        ScheduleKind.INTERLEAVED_ZBV: assumptions.inflight_multiplier_zbv,
    }[schedule]
    return max(1, math.ceil(pp * factor))


def memory_breakdown(
    model: ModelSpec,
    batch: BatchSpec,
    p: ParallelismConfig,
    assumptions: Assumptions = DEFAULT_ASSUMPTIONS,
) -> MemoryBreakdown:
    """Coarse per-GPU memory estimate used as a feasibility filter.

    Model state is parameters, gradients and optimizer states of the
    heaviest stage, sharded by tp (and ep for experts) and by the shard
    degree of the DP scheme. Activations are kept per layer for every
    in-flight microbatch.
    """
    stage_layers = max(p.stage_layers()) if p.pp > 0 else model.num_layers
    params = stage_layers * model.sharded_layer_elements(p.tp, p.ep)
    per_param = (
        model.bytes_per_element
        + assumptions.grad_bytes_per_param
        + assumptions.optimizer_bytes_per_param
    )
    shard = p.shard_degree if p.dp_scheme.kind == DPSchemeKind.HSDP else p.dp
    model_state = params * per_param / shard

    tokens = batch.microbatch_size * model.seq_len / p.cp
    per_layer = (
        assumptions.activation_factor
        * tokens
        * model.hidden_dim
        * model.bytes_per_element
        / p.tp
    )
    activation = (
        per_layer * stage_layers * inflight_microbatches(p.schedule, p.pp, assumptions)
    )
    return MemoryBreakdown(model_state, activation)


def memory_estimate(
    model: ModelSpec,
    batch: BatchSpec,
    p: ParallelismConfig,
    assumptions: Assumptions = DEFAULT_ASSUMPTIONS,
) -> float:
    """Estimated bytes per GPU (model state plus activations)."""
    return memory_breakdown(model, batch, p, assumptions).total_bytes


def chunk_layout_violations(model: ModelSpec, p: ParallelismConfig) -> List[str]:
    """Problems with the chunk partition for the chosen schedule."""
    violations = []
    if sum(p.chunk_partition) != model.num_layers:
        violations.append(
            f"chunk sizes sum to {sum(p.chunk_partition)}, "
            f"model has {model.num_layers} layers"
        )
    n = p.num_chunks
    if p.schedule == ScheduleKind.ONE_F_ONE_B and n != p.pp:
        violations.append(f"1F1B needs one chunk per stage ({n} chunks, pp={p.pp})")
    elif p.schedule == ScheduleKind.DORAPP and n % p.pp:
        violations.append(f"round-robin needs a multiple of pp chunks ({n}, pp={p.pp})")
    elif p.schedule == ScheduleKind.INTERLEAVED_ZBV and n % (2 * p.pp):
        violations.append(
            f"V-shape needs a multiple of 2*pp chunks ({n}, pp={p.pp})"
        )
    return violations


def validate_config(
    model: ModelSpec,
    batch: BatchSpec,
    p: ParallelismConfig,
    topo: Topology,
    assumptions: Optional[Assumptions] = None,
) -> List[str]:
    """List every constraint a configuration violates.

    Violations are returned as data; an empty list means the configuration
    is valid and fits in memory.

    Args:
        model: Model architecture
        batch: Batch sizes
        p: Parallelism configuration
        topo: Topology
        assumptions: Modeling constants

    Returns:
        Human-readable violation strings
    """
    assumptions = assumptions or DEFAULT_ASSUMPTIONS
    violations: List[str] = []
    if p.world_size != topo.world_size:
        violations.append(
            f"degree product tp*cp*pp*dp = {p.world_size} "
            f"!= world size {topo.world_size}"
        )
    if (p.dp * p.cp) % p.ep:
        violations.append(f"ep={p.ep} does not divide dp*cp={p.dp * p.cp}")
    if model.is_moe and model.num_experts % p.ep:
        violations.append(f"ep={p.ep} does not divide num_experts={model.num_experts}")
    if not model.is_moe and p.ep != 1:
        violations.append("dense models use ep=1")
    if p.tp * p.ep > topo.gpus_per_zone:
        violations.append(
            f"tp*ep={p.tp * p.ep} exceeds GPUs per zone ({topo.gpus_per_zone})"
        )
    if model.hidden_dim % p.tp:
        violations.append(f"hidden_dim {model.hidden_dim} not divisible by tp={p.tp}")
    if p.cp > 1 and (
        model.seq_len % p.cp or model.seq_len // p.cp < assumptions.min_cp_shard_tokens
    ):
        violations.append(
            f"context shard below {assumptions.min_cp_shard_tokens} tokens "
            f"(seq_len {model.seq_len} / cp {p.cp})"
        )
    try:
        mb = num_microbatches(batch, p)
        if mb < p.pp:
            violations.append(f"microbatches < pipeline stages ({mb} < {p.pp})")
    except InfeasibleConfigError as e:
        violations.extend(e.violations)
    if p.dp_scheme.kind == DPSchemeKind.HSDP and p.dp < 2:
        violations.append("HSDP needs dp >= 2")
    layout = chunk_layout_violations(model, p)
    violations.extend(layout)
    violations.extend(placement_violations(topo, p, p.placement))
    if not layout:
        needed = memory_estimate(model, batch, p, assumptions)
        if needed > topo.gpu.hbm_bytes:
            violations.append(
                f"memory estimate {needed / GIB:.1f} GiB exceeds "
                f"HBM {topo.gpu.hbm_bytes / GIB:.1f} GiB"
            )
    if violations:
        logger.debug("%s: %d violations", p.label(), len(violations))
    return violations


def require_valid(
    model: ModelSpec,
    batch: BatchSpec,
    p: ParallelismConfig,
    topo: Topology,
    assumptions: Optional[Assumptions] = None,
) -> None:
    """Raise InfeasibleConfigError if validate_config finds anything."""
    violations = validate_config(model, batch, p, topo, assumptions)
    if violations:
        raise InfeasibleConfigError(violations)
