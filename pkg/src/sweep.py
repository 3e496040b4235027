"""Parameter sweeps of a base configuration across schedules and DP schemes."""

from enum import Enum
import logging
import math
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd
from pydantic import ValidationError

from .assumptions import DEFAULT_ASSUMPTIONS, Assumptions
from .errors import InfeasibleConfigError, InputError
from .evaluator import Outcome, evaluate_outcome
from .feasibility import validate_config
from .link_model import latency_from_distance
from .partition_search import near_uniform_partition
from .progress_manager import ProgressManager
from .schedules.planner import PlannerStuckError
from .workload import (
    BatchSpec,
    DPScheme,
    DPSchemeKind,
    ModelSpec,
    ParallelismConfig,
    Placement,
    ScheduleKind,
    Topology,
)

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = [
    "axis",
    "value",
    "placement",
    "schedule",
    "dp_scheme",
    "feasible",
    "iteration_time_s",
    "lossless_time_s",
    "loss_inflation",
    "cross_building_bytes",
    "violations",
]


class SweepAxis(str, Enum):
    """Quantities a sweep can vary."""

    OVERSUB = "oversub"
    LATENCY_US = "latency_us"
    DISTANCE_KM = "distance_km"
    EXPERTS = "experts"
    BATCH = "batch"


def apply_axis(
    axis: SweepAxis,
    value: float,
    model: ModelSpec,
    batch: BatchSpec,
    topo: Topology,
    assumptions: Assumptions = DEFAULT_ASSUMPTIONS,
) -> Tuple[ModelSpec, BatchSpec, Topology]:
    """Inputs with one quantity replaced.

    Raises:
        InputError: If the new value makes a document invalid
    """
    try:
        if axis == SweepAxis.OVERSUB:
            return model, batch, topo.with_cross_building(oversubscription=value)
        if axis == SweepAxis.LATENCY_US:
            return model, batch, topo.with_cross_building(latency_us=value)
        if axis == SweepAxis.DISTANCE_KM:
            latency = latency_from_distance(value, assumptions.us_per_km)
            return model, batch, topo.with_cross_building(latency_us=latency)
        if axis == SweepAxis.EXPERTS:
            data = model.model_dump()
            data["num_experts"] = int(value)
            return ModelSpec.model_validate(data), batch, topo
        data = batch.model_dump()
        data["global_batch_size"] = int(value)
        return model, BatchSpec.model_validate(data), topo
    except ValidationError as e:
        raise InputError.from_validation_error(axis.value, e) from e


def retarget(
    config: ParallelismConfig,
    schedule: ScheduleKind,
    scheme: DPSchemeKind,
    num_layers: int,
) -> Optional[ParallelismConfig]:
    """Adapt a configuration to another schedule and DP scheme.

    1F1B takes one chunk per stage holding that stage's layers. Interleaved
    schedules keep the chunking when its count suits them and otherwise use
    the smallest count they accept. HSDP keeps the configuration's replica
    groups, or uses two when it was FSDP.

    Returns:
        The adapted configuration, or None if the DP scheme cannot apply
    """
    if schedule == config.schedule:
        partition = config.chunk_partition
    elif schedule == ScheduleKind.ONE_F_ONE_B:
        partition = tuple(config.stage_layers())
    else:
        step = config.pp if schedule == ScheduleKind.DORAPP else 2 * config.pp
        if config.num_chunks % step == 0:
            partition = config.chunk_partition
        else:
            partition = near_uniform_partition(num_layers, step)

    if scheme == DPSchemeKind.FSDP:
        dp_scheme = DPScheme.fsdp()
    elif config.dp_scheme.kind == DPSchemeKind.HSDP:
        dp_scheme = config.dp_scheme
    elif config.dp % 2 == 0 and config.dp >= 2:
        dp_scheme = DPScheme.hsdp(2, config.dp // 2)
    else:
        return None
    return config.model_copy(
        update={"schedule": schedule, "chunk_partition": partition, "dp_scheme": dp_scheme}
    )


def _safe_outcome(
    model: ModelSpec,
    batch: BatchSpec,
    config: ParallelismConfig,
    topo: Topology,
    assumptions: Assumptions,
) -> Tuple[Optional[Outcome], List[str]]:
    try:
        return evaluate_outcome(model, batch, config, topo, assumptions), []
    except InfeasibleConfigError as e:
        return None, e.violations
    except PlannerStuckError as e:
        return None, [str(e)]


def run_sweep(
    axis: SweepAxis,
    values: Sequence[float],
    model: ModelSpec,
    batch: BatchSpec,
    config: ParallelismConfig,
    topo: Topology,
    assumptions: Assumptions = DEFAULT_ASSUMPTIONS,
    schedules: Optional[Sequence[ScheduleKind]] = None,
    dp_schemes: Optional[Sequence[DPSchemeKind]] = None,
    progress: Optional[ProgressManager] = None,
) -> pd.DataFrame:
    """Evaluate a configuration across axis values, both placements per row pair.

    Each (value, schedule, DP scheme) builds one DAG and yields a row per
    placement. When the cross-building link is lossy the lossless time is
    reported too, so loss inflation can be read per row.

    Args:
        axis: Quantity to vary
        values: Axis values
        model: Model architecture
        batch: Batch sizes
        config: Base configuration
        topo: Base topology
        assumptions: Modeling constants
        schedules: Schedules to evaluate (default: the configuration's)
        dp_schemes: DP schemes to evaluate (default: the configuration's)
        progress: Optional progress bars

    Returns:
        One row per (value, placement, schedule, dp_scheme) in SWEEP_COLUMNS order
    """
    schedules = list(schedules or [config.schedule])
    dp_schemes = list(dp_schemes or [config.dp_scheme.kind])
    progress = progress or ProgressManager(enabled=False)
    progress.start_candidate_progress(
        len(values) * len(schedules) * len(dp_schemes), desc=f"Sweeping {axis.value}"
    )
    rows: List[Dict[str, Any]] = []
    for value in values:
        m, b, t = apply_axis(axis, value, model, batch, topo, assumptions)
        lossy = t.cross_building.loss_rate > 0
        for schedule in schedules:
            for scheme in dp_schemes:
                progress.update_candidate_progress()
                variant = retarget(config, schedule, scheme, m.num_layers)
                base = {"axis": axis.value, "value": value, "schedule": schedule.value}
                if variant is None:
                    for placement in Placement:
                        rows.append(
                            {
                                **base,
                                "placement": placement.value,
                                "dp_scheme": scheme.value,
                                "feasible": False,
                                "violations": f"{scheme.value} needs an even dp",
                            }
                        )
                    continue
                outcome, errors = _safe_outcome(m, b, variant, t, assumptions)
                lossless = None
                if outcome is not None and lossy:
                    lossless, _ = _safe_outcome(
                        m, b, variant, t.with_cross_building(loss_rate=0.0), assumptions
                    )
                for placement in Placement:
                    placed = variant.model_copy(update={"placement": placement})
                    violations = errors or validate_config(m, b, placed, t, assumptions)
                    row: Dict[str, Any] = {
                        **base,
                        "placement": placement.value,
                        "dp_scheme": variant.dp_scheme.label(),
                        "feasible": not violations,
                        "violations": "; ".join(violations),
                    }
                    if outcome is not None:
                        seconds = outcome.time(placement)
                        clean = lossless.time(placement) if lossless else seconds
                        row.update(
                            iteration_time_s=seconds,
                            lossless_time_s=clean,
                            loss_inflation=seconds / clean if clean > 0 else math.nan,
                            cross_building_bytes=outcome.cross_bytes(placement),
                        )
                    rows.append(row)
    frame = pd.DataFrame(rows).reindex(columns=SWEEP_COLUMNS)
    logger.info("Sweep over %s produced %d rows", axis.value, len(frame))
    return frame


def placement_gap(frame: pd.DataFrame) -> pd.DataFrame:
    """Per axis value and schedule, how much slower PP-out is than DP-out, in percent."""
    timed = frame.dropna(subset=["iteration_time_s"])
    wide = timed.pivot_table(
        index=["value", "schedule", "dp_scheme"],
        columns="placement",
        values="iteration_time_s",
    ).reset_index()
    dp, pp = Placement.DP_OUT.value, Placement.PP_OUT.value
    if dp in wide and pp in wide:
        wide["pp_minus_dp_pct"] = (wide[pp] - wide[dp]) / wide[dp] * 100
    return wide
