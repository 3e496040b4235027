"""Report, timeline and traffic-table writers."""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import pandas as pd
from tabulate import tabulate

from . import __version__
from .assumptions import Assumptions
from .comm_volume import (
    cross_building_traffic,
    dp_layer_elements,
    pp_p2p_count,
    pp_p2p_elements,
    stage_boundaries,
)
from .explorer import ExplorationReport
from .kernel_dag import KernelDAG
from .reconstructor import Reconstruction
from .workload import BatchSpec, ModelSpec, ParallelismConfig, Placement, Topology

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def write_json(data: Any, path: PathLike) -> Path:
    """Write JSON with sorted keys so identical inputs give identical bytes."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    logger.debug("Wrote %s", target)
    return target


def provenance(assumptions: Assumptions) -> Dict[str, Any]:
    """Tool version and modeling constants behind an output file."""
    return {"version": __version__, "assumptions": assumptions.echo()}


def write_frame(
    frame: pd.DataFrame, path: PathLike, header: Optional[Dict[str, Any]] = None
) -> Path:
    """Write a DataFrame as CSV without the index.

    Each header entry becomes a leading ``# key: value`` line (values as
    JSON), so the file reads back with ``pd.read_csv(path, comment="#")``.
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", encoding="utf-8", newline="") as f:
        for key, value in (header or {}).items():
            f.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")
        frame.to_csv(f, index=False)
    logger.debug("Wrote %s (%d rows)", target, len(frame))
    return target


def ranking_frame(report: ExplorationReport) -> pd.DataFrame:
    """Flat ranking table."""
    rows = [{"rank": i + 1, **e.to_row()} for i, e in enumerate(report.entries)]
    return pd.DataFrame(rows)


def write_report(report: ExplorationReport, out_dir: PathLike) -> List[Path]:
    """Write report.json and report.csv into a directory."""
    out = Path(out_dir)
    return [
        write_json(report.to_dict(), out / "report.json"),
        write_frame(
            ranking_frame(report),
            out / "report.csv",
            {"version": __version__, "assumptions": report.assumptions},
        ),
    ]


def timeline_frame(dag: KernelDAG, rec: Reconstruction) -> pd.DataFrame:
    """Per-kernel start and finish under both placements, for plotting."""
    rows: List[Dict[str, Any]] = []
    for placement, timeline in rec.timelines.items():
        for kernel in dag.kernels:
            tier = kernel.tier(placement)
            rows.append(
                {
                    "placement": placement.value,
                    "kernel": kernel.id,
                    "label": kernel.label(),
                    "kind": kernel.kind.value,
                    "rank": kernel.rank,
                    "stream": kernel.stream,
                    "tier": tier.value if tier else None,
                    "start_s": timeline.start[kernel.id],
                    "finish_s": timeline.finish[kernel.id],
                    "duration_s": timeline.finish[kernel.id] - timeline.start[kernel.id],
                }
            )
    return pd.DataFrame(rows)


def metrics(
    rec: Reconstruction,
    config: ParallelismConfig,
    assumptions: Assumptions,
    extra: Optional[Dict[str, Any]] = None,
) -> Dict[str, Any]:
    """Headline numbers of one reconstruction, with the inputs that produced them."""
    data: Dict[str, Any] = {
        **provenance(assumptions),
        "config": config.label(),
        "parallelism": config.model_dump(mode="json"),
        "t_dpout_s": rec.t_dpout,
        "t_ppout_s": rec.t_ppout,
        "best_s": rec.best,
        "best_placement": rec.best_placement.value,
        "bubble": {pl.value: values for pl, values in rec.bubble.items()},
        "cross_building_bytes": {
            pl.value: value for pl, value in rec.cross_building_bytes.items()
        },
    }
    if extra:
        data.update(extra)
    return data


def volume_rows(
    model: ModelSpec, batch: BatchSpec, config: ParallelismConfig, topo: Topology
) -> List[Dict[str, Any]]:
    """Traffic accounting: P2P and DP volumes plus cross-building bytes."""
    bpe = model.bytes_per_element
    p2p = pp_p2p_elements(model, batch, config)
    rows: List[Dict[str, Any]] = [
        {"quantity": "pp_p2p_elements", "scope": "per message", "value": p2p},
        {"quantity": "pp_p2p_bytes", "scope": "per message", "value": p2p * bpe},
    ]
    for boundary in stage_boundaries(config):
        rows.append(
            {
                "quantity": "pp_p2p_count",
                "scope": f"stages {boundary[0]}-{boundary[1]}",
                "value": pp_p2p_count(batch, config, boundary),
            }
        )
    layer = dp_layer_elements(model, config)
    rows.append({"quantity": "dp_layer_elements", "scope": "per layer", "value": layer})
    rows.append({"quantity": "dp_layer_bytes", "scope": "per layer", "value": layer * bpe})
    for placement in Placement:
        traffic = cross_building_traffic(model, batch, config, topo, placement)
        for name, value in (
            ("cross_building_pp_bytes", traffic.pp_bytes),
            ("cross_building_dp_bytes", traffic.dp_bytes),
            ("cross_building_bytes", traffic.total_bytes),
        ):
            rows.append({"quantity": name, "scope": placement.value, "value": value})
    return rows


def format_volumes(rows: List[Dict[str, Any]]) -> str:
    """Render volume rows as a plain table."""
    return tabulate(
        [[r["quantity"], r["scope"], r["value"]] for r in rows],
        headers=["Quantity", "Scope", "Value"],
        tablefmt="simple",
        floatfmt=".6g",
    )


def format_ranking(report: ExplorationReport, limit: int = 10) -> str:
    """Top of the ranking as a plain table."""
    rows = [
        [
            i + 1,
            e.label,
            f"{e.iteration_time:.6f}",
            e.cross_building_bytes,
            f"{e.memory_bytes / 2**30:.1f}",
        ]
        for i, e in enumerate(report.entries[:limit])
    ]
    return tabulate(
        rows,
        headers=["#", "Configuration", "Iteration (s)", "Cross-building B", "Mem (GiB)"],
        tablefmt="simple",
    )
