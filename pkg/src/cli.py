"""Command line interface for the scale-across explorer."""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Type, TypeVar

from pydantic import BaseModel, ValidationError

from .assumptions import Assumptions, load_assumptions
from .errors import InfeasibleConfigError, InputError
from .explorer import SearchBudget, SearchSpace, explore
from .exploration_stats import ExplorationStats
from .feasibility import memory_breakdown, require_valid
from .link_model import latency_from_distance
from .logging_config import VALID_LEVELS, setup_logging
from .logging_utils import format_seconds
from .network_advisor import imbalanced_partition, recommend_network
from .progress_manager import ProgressManager
from .reconstructor import reconstruct
from .report import (
    format_ranking,
    format_volumes,
    metrics,
    provenance,
    timeline_frame,
    volume_rows,
    write_frame,
    write_json,
    write_report,
)
from .schedule_factory import ScheduleFactory
from .sweep import SweepAxis, placement_gap, run_sweep
from .workload import (
    BatchSpec,
    DPSchemeKind,
    ModelSpec,
    ParallelismConfig,
    Placement,
    ScheduleKind,
    Topology,
)

logger = logging.getLogger(__name__)

FIXTURES_DIR = Path(__file__).parent / "fixtures"
EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_INFEASIBLE = 2

T = TypeVar("T", bound=BaseModel)


def resolve_input(path: str, document: str) -> Path:
    """Find an input file, falling back to the bundled fixtures.

    ``fixtures/<name>`` and bare fixture names resolve to the copies shipped
    with the package when no such file exists relative to the working
    directory.

    Args:
        path: Path as given on the command line
        document: Document kind for error messages

    Returns:
        Existing file path

    Raises:
        InputError: If nothing matches
    """
    candidate = Path(path)
    if candidate.exists():
        return candidate
    parts = candidate.parts
    if parts and parts[0] == "fixtures":
        bundled = FIXTURES_DIR.joinpath(*parts[1:])
    else:
        bundled = FIXTURES_DIR / candidate
    if bundled.exists():
        return bundled
    if bundled.with_suffix(".json").exists():
        return bundled.with_suffix(".json")
    raise InputError(f"{document} file not found: {path}", [document])


def load_document(path: str, cls: Type[T], document: str) -> T:
    """Parse and validate a JSON document.

    Raises:
        InputError: On unreadable JSON or schema violations, naming field paths
    """
    file_path = resolve_input(path, document)
    try:
        data = json.loads(file_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise InputError(f"{document}: invalid JSON in {file_path}: {e}", [document]) from e
    try:
        return cls.model_validate(data)
    except ValidationError as e:
        raise InputError.from_validation_error(document, e) from e


def _int_list(text: Optional[str]) -> Optional[tuple]:
    if text is None:
        return None
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError as e:
        raise InputError(f"expected comma-separated integers, got {text!r}") from e


def _enum_list(text: Optional[str], enum: Any, flag: str) -> Optional[tuple]:
    if text is None:
        return None
    try:
        return tuple(enum(v.strip()) for v in text.split(",") if v.strip())
    except ValueError as e:
        choices = ", ".join(m.value for m in enum)
        raise InputError(f"{flag}: {e}; choose from {choices}", [flag]) from e


def parse_values(values: Optional[str], range_spec: Optional[str]) -> List[float]:
    """Sweep values from ``a,b,c`` or ``start:stop:step`` (stop inclusive).

    Raises:
        InputError: If neither form is given, or the one given is malformed or empty
    """
    if not values and not range_spec:
        raise InputError("sweep needs --values or --range", ["values"])
    out: List[float] = []
    try:
        if values:
            out = [float(v) for v in values.split(",") if v.strip()]
        else:
            assert range_spec
            start, stop, step = (float(v) for v in range_spec.split(":"))
            if step <= 0:
                raise ValueError("step must be positive")
            k = 0
            while start + k * step <= stop + 1e-9:
                out.append(round(start + k * step, 9))
                k += 1
    except ValueError as e:
        raise InputError(f"invalid sweep values: {e}", ["values"]) from e
    if not out:
        raise InputError(
            f"sweep values are empty: {values or range_spec!r}", ["values"]
        )
    return out


class Inputs:
    """Documents loaded from the command line, with overrides applied."""

    def __init__(self, args: argparse.Namespace) -> None:
        """Load every document the subcommand asked for."""
        self.assumptions: Assumptions = load_assumptions(args.assumptions_file)
        self.model: Optional[ModelSpec] = None
        self.topo: Optional[Topology] = None
        self.config: Optional[ParallelismConfig] = None
        self.batch: Optional[BatchSpec] = None

        if getattr(args, "model", None):
            self.model = load_document(args.model, ModelSpec, "model")
        if getattr(args, "topology", None):
            self.topo = self._topology(args)
        if getattr(args, "config", None):
            self.config = load_document(args.config, ParallelismConfig, "config")
        self.batch = self._batch(args)

    def _topology(self, args: argparse.Namespace) -> Topology:
        topo = load_document(args.topology, Topology, "topology")
        updates: Dict[str, Any] = {}
        if args.distance_km is not None:
            updates["latency_us"] = latency_from_distance(
                args.distance_km, self.assumptions.us_per_km
            )
        if getattr(args, "oversub", None) is not None:
            updates["oversubscription"] = args.oversub
        if getattr(args, "loss", None) is not None:
            updates["loss_rate"] = args.loss
        if not updates:
            return topo
        try:
            data = topo.model_dump()
            data["cross_building"].update(updates)
            if "latency_us" in updates:
                data["cross_building_latency_us"] = None
            return Topology.model_validate(data)
        except ValidationError as e:
            raise InputError.from_validation_error("topology", e) from e

    def _batch(self, args: argparse.Namespace) -> Optional[BatchSpec]:
        data: Dict[str, Any] = {}
        if getattr(args, "batch", None):
            data = load_document(args.batch, BatchSpec, "batch").model_dump()
        if getattr(args, "gbs", None) is not None:
            data["global_batch_size"] = args.gbs
        if getattr(args, "mbs", None) is not None:
            data["microbatch_size"] = args.mbs
        if not data:
            return None
        data.setdefault("microbatch_size", 1)
        try:
            return BatchSpec.model_validate(data)
        except ValidationError as e:
            raise InputError.from_validation_error("batch", e) from e

    def require(self, *names: str) -> None:
        """Fail with an input error naming the first missing document."""
        for name in names:
            if getattr(self, name) is None:
                flag = {"topo": "topology"}.get(name, name)
                raise InputError(f"--{flag} is required for this command", [flag])


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_explore(args: argparse.Namespace) -> int:
    """Search the configuration space and write report.json and report.csv."""
    inputs = Inputs(args)
    inputs.require("model", "topo", "batch")
    assert inputs.model and inputs.topo and inputs.batch
    budget = SearchBudget(
        top_k=args.top_k,
        perturbations_m=args.perturbations,
        chunk_configs_per_partition=args.chunk_configs,
        stage_partitions=args.stage_partitions,
        refine_templates=args.refine,
        max_wall_time_s=args.max_wall_time,
        seed=args.seed,
        workers=args.workers,
    )
    space_fields: Dict[str, Any] = {
        "tp": _int_list(args.tp),
        "cp": _int_list(args.cp),
        "ep": _int_list(args.ep),
        "pp": _int_list(args.pp),
        "dp": _int_list(args.dp),
        "microbatch_sizes": (args.mbs,) if args.mbs else None,
        "chunk_layers": _int_list(args.chunk_layers),
    }
    for name, text, enum, flag in (
        ("schedules", args.schedules, ScheduleKind, "--schedules"),
        ("dp_schemes", args.dp_schemes, DPSchemeKind, "--dp-schemes"),
        ("placements", args.placements, Placement, "--placements"),
    ):
        values = _enum_list(text, enum, flag)
        if values:
            space_fields[name] = values
    space = SearchSpace(**space_fields)
    reference = None
    if args.reference:
        reference = load_document(args.reference, ParallelismConfig, "reference")

    stats = ExplorationStats()
    with ProgressManager(enabled=None if not args.quiet else False) as progress:
        report = explore(
            inputs.model,
            inputs.batch,
            inputs.topo,
            budget,
            space,
            inputs.assumptions,
            reference=reference,
            baseline=args.baseline,
            progress=progress,
            stats=stats,
        )

    out = _out_dir(args)
    write_report(report, out)
    best = report.best
    dag = ScheduleFactory(inputs.assumptions).build_dag(
        inputs.model, best.batch, best.config, inputs.topo
    )
    write_frame(
        timeline_frame(dag, reconstruct(dag)),
        out / "timeline.csv",
        provenance(inputs.assumptions),
    )
    if not args.quiet:
        print(format_ranking(report))
        print(stats)
        print(f"Best: {best.label} ({format_seconds(best.iteration_time)})")
        if report.baseline and report.baseline.get("feasible"):
            print(f"Gap vs sailor-like baseline: {report.baseline['gap_pct']:.2f}%")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    """Evaluate one configuration; write timeline.csv and metrics.json."""
    inputs = Inputs(args)
    inputs.require("model", "topo", "config", "batch")
    assert inputs.model and inputs.topo and inputs.config and inputs.batch
    model, topo, config, batch = inputs.model, inputs.topo, inputs.config, inputs.batch
    require_valid(model, batch, config, topo, inputs.assumptions)
    factory = ScheduleFactory(inputs.assumptions)
    dag = factory.build_dag(model, batch, config, topo)
    rec = reconstruct(dag)

    flat = topo.with_cross_building(oversubscription=1.0)
    flat_rec = reconstruct(factory.build_dag(model, batch, config, flat))
    memory = memory_breakdown(model, batch, config, inputs.assumptions)
    extra: Dict[str, Any] = {
        "iteration_time_s": rec.time(config.placement),
        "normalized_to_no_oversubscription": {
            pl.value: rec.time(pl) / flat_rec.time(pl) for pl in Placement
        },
        "memory_bytes": {
            "model_state": memory.model_state_bytes,
            "activation": memory.activation_bytes,
            "total": memory.total_bytes,
        },
    }
    if args.imbalanced:
        sizes = imbalanced_partition(
            model.num_layers, config.num_chunks, inputs.assumptions.imbalance_factor
        )
        variant = config.model_copy(update={"chunk_partition": sizes})
        alt = reconstruct(factory.build_dag(model, batch, variant, topo))
        extra["imbalanced"] = {
            "chunk_partition": list(sizes),
            "iteration_time_s": alt.time(config.placement),
        }

    out = _out_dir(args)
    header = provenance(inputs.assumptions)
    write_frame(timeline_frame(dag, rec), out / "timeline.csv", header)
    write_json(metrics(rec, config, inputs.assumptions, extra), out / "metrics.json")
    if not args.quiet:
        print(
            f"{config.label()}: DP-out {format_seconds(rec.t_dpout)}, "
            f"PP-out {format_seconds(rec.t_ppout)}"
        )
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    """Sweep one axis and write sweep.csv."""
    inputs = Inputs(args)
    inputs.require("model", "topo", "config", "batch")
    assert inputs.model and inputs.topo and inputs.config and inputs.batch
    values = parse_values(args.values, args.range)
    with ProgressManager(enabled=None if not args.quiet else False) as progress:
        frame = run_sweep(
            SweepAxis(args.axis),
            values,
            inputs.model,
            inputs.batch,
            inputs.config,
            inputs.topo,
            inputs.assumptions,
            _enum_list(args.schedules, ScheduleKind, "--schedules"),
            _enum_list(args.dp_schemes, DPSchemeKind, "--dp-schemes"),
            progress,
        )
    write_frame(frame, _out_dir(args) / "sweep.csv", provenance(inputs.assumptions))
    if not args.quiet:
        print(placement_gap(frame).to_string(index=False))
    return EXIT_OK


def cmd_volumes(args: argparse.Namespace) -> int:
    """Print closed-form traffic volumes."""
    inputs = Inputs(args)
    inputs.require("model", "topo", "config", "batch")
    assert inputs.model and inputs.topo and inputs.config and inputs.batch
    rows = volume_rows(inputs.model, inputs.batch, inputs.config, inputs.topo)
    if args.format == "json":
        print(json.dumps(rows, sort_keys=True, indent=2))
    else:
        print(format_volumes(rows))
    return EXIT_OK


def cmd_dump_schedule(args: argparse.Namespace) -> int:
    """Write dag.json and timeline.csv for one configuration."""
    inputs = Inputs(args)
    inputs.require("model", "topo", "config", "batch")
    assert inputs.model and inputs.topo and inputs.config and inputs.batch
    model, topo, config, batch = inputs.model, inputs.topo, inputs.config, inputs.batch
    require_valid(model, batch, config, topo, inputs.assumptions)
    dag = ScheduleFactory(inputs.assumptions).build_dag(model, batch, config, topo)
    rec = reconstruct(dag)
    out = _out_dir(args)
    header = provenance(inputs.assumptions)
    write_json({**header, **dag.to_dict()}, out / "dag.json")
    write_frame(timeline_frame(dag, rec), out / "timeline.csv", header)
    if not args.quiet:
        print(f"Wrote {len(dag)} kernels to {out / 'dag.json'}")
    return EXIT_OK


def cmd_recommend_net(args: argparse.Namespace) -> int:
    """Print a network recommendation as JSON."""
    inputs = Inputs(args)
    inputs.require("topo")
    assert inputs.topo
    layers = inputs.model.num_layers if inputs.model else None
    rec = recommend_network(inputs.topo, inputs.config, inputs.assumptions, layers)
    print(json.dumps(rec.to_dict(), sort_keys=True, indent=2))
    return EXIT_OK


def _add_inputs(parser: argparse.ArgumentParser, config: bool = True) -> None:
    parser.add_argument("--model", help="Model JSON (or fixtures/<name>)")
    parser.add_argument("--topology", help="Topology JSON (or fixtures/<name>)")
    if config:
        parser.add_argument("--config", help="Parallelism configuration JSON")
    parser.add_argument("--batch", help="Batch JSON")
    parser.add_argument("--gbs", type=int, help="Global batch size override")
    parser.add_argument("--mbs", type=int, help="Microbatch size override")
    parser.add_argument(
        "--oversub", type=float, help="Cross-building oversubscription override"
    )
    parser.add_argument("--loss", type=float, help="Cross-building loss rate override")


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """Parse command line arguments.

    Returns:
        Parsed arguments
    """
    parser = argparse.ArgumentParser(
        description="Explore parallelism configurations for multi-building LLM training."
    )
    parser.add_argument("--seed", type=int, default=0, help="Seed of every random choice")
    parser.add_argument("--out-dir", default="out", help="Directory for output files")
    parser.add_argument("--assumptions-file", help="TOML file overriding modeling constants")
    parser.add_argument(
        "--distance-km",
        type=float,
        help="Set cross-building latency from fiber distance (5 us/km)",
    )
    parser.add_argument(
        "--log-level",
        default="WARNING",
        type=str.upper,
        choices=VALID_LEVELS,
        help="Console log level",
    )
    parser.add_argument(
        "-q", "--quiet", action="store_true", help="No progress bars or summaries"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("explore", help="Search for the fastest configuration")
    _add_inputs(p, config=False)
    p.add_argument("--top-k", type=int, default=1000)
    p.add_argument("--perturbations", type=int, default=100)
    p.add_argument("--chunk-configs", type=int, default=100)
    p.add_argument("--stage-partitions", type=int, default=10)
    p.add_argument("--refine", type=int, default=10, help="Templates given a partition search")
    p.add_argument("--max-wall-time", type=float, default=None, help="Seconds")
    p.add_argument("--workers", type=int, default=1)
    for name in ("tp", "cp", "ep", "pp", "dp"):
        p.add_argument(f"--{name}", help=f"Comma-separated {name.upper()} degrees to consider")
    p.add_argument("--chunk-layers", help="Comma-separated layers per chunk to consider")
    p.add_argument("--schedules", help="Comma-separated: OneFOneB, DoraPP, InterleavedZBV")
    p.add_argument("--dp-schemes", help="Comma-separated: FSDP, HSDP")
    p.add_argument("--placements", help="Comma-separated: DPOut, PPOut")
    p.add_argument("--reference", help="Configuration JSON to compare against")
    p.add_argument(
        "--baseline",
        choices=["sailor-like"],
        help="Also search a restricted baseline",
    )
    p.set_defaults(handler=cmd_explore)

    p = sub.add_parser("eval", help="Evaluate one configuration")
    _add_inputs(p)
    p.add_argument(
        "--imbalanced",
        action="store_true",
        help="Also evaluate a partition whose first chunk carries extra layers",
    )
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("sweep", help="Sweep one parameter")
    _add_inputs(p)
    p.add_argument("--axis", required=True, choices=[a.value for a in SweepAxis])
    p.add_argument("--values", help="Comma-separated values")
    p.add_argument("--range", help="start:stop:step, stop inclusive")
    p.add_argument("--schedules", help="Comma-separated schedules (default: the config's)")
    p.add_argument("--dp-schemes", help="Comma-separated DP schemes (default: the config's)")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("volumes", help="Print communication volumes")
    _add_inputs(p)
    p.add_argument("--format", choices=["table", "json"], default="table")
    p.set_defaults(handler=cmd_volumes)

    p = sub.add_parser("dump-schedule", help="Write the kernel DAG and timeline")
    _add_inputs(p)
    p.set_defaults(handler=cmd_dump_schedule)

    p = sub.add_parser("recommend-net", help="Recommend network settings")
    _add_inputs(p)
    p.set_defaults(handler=cmd_recommend_net)

    return parser.parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> None:
    """Main entry point."""
    args = parse_args(argv)
    try:
        setup_logging(args.log_level, log_dir=str(Path(args.out_dir) / "logs"))
        code = args.handler(args)
    except InputError as e:
        logger.debug("Input error", exc_info=True)
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(EXIT_INPUT_ERROR)
    except InfeasibleConfigError as e:
        print(f"Infeasible: {e}", file=sys.stderr)
        sys.exit(EXIT_INFEASIBLE)
    except ValueError as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(EXIT_INPUT_ERROR)
    if code:
        sys.exit(code)


if __name__ == "__main__":
    main()
