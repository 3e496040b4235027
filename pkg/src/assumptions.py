"""Modeling assumptions and their TOML loader.

The resolved assumptions are echoed into every report so a result can be
reproduced with the same constants.
"""

import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

from pydantic import Field, ValidationError
import tomli

from .errors import InputError
from .workload import _Document

logger = logging.getLogger(__name__)


class Assumptions(_Document):
    """Tunable constants of the cost model, search and recommendations."""

    # compute
    intra_zone_efficiency: float = Field(default=0.85, gt=0.0, le=1.0)
    eps_dora: float = Field(default=0.02, ge=0.0)
    eps_zbv: float = Field(default=0.06, ge=0.0)

    # memory
    grad_bytes_per_param: float = Field(default=2.0, ge=0.0)
    optimizer_bytes_per_param: float = Field(default=12.0, ge=0.0)
    activation_factor: float = Field(default=16.0, ge=0.0)
    inflight_multiplier_1f1b: float = Field(default=1.0, gt=0.0)
    inflight_multiplier_dorapp: float = Field(default=1.0, gt=0.0)
    inflight_multiplier_zbv: float = Field(default=0.5, gt=0.0)

    # feasibility and search
    min_cp_shard_tokens: int = Field(default=2048, ge=1)
    chunk_spread_cap: float = Field(default=3.0, ge=1.0)
    planner_hop_slots: float = Field(default=1.0, ge=0.0)
    fsdp_prefetch_chunks: int = Field(default=2, ge=1)

    # links
    ecmp_trials: int = Field(default=2000, ge=1)
    ecmp_seed: int = 0
    us_per_km: float = Field(default=5.0, gt=0.0)

    # recommendations
    cc_latency_threshold_us: float = Field(default=100.0, ge=0.0)
    redundancy_latency_threshold_us: float = Field(default=100.0, ge=0.0)
    imbalance_latency_threshold_us: float = Field(default=2000.0, ge=0.0)
    imbalance_factor: int = Field(default=2, ge=1)

    def echo(self) -> Dict[str, Any]:
        """Plain dict form for reports."""
        return self.model_dump(mode="json")


DEFAULT_ASSUMPTIONS = Assumptions()


def load_assumptions(path: Optional[Union[str, Path]] = None) -> Assumptions:
    """Load assumptions from a TOML file, falling back to defaults.

    Keys may sit at the top level or under an ``[assumptions]`` table.

    Args:
        path: Optional TOML file

    Returns:
        Validated assumptions

    Raises:
        InputError: If the file is missing, unparsable or has unknown keys
    """
    if path is None:
        return DEFAULT_ASSUMPTIONS
    file_path = Path(path)
    if not file_path.exists():
        raise InputError(f"Assumptions file not found: {file_path}", ["assumptions"])
    try:
        with open(file_path, "rb") as f:
            data = tomli.load(f)
    except tomli.TOMLDecodeError as e:
        raise InputError(f"assumptions: {e}", ["assumptions"]) from e
    if "assumptions" in data and isinstance(data["assumptions"], dict):
        data = data["assumptions"]
    try:
        assumptions = Assumptions.model_validate(data)
    except ValidationError as e:
        raise InputError.from_validation_error("assumptions", e) from e
    logger.debug("Loaded assumptions from %s", file_path)
    return assumptions
