"""Test configuration and fixtures."""

import json
from pathlib import Path
import shutil
from typing import Any, Callable, Generator, Type, TypeVar

from pydantic import BaseModel
import pytest

from src.workload import (
    BatchSpec,
    BuildingSpec,
    GpuSpec,
    ModelSpec,
    NicSpec,
    ParallelismConfig,
    TierLink,
    Topology,
)

FIXTURES = Path(__file__).parent.parent / "src" / "fixtures"

T = TypeVar("T", bound=BaseModel)


def load_fixture(name: str, cls: Type[T]) -> T:
    """Validate a bundled JSON fixture."""
    return cls.model_validate(json.loads((FIXTURES / name).read_text(encoding="utf-8")))


@pytest.fixture
def clean_tmp_path(tmp_path: Path) -> Generator[Path, None, None]:
    """Create a clean temporary directory for output files.

    Args:
        tmp_path: Pytest's temporary directory fixture

    Returns:
        Generator yielding path to clean temporary directory
    """
    test_dir = tmp_path / "test"
    test_dir.mkdir(parents=True, exist_ok=True)

    yield test_dir

    if test_dir.exists():
        shutil.rmtree(test_dir)


@pytest.fixture
def dense_model() -> ModelSpec:
    """17B dense model."""
    return load_fixture("dense17b.json", ModelSpec)


@pytest.fixture
def moe_model() -> ModelSpec:
    """40B mixture-of-experts model."""
    return load_fixture("moe40b.json", ModelSpec)


@pytest.fixture
def dense_config() -> ParallelismConfig:
    """Reference dense configuration 8-1-1-2-4 with one-layer chunks."""
    return load_fixture("config-dense17b.json", ParallelismConfig)


@pytest.fixture
def moe_config() -> ParallelismConfig:
    """Reference MoE configuration 4-1-16-2-16 with two-layer chunks."""
    return load_fixture("config-moe40b.json", ParallelismConfig)


@pytest.fixture
def dense_batch() -> BatchSpec:
    """Global batch 176, microbatch 4."""
    return load_fixture("batch-dense17b.json", BatchSpec)


@pytest.fixture
def moe_batch() -> BatchSpec:
    """Global batch 64, microbatch 1."""
    return load_fixture("batch-moe40b.json", BatchSpec)


@pytest.fixture
def topo64() -> Topology:
    """Two buildings of 32 GPUs, two zones each."""
    return load_fixture("two-building-64.json", Topology)


@pytest.fixture
def topo128() -> Topology:
    """Two buildings of 64 GPUs."""
    return load_fixture("two-building.json", Topology)


@pytest.fixture
def at_oversub() -> Callable[[Topology, float], Topology]:
    """Copy a topology with a cross-building oversubscription of 1:x."""

    def make(topo: Topology, x: float) -> Topology:
        return topo.with_cross_building(oversubscription=x)

    return make


def small_topology(
    buildings: int = 2,
    gpus_per_building: int = 4,
    gpus_per_server: int = 2,
    latency_us: float = 50.0,
    **cross: Any,
) -> Topology:
    """Tiny topology for exhaustive searches."""
    return Topology(
        name="small",
        buildings=tuple(BuildingSpec(gpu_count=gpus_per_building) for _ in range(buildings)),
        intra_server=TierLink(bandwidth_gbps=3600, latency_us=2),
        intra_zone=TierLink(bandwidth_gbps=400, latency_us=5),
        cross_zone=TierLink(bandwidth_gbps=400, latency_us=25),
        cross_building=TierLink(bandwidth_gbps=400, latency_us=latency_us, **cross),
        nic=NicSpec(qp_count=4),
        gpu=GpuSpec(gpus_per_server=gpus_per_server),
    )


def small_model(num_layers: int = 6, **fields: Any) -> ModelSpec:
    """Tiny dense model whose DAGs reconstruct in milliseconds."""
    data = {
        "name": "tiny",
        "num_layers": num_layers,
        "hidden_dim": 1024,
        "ffn_dim": 4096,
        "seq_len": 2048,
    }
    data.update(fields)
    return ModelSpec(**data)


@pytest.fixture
def make_topology() -> Callable[..., Topology]:
    """Factory for small topologies."""
    return small_topology


@pytest.fixture
def make_model() -> Callable[..., ModelSpec]:
    """Factory for small dense models."""
    return small_model
