"""Tests for dependency-driven reconstruction."""

from typing import Dict, List

import networkx as nx
import numpy as np
import pytest

from src.errors import CycleError, UnsetDurationError
from src.kernel_dag import KernelDAG, KernelKind
from src.link_model import Phase
from src.reconstructor import bubble_fraction, compute_lower_bound, reconstruct
from src.schedule_factory import ScheduleFactory
from src.workload import BatchSpec, ModelSpec, ParallelismConfig, Placement, Topology


def random_dag(rng: np.random.Generator, size: int) -> KernelDAG:
    """DAG whose edges only point from lower to higher ids."""
    dag = KernelDAG(num_ranks=1)
    for i in range(size):
        dag.add(
            KernelKind.CHUNK_COMPUTE,
            0,
            0,
            microbatch=i,
            phase=Phase.FWD,
            duration_dpout=float(rng.uniform(0.1, 2.0)),
            duration_ppout=float(rng.uniform(0.1, 2.0)),
        )
        if i:
            count = int(rng.integers(0, min(i, 4) + 1))
            for parent in rng.choice(i, size=count, replace=False):
                dag.add_edge(int(parent), i)
    return dag


def longest_path(dag: KernelDAG, placement: Placement) -> float:
    """Critical path length computed by networkx on an edge-weighted copy."""
    graph = nx.DiGraph()
    sink = -1
    for kernel in dag:
        weight = kernel.duration(placement)
        graph.add_edge(kernel.id, sink, weight=weight)
        for parent in kernel.parents:
            weight = dag.kernels[parent].duration(placement)
            graph.add_edge(parent, kernel.id, weight=weight)
    return float(nx.dag_longest_path_length(graph, weight="weight"))


def finish_times(dag: KernelDAG, placement: Placement) -> List[float]:
    """Earliest finish of every kernel, walking a networkx copy in topological order."""
    graph = nx.DiGraph()
    graph.add_nodes_from(k.id for k in dag)
    graph.add_edges_from((parent, k.id) for k in dag for parent in k.parents)
    finish: Dict[int, float] = {}
    for node in nx.topological_sort(graph):
        begin = max((finish[p] for p in graph.predecessors(node)), default=0.0)
        finish[node] = begin + dag.kernels[node].duration(placement)
    return [finish[k.id] for k in dag]


def test_matches_networkx_schedule() -> None:
    """Every kernel finishes exactly when the networkx walk says, up to 200 kernels."""
    rng = np.random.default_rng(7)
    sizes = [1, 200, *rng.integers(2, 201, size=98)]
    for size in sizes:
        dag = random_dag(rng, int(size))
        rec = reconstruct(dag)
        for placement in Placement:
            assert rec.timelines[placement].finish == finish_times(dag, placement)
        assert rec.t_dpout == pytest.approx(longest_path(dag, Placement.DP_OUT))
        assert rec.t_ppout == pytest.approx(longest_path(dag, Placement.PP_OUT))


def test_cycle_is_reported() -> None:
    """A dependency cycle raises CycleError naming a member."""
    dag = KernelDAG(num_ranks=1)
    for _ in range(3):
        dag.add(
            KernelKind.CHUNK_COMPUTE,
            0,
            0,
            phase=Phase.FWD,
            duration_dpout=1.0,
            duration_ppout=1.0,
        )
    dag.add_edge(0, 1)
    dag.add_edge(1, 2)
    dag.add_edge(2, 1)
    with pytest.raises(CycleError) as err:
        reconstruct(dag)
    assert err.value.kernel_id in (1, 2)


def test_unset_duration() -> None:
    """Every kernel needs durations before reconstruction."""
    dag = KernelDAG(num_ranks=1)
    dag.add(KernelKind.CHUNK_COMPUTE, 0, 0, phase=Phase.FWD)
    with pytest.raises(UnsetDurationError):
        reconstruct(dag)


def test_empty_dag() -> None:
    """Nothing to run takes no time."""
    rec = reconstruct(KernelDAG(num_ranks=1))
    assert rec.t_dpout == rec.t_ppout == 0.0
    assert rec.bubble[Placement.DP_OUT] == [0.0]


def test_bubble_fraction() -> None:
    """Idle share is measured against the whole iteration."""
    dag = KernelDAG(num_ranks=2)
    first = dag.add(
        KernelKind.CHUNK_COMPUTE,
        0,
        0,
        phase=Phase.FWD,
        duration_dpout=1.0,
        duration_ppout=1.0,
    )
    second = dag.add(
        KernelKind.CHUNK_COMPUTE,
        1,
        1,
        phase=Phase.FWD,
        duration_dpout=2.0,
        duration_ppout=2.0,
    )
    dag.add_edge(first.id, second.id)
    dag.compute_order[0] = [first.id]
    dag.compute_order[1] = [second.id]
    rec = reconstruct(dag)
    timeline = rec.timelines[Placement.DP_OUT]
    assert bubble_fraction(dag, timeline, 0) == pytest.approx(2 / 3)
    assert bubble_fraction(dag, timeline, 1) == pytest.approx(1 / 3)
    assert rec.bubble[Placement.PP_OUT] == pytest.approx([2 / 3, 1 / 3])


def test_dense_reference_prefers_dpout(
    dense_model: ModelSpec,
    dense_batch: BatchSpec,
    dense_config: ParallelismConfig,
    topo64: Topology,
) -> None:
    """At 1:16 oversubscription, DP-out beats PP-out for the dense reference."""
    dag = ScheduleFactory().build_dag(dense_model, dense_batch, dense_config, topo64)
    rec = reconstruct(dag)
    assert rec.t_dpout < rec.t_ppout
    assert rec.best_placement == Placement.DP_OUT
    assert (rec.t_ppout - rec.t_dpout) / rec.t_ppout > 0.5
    for placement in Placement:
        assert rec.time(placement) >= compute_lower_bound(dag, placement)
        assert all(0.0 <= b < 1.0 for b in rec.bubble[placement])


def test_dense_placements_converge_without_oversubscription(
    dense_model: ModelSpec,
    dense_batch: BatchSpec,
    dense_config: ParallelismConfig,
    topo64: Topology,
) -> None:
    """At 1:1.33 the two placements are within a couple of percent."""
    topo = topo64.with_cross_building(oversubscription=1.33)
    dag = ScheduleFactory().build_dag(dense_model, dense_batch, dense_config, topo)
    rec = reconstruct(dag)
    assert abs(rec.t_ppout - rec.t_dpout) / rec.t_dpout < 0.02


def test_moe_reference_prefers_ppout(
    moe_model: ModelSpec,
    moe_batch: BatchSpec,
    moe_config: ParallelismConfig,
    topo128: Topology,
) -> None:
    """Expert weights make DP traffic heavy enough that PP-out wins."""
    rec = reconstruct(ScheduleFactory().build_dag(moe_model, moe_batch, moe_config, topo128))
    assert rec.t_ppout < rec.t_dpout
