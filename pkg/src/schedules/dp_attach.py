"""Data-parallel collectives wired into a pipeline DAG."""

import logging
from typing import Dict, List, Tuple

from ..comm_volume import dp_layer_elements
from ..kernel_dag import CollectiveLevel, Kernel, KernelDAG, KernelKind
from ..link_model import CollectiveKind, Phase
from ..schedule_builder import BuildContext

logger = logging.getLogger(__name__)


def _layer_offsets(sizes: Tuple[int, ...]) -> List[int]:
    offsets, total = [], 0
    for size in sizes:
        offsets.append(total)
        total += size
    return offsets


def attach_dp(dag: KernelDAG, ctx: BuildContext) -> KernelDAG:
    """Add per-layer DP collectives to every rank.

    FSDP gathers each layer's parameters before the chunk's first forward and
    reduce-scatters its gradients after the chunk's last backward kernel.
    Gathers are prefetched at most ``fsdp_prefetch_chunks`` chunks ahead.
    Under hierarchical HSDP the gather and reduce-scatter stay inside the
    shard group and each reduce-scatter is followed by an AllReduce of the
    shard across replica leaders on a separate stream.

    Args:
        dag: Pipeline DAG from a schedule builder
        ctx: Build context

    Returns:
        The same DAG with DP kernels added; unchanged when dp == 1
    """
    p = ctx.config
    if p.dp <= 1:
        return dag

    layer_bytes = dp_layer_elements(ctx.model, p) * ctx.model.bytes_per_element
    hierarchical = p.is_hierarchical
    intra_level = CollectiveLevel.INTRA if hierarchical else CollectiveLevel.FLAT
    intra_size = p.shard_degree if hierarchical else p.dp
    window = ctx.assumptions.fsdp_prefetch_chunks
    offsets = _layer_offsets(p.chunk_partition)
    kernels = dag.kernels

    for rank in range(p.pp):
        first_forward: List[Tuple[int, Kernel]] = []
        last_backward: Dict[int, Kernel] = {}
        for kid in dag.compute_order.get(rank, []):
            kernel = kernels[kid]
            if kernel.phase == Phase.FWD and all(c != kernel.chunk for c, _ in first_forward):
                first_forward.append((kernel.chunk, kernel))
            if kernel.phase in (Phase.BWD_DW, Phase.BWD_FUSED):
                last_backward[kernel.chunk] = kernel

        chains: Dict[str, int] = {}

        def chain(kernel: Kernel) -> None:
            if kernel.stream in chains:
                dag.add_edge(chains[kernel.stream], kernel.id)
            chains[kernel.stream] = kernel.id

        for pos, (chunk, forward) in enumerate(first_forward):
            for local in range(p.chunk_partition[chunk]):
                gather = dag.add(
                    KernelKind.DP_COLLECTIVE,
                    rank,
                    chunk,
                    collective=CollectiveKind.ALL_GATHER,
                    level=intra_level,
                    layer=offsets[chunk] + local,
                    payload_bytes=layer_bytes,
                    group_size=intra_size,
                    stream="dp_intra",
                )
                if local == 0 and pos >= window:
                    dag.add_edge(first_forward[pos - window][1].id, gather.id)
                chain(gather)
                dag.add_edge(gather.id, forward.id)

        for chunk in sorted(last_backward, key=lambda c: last_backward[c].id):
            for local in range(p.chunk_partition[chunk]):
                reduce = dag.add(
                    KernelKind.DP_COLLECTIVE,
                    rank,
                    chunk,
                    collective=CollectiveKind.REDUCE_SCATTER,
                    level=intra_level,
                    layer=offsets[chunk] + local,
                    payload_bytes=layer_bytes,
                    group_size=intra_size,
                    stream="dp_intra",
                )
                dag.add_edge(last_backward[chunk].id, reduce.id)
                chain(reduce)
                if hierarchical:
                    allreduce = dag.add(
                        KernelKind.DP_COLLECTIVE,
                        rank,
                        chunk,
                        collective=CollectiveKind.ALL_REDUCE,
                        level=CollectiveLevel.CROSS,
                        layer=offsets[chunk] + local,
                        payload_bytes=layer_bytes / p.shard_degree,
                        group_size=p.replica_groups,
                        stream="dp_cross",
                    )
                    dag.add_edge(reduce.id, allreduce.id)
                    chain(allreduce)

    logger.debug("Attached %d DP kernels", dag.count(KernelKind.DP_COLLECTIVE))
    return dag
