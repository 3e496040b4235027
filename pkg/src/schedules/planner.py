"""Per-rank kernel order for pipeline schedules.

A greedy list scheduler over integer work units (one unit per layer per
forward) decides which chunk kernel each stage runs next. Cross-stage
dependencies pay a nominal hop delay so the order leaves room for
point-to-point transfers. Each stage caps the forwards it keeps in flight;
input-gradient work always goes first, weight-gradient work fills whatever
slots remain.
"""

from dataclasses import dataclass, field
from enum import Enum
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

from ..workload import ScheduleKind

logger = logging.getLogger(__name__)


class TaskKind(str, Enum):
    """Planned kernel kinds."""

    F = "F"
    B = "B"
    DX = "DX"
    DW = "DW"


@dataclass(slots=True)
class PlannedTask:
    """One chunk kernel in the plan."""

    kind: TaskKind
    chunk: int
    microbatch: int
    stage: int
    weight: int
    deps: List[int] = field(default_factory=list)
    start: float = -1.0
    end: float = -1.0

    def label(self) -> str:
        """Short form, e.g. ``DX(c4,m0)``."""
        return f"{self.kind.value}(c{self.chunk},m{self.microbatch})"


@dataclass
class PipelinePlan:
    """Result of planning: tasks, per-stage order and makespan in work units."""

    tasks: List[PlannedTask]
    orders: List[List[int]]
    backward_kind: TaskKind
    makespan: float
    hop: float

    def order_labels(self, stage: int) -> List[str]:
        """Labels of a stage's tasks in execution order."""
        return [self.tasks[i].label() for i in self.orders[stage]]


class PlannerStuckError(RuntimeError):
    """No stage can make progress; the dependency structure is broken."""


def inflight_caps(
    schedule: ScheduleKind, pp: int, chunks_per_stage: float, hop: float
) -> List[int]:
    """Maximum forwards in flight per stage.

    1F1B keeps pp - s. DoraPP keeps the interleaved warm-up depth
    v*pp + pp - 1 - 2s and ZBV keeps v*pp; both scale by (1 + hop) so the
    hop delay does not starve the pipeline.
    """
    caps = []
    for s in range(pp):
        if schedule == ScheduleKind.ONE_F_ONE_B:
            caps.append(pp - s)
        elif schedule == ScheduleKind.DORAPP:
            caps.append(math.ceil((chunks_per_stage * pp + pp - 1 - 2 * s) * (1 + hop)))
        else:
            caps.append(math.ceil(chunks_per_stage * pp * (1 + hop)))
    return caps


def plan_pipeline(
    chunk_sizes: Sequence[int],
    chunk_stages: Sequence[int],
    pp: int,
    num_microbatches: int,
    schedule: ScheduleKind,
    hop: float = 1.0,
) -> PipelinePlan:
    """Order every chunk kernel on its stage.

    Args:
        chunk_sizes: Layers per chunk, in model order
        chunk_stages: Stage of each chunk
        pp: Pipeline stages
        num_microbatches: Microbatches per iteration
        schedule: Pipeline schedule
        hop: Delay in work units charged to cross-stage dependencies

    Returns:
        The plan

    Raises:
        PlannerStuckError: If no stage can start anything
    """
    n = len(chunk_sizes)
    split = schedule != ScheduleKind.ONE_F_ONE_B
    backward = TaskKind.DX if split else TaskKind.B
    caps = inflight_caps(schedule, pp, n / pp, hop)

    tasks: List[PlannedTask] = []
    index: Dict[Tuple[TaskKind, int, int], int] = {}

    def add(kind: TaskKind, c: int, j: int, weight: int) -> None:
        index[(kind, c, j)] = len(tasks)
        tasks.append(PlannedTask(kind, c, j, chunk_stages[c], weight))

    for c in range(n):
        for j in range(num_microbatches):
            add(TaskKind.F, c, j, chunk_sizes[c])
            if split:
                add(TaskKind.DX, c, j, chunk_sizes[c])
                add(TaskKind.DW, c, j, chunk_sizes[c])
            else:
                add(TaskKind.B, c, j, 2 * chunk_sizes[c])

    for task in tasks:
        c, j = task.chunk, task.microbatch
        if task.kind == TaskKind.F and c > 0:
            task.deps.append(index[(TaskKind.F, c - 1, j)])
        elif task.kind == backward:
            if c == n - 1:
                task.deps.append(index[(TaskKind.F, c, j)])
            else:
                task.deps.append(index[(backward, c + 1, j)])
        elif task.kind == TaskKind.DW:
            task.deps.append(index[(TaskKind.DX, c, j)])

    children: List[List[int]] = [[] for _ in tasks]
    remaining = [len(t.deps) for t in tasks]
    for i, task in enumerate(tasks):
        for d in task.deps:
            children[d].append(i)

    ready_at: List[float] = [0.0] * len(tasks)
    pending: List[List[int]] = [[] for _ in range(pp)]
    for i, task in enumerate(tasks):
        if not task.deps:
            pending[task.stage].append(i)

    inflight = [0] * pp
    running: List[Optional[int]] = [None] * pp
    orders: List[List[int]] = [[] for _ in range(pp)]
    now = 0.0
    left = len(tasks)

    def pick(stage: int, ignore_cap: bool) -> Optional[int]:
        best: Optional[int] = None
        best_key: Optional[Tuple[int, int, int]] = None
        for i in pending[stage]:
            if ready_at[i] > now:
                continue
            task = tasks[i]
            if task.kind == backward:
                key = (0, task.microbatch, -task.chunk)
            elif task.kind == TaskKind.F:
                if not ignore_cap and inflight[stage] >= caps[stage]:
                    continue
                key = (1, task.microbatch, task.chunk)
            else:
                key = (2, task.microbatch, -task.chunk)
            if best_key is None or key < best_key:
                best, best_key = i, key
        return best

    def start(stage: int, i: int) -> None:
        task = tasks[i]
        pending[stage].remove(i)
        task.start = now
        task.end = now + task.weight
        running[stage] = i
        orders[stage].append(i)
        if task.kind == TaskKind.F:
            inflight[stage] += 1
        elif task.kind == backward:
            inflight[stage] -= 1

    while left > 0:
        for s in range(pp):
            if running[s] is None:
                i = pick(s, ignore_cap=False)
                if i is not None:
                    start(s, i)
        ends = [tasks[i].end for i in running if i is not None]
        wakes = [ready_at[i] for s in range(pp) for i in pending[s] if ready_at[i] > now]
        if not ends and not wakes:
            for s in range(pp):
                i = pick(s, ignore_cap=True)
                if i is not None:
                    logger.debug("Planner relaxed in-flight cap on stage %d", s)
                    start(s, i)
                    break
            else:
                raise PlannerStuckError(f"planner stuck at t={now} with {left} tasks left")
            continue
        now = min(ends + wakes)
        for s in range(pp):
            i = running[s]
            if i is None or tasks[i].end != now:
                continue
            running[s] = None
            left -= 1
            for child in children[i]:
                remaining[child] -= 1
                if remaining[child] == 0:
                    ready_at[child] = max(
                        tasks[d].end + (hop if tasks[d].stage != tasks[child].stage else 0.0)
                        for d in tasks[child].deps
                    )
                    pending[tasks[child].stage].append(child)

    logger.debug(
        "Planned %s: %d tasks on %d stages, makespan %.1f units",
        schedule.value,
        len(tasks),
        pp,
        now,
    )
    return PipelinePlan(tasks, orders, backward, now, hop)
