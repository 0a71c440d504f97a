"""Simplified round-robin pack scheduling problem, its Partition reduction,
and exact oracles used to validate the packing heuristics.

The simplified problem: B microbatches flow through contiguous layer packs;
pack j runs on GPU ``(j-1) mod G`` (1-based round-robin); microbatch b of
pack j starts at the earliest time its GPU is free and microbatch b finished
on pack j-1; a pack's per-microbatch time is the sum of its layer times and
its weights must fit the per-GPU budget M.

Each GPU executes its work in (pack index, microbatch index) order, which
matches the per-device program order of the general simulator, so a lifted
instance produces byte-identical makespans there.

The reduction maps a Partition instance ``a_1..a_n`` to B=3, G=2, M=7 and
3n+4 layers: two heavy sentinels (time 8A, size 6) at each end and, per a_i,
a triplet (5A, 4), (a_i, 2), (5A, 4).  The target makespan
``T = (B * sum(p) + p_first + p_last) / G`` is achievable exactly for
Partition YES instances; idle time then consists of the two forced windows
of length 8A at the pipeline's start and end.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .core import MachineModel, Mode, TensorKind
from .errors import (
    CapacityViolationError,
    NonIntegralTargetError,
    TooLargeError,
    ValidationError,
)
from .profiler import AffineModel, ProfileSet
from .simulator import TraceEvent
from .taskgraph import Channel, ChannelKind, Task, TaskGraph, TaskType

MAX_ENUM_LAYERS = 22
MAX_VERIFY_N = 18


@dataclass(frozen=True)
class ReductionInstance:
    """One instance of the simplified scheduling problem."""

    microbatches: int                       # B
    gpu_count: int                          # G
    mem_per_gpu: int                        # M
    layers: tuple[tuple[int, int], ...]     # (processing time p_i, size m_i)
    scale: int | None = None                # A, when built by the reduction
    source: tuple[int, ...] = ()            # originating Partition numbers

    def __post_init__(self) -> None:
        if self.microbatches < 1 or self.gpu_count < 1 or self.mem_per_gpu < 1:
            raise ValidationError("B, G, M must all be >= 1")
        if not self.layers:
            raise ValidationError("instance needs at least one layer")
        for p, m in self.layers:
            if p < 0 or m < 1:
                raise ValidationError("layer times must be >= 0 and sizes >= 1")

    @property
    def layer_count(self) -> int:
        return len(self.layers)


@dataclass(frozen=True)
class SimpleSchedule:
    """Evaluated schedule: per (pack, microbatch) windows plus the makespan."""

    packs: tuple[tuple[int, int], ...]
    gpu_of_pack: tuple[int, ...]
    starts: tuple[tuple[int, ...], ...]     # [pack][microbatch]
    ends: tuple[tuple[int, ...], ...]
    makespan: int

    def idle_windows(self, gpu: int) -> list[tuple[int, int]]:
        """Gaps in this GPU's busy timeline within [0, makespan]."""
        busy = sorted(
            (self.starts[j][b], self.ends[j][b])
            for j in range(len(self.packs)) if self.gpu_of_pack[j] == gpu
            for b in range(len(self.starts[j]))
        )
        out = []
        cursor = 0
        for s, e in busy:
            if s > cursor:
                out.append((cursor, s))
            cursor = max(cursor, e)
        if cursor < self.makespan:
            out.append((cursor, self.makespan))
        return out


def build_reduction(a: "list[int] | tuple[int, ...]", scale: int | None = None) -> ReductionInstance:
    """Reduce a Partition instance to the scheduling problem (B=3, G=2, M=7)."""
    if not a:
        raise ValidationError("Partition instance must not be empty")
    if any(v <= 0 for v in a):
        raise ValidationError("Partition numbers must be positive")
    big = scale if scale is not None else 6 * sum(a)
    layers: list[tuple[int, int]] = [(8 * big, 6), (8 * big, 6)]
    for v in a:
        layers += [(5 * big, 4), (v, 2), (5 * big, 4)]
    layers += [(8 * big, 6), (8 * big, 6)]
    return ReductionInstance(
        microbatches=3, gpu_count=2, mem_per_gpu=7,
        layers=tuple(layers), scale=big, source=tuple(a),
    )


def _check_packs(inst: ReductionInstance, packs) -> tuple[tuple[int, int], ...]:
    packs = tuple((int(lo), int(hi)) for lo, hi in packs)
    expect = 0
    for lo, hi in packs:
        if lo != expect or hi < lo:
            raise ValidationError(f"packs must be contiguous from layer 0, got {packs}")
        expect = hi + 1
        size = sum(inst.layers[i][1] for i in range(lo, hi + 1))
        if size > inst.mem_per_gpu:
            raise CapacityViolationError(
                f"pack ({lo}, {hi}) weighs {size} > M={inst.mem_per_gpu}"
            )
    if expect != inst.layer_count:
        raise ValidationError("packs must cover every layer")
    return packs


def evaluate_schedule(inst: ReductionInstance, packs) -> SimpleSchedule:
    """Schedule the packing and return the full timing table."""
    packs = _check_packs(inst, packs)
    g_of = tuple(j % inst.gpu_count for j in range(len(packs)))
    p_time = [sum(inst.layers[i][0] for i in range(lo, hi + 1)) for lo, hi in packs]
    gpu_free = [0] * inst.gpu_count
    starts: list[tuple[int, ...]] = []
    ends: list[tuple[int, ...]] = []
    prev_end: tuple[int, ...] = ()
    for j, (lo, hi) in enumerate(packs):
        g = g_of[j]
        s_row = []
        e_row = []
        for b in range(inst.microbatches):
            upstream = prev_end[b] if j else 0
            start = max(gpu_free[g], upstream)
            end = start + p_time[j]
            gpu_free[g] = end
            s_row.append(start)
            e_row.append(end)
        starts.append(tuple(s_row))
        ends.append(tuple(e_row))
        prev_end = tuple(e_row)
    return SimpleSchedule(
        packs=packs, gpu_of_pack=g_of,
        starts=tuple(starts), ends=tuple(ends),
        makespan=max(gpu_free),
    )


def eval_makespan(inst: ReductionInstance, packs) -> int:
    return evaluate_schedule(inst, packs).makespan


def target_numerator(inst: ReductionInstance) -> int:
    """G times the target bound: B * sum(p) + p_first + p_last."""
    total = sum(p for p, _ in inst.layers)
    return inst.microbatches * total + inst.layers[0][0] + inst.layers[-1][0]


def target_makespan(inst: ReductionInstance) -> int:
    """Lower bound T = (B * sum(p) + p_first + p_last) / G, exact division.

    Reductions of even-sum Partition instances divide exactly; odd-sum
    instances (trivially NO cases) and hand-built instances may not, in which
    case NonIntegralTargetError is raised and comparisons should use
    :func:`target_numerator` against ``G * makespan``.
    """
    num = target_numerator(inst)
    if num % inst.gpu_count:
        raise NonIntegralTargetError(
            f"target {num}/{inst.gpu_count} is not an integer for this instance"
        )
    return num // inst.gpu_count


def _feasible_partitions(inst: ReductionInstance):
    """All contiguous capacity-feasible partitions, depth-first by cut position."""
    n = inst.layer_count
    sizes = [m for _, m in inst.layers]

    def rec(start: int, acc: list):
        if start == n:
            yield tuple(acc)
            return
        weight = 0
        for end in range(start, n):
            weight += sizes[end]
            if weight > inst.mem_per_gpu:
                break
            acc.append((start, end))
            yield from rec(end + 1, acc)
            acc.pop()

    yield from rec(0, [])


def enumerate_optimal(inst: ReductionInstance) -> tuple[tuple[tuple[int, int], ...], int]:
    """Exhaustive minimum over all feasible contiguous packings."""
    if inst.layer_count > MAX_ENUM_LAYERS:
        raise TooLargeError(
            f"{inst.layer_count} layers exceed the enumeration limit {MAX_ENUM_LAYERS}"
        )
    best_packs = None
    best = None
    for packs in _feasible_partitions(inst):
        mk = eval_makespan(inst, packs)
        if best is None or mk < best:
            best, best_packs = mk, packs
    if best is None:
        raise CapacityViolationError("no feasible packing: some layer exceeds M")
    return best_packs, best


@dataclass(frozen=True)
class VerifyResult:
    partition_yes: bool
    t_achievable: bool
    target: float              # T, half-integral for odd-sum instances
    best_makespan: int
    best_packs: tuple[tuple[int, int], ...]


def verify_reduction(a: "list[int] | tuple[int, ...]",
                     scale: int | None = None) -> VerifyResult:
    """Check the reduction's equivalence on one Partition instance.

    ``partition_yes`` comes from a subset-sum over the raw numbers,
    ``t_achievable`` from exhaustive schedule enumeration; the reduction is
    correct exactly when the two agree.  Achievability compares
    ``G * makespan`` against the integral target numerator, so odd-sum
    instances (whose T is half-integral and thus unreachable) need no
    special casing.
    """
    if len(a) > MAX_VERIFY_N:
        raise TooLargeError(f"n={len(a)} exceeds the verification limit {MAX_VERIFY_N}")
    total = sum(a)
    if total % 2:
        partition_yes = False
    else:
        half = total // 2
        reachable = {0}
        for v in a:
            reachable |= {r + v for r in reachable if r + v <= half}
        partition_yes = half in reachable
    inst = build_reduction(a, scale=scale)
    best_packs, best = enumerate_optimal(inst)
    num = target_numerator(inst)
    return VerifyResult(
        partition_yes=partition_yes,
        t_achievable=best * inst.gpu_count == num,
        target=num / inst.gpu_count,
        best_makespan=best,
        best_packs=best_packs,
    )


def partition_packing(a: "list[int] | tuple[int, ...]", subset: "set[int] | frozenset[int]",
                      scale: int | None = None) -> tuple[tuple[int, int], ...]:
    """The canonical packing induced by a Partition solution.

    ``subset`` holds the 0-based indices of numbers assigned to the first
    GPU: their filler layer pairs with the a_i layer on the left (pack
    {3i, 3i+1}), all other triplets pack on the right ({3i+1, 3i+2}).
    Sentinel layers stay singletons.
    """
    packs: list[tuple[int, int]] = [(0, 0), (1, 1)]
    base = 2
    for i in range(len(a)):
        if i in subset:
            packs += [(base, base + 1), (base + 2, base + 2)]
        else:
            packs += [(base, base), (base + 1, base + 2)]
        base += 3
    n = 3 * len(a) + 4
    packs += [(n - 2, n - 2), (n - 1, n - 1)]
    return tuple(packs)


def random_feasible_packing(inst: ReductionInstance, rng: random.Random) -> tuple[tuple[int, int], ...]:
    """A random capacity-feasible contiguous packing (greedy with random cuts)."""
    sizes = [m for _, m in inst.layers]
    packs = []
    lo = 0
    while lo < inst.layer_count:
        weight = 0
        hi = lo
        limit = lo
        while limit < inst.layer_count and weight + sizes[limit] <= inst.mem_per_gpu:
            weight += sizes[limit]
            limit += 1
        hi = rng.randrange(lo, limit)
        packs.append((lo, hi))
        lo = hi + 1
    return tuple(packs)


def forced_idle_annotations(inst: ReductionInstance, sched: SimpleSchedule):
    """Annotations for the two unavoidable idle windows of a reduction schedule."""
    from .gantt import GanttAnnotation

    first_gpu = sched.gpu_of_pack[0]
    last_gpu = sched.gpu_of_pack[-1]
    head = inst.layers[0][0]
    tail = inst.layers[-1][0]
    out = []
    for g in range(inst.gpu_count):
        if g != first_gpu:
            out.append(GanttAnnotation(f"gpu{g}", 0, head, "forced-idle"))
        if g != last_gpu:
            out.append(GanttAnnotation(f"gpu{g}", sched.makespan - tail,
                                       sched.makespan, "forced-idle"))
    return out


def schedule_trace(sched: SimpleSchedule) -> list[TraceEvent]:
    """Trace events for the Gantt renderer; labels are 1-based like reports."""
    events = []
    for j in range(len(sched.packs)):
        for b in range(len(sched.starts[j])):
            events.append(TraceEvent(
                resource=f"gpu{sched.gpu_of_pack[j]}",
                task=j,
                kind="compute",
                label=f"{b + 1} P{j + 1}",
                start_ns=sched.starts[j][b],
                end_ns=sched.ends[j][b],
            ))
    return events


def lift_to_task_graph(inst: ReductionInstance, packs) -> tuple[TaskGraph, ProfileSet, MachineModel]:
    """Express a reduction schedule as a zero-transfer task graph.

    Forward-only tasks, one per pack, bound round-robin; per-microbatch
    dependencies carry zero bytes.  The general simulator's makespan on the
    lifted graph equals :func:`eval_makespan`.
    """
    packs = _check_packs(inst, packs)
    r = inst.layer_count
    time_models = {}
    mem_models = {}
    for i, (p, m) in enumerate(inst.layers):
        time_models[(i, "F")] = AffineModel(0.0, p)
        time_models[(i, "B")] = AffineModel(0.0, 0.0)
        mem_models[(i, "F")] = AffineModel(0.0, m)
        mem_models[(i, "B")] = AffineModel(0.0, 0.0)
    zero = AffineModel(0.0, 0.0)
    profiles = ProfileSet(
        layer_count=r,
        time_models=time_models,
        mem_models=mem_models,
        x_models={i: zero for i in range(r)},
        y_models={i: zero for i in range(r)},
        w_bytes={i: 0 for i in range(r)},
        dw_bytes={i: 0 for i in range(r)},
        k_bytes={i: 0 for i in range(r)},
        u_max_f=1,
        u_max_b=1,
    )
    machine = MachineModel(
        gpu_count=inst.gpu_count,
        gpu_mem_capacity=max(1, inst.mem_per_gpu),
        pcie_bandwidth=1 << 34,
    )
    group = (1,) * inst.microbatches
    tasks = []
    for j, pack in enumerate(packs):
        dev = ("gpu", j % inst.gpu_count)
        inputs = {}
        if j:
            prev_dev = ("gpu", (j - 1) % inst.gpu_count)
            kind = (ChannelKind.SHARED_MEMORY if prev_dev == dev
                    else ChannelKind.PEER2PEER)
            inputs[TensorKind.X] = {pack[0]: Channel(kind, src_task=j - 1)}
        tasks.append(Task(index=j, pack=pack, type=TaskType.F, group=group,
                          device=dev, inputs=inputs, outputs={}))
    graph = TaskGraph(tasks=tasks, mode=Mode.PP, machine=machine,
                      minibatch=inst.microbatches)
    return graph, profiles, machine
