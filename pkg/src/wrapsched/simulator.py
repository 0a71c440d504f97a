"""Deterministic event-driven estimator of per-iteration runtime and swap volume.

Modeled resources, all non-preemptive with FIFO arbitration:

* per GPU: ``compute``, ``swap_in``, ``swap_out``, ``p2p_in``, ``p2p_out``;
* per CPU process: ``update`` (weight updates overlap GPU compute but are
  serialized per process);
* shared root links: ``host.root_out`` (host to GPUs) and ``host.root_in``
  (GPUs to host).  Every CPU-GPU swap leg additionally occupies the root
  link in its direction; peer transfers inside one switch group bypass it.

Execution semantics (implemented identically by the fixed-tick reference in
``ticksim``):

* devices execute their tasks in unrolled order; a task's microbatch-group
  members run back-to-back on the compute stream;
* a member's compute starts only after the task's swap/stash inputs finished,
  its per-member peer inputs arrived, and the previous member completed;
* task-level inputs may prefetch one task ahead (double buffering): they
  become eligible when the previous task on the same device starts computing;
* backward members carry a recompute prologue (forward time of the pack at
  the backward microbatch size) except for the shared last pack;
* weights are fetched once per task regardless of group length;
* transfer duration is ``ceil(bytes / bandwidth)`` in integer nanoseconds at
  the slowest involved link; zero-byte transfers are elided;
* ties are broken by lowest task index, then stage, then member.

The makespan is the completion time of the last event (for a full iteration
graph: the last update task's final swap-out).
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

from .core import MachineModel, TensorKind
from .errors import DeadlockError, MissingProfileError, ValidationError
from .profiler import ProfileSet
from .taskgraph import Channel, ChannelKind, Task, TaskGraph, TaskType

_NS = 1_000_000_000


def _xfer_ns(nbytes: int, bandwidth: int) -> int:
    return (nbytes * _NS + bandwidth - 1) // bandwidth


@dataclass(frozen=True)
class TraceEvent:
    resource: str
    task: int
    kind: str           # "compute" or a TensorKind value
    label: str
    start_ns: int
    end_ns: int


@dataclass
class SimReport:
    makespan_ns: int
    gpu_busy_ns: dict[int, int]
    gpu_idle_ns: dict[int, int]
    channel_volumes: dict[str, int]             # channel -> bytes, global
    tensor_volumes: dict[str, dict[str, int]]   # tensor -> channel -> bytes
    per_gpu_volumes: dict[int, dict[str, int]]  # gpu -> channel -> bytes
    trace: list[TraceEvent]
    caveats: tuple[str, ...] = ()

    @property
    def per_gpu_swap_bytes(self) -> dict[int, int]:
        swap = (ChannelKind.CPU_GPU_SWAP.value, ChannelKind.MESSAGE_PASSING.value)
        return {g: sum(per.get(c, 0) for c in swap)
                for g, per in self.per_gpu_volumes.items()}

    def tensor_total(self, tensor: TensorKind, channels: tuple[str, ...]) -> int:
        per = self.tensor_volumes.get(tensor.value, {})
        return sum(per.get(c, 0) for c in channels)

    def swap_volume(self, tensor: TensorKind) -> int:
        """Bytes of ``tensor`` that crossed the CPU-GPU link (swap + stash legs)."""
        return self.tensor_total(tensor, (ChannelKind.CPU_GPU_SWAP.value,
                                          ChannelKind.MESSAGE_PASSING.value))


class _Item:
    __slots__ = ("key", "resources", "duration", "pending", "ready",
                 "dependents", "task", "kind", "label", "tensor", "channel",
                 "nbytes", "gpu", "start", "end", "idx")

    def __init__(self, key, resources, duration, task, kind, label,
                 tensor=None, channel=None, nbytes=0, gpu=None):
        self.key = key
        self.idx = -1
        self.resources = resources
        self.duration = duration
        self.pending = 0
        self.ready = 0
        self.dependents: list[tuple["_Item", bool]] = []
        self.task = task
        self.kind = kind
        self.label = label
        self.tensor = tensor
        self.channel = channel
        self.nbytes = nbytes
        self.gpu = gpu
        self.start = -1
        self.end = -1


def _link(dep: _Item | None, item: _Item, at_start: bool = False) -> None:
    if dep is None:
        return
    dep.dependents.append((item, at_start))
    item.pending += 1


def _entry_bytes(profiles: ProfileSet, tensor: TensorKind, layer: int,
                 ch: Channel, u: int) -> int:
    if tensor is TensorKind.W:
        return profiles.w_bytes(layer)
    if tensor is TensorKind.DW:
        return profiles.dw_bytes(layer)
    if tensor is TensorKind.K:
        return profiles.k_bytes(layer)
    if ch.src_layer is not None:
        return profiles.y_bytes(ch.src_layer, u)
    if tensor in (TensorKind.X, TensorKind.SX, TensorKind.DX):
        return profiles.x_bytes(layer, u)
    return profiles.y_bytes(layer, u)  # Y, dY


def _compute_duration(task: Task, u: int, profiles: ProfileSet,
                      machine: MachineModel) -> int:
    lo, hi = task.pack
    if task.type is TaskType.F:
        return profiles.pack_time_ns("F", lo, hi, u)
    if task.type is TaskType.B:
        dur = profiles.pack_time_ns("B", lo, hi, u)
        if task.recompute:
            dur += profiles.pack_time_ns("F", lo, hi, u)
        return dur
    # update task
    if machine.cpu_offload_update:
        return sum(_xfer_ns(profiles.w_bytes(layer), machine.update_cpu_rate)
                   for layer in task.layers)
    return sum(profiles.time_ns("U", layer, 1) for layer in task.layers)


def _build_items(graph: TaskGraph, machine: MachineModel,
                 profiles: ProfileSet) -> list[_Item]:
    pcie = machine.pcie_bandwidth
    root = machine.root_link_bandwidth
    swap_bw = min(pcie, root)
    items: list[_Item] = []
    seq = 0

    def add(item: _Item) -> _Item:
        item.idx = len(items)
        items.append(item)
        return item

    member_computes: dict[int, list[_Item]] = {}
    first_compute: dict[int, _Item] = {}
    mp_out: dict[tuple[int, int, int], list[_Item]] = {}
    prev_on_device: dict[tuple[str, int], Task] = {}

    for task in graph.tasks:
        gpu = task.device[1]
        prev = prev_on_device.get(task.device)
        is_update = task.type is TaskType.U

        task_level_inputs: list[_Item] = []
        gate_first: list[_Item] = []        # pure dependencies for member 0
        member_gate: dict[int, list[_Item]] = {}
        shm_deps: list[tuple[Task, bool]] = []  # (src task, member aligned)

        # --- input transfers -------------------------------------------------
        swap_bytes: dict[TensorKind, int] = {}
        for tensor, entries in task.inputs.items():
            p2p_by_src: dict[int, int] = {}
            p2p_aligned: dict[int, list[int]] = {}
            for layer, ch in entries.items():
                if ch.kind is ChannelKind.CPU_GPU_SWAP:
                    swap_bytes[tensor] = swap_bytes.get(tensor, 0) + _entry_bytes(
                        profiles, tensor, layer, ch, task.group[0])
                elif ch.kind is ChannelKind.SHARED_MEMORY:
                    src = graph.tasks[ch.src_task]
                    shm_deps.append((src, src.group == task.group))
                elif ch.kind is ChannelKind.MESSAGE_PASSING:
                    src = ch.src_task
                    nbytes = sum(_entry_bytes(profiles, tensor, layer, ch, u)
                                 for u in task.group)
                    if nbytes == 0:
                        # nothing moves, but the stash dependency still holds
                        gate_first.append(member_computes[src][-1])
                        continue
                    seq += 1
                    it = add(_Item((task.index, 0, 0, seq),
                                   (f"gpu{gpu}.swap_in", "host.root_out"),
                                   _xfer_ns(nbytes, swap_bw), task.index,
                                   tensor.value, f"{tensor.value} in",
                                   tensor=tensor, channel=ChannelKind.MESSAGE_PASSING,
                                   nbytes=nbytes, gpu=gpu))
                    for leg in mp_out.get((src, task.index, layer), ()):
                        _link(leg, it)
                    task_level_inputs.append(it)
                elif ch.kind is ChannelKind.PEER2PEER:
                    src_task = graph.tasks[ch.src_task]
                    if src_task.group == task.group:
                        per = p2p_aligned.setdefault(ch.src_task, [0] * len(task.group))
                        for g, u in enumerate(task.group):
                            per[g] += _entry_bytes(profiles, tensor, layer, ch, u)
                    else:
                        p2p_by_src[ch.src_task] = p2p_by_src.get(ch.src_task, 0) + sum(
                            _entry_bytes(profiles, tensor, layer, ch, u)
                            for u in task.group)
            for src_idx, per_member in p2p_aligned.items():
                src_task = graph.tasks[src_idx]
                res = _p2p_resources(machine, src_task.device[1], gpu)
                bw = pcie if len(res) == 2 else swap_bw
                for g, nbytes in enumerate(per_member):
                    if nbytes == 0:
                        # zero-byte transfer elided; keep the member dependency
                        member_gate.setdefault(g, []).append(member_computes[src_idx][g])
                        continue
                    seq += 1
                    it = add(_Item((task.index, 0, g, seq), res,
                                   _xfer_ns(nbytes, bw), task.index,
                                   tensor.value, f"{tensor.value} p2p",
                                   tensor=tensor, channel=ChannelKind.PEER2PEER,
                                   nbytes=nbytes, gpu=gpu))
                    _link(member_computes[src_idx][g], it)
                    member_gate.setdefault(g, []).append(it)
            for src_idx, nbytes in p2p_by_src.items():
                if nbytes == 0:
                    gate_first.append(member_computes[src_idx][-1])
                    continue
                src_task = graph.tasks[src_idx]
                res = _p2p_resources(machine, src_task.device[1], gpu)
                bw = pcie if len(res) == 2 else swap_bw
                seq += 1
                it = add(_Item((task.index, 0, 0, seq), res,
                               _xfer_ns(nbytes, bw), task.index,
                               tensor.value, f"{tensor.value} p2p",
                               tensor=tensor, channel=ChannelKind.PEER2PEER,
                               nbytes=nbytes, gpu=gpu))
                _link(member_computes[src_idx][-1], it)
                task_level_inputs.append(it)

        for tensor, nbytes in sorted(swap_bytes.items(), key=lambda kv: kv[0].value):
            if nbytes == 0:
                continue
            seq += 1
            task_level_inputs.append(add(_Item(
                (task.index, 0, 0, seq),
                (f"gpu{gpu}.swap_in", "host.root_out"),
                _xfer_ns(nbytes, swap_bw), task.index, tensor.value,
                f"{tensor.value} in", tensor=tensor,
                channel=ChannelKind.CPU_GPU_SWAP, nbytes=nbytes, gpu=gpu)))

        # prefetch window: one task ahead on the same device; update tasks
        # gate their optimizer-state fetch on the backward task starting
        if is_update:
            window = first_compute.get(task.index - 1)
        else:
            window = first_compute.get(prev.index) if prev is not None else None
        for it in task_level_inputs:
            _link(window, it, at_start=True)

        # --- member computes --------------------------------------------------
        computes: list[_Item] = []
        resource = (f"cpu{gpu}.update" if task.device[0] == "cpu"
                    else f"gpu{gpu}.compute")
        for g, u in enumerate(task.group if not is_update else (1,)):
            seq += 1
            lo, hi = task.pack
            it = add(_Item((task.index, 1, g, seq), (resource,),
                           _compute_duration(task, u, profiles, machine),
                           task.index, "compute",
                           f"{task.type.value} L{lo}-{hi} mb{g}", gpu=gpu))
            if g == 0:
                if prev is not None:
                    _link(member_computes[prev.index][-1], it)
                for dep in task_level_inputs:
                    _link(dep, it)
                for dep in gate_first:
                    _link(dep, it)
                for src, aligned in shm_deps:
                    if not aligned:
                        _link(member_computes[src.index][-1], it)
            else:
                _link(computes[g - 1], it)
            for src, aligned in shm_deps:
                if aligned:
                    _link(member_computes[src.index][g], it)
            for dep in member_gate.get(g, ()):
                _link(dep, it)
            computes.append(it)
        member_computes[task.index] = computes
        first_compute[task.index] = computes[0]
        prev_on_device[task.device] = task

        # --- output transfers -------------------------------------------------
        swap_out_bytes: dict[TensorKind, int] = {}
        for tensor, entries in task.outputs.items():
            for layer, ch in entries.items():
                if ch.kind is ChannelKind.MESSAGE_PASSING:
                    for g, u in enumerate(task.group):
                        nbytes = _entry_bytes(profiles, tensor, layer, ch, u)
                        if nbytes == 0:
                            continue
                        seq += 1
                        it = add(_Item((task.index, 2, g, seq),
                                       (f"gpu{gpu}.swap_out", "host.root_in"),
                                       _xfer_ns(nbytes, swap_bw), task.index,
                                       tensor.value, f"{tensor.value} out",
                                       tensor=tensor,
                                       channel=ChannelKind.MESSAGE_PASSING,
                                       nbytes=nbytes, gpu=gpu))
                        _link(computes[g], it)
                        mp_out.setdefault((task.index, ch.dst_task, layer), []).append(it)
                elif ch.kind is ChannelKind.CPU_GPU_SWAP:
                    swap_out_bytes[tensor] = swap_out_bytes.get(tensor, 0) + _entry_bytes(
                        profiles, tensor, layer, ch, task.group[0])
        for tensor, nbytes in sorted(swap_out_bytes.items(), key=lambda kv: kv[0].value):
            if nbytes == 0:
                continue
            seq += 1
            it = add(_Item((task.index, 2, 0, seq),
                           (f"gpu{gpu}.swap_out", "host.root_in"),
                           _xfer_ns(nbytes, swap_bw), task.index, tensor.value,
                           f"{tensor.value} out", tensor=tensor,
                           channel=ChannelKind.CPU_GPU_SWAP, nbytes=nbytes, gpu=gpu))
            _link(computes[-1], it)
    return items


def _p2p_resources(machine: MachineModel, src_gpu: int, dst_gpu: int) -> tuple[str, ...]:
    res = (f"gpu{src_gpu}.p2p_out", f"gpu{dst_gpu}.p2p_in")
    if not machine.same_p2p_group(src_gpu, dst_gpu):
        # crossing switch groups traverses the shared root complex
        res += ("host.root_in", "host.root_out")
    return res


def _run(items: list[_Item]) -> None:
    busy: dict[str, int] = {}
    heap: list[tuple[int, tuple, int]] = []
    for i, it in enumerate(items):
        if it.pending == 0:
            heap.append((0, it.key, i))
    heapq.heapify(heap)
    done = 0
    while heap:
        ready, _, idx = heapq.heappop(heap)
        it = items[idx]
        start = ready
        for r in it.resources:
            start = max(start, busy.get(r, 0))
        end = start + it.duration
        for r in it.resources:
            busy[r] = end
        it.start, it.end = start, end
        done += 1
        for child, at_start in it.dependents:
            child.ready = max(child.ready, start if at_start else end)
            child.pending -= 1
            if child.pending == 0:
                heapq.heappush(heap, (child.ready, child.key, child.idx))
    if done != len(items):
        raise DeadlockError(
            f"{len(items) - done} work items never became runnable; "
            "the task graph has a dependency cycle"
        )


def simulate(graph: TaskGraph, machine: MachineModel | None = None,
             profiles: ProfileSet | None = None, *,
             check_memory: bool = False) -> SimReport:
    """Run the discrete-event simulation of one training iteration."""
    machine = machine or graph.machine
    if profiles is None:
        raise ValidationError("profiles are required")
    if machine.gpu_count != graph.machine.gpu_count:
        raise ValidationError("machine does not match the graph's GPU count")
    graph.validate()

    try:
        items = _build_items(graph, machine, profiles)
    except (KeyError, MissingProfileError) as exc:
        raise MissingProfileError(str(exc)) from exc

    if check_memory:
        _check_memory(graph, machine, profiles)

    _run(items)

    makespan = max((it.end for it in items), default=0)
    gpu_busy = {g: 0 for g in range(machine.gpu_count)}
    channel_volumes: dict[str, int] = {k.value: 0 for k in ChannelKind}
    tensor_volumes: dict[str, dict[str, int]] = {}
    per_gpu: dict[int, dict[str, int]] = {g: {} for g in range(machine.gpu_count)}
    trace: list[TraceEvent] = []
    for it in items:
        trace.append(TraceEvent(it.resources[0], it.task, it.kind, it.label,
                                it.start, it.end))
        if it.kind == "compute":
            if it.resources[0].startswith("gpu"):
                gpu_busy[it.gpu] += it.duration
            continue
        channel_volumes[it.channel.value] += it.nbytes
        tensor_volumes.setdefault(it.tensor.value, {}).setdefault(it.channel.value, 0)
        tensor_volumes[it.tensor.value][it.channel.value] += it.nbytes
        bucket = per_gpu[it.gpu]
        bucket[it.channel.value] = bucket.get(it.channel.value, 0) + it.nbytes
    trace.sort(key=lambda e: (e.start_ns, e.resource, e.task, e.end_ns))

    caveats = []
    if graph.mode.value == "dp":
        caveats.append(
            "data-parallel gradient synchronization is modeled as a zero-cost "
            "CPU-side reduction; only CPU-GPU swap traffic is accounted"
        )
    return SimReport(
        makespan_ns=makespan,
        gpu_busy_ns=gpu_busy,
        gpu_idle_ns={g: makespan - b for g, b in gpu_busy.items()},
        channel_volumes=channel_volumes,
        tensor_volumes=tensor_volumes,
        per_gpu_volumes=per_gpu,
        trace=trace,
        caveats=tuple(caveats),
    )


def _task_mem_bytes(task: Task, profiles: ProfileSet) -> int:
    if task.type is TaskType.U:
        return 0
    pass_ = task.type.value
    u = max(task.group)
    lo, hi = task.pack
    mem = profiles.pack_mem_bytes(pass_, lo, hi, u)
    if task.type is TaskType.F:
        mem += profiles.x_bytes(lo, u)
    return mem


def _check_memory(graph: TaskGraph, machine: MachineModel,
                  profiles: ProfileSet) -> None:
    """Optional assertion: resident task plus one prefetched task fit capacity."""
    per_dev: dict[tuple[str, int], list[Task]] = {}
    for t in graph.tasks:
        if t.device[0] == "gpu":
            per_dev.setdefault(t.device, []).append(t)
    for dev, tasks in per_dev.items():
        for a, b in zip(tasks, tasks[1:]):
            need = _task_mem_bytes(a, profiles) + _task_mem_bytes(b, profiles)
            if need > machine.gpu_mem_capacity:
                raise ValidationError(
                    f"tasks {a.index} and {b.index} overflow gpu{dev[1]} memory "
                    f"({need} > {machine.gpu_mem_capacity}) with prefetch"
                )
