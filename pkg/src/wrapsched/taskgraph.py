"""Per-iteration task graph generation: device binding and channel wiring.

A task executes one layer pack for a group of microbatches back-to-back, so
pack state (weights, gradient buffers) is fetched once per task rather than
once per microbatch.  Task types are forward (F), backward (B), and weight
update (U); each B task is immediately followed by its jit U task, bound to
the CPU process of the same GPU.

Pipeline mode binds the concatenation ``p_f + reversed(p_b)`` round-robin:
slot i goes to GPU ``i mod N``, so a GPU's forward and backward packs differ
(wrap-around pipeline).  Data-parallel mode replicates the full pack sequence
on every GPU over its minibatch share and uses no peer-to-peer channels.

Channel conventions (the simulator derives transfers from these):

* an *input* entry with channel CPU_GPU_SWAP is a task-level, prefetchable
  swap-in from host memory (weights, optimizer state);
* an *input* entry with channel PEER2PEER is a per-microbatch transfer from
  the producing task (falls back to whole-task granularity when the two
  groups differ);
* MESSAGE_PASSING entries are stashes relayed through host memory: the
  producer's output entry is the GPU-to-host leg (per microbatch), the
  consumer's input entry the host-to-GPU leg (whole task);
* SHARED_MEMORY entries are zero-copy dependencies (no bytes move): used
  when producer and consumer share a GPU and are adjacent in time, and for
  the weight/gradient handoff from a B task to its colocated jit U task;
* *output* entries with channel CPU_GPU_SWAP are swap-outs emitted after the
  task computes (updated weights, optimizer state);
* *output* PEER2PEER entries mirror the consumer's input and carry no bytes
  of their own.

The minibatch input of the first forward pack and the data gradient of the
final backward pack fall outside the modeled iteration: loading training
data is a fixed cost no schedule can avoid, and no modeled channel consumes
the input gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .core import (
    Configuration,
    LayerChain,
    MachineModel,
    Mode,
    Pack,
    TensorKind,
    gpu_shares,
    microbatch_groups,
)
from .errors import (
    InvalidConfigurationError,
    UnroutableBranchError,
    ValidationError,
)
from .profiler import ProfileSet


class TaskType(str, Enum):
    F = "F"
    B = "B"
    U = "U"


class ChannelKind(str, Enum):
    CPU_GPU_SWAP = "cpu_gpu_swap"
    PEER2PEER = "peer2peer"
    MESSAGE_PASSING = "message_passing"
    SHARED_MEMORY = "shared_memory"


@dataclass(frozen=True)
class Channel:
    """Route of one tensor between a task and host memory or a peer task.

    ``src_layer`` marks relay payloads: the entry's bytes follow that layer's
    output size instead of the keyed layer's own input size.
    """

    kind: ChannelKind
    src_task: int | None = None
    dst_task: int | None = None
    src_layer: int | None = None


Device = tuple[str, int]  # ("gpu", k) or ("cpu", k)


@dataclass
class Task:
    """Unit of execution: one pack, one pass, one group of microbatches."""

    index: int
    pack: Pack
    type: TaskType
    group: tuple[int, ...]
    device: Device
    inputs: dict[TensorKind, dict[int, Channel]] = field(default_factory=dict)
    outputs: dict[TensorKind, dict[int, Channel]] = field(default_factory=dict)
    recompute: bool = False

    @property
    def layers(self) -> range:
        return range(self.pack[0], self.pack[1] + 1)


@dataclass
class TaskGraph:
    """Ordered tasks plus the machine/mode context they were generated for."""

    tasks: list[Task]
    mode: Mode
    machine: MachineModel
    minibatch: int
    config: Configuration | None = None

    @property
    def gpu_count(self) -> int:
        return self.machine.gpu_count

    def validate(self) -> None:
        n = len(self.tasks)
        for i, t in enumerate(self.tasks):
            if t.index != i:
                raise ValidationError(f"task {i} carries index {t.index}")
            if t.device[0] not in ("gpu", "cpu") or not 0 <= t.device[1] < self.gpu_count:
                raise ValidationError(f"task {i} bound to unknown device {t.device}")
            for tensor, entries in t.inputs.items():
                for layer, ch in entries.items():
                    if ch.src_task is not None:
                        if not 0 <= ch.src_task < n:
                            raise ValidationError(f"task {i} input from unknown task {ch.src_task}")
                        if ch.src_task >= i:
                            raise ValidationError(
                                f"task {i} consumes {tensor.value} from non-earlier task {ch.src_task}"
                            )
                        if ch.kind is ChannelKind.PEER2PEER:
                            src = self.tasks[ch.src_task]
                            if src.device == t.device:
                                raise ValidationError(
                                    f"peer channel between colocated tasks {ch.src_task}->{i}"
                                )
            for tensor, entries in t.outputs.items():
                for layer, ch in entries.items():
                    if ch.dst_task is not None and not i < ch.dst_task < n:
                        raise ValidationError(
                            f"task {i} outputs {tensor.value} to invalid task {ch.dst_task}"
                        )
            # jit structure (B immediately followed by its colocated U) holds
            # for scheduler-generated graphs; baseline graphs batch updates
            if t.type is TaskType.U and self.config is not None:
                prev = self.tasks[i - 1] if i else None
                if prev is None or prev.type is not TaskType.B:
                    raise ValidationError(f"update task {i} does not follow a backward task")
                if t.device != ("cpu", prev.device[1]):
                    raise ValidationError(f"update task {i} is not colocated with its backward task")

    def device_order(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {}
        for t in self.tasks:
            out.setdefault(f"{t.device[0]}{t.device[1]}", []).append(t.index)
        return out


def unroll_schedule(graph: TaskGraph) -> dict[str, list[int]]:
    """Per-device execution order (ascending task index); stable and total."""
    return graph.device_order()


def _validate_chain(cfg: Configuration, chain: LayerChain) -> None:
    layer_ids = set(range(cfg.layer_count))
    if not layer_ids <= set(chain.layers):
        raise ValidationError("chain does not cover the configured layers")
    for ann in chain.relay_annotations:
        if ann.destination not in chain.layers or ann.source not in chain.layers:
            raise UnroutableBranchError(
                f"relay {ann.source}->{ann.destination} has no chain endpoint"
            )
        if chain.position(ann.destination) <= chain.position(ann.source):
            raise UnroutableBranchError(
                f"relay {ann.source}->{ann.destination} has no downstream consumer"
            )


def _p2p_or_local(src_device: Device, dst_device: Device,
                  **kw) -> Channel:
    # adjacent producer/consumer on one GPU exchange tensors zero-copy
    if src_device == dst_device:
        return Channel(ChannelKind.SHARED_MEMORY, **kw)
    return Channel(ChannelKind.PEER2PEER, **kw)


def _boundary_inputs(chain: LayerChain, prev_tail: int, head: int,
                     src_task: int, src_device: Device, dst_device: Device,
                     tensor_is_grad: bool) -> dict[int, Channel]:
    """Input entries for one pack boundary: the trunk plus relay payloads."""
    entries = {head if not tensor_is_grad else prev_tail:
               _p2p_or_local(src_device, dst_device, src_task=src_task)}
    synthetic = set(chain.synthetic_ids)
    for src in chain.boundary_sources(chain.position(prev_tail)):
        if src == prev_tail or src in synthetic:
            continue  # the trunk already carries this boundary's own output;
            # synthetic join nodes are zero-sized and never billed
        entries[src] = _p2p_or_local(src_device, dst_device,
                                     src_task=src_task, src_layer=src)
    return entries


def generate_task_graph(
    cfg: Configuration,
    machine: MachineModel,
    profiles: ProfileSet,
    chain: LayerChain | None = None,
) -> TaskGraph:
    """Generate the per-iteration task graph for a configuration.

    ``chain`` carries branch-relay annotations for serialized non-linear
    graphs; omitted, a plain sequential chain is assumed.
    """
    cfg.validate()
    if profiles.layer_count < cfg.layer_count:
        raise InvalidConfigurationError(
            f"profiles cover {profiles.layer_count} layers, configuration needs {cfg.layer_count}"
        )
    chain = chain if chain is not None else LayerChain.linear(cfg.layer_count)
    _validate_chain(cfg, chain)
    if cfg.mode is Mode.PP:
        tasks = _pp_tasks(cfg, machine, chain)
    else:
        tasks = _dp_tasks(cfg, machine, chain)
    graph = TaskGraph(tasks=tasks, mode=cfg.mode, machine=machine,
                      minibatch=cfg.minibatch, config=cfg)
    graph.validate()
    return graph


def _swap_in_weights(pack: Pack) -> dict[int, Channel]:
    return {layer: Channel(ChannelKind.CPU_GPU_SWAP)
            for layer in range(pack[0], pack[1] + 1)}


def _pp_tasks(cfg: Configuration, machine: MachineModel,
              chain: LayerChain) -> list[Task]:
    n = machine.gpu_count
    pf, pb = cfg.p_f, cfg.p_b
    nf = len(pf)
    groups_f = microbatch_groups(cfg.minibatch, cfg.u_f)
    groups_b = microbatch_groups(cfg.minibatch, cfg.u_b)

    # wrap-around binding: slot i of p_f + reversed(p_b) -> GPU[i mod n]
    f_device = [("gpu", j % n) for j in range(nf)]
    rev = list(reversed(range(len(pb))))
    b_index = {q: nf + 2 * r for r, q in enumerate(rev)}
    b_device = {q: ("gpu", (nf + r) % n) for r, q in enumerate(rev)}

    def f_task_containing(layer: int) -> int:
        for j, (lo, hi) in enumerate(pf):
            if lo <= layer <= hi:
                return j
        raise InvalidConfigurationError(f"layer {layer} not covered by p_f")

    tasks: list[Task] = []
    for j, pack in enumerate(pf):
        inputs: dict[TensorKind, dict[int, Channel]] = {
            TensorKind.W: _swap_in_weights(pack),
        }
        if j > 0:
            inputs[TensorKind.X] = _boundary_inputs(
                chain, pf[j - 1][1], pack[0], j - 1, f_device[j - 1], f_device[j],
                tensor_is_grad=False)
        outputs: dict[TensorKind, dict[int, Channel]] = {}
        tail = pack[1]
        if j < nf - 1:
            dst, dst_dev = j + 1, f_device[j + 1]
        else:
            dst, dst_dev = b_index[len(pb) - 1], b_device[len(pb) - 1]
        out_entries = {tail: _p2p_or_local(f_device[j], dst_dev, dst_task=dst)}
        if j < nf - 1:
            synthetic = set(chain.synthetic_ids)
            for src in chain.boundary_sources(chain.position(tail)):
                if src != tail and src not in synthetic:
                    out_entries[src] = _p2p_or_local(f_device[j], dst_dev,
                                                     dst_task=dst, src_layer=src)
        outputs[TensorKind.Y] = out_entries
        for q in range(len(pb) - 1):  # stash each non-shared backward pack's input
            head = pb[q][0]
            if pack[0] <= head <= pack[1]:
                outputs.setdefault(TensorKind.SX, {})[head] = Channel(
                    ChannelKind.MESSAGE_PASSING, dst_task=b_index[q])
        tasks.append(Task(index=j, pack=pack, type=TaskType.F, group=groups_f,
                          device=f_device[j], inputs=inputs, outputs=outputs))

    for r, q in enumerate(rev):
        idx = nf + 2 * r
        pack = pb[q]
        shared = q == len(pb) - 1
        dev = b_device[q]
        inputs = {TensorKind.W: _swap_in_weights(pack)}
        outputs = {}
        if shared:
            # seam from the last forward task: the pack's activations arrive
            # with the pipeline flow, so no stash and no recompute prologue
            inputs[TensorKind.Y] = {pack[1]: _p2p_or_local(
                f_device[nf - 1], dev, src_task=nf - 1)}
        else:
            src = b_index[q + 1]
            inputs[TensorKind.DY] = _boundary_inputs(
                chain, pack[1], pack[1], src, b_device[q + 1], dev,
                tensor_is_grad=True)
            inputs[TensorKind.SX] = {pack[0]: Channel(
                ChannelKind.MESSAGE_PASSING, src_task=f_task_containing(pack[0]))}
        if q > 0:
            outputs[TensorKind.DX] = {pack[0]: _p2p_or_local(
                dev, b_device[q - 1], dst_task=b_index[q - 1])}
        tasks.append(Task(index=idx, pack=pack, type=TaskType.B, group=groups_b,
                          device=dev, inputs=inputs, outputs=outputs,
                          recompute=not shared))
        tasks.append(_update_task(idx + 1, pack, dev[1], idx))
    return tasks


def _update_task(index: int, pack: Pack, gpu: int, b_index: int) -> Task:
    layers = range(pack[0], pack[1] + 1)
    return Task(
        index=index,
        pack=pack,
        type=TaskType.U,
        group=(1,),
        device=("cpu", gpu),
        inputs={
            # weights and gradients are consumed in place on the GPU the
            # backward task just used (jit-update); optimizer state swaps in
            TensorKind.W: {L: Channel(ChannelKind.SHARED_MEMORY, src_task=b_index) for L in layers},
            TensorKind.DW: {L: Channel(ChannelKind.SHARED_MEMORY, src_task=b_index) for L in layers},
            TensorKind.K: {L: Channel(ChannelKind.CPU_GPU_SWAP) for L in layers},
        },
        outputs={
            TensorKind.W: {L: Channel(ChannelKind.CPU_GPU_SWAP) for L in layers},
            TensorKind.K: {L: Channel(ChannelKind.CPU_GPU_SWAP) for L in layers},
        },
    )


def _dp_tasks(cfg: Configuration, machine: MachineModel,
              chain: LayerChain) -> list[Task]:
    pf, pb = cfg.p_f, cfg.p_b
    nf = len(pf)
    tasks: list[Task] = []
    for gpu, share in enumerate(gpu_shares(cfg.minibatch, machine.gpu_count)):
        if share == 0:
            continue
        groups_f = microbatch_groups(share, min(cfg.u_f, share))
        groups_b = microbatch_groups(share, min(cfg.u_b, share))
        base = len(tasks)
        dev = ("gpu", gpu)

        def f_task_containing(layer: int) -> int:
            for j, (lo, hi) in enumerate(pf):
                if lo <= layer <= hi:
                    return base + j
            raise InvalidConfigurationError(f"layer {layer} not covered by p_f")

        for j, pack in enumerate(pf):
            inputs: dict[TensorKind, dict[int, Channel]] = {
                TensorKind.W: _swap_in_weights(pack),
            }
            if j > 0:
                inputs[TensorKind.X] = {pack[0]: Channel(
                    ChannelKind.SHARED_MEMORY, src_task=base + j - 1)}
            outputs: dict[TensorKind, dict[int, Channel]] = {}
            for q in range(len(pb) - 1):
                head = pb[q][0]
                if pack[0] <= head <= pack[1]:
                    outputs.setdefault(TensorKind.SX, {})[head] = Channel(
                        ChannelKind.MESSAGE_PASSING,
                        dst_task=base + nf + 2 * (len(pb) - 1 - q))
            tasks.append(Task(index=base + j, pack=pack, type=TaskType.F,
                              group=groups_f, device=dev, inputs=inputs,
                              outputs=outputs))
        rev = list(reversed(range(len(pb))))
        for r, q in enumerate(rev):
            idx = base + nf + 2 * r
            pack = pb[q]
            shared = q == len(pb) - 1
            inputs = {TensorKind.W: _swap_in_weights(pack)}
            if shared:
                inputs[TensorKind.Y] = {pack[1]: Channel(
                    ChannelKind.SHARED_MEMORY, src_task=base + nf - 1)}
            else:
                inputs[TensorKind.DY] = {pack[1]: Channel(
                    ChannelKind.SHARED_MEMORY, src_task=idx - 2)}
                inputs[TensorKind.SX] = {pack[0]: Channel(
                    ChannelKind.MESSAGE_PASSING, src_task=f_task_containing(pack[0]))}
            tasks.append(Task(index=idx, pack=pack, type=TaskType.B,
                              group=groups_b, device=dev, inputs=inputs,
                              outputs={}, recompute=not shared))
            tasks.append(_update_task(idx + 1, pack, gpu, idx))
    return tasks
