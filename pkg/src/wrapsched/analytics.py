"""Closed-form per-iteration swap volumes for the idealized uniform-layer
model, plus a harness that checks the simulator's byte accounting against
them.

The ideal model: R identical layers, each GPU so tight it holds one layer at
one microbatch; ``m`` microbatch groups per GPU.  Four strategies:

* ``DP_SWAP``    -- data parallelism with per-GPU memory virtualization:
                    every GPU swaps each layer's state in and out for every
                    microbatch and pass, plus an in/out pair per update;
* ``GROUPED_DP`` -- data parallelism with input-batch grouping and jit
                    updates: one swap-in per pass and one swap-out per update
                    per GPU;
* ``PP_SWAP``    -- a conventional pipeline (one stage per GPU), virtualized
                    per GPU: same per-microbatch churn but without weight
                    duplication across GPUs;
* ``WRAP_PP``    -- the wrap-around pipeline with grouping and jit updates.

Weight volume per iteration therefore is (4m+2)N|W|, 3N|W|, (4m+2)|W| and
3|W| respectively.  Weight gradients never cross the link under the grouped
strategies (generated and consumed on the GPU); the virtualized baselines
move them like weights minus the forward-pass round trips.  Optimizer state
always costs one in/out pair per update task.  Stashes cost one out and one
in per stashed microbatch under every strategy; the final layer is never
stashed because its backward runs immediately after its forward.

Activation tensors (X, Y, dX, dY) cost zero CPU-GPU bytes everywhere: the
pipelines exchange them peer-to-peer and the data-parallel schedules keep
them resident between adjacent packs.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable

from .core import Configuration, MachineModel, Mode, TensorKind
from .errors import NonUniformModelError, ValidationError
from .profiler import AffineModel, ProfileSet
from .simulator import SimReport, simulate
from .taskgraph import (
    Channel,
    ChannelKind,
    Task,
    TaskGraph,
    TaskType,
    generate_task_graph,
)


class SwapStrategy(str, Enum):
    DP_SWAP = "dp_swap"
    GROUPED_DP = "grouped_dp"
    PP_SWAP = "pp_swap"
    WRAP_PP = "wrap_pp"


_DP_STRATEGIES = (SwapStrategy.DP_SWAP, SwapStrategy.GROUPED_DP)


def _uniform(value: "int | Sequence[int]", count: int, what: str) -> int:
    if isinstance(value, int):
        return value
    values = set(value)
    if len(value) != count or len(values) != 1:
        raise NonUniformModelError(f"{what} must be one value repeated {count} times")
    return values.pop()


@dataclass(frozen=True)
class IdealModel:
    """Uniform-layer model; per-layer sizes accept an int or a uniform list."""

    layer_count: int
    w_bytes: "int | tuple[int, ...]"
    dw_bytes: "int | tuple[int, ...]"
    k_bytes: "int | tuple[int, ...]"
    sx_bytes: "int | tuple[int, ...]"
    m: int
    gpu_count: int
    strategy: SwapStrategy

    def __post_init__(self) -> None:
        if self.layer_count < 1 or self.m < 1 or self.gpu_count < 1:
            raise ValidationError("layer_count, m, gpu_count must be >= 1")
        for name in ("w_bytes", "dw_bytes", "k_bytes", "sx_bytes"):
            v = _uniform(getattr(self, name), self.layer_count, name)
            if v < 0:
                raise ValidationError(f"{name} must be >= 0")
            object.__setattr__(self, name, v)

    @property
    def total_w(self) -> int:
        return self.layer_count * self.w_bytes

    @property
    def total_dw(self) -> int:
        return self.layer_count * self.dw_bytes

    @property
    def total_k(self) -> int:
        return self.layer_count * self.k_bytes

    @property
    def microbatches(self) -> int:
        """Microbatches in one iteration: m per GPU for DP, m total for PP."""
        if self.strategy in _DP_STRATEGIES:
            return self.m * self.gpu_count
        return self.m


def closed_form_swap(model: IdealModel, tensor: TensorKind,
                     dw_deduction: str = "per_gpu") -> int:
    """Per-iteration CPU-GPU bytes for one tensor family under the model.

    ``dw_deduction`` picks the reading of the baseline weight-gradient form:
    the forward-pass round trips (2m) are deducted per GPU (default) or once
    globally.
    """
    m, n = model.m, model.gpu_count
    s = model.strategy
    if tensor is TensorKind.W:
        w = model.total_w
        return {
            SwapStrategy.DP_SWAP: (4 * m + 2) * n * w,
            SwapStrategy.GROUPED_DP: 3 * n * w,
            SwapStrategy.PP_SWAP: (4 * m + 2) * w,
            SwapStrategy.WRAP_PP: 3 * w,
        }[s]
    if tensor is TensorKind.DW:
        dw = model.total_dw
        if s in (SwapStrategy.GROUPED_DP, SwapStrategy.WRAP_PP):
            return 0  # generated on the GPU and consumed in place by jit update
        if dw_deduction not in ("per_gpu", "global"):
            raise ValidationError(f"unknown dw_deduction {dw_deduction!r}")
        if s is SwapStrategy.DP_SWAP:
            if dw_deduction == "per_gpu":
                return (2 * m + 2) * n * dw
            return ((4 * m + 2) * n - 2 * m) * dw
        return (2 * m + 2) * dw  # PP_SWAP: both readings coincide
    if tensor is TensorKind.K:
        k = model.total_k
        return 2 * n * k if s in _DP_STRATEGIES else 2 * k
    if tensor is TensorKind.SX:
        stashed_layers = model.layer_count - 1
        return 2 * model.microbatches * stashed_layers * model.sx_bytes
    if tensor in (TensorKind.X, TensorKind.Y, TensorKind.DX, TensorKind.DY):
        return 0
    raise ValidationError(f"no closed form for tensor {tensor}")


# --------------------------------------------------------------------------
# simulation harness
# --------------------------------------------------------------------------

def _harness_profiles(model: IdealModel) -> ProfileSet:
    r = model.layer_count
    t_f = AffineModel(0.0, 1_000_000)
    t_b = AffineModel(0.0, 2_000_000)
    t_u = AffineModel(0.0, 100_000)
    zero = AffineModel(0.0, 0.0)
    sx = AffineModel(float(model.sx_bytes), 0.0)
    return ProfileSet(
        layer_count=r,
        time_models={(i, p): {"F": t_f, "B": t_b, "U": t_u}[p]
                     for i in range(r) for p in ("F", "B", "U")},
        mem_models={(i, p): zero for i in range(r) for p in ("F", "B", "U")},
        x_models={i: sx for i in range(r)},
        y_models={i: zero for i in range(r)},
        w_bytes={i: model.w_bytes for i in range(r)},
        dw_bytes={i: model.dw_bytes for i in range(r)},
        k_bytes={i: model.k_bytes for i in range(r)},
        u_max_f=1,
        u_max_b=1,
    )


def _harness_machine(model: IdealModel) -> MachineModel:
    return MachineModel(
        gpu_count=model.gpu_count,
        gpu_mem_capacity=1 << 50,
        pcie_bandwidth=16 << 30,
    )


def ideal_task_graph(model: IdealModel) -> tuple[TaskGraph, ProfileSet, MachineModel]:
    """Task graph realizing the model under its strategy (singleton packs, u=1)."""
    profiles = _harness_profiles(model)
    machine = _harness_machine(model)
    if model.strategy in (SwapStrategy.GROUPED_DP, SwapStrategy.WRAP_PP):
        packs = tuple((i, i) for i in range(model.layer_count))
        cfg = Configuration(
            u_f=1, p_f=packs, u_b=1, p_b=packs,
            minibatch=model.microbatches,
            mode=Mode.DP if model.strategy is SwapStrategy.GROUPED_DP else Mode.PP,
        )
        return generate_task_graph(cfg, machine, profiles), profiles, machine
    builder = _dp_swap_graph if model.strategy is SwapStrategy.DP_SWAP else _pp_swap_graph
    return builder(model, machine), profiles, machine


def _swap_inout(layers: Iterable[int]) -> dict[int, Channel]:
    return {L: Channel(ChannelKind.CPU_GPU_SWAP) for L in layers}


def _dp_swap_graph(model: IdealModel, machine: MachineModel) -> TaskGraph:
    """Per-GPU virtualized data parallelism: per-microbatch, per-layer tasks.

    Forward and backward tasks swap their layer's weights in and out around
    every microbatch; backward additionally round-trips the gradient buffer.
    A per-layer update task swaps weights, gradients, and optimizer state in
    and out.  Stashes flow forward task -> backward task of the same
    microbatch, except for the last layer whose backward runs immediately.
    """
    r = model.layer_count
    last = r - 1
    tasks: list[Task] = []
    for gpu in range(model.gpu_count):
        base = len(tasks)
        dev = ("gpu", gpu)
        f_index: dict[tuple[int, int], int] = {}
        b_index: dict[tuple[int, int], int] = {}
        idx = base
        for mb in range(model.m):
            for layer in range(r):
                f_index[(mb, layer)] = idx
                idx += 1
            for layer in reversed(range(r)):
                b_index[(mb, layer)] = idx
                idx += 1
        idx_u = idx
        for mb in range(model.m):
            for layer in range(r):
                outputs: dict[TensorKind, dict[int, Channel]] = {
                    TensorKind.W: {layer: Channel(ChannelKind.CPU_GPU_SWAP)},
                }
                if layer != last:
                    outputs[TensorKind.SX] = {layer: Channel(
                        ChannelKind.MESSAGE_PASSING, dst_task=b_index[(mb, layer)])}
                tasks.append(Task(
                    index=f_index[(mb, layer)], pack=(layer, layer),
                    type=TaskType.F, group=(1,), device=dev,
                    inputs={TensorKind.W: _swap_inout([layer])},
                    outputs=outputs))
            for layer in reversed(range(r)):
                inputs = {
                    TensorKind.W: _swap_inout([layer]),
                    TensorKind.DW: _swap_inout([layer]),
                }
                if layer != last:
                    inputs[TensorKind.SX] = {layer: Channel(
                        ChannelKind.MESSAGE_PASSING, src_task=f_index[(mb, layer)])}
                tasks.append(Task(
                    index=b_index[(mb, layer)], pack=(layer, layer),
                    type=TaskType.B, group=(1,), device=dev,
                    inputs=inputs,
                    outputs={TensorKind.W: _swap_inout([layer]),
                             TensorKind.DW: _swap_inout([layer])}))
        for layer in range(r):
            tasks.append(Task(
                index=idx_u, pack=(layer, layer), type=TaskType.U, group=(1,),
                device=dev,
                inputs={TensorKind.W: _swap_inout([layer]),
                        TensorKind.DW: _swap_inout([layer]),
                        TensorKind.K: _swap_inout([layer])},
                outputs={TensorKind.W: _swap_inout([layer]),
                         TensorKind.DW: _swap_inout([layer]),
                         TensorKind.K: _swap_inout([layer])}))
            idx_u += 1
    return TaskGraph(tasks=tasks, mode=Mode.DP, machine=machine,
                     minibatch=model.microbatches)


def _pp_swap_graph(model: IdealModel, machine: MachineModel) -> TaskGraph:
    """Per-GPU virtualized conventional pipeline: one fixed stage per GPU.

    Within a stage task each layer's state still swaps in and out per
    microbatch (capacity holds one layer), so a stage task moves its full
    stage weights twice.  Stage outputs travel peer-to-peer.
    """
    r = model.layer_count
    n = model.gpu_count
    last = r - 1
    bounds = [round(s * r / n) for s in range(n + 1)]
    stages = [(bounds[s], bounds[s + 1] - 1) for s in range(n)
              if bounds[s + 1] > bounds[s]]
    tasks: list[Task] = []
    f_index = {(mb, s): mb * len(stages) + s
               for mb in range(model.m) for s in range(len(stages))}
    nf = model.m * len(stages)
    b_order = [(mb, s) for mb in range(model.m)
               for s in reversed(range(len(stages)))]
    b_index = {key: nf + i for i, key in enumerate(b_order)}
    for mb in range(model.m):
        for s, (lo, hi) in enumerate(stages):
            inputs = {TensorKind.W: _swap_inout(range(lo, hi + 1))}
            if s > 0:
                inputs[TensorKind.X] = {lo: Channel(
                    ChannelKind.PEER2PEER, src_task=f_index[(mb, s - 1)])}
            outputs: dict[TensorKind, dict[int, Channel]] = {
                TensorKind.W: _swap_inout(range(lo, hi + 1)),
            }
            if s < len(stages) - 1:
                outputs[TensorKind.Y] = {hi: Channel(
                    ChannelKind.PEER2PEER, dst_task=f_index[(mb, s + 1)])}
            for layer in range(lo, hi + 1):
                if layer != last:
                    outputs.setdefault(TensorKind.SX, {})[layer] = Channel(
                        ChannelKind.MESSAGE_PASSING, dst_task=b_index[(mb, s)])
            tasks.append(Task(index=f_index[(mb, s)], pack=(lo, hi),
                              type=TaskType.F, group=(1,), device=("gpu", s),
                              inputs=inputs, outputs=outputs))
    for mb, s in b_order:
        lo, hi = stages[s]
        inputs = {TensorKind.W: _swap_inout(range(lo, hi + 1)),
                  TensorKind.DW: _swap_inout(range(lo, hi + 1))}
        for layer in range(lo, hi + 1):
            if layer != last:
                inputs.setdefault(TensorKind.SX, {})[layer] = Channel(
                    ChannelKind.MESSAGE_PASSING, src_task=f_index[(mb, s)])
        if s < len(stages) - 1:
            inputs[TensorKind.DY] = {hi: Channel(
                ChannelKind.PEER2PEER, src_task=b_index[(mb, s + 1)])}
        tasks.append(Task(index=b_index[(mb, s)], pack=(lo, hi),
                          type=TaskType.B, group=(1,), device=("gpu", s),
                          inputs=inputs,
                          outputs={TensorKind.W: _swap_inout(range(lo, hi + 1)),
                                   TensorKind.DW: _swap_inout(range(lo, hi + 1))}))
    idx = nf * 2
    for s, (lo, hi) in enumerate(stages):
        layers = range(lo, hi + 1)
        tasks.append(Task(index=idx, pack=(lo, hi), type=TaskType.U, group=(1,),
                          device=("gpu", s),
                          inputs={TensorKind.W: _swap_inout(layers),
                                  TensorKind.DW: _swap_inout(layers),
                                  TensorKind.K: _swap_inout(layers)},
                          outputs={TensorKind.W: _swap_inout(layers),
                                   TensorKind.DW: _swap_inout(layers),
                                   TensorKind.K: _swap_inout(layers)}))
        idx += 1
    return TaskGraph(tasks=tasks, mode=Mode.PP, machine=machine,
                     minibatch=model.microbatches)


@dataclass(frozen=True)
class SwapComparison:
    tensor: TensorKind
    analytic_bytes: int
    simulated_bytes: int

    @property
    def delta_bytes(self) -> int:
        return self.simulated_bytes - self.analytic_bytes


def compare_sim_to_closed_form(model: IdealModel,
                               dw_deduction: str = "per_gpu",
                               ) -> tuple[dict[TensorKind, SwapComparison], SimReport]:
    """Simulate the model's task graph and diff per-tensor CPU-GPU bytes."""
    graph, profiles, machine = ideal_task_graph(model)
    report = simulate(graph, machine, profiles)
    out = {}
    for tensor in TensorKind:
        analytic = closed_form_swap(model, tensor, dw_deduction)
        out[tensor] = SwapComparison(tensor, analytic, report.swap_volume(tensor))
    return out, report


def comparison_table(rows: dict[TensorKind, SwapComparison]) -> str:
    lines = [f"{'tensor':>8} {'analytic':>16} {'simulated':>16} {'delta':>12}"]
    for tensor in TensorKind:
        row = rows[tensor]
        lines.append(f"{tensor.value:>8} {row.analytic_bytes:>16} "
                     f"{row.simulated_bytes:>16} {row.delta_bytes:>12}")
    return "\n".join(lines)
