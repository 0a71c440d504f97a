"""Shared domain vocabulary: machine description, layer graphs, configurations,
and the tensor taxonomy used by the packing, task-graph, and simulation layers.

Conventions used everywhere in this package:

* byte quantities are plain ``int`` bytes,
* times are plain ``int`` nanoseconds,
* bandwidths are ``int`` bytes per second,

so simulation results are exactly reproducible across platforms (no float
drift in the deterministic simulator).

All types here are immutable after construction and safe to share across
concurrent search workers.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .errors import (
    CyclicGraphError,
    InvalidConfigurationError,
    ValidationError,
)


class Mode(str, Enum):
    """Parallel execution style of a scheduled iteration.

    ``DP``: every GPU runs the full pack sequence over its minibatch share,
    with state fetched once per pack task (input-batch grouping).
    ``PP``: packs are bound round-robin across GPUs in wrap-around order, so
    a GPU's forward and backward packs generally differ.
    """

    DP = "dp"
    PP = "pp"


class TensorKind(str, Enum):
    """Taxonomy of simulated tensor transfers."""

    X = "X"      # input activation
    Y = "Y"      # output activation
    DX = "dX"    # gradient w.r.t. input activation
    DY = "dY"    # gradient w.r.t. output activation
    W = "W"      # weights
    DW = "dW"    # weight gradients
    K = "K"      # optimizer state
    SX = "sX"    # stashed (checkpointed) input activation


@dataclass(frozen=True)
class MachineModel:
    """Single-server machine description.

    ``pcie_bandwidth`` is per direction per GPU link.  ``root_link_bandwidth``
    is the shared CPU uplink every CPU-GPU swap additionally crosses (pass 0
    to default it to ``pcie_bandwidth``).  ``p2p_groups`` partitions GPU
    indices into switch groups; peer transfers within a group bypass the root
    link.  An empty tuple means one group containing all GPUs.
    """

    gpu_count: int
    gpu_mem_capacity: int
    pcie_bandwidth: int
    root_link_bandwidth: int = 0
    p2p_groups: tuple[tuple[int, ...], ...] = ()
    cpu_offload_update: bool = False
    update_cpu_rate: int = 4 << 30

    def __post_init__(self) -> None:
        if self.gpu_count < 1:
            raise ValidationError("gpu_count must be >= 1")
        if self.gpu_mem_capacity <= 0:
            raise ValidationError("gpu_mem_capacity must be positive")
        if self.pcie_bandwidth <= 0:
            raise ValidationError("pcie_bandwidth must be positive")
        if self.update_cpu_rate <= 0:
            raise ValidationError("update_cpu_rate must be positive")
        if self.root_link_bandwidth == 0:
            object.__setattr__(self, "root_link_bandwidth", self.pcie_bandwidth)
        if self.root_link_bandwidth <= 0:
            raise ValidationError("root_link_bandwidth must be positive")
        if not self.p2p_groups:
            object.__setattr__(self, "p2p_groups", (tuple(range(self.gpu_count)),))
        members = sorted(g for group in self.p2p_groups for g in group)
        if members != list(range(self.gpu_count)):
            raise ValidationError("p2p_groups must partition GPU indices exactly")

    def same_p2p_group(self, a: int, b: int) -> bool:
        for group in self.p2p_groups:
            if a in group:
                return b in group
        return False


@dataclass(frozen=True)
class LayerNode:
    """One node of the user-facing layer graph (a DAG)."""

    id: int
    kind: str = "layer"
    predecessors: tuple[int, ...] = ()


@dataclass(frozen=True)
class RelayAnnotation:
    """Identity relays inserted while serializing a branch.

    The output of ``source`` is carried through every chain position in
    ``positions`` (one zero-compute relay per position) until ``destination``
    consumes it.  Relays keep branch tensors on the peer-to-peer path instead
    of bouncing through CPU memory, so their traffic is billed on the p2p
    channel at every pack boundary they cross.
    """

    source: int
    destination: int
    positions: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class LayerChain:
    """Serialized (strictly sequential) form of a layer graph.

    ``layers`` lists node ids in chain order.  ``edges`` are the original
    data-flow edges (plus edges to synthetic join nodes, if any); they drive
    the boundary-traffic computation below.  ``synthetic_ids`` are zero-cost
    nodes added to make the chain single-source/single-sink.
    """

    layers: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    relay_annotations: tuple[RelayAnnotation, ...] = ()
    synthetic_ids: tuple[int, ...] = ()
    diagnostics: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if len(set(self.layers)) != len(self.layers):
            raise ValidationError("chain layers must be unique")
        pos = {layer: i for i, layer in enumerate(self.layers)}
        object.__setattr__(self, "_pos", pos)
        for u, v in self.edges:
            if u not in pos or v not in pos:
                raise ValidationError(f"edge ({u}, {v}) references unknown layer")
            if pos[u] >= pos[v]:
                raise ValidationError(f"edge ({u}, {v}) is not forward in the chain")

    def __len__(self) -> int:
        return len(self.layers)

    def position(self, layer: int) -> int:
        return self._pos[layer]  # type: ignore[attr-defined]

    def boundary_sources(self, position: int) -> tuple[int, ...]:
        """Layers whose output crosses the boundary after ``position``.

        A source crosses when some consumer sits strictly after the boundary.
        The returned set is deduplicated: one copy of a tensor crosses a
        boundary no matter how many downstream consumers it has.
        """
        pos = self._pos  # type: ignore[attr-defined]
        out = {u for u, v in self.edges if pos[u] <= position < pos[v]}
        return tuple(sorted(out))

    @classmethod
    def linear(cls, count: int) -> "LayerChain":
        """A plain sequential chain over layers ``0..count-1`` (no branches)."""
        if count < 1:
            raise ValidationError("chain needs at least one layer")
        layers = tuple(range(count))
        edges = tuple((i, i + 1) for i in range(count - 1))
        return cls(layers=layers, edges=edges)


def serialize_graph(dag: Sequence[LayerNode]) -> LayerChain:
    """Serialize a layer DAG into a sequential chain with identity relays.

    Nodes are ordered topologically with the original id as tie-break.  For
    every edge (u, v) whose endpoints are not adjacent in that order, relay
    positions are recorded at each intervening slot; each relay carries u's
    output (zero compute, activation-sized payload).

    Graphs with several sources or sinks get a synthetic zero-cost join node
    (reported in ``diagnostics``) so the chain stays single-source and
    single-sink.
    """
    if not dag:
        raise ValidationError("empty layer graph")
    ids = sorted(node.id for node in dag)
    if ids != list(range(len(dag))):
        raise ValidationError("layer ids must be dense and unique (0..R-1)")

    nodes = {node.id: node for node in dag}
    edges: set[tuple[int, int]] = set()
    for node in dag:
        for p in node.predecessors:
            if p not in nodes:
                raise ValidationError(f"layer {node.id} references unknown predecessor {p}")
            edges.add((p, node.id))

    succs: dict[int, list[int]] = {i: [] for i in nodes}
    indeg: dict[int, int] = {i: 0 for i in nodes}
    for u, v in edges:
        succs[u].append(v)
        indeg[v] += 1

    diagnostics: list[str] = []
    synthetic: list[int] = []
    next_id = len(dag)

    sources = sorted(i for i in nodes if indeg[i] == 0)
    if len(sources) > 1:
        diagnostics.append(f"multiple sources {sources}: joined by synthetic source {next_id}")
        for s in sources:
            edges.add((next_id, s))
            indeg[s] += 1
            succs.setdefault(next_id, []).append(s)
        indeg[next_id] = 0
        synthetic.append(next_id)
        next_id += 1
    sinks = sorted(i for i in nodes if not succs.get(i))
    if len(sinks) > 1:
        diagnostics.append(f"multiple sinks {sinks}: joined by synthetic sink {next_id}")
        indeg[next_id] = 0
        succs[next_id] = []
        for s in sinks:
            edges.add((s, next_id))
            succs[s].append(next_id)
            indeg[next_id] += 1
        synthetic.append(next_id)

    # Kahn's algorithm; min-heap keeps the order deterministic (id tie-break).
    heap = [i for i in indeg if indeg[i] == 0]
    heapq.heapify(heap)
    order: list[int] = []
    while heap:
        u = heapq.heappop(heap)
        order.append(u)
        for v in sorted(succs.get(u, ())):
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(heap, v)
    if len(order) != len(indeg):
        raise CyclicGraphError("layer graph contains a cycle")

    pos = {u: i for i, u in enumerate(order)}
    relays = []
    for u, v in sorted(edges):
        gap = pos[v] - pos[u]
        if gap > 1:
            relays.append(RelayAnnotation(u, v, tuple(range(pos[u] + 1, pos[v]))))

    return LayerChain(
        layers=tuple(order),
        edges=tuple(sorted(edges)),
        relay_annotations=tuple(relays),
        synthetic_ids=tuple(synthetic),
        diagnostics=tuple(diagnostics),
    )


Pack = tuple[int, int]  # inclusive [first_layer, last_layer] interval


def _check_packs(packs: Sequence[Pack], what: str) -> None:
    if not packs:
        raise InvalidConfigurationError(f"{what} has no packs")
    prev_last = -1
    for first, last in packs:
        if first != prev_last + 1:
            raise InvalidConfigurationError(
                f"{what} packs must be contiguous and ordered from layer 0, got {list(packs)}"
            )
        if last < first:
            raise InvalidConfigurationError(f"{what} pack ({first}, {last}) is empty")
        prev_last = last
    if packs[0][0] != 0:
        raise InvalidConfigurationError(f"{what} must start at layer 0")


@dataclass(frozen=True)
class Configuration:
    """The four-tuple selected by the configuration search.

    ``p_f`` and ``p_b`` are ordered contiguous pack lists that each cover
    layers ``0..R-1``; their last packs must be identical (the shared pack
    whose backward task runs without a recompute prologue).
    """

    u_f: int
    p_f: tuple[Pack, ...]
    u_b: int
    p_b: tuple[Pack, ...]
    minibatch: int
    mode: Mode

    @property
    def layer_count(self) -> int:
        return self.p_b[-1][1] + 1

    def validate(self) -> None:
        if self.minibatch < 1:
            raise InvalidConfigurationError("minibatch must be >= 1")
        for name, u in (("u_f", self.u_f), ("u_b", self.u_b)):
            if not 1 <= u <= self.minibatch:
                raise InvalidConfigurationError(f"{name}={u} not in 1..minibatch={self.minibatch}")
        if not isinstance(self.mode, Mode):
            raise InvalidConfigurationError(f"unknown mode {self.mode!r}")
        _check_packs(self.p_f, "p_f")
        _check_packs(self.p_b, "p_b")
        if self.p_f[-1][1] != self.p_b[-1][1]:
            raise InvalidConfigurationError("p_f and p_b must cover the same layer range")
        if self.p_f[-1] != self.p_b[-1]:
            raise InvalidConfigurationError(
                f"last packs must be shared, got {self.p_f[-1]} vs {self.p_b[-1]}"
            )

    def is_valid(self) -> bool:
        try:
            self.validate()
        except InvalidConfigurationError:
            return False
        return True


def microbatch_groups(total: int, u: int) -> tuple[int, ...]:
    """Split ``total`` samples into back-to-back microbatches of size ``u``.

    A non-dividing remainder becomes one final smaller group.
    """
    if u < 1:
        raise ValidationError("microbatch size must be >= 1")
    if total < 0:
        raise ValidationError("total must be >= 0")
    full, rem = divmod(total, u)
    groups = (u,) * full
    if rem:
        groups += (rem,)
    return groups


def gpu_shares(minibatch: int, gpu_count: int) -> tuple[int, ...]:
    """Per-GPU minibatch shares: ceil(D/N) for the first D mod N GPUs."""
    base, extra = divmod(minibatch, gpu_count)
    return tuple(base + 1 if k < extra else base for k in range(gpu_count))
