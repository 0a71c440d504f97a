"""Balanced-time layer packing under the per-GPU memory capacity constraint.

The packer looks for the smallest number of packs S (largest packs) whose
per-pack times are as equal as possible: per-pack time targets are the S-1
evenly spaced accumulated times, located in the prefix-sum array by binary
search.  If any resulting pack exceeds the memory budget, S is increased and
the split recomputed.  Worst case O(R^2).

Forward packing can be derived from an existing backward plan: the backward
plan's last pack is shared verbatim (its backward task later runs without a
recompute prologue), and only the remaining prefix of layers is packed.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass

from .errors import LayerTooLargeError, UnpackableError, ValidationError
from .core import Pack
from .profiler import ProfileSet


@dataclass(frozen=True)
class PackPlan:
    """Ordered contiguous packs with their per-pack time and memory."""

    packs: tuple[Pack, ...]
    times_ns: tuple[int, ...]
    mem_bytes: tuple[int, ...]

    @property
    def pack_count(self) -> int:
        return len(self.packs)

    @property
    def layer_count(self) -> int:
        return self.packs[-1][1] + 1

    def describe(self) -> str:
        """Compact pack notation, e.g. ``L0-3, L4-7, L8-11``."""
        return ", ".join(f"L{first}-{last}" if first != last else f"L{first}"
                         for first, last in self.packs)


def _pack_memory(profiles: ProfileSet, pass_: str, u: int,
                 first: int, last: int, checkpoint: bool) -> int:
    mem = profiles.pack_mem_bytes(pass_, first, last, u)
    if checkpoint:
        # forward packs also hold the checkpointed pack-input activation
        mem += profiles.x_bytes(first, u)
    return mem


def _resolve_range(pass_: str, layers_or_plan: "int | PackPlan") -> tuple[int, Pack | None]:
    if isinstance(layers_or_plan, PackPlan):
        if pass_ != "F":
            raise ValidationError("a backward plan can only constrain forward packing")
        shared = layers_or_plan.packs[-1]
        return shared[0], shared
    count = int(layers_or_plan)
    if count < 1:
        raise ValidationError("layer count must be >= 1")
    return count, None


def balanced_time_pack(
    pass_: str,
    u: int,
    layers_or_plan: "int | PackPlan",
    profiles: ProfileSet,
    alpha_bytes: int,
) -> PackPlan:
    """Pack layers into capacity-feasible intervals of near-equal time.

    ``layers_or_plan`` is either the layer count R (pack layers 0..R-1) or,
    for the forward pass, an existing backward PackPlan whose last pack is
    appended to the result unchanged while the preceding layers are repacked.

    Raises LayerTooLargeError when a single layer cannot fit, and
    UnpackableError when no pack count up to R is feasible.
    """
    if pass_ not in ("F", "B"):
        raise ValidationError(f"pass must be 'F' or 'B', got {pass_!r}")
    if alpha_bytes <= 0:
        raise ValidationError("capacity must be positive")
    count, shared = _resolve_range(pass_, layers_or_plan)
    checkpoint = pass_ == "F"

    def finish(packs: list[Pack], times: list[int], mems: list[int]) -> PackPlan:
        if shared is not None:
            # the shared pack is carried over verbatim; its capacity was
            # checked by the backward packing at u_b, not re-checked here
            packs.append(shared)
            times.append(profiles.pack_time_ns(pass_, shared[0], shared[1], u))
            mems.append(_pack_memory(profiles, pass_, u, shared[0], shared[1], checkpoint))
        return PackPlan(tuple(packs), tuple(times), tuple(mems))

    if count == 0:
        return finish([], [], [])

    t = [profiles.time_ns(pass_, layer, u) for layer in range(count)]
    cum = []
    acc = 0
    for v in t:
        acc += v
        cum.append(acc)
    total_t = acc
    total_m = sum(profiles.mem_bytes(pass_, layer, u) for layer in range(count))

    for layer in range(count):
        if _pack_memory(profiles, pass_, u, layer, layer, checkpoint) > alpha_bytes:
            raise LayerTooLargeError(
                f"layer {layer} needs more than capacity at microbatch {u}"
            )

    s_min = max(1, -(-total_m // alpha_bytes))
    for s in range(s_min, count + 1):
        c = total_t / s
        cuts: list[int] = []
        for kk in range(1, s):
            if s == count:
                cut = kk  # the only s-pack split of s layers is singletons
            elif total_t == 0:
                # all-zero times leave the targets degenerate; split by count
                cut = kk * count // s
            else:
                cut = bisect.bisect_right(cum, kk * c)
            # boundary layer equal to the target goes to the earlier pack
            # (bisect_right); degenerate cuts merge into the left neighbour
            if 0 < cut < count and (not cuts or cut > cuts[-1]):
                cuts.append(cut)
        bounds = [0, *cuts, count]
        packs = [(bounds[i], bounds[i + 1] - 1) for i in range(len(bounds) - 1)]
        mems = [_pack_memory(profiles, pass_, u, lo, hi, checkpoint) for lo, hi in packs]
        if all(m <= alpha_bytes for m in mems):
            times = [cum[hi] - (cum[lo - 1] if lo else 0) for lo, hi in packs]
            return finish(packs, times, mems)
    raise UnpackableError(
        f"no capacity-feasible packing of {count} layers at microbatch {u}"
    )


def greedy_maxpack_baseline(
    pass_: str,
    u: int,
    layers_or_plan: "int | PackPlan",
    profiles: ProfileSet,
    alpha_bytes: int,
) -> PackPlan:
    """Left-to-right greedy packing: grow each pack until capacity would burst.

    Comparison baseline only; it ignores time balance entirely.  Accepts the
    same inputs as :func:`balanced_time_pack`, including the shared-last-pack
    handling for forward plans.
    """
    if pass_ not in ("F", "B"):
        raise ValidationError(f"pass must be 'F' or 'B', got {pass_!r}")
    if alpha_bytes <= 0:
        raise ValidationError("capacity must be positive")
    count, shared = _resolve_range(pass_, layers_or_plan)
    checkpoint = pass_ == "F"

    packs: list[Pack] = []
    times: list[int] = []
    mems: list[int] = []
    lo = 0
    while lo < count:
        if _pack_memory(profiles, pass_, u, lo, lo, checkpoint) > alpha_bytes:
            raise LayerTooLargeError(
                f"layer {lo} needs more than capacity at microbatch {u}"
            )
        hi = lo
        while hi + 1 < count and _pack_memory(profiles, pass_, u, lo, hi + 1,
                                              checkpoint) <= alpha_bytes:
            hi += 1
        packs.append((lo, hi))
        times.append(profiles.pack_time_ns(pass_, lo, hi, u))
        mems.append(_pack_memory(profiles, pass_, u, lo, hi, checkpoint))
        lo = hi + 1

    if shared is not None:
        packs.append(shared)
        times.append(profiles.pack_time_ns(pass_, shared[0], shared[1], u))
        mems.append(_pack_memory(profiles, pass_, u, shared[0], shared[1], checkpoint))
    return PackPlan(tuple(packs), tuple(times), tuple(mems))
