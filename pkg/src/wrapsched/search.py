"""Configuration sweep: backward-then-forward packing per microbatch pair,
per-candidate simulation, best-time selection.

For every backward microbatch size the backward packs are computed once,
then every forward microbatch size derives its forward packs around the
shared last pack; each resulting four-tuple is simulated and the minimum
estimated iteration time wins (first-found candidate wins exact ties, so
results are reproducible).

Two strategies: ``DISTINCT_FB`` sweeps forward and backward sizes
independently and additionally evaluates, per backward size, the candidate
that reuses the backward packs for the forward pass; ``EQUI_FB`` restricts
the space to that reused-pack form with equal microbatch sizes.  The
distinct sweep therefore explores a superset of the restricted space and its
best time can never be worse.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum

from .core import Configuration, LayerChain, MachineModel, Mode, gpu_shares
from .errors import (
    LayerTooLargeError,
    NoFeasibleConfigurationError,
    ProfileRangeError,
    UnpackableError,
    ValidationError,
)
from .packing import PackPlan, balanced_time_pack, greedy_maxpack_baseline
from .profiler import ProfileSet
from .simulator import simulate
from .taskgraph import generate_task_graph


class Strategy(str, Enum):
    DISTINCT_FB = "distinct_fb"
    EQUI_FB = "equi_fb"


@dataclass(frozen=True)
class SearchSpec:
    minibatch: int
    mode: Mode = Mode.PP
    strategy: Strategy = Strategy.DISTINCT_FB
    u_fmax: int | None = None   # default: the profile set's fitted maximum
    u_bmax: int | None = None
    stride: int = 1
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.minibatch < 1:
            raise ValidationError("minibatch must be >= 1")
        if self.stride < 1 or self.jobs < 1:
            raise ValidationError("stride and jobs must be >= 1")


@dataclass(frozen=True)
class Candidate:
    u_f: int
    u_b: int
    pf_count: int
    pb_count: int
    time_ns: int | None
    note: str = ""


@dataclass
class SearchResult:
    best: Configuration | None
    best_time_ns: int | None
    explored: int
    log: list[Candidate]
    wall_time_s: float

    def best_row(self) -> Candidate:
        feasible = [c for c in self.log if c.time_ns is not None]
        return min(feasible, key=lambda c: c.time_ns)


def _sweep_bounds(spec: SearchSpec, machine: MachineModel,
                  profiles: ProfileSet) -> tuple[int, int, int]:
    d_eff = spec.minibatch
    if spec.mode is Mode.DP:
        d_eff = max(gpu_shares(spec.minibatch, machine.gpu_count))
    u_fmax = min(spec.u_fmax or profiles.u_max_f, profiles.u_max_f, d_eff)
    u_bmax = min(spec.u_bmax or profiles.u_max_b, profiles.u_max_b, d_eff)
    if u_fmax < 1 or u_bmax < 1:
        raise ValidationError("sweep bounds collapsed below 1")
    return u_fmax, u_bmax, d_eff


def _evaluate(cfg: Configuration, machine: MachineModel, profiles: ProfileSet,
              chain: LayerChain | None) -> int:
    graph = generate_task_graph(cfg, machine, profiles, chain)
    return simulate(graph, machine, profiles).makespan_ns


def _candidates_for_ub(args) -> list[tuple[Candidate, Configuration | None]]:
    spec, machine, profiles, chain, u_b, u_fmax = args
    r = profiles.layer_count
    alpha = machine.gpu_mem_capacity
    out: list[tuple[Candidate, Configuration | None]] = []
    try:
        p_b = balanced_time_pack("B", u_b, r, profiles, alpha)
    except (LayerTooLargeError, UnpackableError, ProfileRangeError) as exc:
        out.append((Candidate(0, u_b, 0, 0, None, f"backward packing: {exc}"), None))
        return out

    def run(u_f: int, p_f: PackPlan, note: str) -> None:
        cfg = Configuration(u_f=u_f, p_f=p_f.packs, u_b=u_b, p_b=p_b.packs,
                            minibatch=spec.minibatch, mode=spec.mode)
        try:
            t = _evaluate(cfg, machine, profiles, chain)
        except (LayerTooLargeError, UnpackableError, ProfileRangeError) as exc:
            out.append((Candidate(u_f, u_b, p_f.pack_count, p_b.pack_count,
                                  None, f"{note}{exc}"), None))
            return
        out.append((Candidate(u_f, u_b, p_f.pack_count, p_b.pack_count, t, note),
                    cfg))

    if spec.strategy is Strategy.EQUI_FB:
        if u_b <= u_fmax:
            run(u_b, p_b, "equi")
        else:
            out.append((Candidate(u_b, u_b, p_b.pack_count, p_b.pack_count,
                                  None, "equi size above forward bound"), None))
        return out
    for u_f in range(1, u_fmax + 1, spec.stride):
        try:
            p_f = balanced_time_pack("F", u_f, p_b, profiles, alpha)
        except (LayerTooLargeError, UnpackableError, ProfileRangeError) as exc:
            out.append((Candidate(u_f, u_b, 0, p_b.pack_count, None,
                                  f"forward packing: {exc}"), None))
            continue
        run(u_f, p_f, "")
        if u_f == u_b and p_f.packs != p_b.packs:
            run(u_b, p_b, "equi")  # the reused-pack candidate is free to check
    return out


def search(spec: SearchSpec, machine: MachineModel, profiles: ProfileSet,
           chain: LayerChain | None = None) -> SearchResult:
    """Sweep the configuration space and return the fastest estimate."""
    t0 = time.perf_counter()
    u_fmax, u_bmax, _ = _sweep_bounds(spec, machine, profiles)
    ub_values = list(range(1, u_bmax + 1, spec.stride))
    work = [(spec, machine, profiles, chain, u_b, u_fmax) for u_b in ub_values]

    if spec.jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            chunks = list(pool.map(_candidates_for_ub, work))
    else:
        chunks = [_candidates_for_ub(w) for w in work]

    log: list[Candidate] = []
    best: Configuration | None = None
    best_time: int | None = None
    for chunk in chunks:
        for cand, cfg in chunk:
            log.append(cand)
            if cand.time_ns is None or cfg is None:
                continue
            if best_time is None or cand.time_ns < best_time:
                best_time, best = cand.time_ns, cfg
    if best is None:
        raise NoFeasibleConfigurationError(
            "no feasible configuration in the swept space; "
            f"skip reasons: {sorted({c.note for c in log})}"
        )
    return SearchResult(best=best, best_time_ns=best_time,
                        explored=sum(1 for c in log if c.time_ns is not None),
                        log=log, wall_time_s=time.perf_counter() - t0)


def greedy_baseline(spec: SearchSpec, machine: MachineModel,
                    profiles: ProfileSet,
                    chain: LayerChain | None = None,
                    ) -> tuple[Configuration, int]:
    """Largest-packs-that-fit baseline for comparisons against the search.

    Among all swept microbatch pairs, pick the greedy packing with the fewest
    packs (largest average pack size), tie-broken by sweep order, and return
    it with its simulated time.
    """
    u_fmax, u_bmax, _ = _sweep_bounds(spec, machine, profiles)
    alpha = machine.gpu_mem_capacity
    best_cfg = None
    best_packs = None
    for u_b in range(1, u_bmax + 1, spec.stride):
        try:
            p_b = greedy_maxpack_baseline("B", u_b, profiles.layer_count,
                                          profiles, alpha)
        except (LayerTooLargeError, UnpackableError, ProfileRangeError):
            continue
        for u_f in range(1, u_fmax + 1, spec.stride):
            try:
                p_f = greedy_maxpack_baseline("F", u_f, p_b, profiles, alpha)
            except (LayerTooLargeError, UnpackableError, ProfileRangeError):
                continue
            total = p_f.pack_count + p_b.pack_count
            if best_packs is None or total < best_packs:
                best_packs = total
                best_cfg = Configuration(u_f=u_f, p_f=p_f.packs, u_b=u_b,
                                         p_b=p_b.packs, minibatch=spec.minibatch,
                                         mode=spec.mode)
    if best_cfg is None:
        raise NoFeasibleConfigurationError("greedy baseline found no feasible packing")
    return best_cfg, _evaluate(best_cfg, machine, profiles, chain)
