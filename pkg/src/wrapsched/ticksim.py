"""Fixed-tick reference simulator.

A second, independent implementation of the execution semantics documented in
``simulator``: time advances in fixed ticks (default 1 microsecond), and at
every tick each idle resource starts the highest-priority job whose
prerequisites are met.  Durations and event times are quantized up to whole
ticks, so makespans differ from the event-driven engine by at most a few
ticks per dependency chain.  Used to cross-validate the event-driven engine.

Only the makespan is produced; this engine is intentionally simple and slow.
"""

from __future__ import annotations

from .core import MachineModel, TensorKind
from .errors import DeadlockError, ValidationError
from .profiler import ProfileSet
from .taskgraph import ChannelKind, TaskGraph, TaskType

_NS = 1_000_000_000


def _bytes_for(profiles: ProfileSet, tensor: TensorKind, layer: int, ch, u: int) -> int:
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
    return profiles.y_bytes(layer, u)


def simulate_fixed_tick(graph: TaskGraph, machine: MachineModel | None = None,
                        profiles: ProfileSet | None = None,
                        tick_ns: int = 1000) -> int:
    """Makespan of the iteration under tick-quantized list scheduling."""
    machine = machine or graph.machine
    if profiles is None:
        raise ValidationError("profiles are required")
    graph.validate()

    pcie = machine.pcie_bandwidth
    swap_bw = min(pcie, machine.root_link_bandwidth)

    jobs: list[dict] = []

    def new_job(prio, res, dur_ns, preds=(), start_preds=()):
        jobs.append({
            "prio": prio, "res": tuple(res), "dur": dur_ns,
            "preds": list(preds), "start_preds": list(start_preds),
            "start": None, "end": None, "arrival": None,
        })
        return len(jobs) - 1

    def xfer(nbytes, bw):
        return (nbytes * _NS + bw - 1) // bw

    computes: dict[int, list[int]] = {}
    stash_legs: dict[tuple[int, int, int], list[int]] = {}
    last_on_device: dict[tuple, int] = {}
    first_compute: dict[int, int] = {}

    for t in graph.tasks:
        g = t.device[1]
        upd = t.type is TaskType.U
        prev_task = last_on_device.get(t.device)
        window = []
        if upd and (t.index - 1) in first_compute:
            window = [first_compute[t.index - 1]]
        elif not upd and prev_task is not None and prev_task in first_compute:
            window = [first_compute[prev_task]]

        gate_first: list[int] = []          # jobs the first member must wait for
        gate_member: dict[int, list[int]] = {}

        swap_in_total = 0
        for tensor, entries in t.inputs.items():
            for layer, ch in entries.items():
                if ch.kind is ChannelKind.CPU_GPU_SWAP:
                    swap_in_total += _bytes_for(profiles, tensor, layer, ch, t.group[0])
                elif ch.kind is ChannelKind.MESSAGE_PASSING:
                    nbytes = sum(_bytes_for(profiles, tensor, layer, ch, u)
                                 for u in t.group)
                    if nbytes == 0:
                        gate_first.append(computes[ch.src_task][-1])
                        continue
                    legs = stash_legs.get((ch.src_task, t.index, layer), [])
                    j = new_job((t.index, 0), (f"g{g}.si", "root.out"),
                                xfer(nbytes, swap_bw), preds=legs,
                                start_preds=window)
                    gate_first.append(j)
                elif ch.kind is ChannelKind.SHARED_MEMORY:
                    src = graph.tasks[ch.src_task]
                    if src.group == t.group:
                        for m in range(len(t.group)):
                            gate_member.setdefault(m, []).append(computes[src.index][m])
                    else:
                        gate_first.append(computes[src.index][-1])
                elif ch.kind is ChannelKind.PEER2PEER:
                    src = graph.tasks[ch.src_task]
                    sg = src.device[1]
                    res = [f"g{sg}.po", f"g{g}.pi"]
                    bw = pcie
                    if not machine.same_p2p_group(sg, g):
                        res += ["root.in", "root.out"]
                        bw = swap_bw
                    if src.group == t.group:
                        for m, u in enumerate(t.group):
                            nbytes = _bytes_for(profiles, tensor, layer, ch, u)
                            if nbytes == 0:
                                gate_member.setdefault(m, []).append(computes[src.index][m])
                                continue
                            j = new_job((t.index, 0), res, xfer(nbytes, bw),
                                        preds=[computes[src.index][m]])
                            gate_member.setdefault(m, []).append(j)
                    else:
                        nbytes = sum(_bytes_for(profiles, tensor, layer, ch, u)
                                     for u in t.group)
                        if nbytes:
                            j = new_job((t.index, 0), res, xfer(nbytes, bw),
                                        preds=[computes[src.index][-1]])
                            gate_first.append(j)
                        else:
                            gate_first.append(computes[src.index][-1])
        if swap_in_total:
            gate_first.append(new_job((t.index, 0), (f"g{g}.si", "root.out"),
                                      xfer(swap_in_total, swap_bw),
                                      start_preds=window))

        comp_res = f"c{g}.upd" if t.device[0] == "cpu" else f"g{g}.comp"
        this = []
        group = (1,) if upd else t.group
        for m, u in enumerate(group):
            lo, hi = t.pack
            if t.type is TaskType.F:
                dur = profiles.pack_time_ns("F", lo, hi, u)
            elif t.type is TaskType.B:
                dur = profiles.pack_time_ns("B", lo, hi, u)
                if t.recompute:
                    dur += profiles.pack_time_ns("F", lo, hi, u)
            elif machine.cpu_offload_update:
                dur = sum(xfer(profiles.w_bytes(L), machine.update_cpu_rate)
                          for L in t.layers)
            else:
                dur = sum(profiles.time_ns("U", L, 1) for L in t.layers)
            preds = list(gate_member.get(m, ()))
            if m == 0:
                preds += gate_first
                if prev_task is not None:
                    preds.append(computes[prev_task][-1])
            else:
                preds.append(this[m - 1])
            this.append(new_job((t.index, 1, m), (comp_res,), dur, preds=preds))
        computes[t.index] = this
        first_compute[t.index] = this[0]
        last_on_device[t.device] = t.index

        swap_out_total = 0
        for tensor, entries in t.outputs.items():
            for layer, ch in entries.items():
                if ch.kind is ChannelKind.MESSAGE_PASSING:
                    for m, u in enumerate(t.group):
                        nbytes = _bytes_for(profiles, tensor, layer, ch, u)
                        if nbytes == 0:
                            continue
                        j = new_job((t.index, 2), (f"g{g}.so", "root.in"),
                                    xfer(nbytes, swap_bw), preds=[this[m]])
                        stash_legs.setdefault((t.index, ch.dst_task, layer), []).append(j)
                elif ch.kind is ChannelKind.CPU_GPU_SWAP:
                    swap_out_total += _bytes_for(profiles, tensor, layer, ch, t.group[0])
        if swap_out_total:
            new_job((t.index, 2), (f"g{g}.so", "root.in"),
                    xfer(swap_out_total, swap_bw), preds=[this[-1]])

    return _tick_engine(jobs, tick_ns)


def _tick_engine(jobs: list[dict], tick_ns: int) -> int:
    def qup(t: int) -> int:
        return -(-t // tick_ns) * tick_ns

    free_at: dict[str, int] = {}
    pending = set(range(len(jobs)))
    now = 0
    makespan = 0
    while pending:
        started_any = True
        while started_any:
            started_any = False
            # resources are FIFO: jobs queue in arrival order, ties by
            # priority; a blocked job holds its place in every queue it is
            # in, so later arrivals may not jump ahead on those resources
            for j in pending:
                job = jobs[j]
                if job["arrival"] is not None:
                    continue
                if any(jobs[p]["end"] is None or jobs[p]["end"] > now
                       for p in job["preds"]):
                    continue
                if any(jobs[p]["start"] is None or jobs[p]["start"] > now
                       for p in job["start_preds"]):
                    continue
                job["arrival"] = now
            claimed: set[str] = set()
            queue = sorted((j for j in pending if jobs[j]["arrival"] is not None),
                           key=lambda i: (jobs[i]["arrival"], jobs[i]["prio"], i))
            for j in queue:
                job = jobs[j]
                blocked = (any(r in claimed for r in job["res"])
                           or any(free_at.get(r, 0) > now for r in job["res"]))
                if blocked:
                    claimed.update(job["res"])
                    continue
                job["start"] = now
                job["end"] = now + qup(job["dur"])
                for r in job["res"]:
                    free_at[r] = job["end"]
                makespan = max(makespan, job["end"])
                pending.discard(j)
                started_any = True
        horizon = [jobs[j]["end"] for j in range(len(jobs))
                   if jobs[j]["end"] is not None and jobs[j]["end"] > now]
        if not horizon:
            if pending:
                raise DeadlockError("tick simulation stalled with pending jobs")
            break
        now = min(horizon)
    return makespan
