import random

import pytest
from conftest import table_profiles

from wrapsched.core import Configuration, MachineModel, Mode, TensorKind
from wrapsched.errors import DeadlockError, MissingProfileError
from wrapsched.profiler import SynthSpec, synth_profiles
from wrapsched.simulator import simulate
from wrapsched.taskgraph import (
    Channel,
    ChannelKind,
    Task,
    TaskGraph,
    TaskType,
    generate_task_graph,
)
from wrapsched.ticksim import simulate_fixed_tick

MS = 1_000_000


def machine(n=1, beta=16 << 30, **kw):
    return MachineModel(gpu_count=n, gpu_mem_capacity=1 << 44,
                        pcie_bandwidth=beta, **kw)


def test_single_forward_task_weights_then_compute():
    # 4 GiB of weights over 16 GiB/s take 250 ms, then 10 ms of compute
    profiles = table_profiles([10 * MS], w=4 << 30)
    task = Task(index=0, pack=(0, 0), type=TaskType.F, group=(1,),
                device=("gpu", 0),
                inputs={TensorKind.W: {0: Channel(ChannelKind.CPU_GPU_SWAP)}},
                outputs={})
    g = TaskGraph(tasks=[task], mode=Mode.PP, machine=machine(), minibatch=1)
    report = simulate(g, profiles=profiles)
    assert report.makespan_ns == 260 * MS
    assert report.swap_volume(TensorKind.W) == 4 << 30


def test_zero_sizes_single_gpu_is_serial_compute():
    profiles = table_profiles([10 * MS, 10 * MS], times_b=[20 * MS, 20 * MS])
    cfg = Configuration(u_f=1, p_f=((0, 1),), u_b=1, p_b=((0, 1),),
                        minibatch=2, mode=Mode.PP)
    g = generate_task_graph(cfg, machine(1), profiles)
    report = simulate(g, profiles=profiles)
    # two forward members (20 ms each) + two backward members (40 ms each)
    assert report.makespan_ns == 120 * MS


def test_zero_sizes_two_gpu_pipeline_hand_traced():
    profiles = table_profiles([10 * MS, 10 * MS], times_b=[20 * MS, 20 * MS])
    cfg = Configuration(u_f=1, p_f=((0, 0), (1, 1)), u_b=1,
                        p_b=((0, 0), (1, 1)), minibatch=2, mode=Mode.PP)
    g = generate_task_graph(cfg, machine(2), profiles)
    report = simulate(g, profiles=profiles)
    # hand trace: F0 0-10,10-20 | F1 10-20,20-30 | B(1,1) 20-40,40-60 on gpu0
    # B(0,0) with recompute 30 ms/member: 40-70,70-100 on gpu1
    assert report.makespan_ns == 100 * MS
    assert report.channel_volumes[ChannelKind.PEER2PEER.value] == 0


def test_determinism_identical_reports():
    spec = SynthSpec(layer_count=6, preset="irregular", seed=9, u_max=4,
                     w_bytes=8 << 20, act_bytes_per_u=1 << 18)
    profiles = synth_profiles(spec)
    cfg = Configuration(u_f=2, p_f=((0, 2), (3, 5)), u_b=2,
                        p_b=((0, 2), (3, 5)), minibatch=4, mode=Mode.PP)
    g = generate_task_graph(cfg, machine(2), profiles)
    r1 = simulate(g, profiles=profiles)
    r2 = simulate(g, profiles=profiles)
    assert r1 == r2


def test_uniform_pp_weight_volume_closed_form():
    # grouped wrap-around pipeline moves 3|W| regardless of microbatch count
    spec = SynthSpec(layer_count=8, u_max=4, w_bytes=4 << 20,
                     act_bytes_per_u=1 << 16)
    profiles = synth_profiles(spec)
    packs = tuple((i, i) for i in range(8))
    cfg = Configuration(u_f=1, p_f=packs, u_b=1, p_b=packs, minibatch=6,
                        mode=Mode.PP)
    g = generate_task_graph(cfg, machine(2), profiles)
    report = simulate(g, profiles=profiles)
    total_w = sum(profiles.w_bytes(i) for i in range(8))
    assert report.swap_volume(TensorKind.W) == 3 * total_w
    assert report.swap_volume(TensorKind.DW) == 0


def _config_lower_bounds(g, profiles, machine_):
    """Independent lower bounds: per-GPU compute and channel critical path."""
    from wrapsched.simulator import _compute_duration

    per_gpu = {}
    totals = {}
    for t in g.tasks:
        group = (1,) if t.type is TaskType.U else t.group
        dur = sum(_compute_duration(t, u, profiles, machine_) for u in group)
        totals[t.index] = dur
        if t.device[0] == "gpu":
            per_gpu[t.device[1]] = per_gpu.get(t.device[1], 0) + dur
    finish = {}
    for t in g.tasks:
        last_member = _compute_duration(
            t, (1,)[0] if t.type is TaskType.U else t.group[-1], profiles, machine_)
        best = 0
        for entries in t.inputs.values():
            for ch in entries.values():
                if ch.src_task is not None:
                    best = max(best, finish[ch.src_task])
        finish[t.index] = max(totals[t.index], best + last_member)
    return max(per_gpu.values(), default=0), max(finish.values(), default=0)


def test_lower_bounds_random_configs():
    from test_taskgraph import random_valid_config

    rng = random.Random(123)
    for _ in range(25):
        cfg = random_valid_config(rng)
        n = rng.randrange(1, 5)
        spec = SynthSpec(layer_count=cfg.layer_count, preset="irregular",
                         seed=rng.randrange(1000), u_max=8,
                         w_bytes=rng.choice([0, 4 << 20]),
                         act_bytes_per_u=rng.choice([0, 1 << 16]))
        profiles = synth_profiles(spec)
        m = machine(n)
        g = generate_task_graph(cfg, m, profiles)
        report = simulate(g, profiles=profiles)
        busy_bound, path_bound = _config_lower_bounds(g, profiles, m)
        assert report.makespan_ns >= busy_bound
        assert report.makespan_ns >= path_bound
        # accounting invariants
        for k in range(n):
            assert report.gpu_busy_ns[k] + report.gpu_idle_ns[k] == report.makespan_ns
        assert sum(report.channel_volumes.values()) == sum(
            v for per in report.tensor_volumes.values() for v in per.values())


def test_trace_events_non_overlapping_per_resource():
    spec = SynthSpec(layer_count=4, u_max=4, w_bytes=1 << 20,
                     act_bytes_per_u=1 << 12)
    profiles = synth_profiles(spec)
    cfg = Configuration(u_f=1, p_f=((0, 1), (2, 3)), u_b=1,
                        p_b=((0, 1), (2, 3)), minibatch=4, mode=Mode.PP)
    g = generate_task_graph(cfg, machine(2), profiles)
    report = simulate(g, profiles=profiles)
    by_resource = {}
    for e in report.trace:
        by_resource.setdefault(e.resource, []).append(e)
    for events in by_resource.values():
        events.sort(key=lambda e: e.start_ns)
        for a, b in zip(events, events[1:]):
            assert a.end_ns <= b.start_ns


def test_update_offload_rate_and_k_roundtrip():
    profiles = table_profiles([MS], times_b=[MS], w=1 << 30, k=2 << 30)
    m = machine(1, cpu_offload_update=True, update_cpu_rate=1 << 30)
    cfg = Configuration(u_f=1, p_f=((0, 0),), u_b=1, p_b=((0, 0),),
                        minibatch=1, mode=Mode.PP)
    g = generate_task_graph(cfg, m, profiles)
    report = simulate(g, m, profiles)
    u_events = [e for e in report.trace if e.resource == "cpu0.update"]
    assert len(u_events) == 1
    assert u_events[0].end_ns - u_events[0].start_ns == 1_000_000_000  # 1 GiB at 1 GiB/s
    assert report.swap_volume(TensorKind.K) == 2 * (2 << 30)
    assert report.swap_volume(TensorKind.W) == 3 * (1 << 30)


def test_missing_profile_error():
    profiles = table_profiles([MS, MS])
    del profiles._time[(1, "B")]  # claims two layers but lacks a model
    cfg = Configuration(u_f=1, p_f=((0, 1),), u_b=1, p_b=((0, 1),),
                        minibatch=1, mode=Mode.PP)
    g = generate_task_graph(cfg, machine(1), profiles)
    with pytest.raises(MissingProfileError):
        simulate(g, profiles=profiles)


def test_cross_group_p2p_occupies_root_link():
    # two switch groups: the peer transfer crosses the root complex, which a
    # concurrent swap also needs, so the transfers serialize
    profiles = table_profiles([MS, MS], y=1 << 30, x=1 << 30, w=1 << 30)
    cfg = Configuration(u_f=1, p_f=((0, 0), (1, 1)), u_b=1,
                        p_b=((0, 0), (1, 1)), minibatch=1, mode=Mode.PP)
    split = MachineModel(gpu_count=2, gpu_mem_capacity=1 << 44,
                         pcie_bandwidth=16 << 30, p2p_groups=((0,), (1,)))
    joined = MachineModel(gpu_count=2, gpu_mem_capacity=1 << 44,
                          pcie_bandwidth=16 << 30)
    g_split = generate_task_graph(cfg, split, profiles)
    g_joined = generate_task_graph(cfg, joined, profiles)
    t_split = simulate(g_split, split, profiles).makespan_ns
    t_joined = simulate(g_joined, joined, profiles).makespan_ns
    assert t_split > t_joined


def test_per_gpu_volume_buckets_sum_to_global():
    spec = SynthSpec(layer_count=4, u_max=4, w_bytes=1 << 20,
                     act_bytes_per_u=1 << 12)
    profiles = synth_profiles(spec)
    cfg = Configuration(u_f=1, p_f=((0, 1), (2, 3)), u_b=1,
                        p_b=((0, 1), (2, 3)), minibatch=2, mode=Mode.PP)
    report = simulate(generate_task_graph(cfg, machine(2), profiles),
                      profiles=profiles)
    for channel, total in report.channel_volumes.items():
        spread = sum(per.get(channel, 0) for per in report.per_gpu_volumes.values())
        assert spread == total


def test_relay_to_synthetic_join_not_billed():
    from wrapsched.core import LayerNode, serialize_graph

    # two sinks joined synthetically: the join edge crosses boundaries but
    # must not create payload entries
    dag = [LayerNode(0), LayerNode(1, predecessors=(0,)),
           LayerNode(2, predecessors=(0,))]
    chain = serialize_graph(dag)
    profiles = table_profiles([MS, MS, MS], x=1 << 10, y=1 << 10, w=1 << 10)
    cfg = Configuration(u_f=1, p_f=((0, 0), (1, 1), (2, 2)), u_b=1,
                        p_b=((0, 0), (1, 1), (2, 2)), minibatch=1, mode=Mode.PP)
    g = generate_task_graph(cfg, machine(2), profiles, chain)
    report = simulate(g, profiles=profiles)  # would raise on a synthetic lookup
    assert report.makespan_ns > 0


def test_memory_assertion_flags_prefetch_overflow():
    from wrapsched.errors import ValidationError

    profiles = table_profiles([MS, MS], mems=[600 << 20, 600 << 20], w=1 << 20)
    cfg = Configuration(u_f=1, p_f=((0, 0), (1, 1)), u_b=1,
                        p_b=((0, 0), (1, 1)), minibatch=1, mode=Mode.DP)
    m = MachineModel(gpu_count=1, gpu_mem_capacity=1 << 30,
                     pcie_bandwidth=16 << 30)
    g = generate_task_graph(cfg, m, profiles)
    simulate(g, m, profiles)  # lenient by default
    with pytest.raises(ValidationError):
        simulate(g, m, profiles, check_memory=True)


def test_deadlock_guard_on_manufactured_cycle():
    from wrapsched.simulator import _Item, _link, _run

    a = _Item((0, 0, 0, 0), ("r",), 1, 0, "compute", "a")
    b = _Item((1, 0, 0, 1), ("r",), 1, 1, "compute", "b")
    a.idx, b.idx = 0, 1
    _link(a, b)
    _link(b, a)
    with pytest.raises(DeadlockError):
        _run([a, b])


def test_tick_reference_close_on_small_graph():
    spec = SynthSpec(layer_count=6, preset="irregular", seed=4, u_max=4,
                     base_time_ns=3 * MS, w_bytes=32 << 20,
                     act_bytes_per_u=1 << 20)
    profiles = synth_profiles(spec)
    cfg = Configuration(u_f=2, p_f=((0, 2), (3, 5)), u_b=1,
                        p_b=((0, 2), (3, 5)), minibatch=4, mode=Mode.PP)
    m = machine(2)
    g = generate_task_graph(cfg, m, profiles)
    event = simulate(g, profiles=profiles).makespan_ns
    tick = simulate_fixed_tick(g, m, profiles)
    assert abs(event - tick) <= max(0.01 * event, 2000)
