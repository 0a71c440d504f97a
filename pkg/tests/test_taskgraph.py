import random

import pytest

from wrapsched.core import Configuration, LayerChain, MachineModel, Mode, TensorKind
from wrapsched.errors import UnroutableBranchError
from wrapsched.profiler import SynthSpec, synth_profiles
from wrapsched.taskgraph import (
    ChannelKind,
    TaskType,
    generate_task_graph,
    unroll_schedule,
)


def make_profiles(r, u_max=8):
    return synth_profiles(SynthSpec(layer_count=r, u_max=u_max,
                                    w_bytes=1 << 20, act_bytes_per_u=1 << 10))


def machine(n=2):
    return MachineModel(gpu_count=n, gpu_mem_capacity=1 << 40,
                        pcie_bandwidth=16 << 30)


def pp_config(p_f, p_b, u_f=1, u_b=1, d=2):
    return Configuration(u_f=u_f, p_f=tuple(p_f), u_b=u_b, p_b=tuple(p_b),
                         minibatch=d, mode=Mode.PP)


def test_wraparound_binding_three_packs_two_gpus():
    # |P_F|=3, |P_B|=3 (shared last): forward on GPUs [0,1,0], reversed
    # backward packs on [1,0,1], updates colocated
    cfg = pp_config([(0, 1), (2, 3), (4, 5)], [(0, 1), (2, 3), (4, 5)])
    g = generate_task_graph(cfg, machine(2), make_profiles(6))
    by_type = {}
    for t in g.tasks:
        by_type.setdefault(t.type, []).append(t)
    assert [t.device[1] for t in by_type[TaskType.F]] == [0, 1, 0]
    # backward tasks come in reversed pack order: shared (4,5), then (2,3), (0,1)
    assert [t.pack for t in by_type[TaskType.B]] == [(4, 5), (2, 3), (0, 1)]
    assert [t.device[1] for t in by_type[TaskType.B]] == [1, 0, 1]
    for b in by_type[TaskType.B]:
        u = g.tasks[b.index + 1]
        assert u.type is TaskType.U
        assert u.device == ("cpu", b.device[1])


def test_unroll_schedule_example():
    cfg = pp_config([(0, 1), (2, 3), (4, 5)], [(0, 1), (2, 3), (4, 5)])
    g = generate_task_graph(cfg, machine(2), make_profiles(6))
    order = unroll_schedule(g)
    # GPU0: F-pack0, F-pack2, B-pack1; GPU1: F-pack1, B-shared, B-pack0
    assert order["gpu0"] == [0, 2, 5]
    assert order["gpu1"] == [1, 3, 7]
    assert order["cpu1"] == [4, 8]
    assert order["cpu0"] == [6]


def test_six_singleton_packs_two_gpus_wraparound():
    # six per-layer packs on two GPUs: the GPU running layer 0's forward also
    # runs layer 1's backward
    packs = [(i, i) for i in range(6)]
    cfg = pp_config(packs, packs)
    g = generate_task_graph(cfg, machine(2), make_profiles(6))
    f0 = next(t for t in g.tasks if t.type is TaskType.F and t.pack == (0, 0))
    b1 = next(t for t in g.tasks if t.type is TaskType.B and t.pack == (1, 1))
    assert f0.device == ("gpu", 0)
    assert b1.device == ("gpu", 0)


def test_degenerate_single_pack_single_gpu():
    cfg = pp_config([(0, 3)], [(0, 3)], d=2)
    g = generate_task_graph(cfg, machine(1), make_profiles(4))
    assert [t.type for t in g.tasks] == [TaskType.F, TaskType.B, TaskType.U]
    b = g.tasks[1]
    assert not b.recompute
    assert TensorKind.SX not in b.inputs
    # single GPU: every channel is host-side or zero-copy, never peer-to-peer
    for t in g.tasks:
        for entries in list(t.inputs.values()) + list(t.outputs.values()):
            for ch in entries.values():
                assert ch.kind is not ChannelKind.PEER2PEER
    assert unroll_schedule(g)["gpu0"] == [0, 1]


def test_dp_mode_replicates_packs_no_p2p():
    packs = [(0, 1), (2, 3)]
    cfg = Configuration(u_f=1, p_f=tuple(packs), u_b=1, p_b=tuple(packs),
                        minibatch=8, mode=Mode.DP)
    g = generate_task_graph(cfg, machine(4), make_profiles(4))
    order = unroll_schedule(g)
    per_gpu = [[g.tasks[i].pack for i in order[f"gpu{k}"]] for k in range(4)]
    assert per_gpu[0] == per_gpu[1] == per_gpu[2] == per_gpu[3]
    for t in g.tasks:
        assert sum(t.group) == 2 or t.type is TaskType.U  # share D/N = 2
        for entries in list(t.inputs.values()) + list(t.outputs.values()):
            for ch in entries.values():
                assert ch.kind is not ChannelKind.PEER2PEER


def test_weight_input_once_per_task():
    cfg = pp_config([(0, 2), (3, 5)], [(0, 2), (3, 5)], u_f=2, u_b=2, d=8)
    g = generate_task_graph(cfg, machine(2), make_profiles(6))
    for t in g.tasks:
        if t.type in (TaskType.F, TaskType.B):
            layers = set(t.inputs[TensorKind.W])
            assert layers == set(t.layers)
            for ch in t.inputs[TensorKind.W].values():
                assert ch.kind is ChannelKind.CPU_GPU_SWAP


def test_stash_edges_per_nonlast_backward_pack():
    cfg = pp_config([(0, 3), (4, 5)], [(0, 1), (2, 3), (4, 5)])
    g = generate_task_graph(cfg, machine(2), make_profiles(6))
    b_tasks = [t for t in g.tasks if t.type is TaskType.B]
    shared = b_tasks[0]
    assert shared.pack == (4, 5) and TensorKind.SX not in shared.inputs
    for b in b_tasks[1:]:
        entries = b.inputs[TensorKind.SX]
        assert list(entries) == [b.pack[0]]
        ch = entries[b.pack[0]]
        assert ch.kind is ChannelKind.MESSAGE_PASSING
        src = g.tasks[ch.src_task]
        assert src.type is TaskType.F
        assert src.pack[0] <= b.pack[0] <= src.pack[1]
        assert b.recompute


def test_dw_never_on_swap_channels():
    cfg = pp_config([(0, 1), (2, 3)], [(0, 1), (2, 3)])
    for mode in (Mode.PP, Mode.DP):
        c = Configuration(u_f=1, p_f=cfg.p_f, u_b=1, p_b=cfg.p_b,
                          minibatch=2, mode=mode)
        g = generate_task_graph(c, machine(2), make_profiles(4))
        for t in g.tasks:
            for entries in (t.inputs.get(TensorKind.DW, {}),
                            t.outputs.get(TensorKind.DW, {})):
                for ch in entries.values():
                    assert ch.kind is ChannelKind.SHARED_MEMORY


def test_relay_annotation_routes_extra_p2p_entries():
    # skip edge 0 -> 3 with singleton packs: the boundary between packs (1,1)
    # and (2,2) carries layer 0's output as an extra peer entry
    chain = LayerChain(
        layers=(0, 1, 2, 3),
        edges=((0, 1), (1, 2), (2, 3), (0, 3)),
    )
    packs = [(i, i) for i in range(4)]
    cfg = pp_config(packs, packs)
    g = generate_task_graph(cfg, machine(2), make_profiles(4), chain)
    f2 = g.tasks[2]
    entries = f2.inputs[TensorKind.X]
    assert set(entries) == {2, 0}
    assert entries[0].src_layer == 0


def test_unroutable_branch():
    from wrapsched.core import RelayAnnotation
    # hand-built annotation whose destination sits upstream of its source
    bad = LayerChain(layers=(0, 1, 2, 3), edges=((0, 1), (1, 2), (2, 3)),
                     relay_annotations=(RelayAnnotation(3, 1, (2,)),))
    cfg = pp_config([(i, i) for i in range(4)], [(i, i) for i in range(4)])
    with pytest.raises(UnroutableBranchError):
        generate_task_graph(cfg, machine(2), make_profiles(4), bad)


def random_valid_config(rng, r=None, mode=None):
    r = r or rng.randrange(2, 16)
    cuts_b = sorted(rng.sample(range(1, r), rng.randrange(0, min(r - 1, 5) + 1)))
    p_b = []
    lo = 0
    for c in cuts_b + [r]:
        p_b.append((lo, c - 1))
        lo = c
    shared_start = p_b[-1][0]
    p_f = []
    if shared_start > 0:
        cuts_f = sorted(rng.sample(range(1, shared_start),
                                   rng.randrange(0, min(shared_start - 1, 4) + 1)))
        lo = 0
        for c in cuts_f + [shared_start]:
            p_f.append((lo, c - 1))
            lo = c
    p_f.append(p_b[-1])
    d = rng.randrange(1, 9)
    return Configuration(
        u_f=rng.randrange(1, d + 1), p_f=tuple(p_f),
        u_b=rng.randrange(1, d + 1), p_b=tuple(p_b),
        minibatch=d, mode=mode or rng.choice([Mode.PP, Mode.DP]),
    )


def test_structural_invariants_random_configs():
    rng = random.Random(77)
    for _ in range(60):
        cfg = random_valid_config(rng)
        cfg.validate()
        n = rng.randrange(1, 6)
        g = generate_task_graph(cfg, machine(n), make_profiles(cfg.layer_count))
        g.validate()
        if cfg.mode is Mode.PP:
            f_tasks = [t for t in g.tasks if t.type is TaskType.F]
            for i, t in enumerate(f_tasks):
                assert t.device == ("gpu", i % n)
        for t in g.tasks:
            if t.type is TaskType.B:
                u = g.tasks[t.index + 1]
                assert u.type is TaskType.U and u.device == ("cpu", t.device[1])
