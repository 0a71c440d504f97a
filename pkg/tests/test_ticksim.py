import random

from test_taskgraph import random_valid_config

from wrapsched.core import MachineModel
from wrapsched.profiler import SynthSpec, synth_profiles
from wrapsched.simulator import simulate
from wrapsched.taskgraph import generate_task_graph
from wrapsched.ticksim import simulate_fixed_tick

MiB = 1 << 20


def random_case(rng):
    """Random valid configuration with millisecond-scale compute times."""
    cfg = random_valid_config(rng, r=rng.randrange(2, 9))
    spec = SynthSpec(
        layer_count=cfg.layer_count,
        preset=rng.choice(["uniform", "irregular"]),
        seed=rng.randrange(10_000),
        u_max=8,
        base_time_ns=rng.randrange(1, 8) * 1_000_000,
        time_intercept_ns=rng.randrange(0, 3) * 1_000_000,
        ratio_b=rng.choice([1.0, 2.0, 3.0]),
        w_bytes=rng.choice([0, 8 * MiB, 64 * MiB]),
        act_bytes_per_u=rng.choice([0, 1 * MiB]),
        k_ratio=2.0,
    )
    profiles = synth_profiles(spec)
    machine = MachineModel(
        gpu_count=rng.randrange(1, 5),
        gpu_mem_capacity=1 << 44,
        pcie_bandwidth=rng.choice([4, 16]) << 30,
        cpu_offload_update=rng.random() < 0.5,
    )
    return cfg, machine, profiles


def test_event_and_tick_engines_agree_within_one_percent():
    rng = random.Random(2718)
    worst = 0.0
    done = 0
    while done < 40:
        cfg, machine, profiles = random_case(rng)
        graph = generate_task_graph(cfg, machine, profiles)
        if len(graph.tasks) > 50:
            continue
        done += 1
        i = done
        event = simulate(graph, machine, profiles).makespan_ns
        tick = simulate_fixed_tick(graph, machine, profiles, tick_ns=1000)
        rel = abs(event - tick) / max(event, 1)
        worst = max(worst, rel)
        assert rel <= 0.01, (i, cfg, event, tick)
    print(f"worst relative disagreement: {worst * 100:.4f}%")


def test_tick_quantization_rounds_up():
    rng = random.Random(1)
    cfg, machine, profiles = random_case(rng)
    graph = generate_task_graph(cfg, machine, profiles)
    event = simulate(graph, machine, profiles).makespan_ns
    coarse = simulate_fixed_tick(graph, machine, profiles, tick_ns=1_000_000)
    assert coarse >= event  # everything rounds up to whole ticks
    assert coarse % 1_000_000 == 0
