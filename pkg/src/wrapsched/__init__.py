"""Planner and deterministic simulator for swap-aware pipelined training
schedules: profile modeling, balanced-time layer packing, four-tuple
configuration search, wrap-around task graphs, an event-driven
iteration-time/swap-volume simulator, and the Partition-reduction oracles
that validate the heuristics.
"""

from .core import (
    Configuration,
    LayerChain,
    LayerNode,
    MachineModel,
    Mode,
    TensorKind,
    serialize_graph,
)
from .profiler import (
    ProfileSample,
    ProfileSet,
    SynthSpec,
    fit_profiles,
    slow_start_max_u,
    synth_profiles,
    synth_samples,
)
from .packing import PackPlan, balanced_time_pack, greedy_maxpack_baseline
from .taskgraph import (
    Channel,
    ChannelKind,
    Task,
    TaskGraph,
    TaskType,
    generate_task_graph,
    unroll_schedule,
)
from .simulator import SimReport, TraceEvent, simulate
from .ticksim import simulate_fixed_tick
from .gantt import GanttAnnotation, render_gantt
from .search import SearchResult, SearchSpec, Strategy, greedy_baseline, search
from .analytics import (
    IdealModel,
    SwapStrategy,
    closed_form_swap,
    compare_sim_to_closed_form,
)
from .hardness import (
    ReductionInstance,
    SimpleSchedule,
    VerifyResult,
    build_reduction,
    enumerate_optimal,
    eval_makespan,
    evaluate_schedule,
    forced_idle_annotations,
    lift_to_task_graph,
    partition_packing,
    random_feasible_packing,
    schedule_trace,
    target_makespan,
    target_numerator,
    verify_reduction,
)

__version__ = "0.1.0"
