"""Command-line surface tying the modules into reproducible workflows.

Subcommands:
  gen-profiles   synthesize profile samples from a generator spec
  fit-profiles   fit affine cost models from samples
  pack           balanced-time packing for one pass and microbatch size
  search         configuration sweep; writes the candidate log and best config
  simulate       simulate a configuration or a serialized task graph
  analyze-swaps  closed-form vs simulated swap volumes on the ideal model
  gantt          render a simulation report as text or SVG
  reduction      build / eval / verify / gantt for the Partition reduction

Every output embeds the inputs' seed where applicable, and a run manifest is
written next to multi-file outputs so runs can be replayed byte-for-byte.

All files are JSON with ``format_version`` and ``kind`` tags; units live in
the field names.  The machine schema: ``gpu_count``,
``gpu_mem_capacity_bytes``, ``pcie_bandwidth_bytes_per_s``, optional
``root_link_bandwidth_bytes_per_s`` (defaults to the PCIe rate),
``p2p_groups`` (partition of GPU indices into switch groups),
``cpu_offload_update``, ``update_cpu_rate_bytes_per_s``.  The layer-graph
schema: ``nodes`` as a list of ``{id, kind, predecessors}`` forming a DAG
with dense ids; branches are serialized into a chain with identity relays.
Profile samples carry per ``(layer_id, pass, microbatch)``:
``compute_time_ns``, ``mem_bytes``, ``x_bytes``, ``y_bytes``, ``w_bytes``,
``dw_bytes``, ``k_bytes``.  See the README for the full format table.

Exit codes: 0 success, 2 validation error, 3 infeasible, 4 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import fileio
from .analytics import IdealModel, SwapStrategy, compare_sim_to_closed_form, comparison_table
from .core import serialize_graph
from .errors import (
    LayerTooLargeError,
    NoFeasibleConfigurationError,
    NoFeasibleMicrobatchError,
    UnpackableError,
    ValidationError,
    WrapschedError,
)
from .gantt import render_gantt
from .hardness import (
    build_reduction,
    enumerate_optimal,
    evaluate_schedule,
    forced_idle_annotations,
    schedule_trace,
    target_makespan,
    verify_reduction,
)
from .packing import balanced_time_pack
from .profiler import fit_profiles, synth_samples
from .search import search
from .simulator import simulate
from .taskgraph import generate_task_graph

EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3
EXIT_INTERNAL = 4

_INFEASIBLE = (NoFeasibleConfigurationError, NoFeasibleMicrobatchError,
               UnpackableError, LayerTooLargeError)


def _manifest(args: argparse.Namespace, out_dir: Path, seed: "int | None" = None) -> None:
    doc = {
        "format_version": fileio.FORMAT_VERSION,
        "kind": "run_manifest",
        "subcommand": args.command,
        "inputs": {k: str(v) for k, v in vars(args).items()
                   if isinstance(v, (str, Path)) and k != "command"},
    }
    if seed is not None:
        doc["seed"] = seed
    fileio.save_json(doc, out_dir / "manifest.json")


def _load_chain(path: "str | None"):
    if path is None:
        return None
    return serialize_graph(fileio.layer_graph_from_doc(fileio.load_json(path)))


def cmd_gen_profiles(args) -> int:
    spec = fileio.synth_spec_from_doc(fileio.load_json(args.spec))
    samples = synth_samples(spec, stride=args.stride)
    fileio.save_json(fileio.samples_to_doc(samples, seed=spec.seed), args.out)
    print(f"wrote {len(samples)} samples for {spec.layer_count} layers to {args.out}")
    return 0


def cmd_fit_profiles(args) -> int:
    samples = fileio.samples_from_doc(fileio.load_json(args.samples))
    profiles = fit_profiles(samples, stride=args.stride)
    fileio.save_json(fileio.profileset_to_doc(profiles), args.out)
    worst = max(profiles.residuals.values(), default=0.0)
    print(f"fitted {profiles.layer_count} layers "
          f"(u_max F={profiles.u_max_f} B={profiles.u_max_b}); "
          f"max relative residual {worst:.4f}")
    return 0


def cmd_pack(args) -> int:
    machine = fileio.machine_from_doc(fileio.load_json(args.machine))
    profiles = fileio.profileset_from_doc(fileio.load_json(args.profiles))
    plan = balanced_time_pack(args.pass_, args.microbatch, profiles.layer_count,
                              profiles, machine.gpu_mem_capacity)
    doc = {
        "format_version": fileio.FORMAT_VERSION,
        "kind": "pack_plan",
        "pass": args.pass_,
        "microbatch": args.microbatch,
        "packs": [list(p) for p in plan.packs],
        "times_ns": list(plan.times_ns),
        "mem_bytes": list(plan.mem_bytes),
    }
    if args.out:
        fileio.save_json(doc, args.out)
    print(plan.describe())
    return 0


def cmd_search(args) -> int:
    machine = fileio.machine_from_doc(fileio.load_json(args.machine))
    profiles = fileio.profileset_from_doc(fileio.load_json(args.profiles))
    spec = fileio.search_spec_from_doc(fileio.load_json(args.spec))
    if args.jobs:
        spec = dataclasses.replace(spec, jobs=args.jobs)
    chain = _load_chain(args.layer_graph)
    result = search(spec, machine, profiles, chain)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fileio.save_json(fileio.search_result_to_doc(result), out_dir / "result.json")
    fileio.save_json(fileio.config_to_doc(result.best), out_dir / "best_config.json")
    _manifest(args, out_dir)
    best = result.best_row()
    report = [
        f"mode={spec.mode.value} strategy={spec.strategy.value} minibatch={spec.minibatch}",
        f"U_F={best.u_f} |P_F|={best.pf_count} U_B={best.u_b} |P_B|={best.pb_count}",
        f"estimated iteration time: {result.best_time_ns / 1e6:.3f} ms",
        f"P_F: {', '.join(f'L{a}-{b}' for a, b in result.best.p_f)}",
        f"P_B: {', '.join(f'L{a}-{b}' for a, b in result.best.p_b)}",
        f"explored {result.explored} candidates in {result.wall_time_s:.2f}s",
    ]
    (out_dir / "report.txt").write_text("\n".join(report) + "\n", encoding="utf-8")
    print("\n".join(report))
    return 0


def cmd_simulate(args) -> int:
    machine = fileio.machine_from_doc(fileio.load_json(args.machine))
    profiles = fileio.profileset_from_doc(fileio.load_json(args.profiles))
    if args.graph:
        graph = fileio.taskgraph_from_doc(fileio.load_json(args.graph))
    else:
        cfg = fileio.config_from_doc(fileio.load_json(args.config))
        graph = generate_task_graph(cfg, machine, profiles, _load_chain(args.layer_graph))
    report = simulate(graph, machine, profiles)
    fileio.save_json(fileio.report_to_doc(report), args.out)
    if args.trace_csv:
        Path(args.trace_csv).write_text(fileio.trace_to_csv(report), encoding="utf-8")
    print(f"makespan: {report.makespan_ns / 1e6:.3f} ms; "
          f"swap bytes: {report.channel_volumes.get('cpu_gpu_swap', 0)}")
    for caveat in report.caveats:
        print(f"note: {caveat}")
    return 0


def cmd_analyze_swaps(args) -> int:
    doc = fileio.load_json(args.model)
    if doc.get("kind") != "ideal_model":
        raise ValidationError("analyze-swaps expects a kind='ideal_model' document")
    strategies = ([SwapStrategy(doc["strategy"])] if doc.get("strategy") not in (None, "all")
                  else list(SwapStrategy))
    results = {}
    for strategy in strategies:
        model = IdealModel(
            layer_count=doc["layer_count"],
            w_bytes=doc["w_bytes"], dw_bytes=doc["dw_bytes"],
            k_bytes=doc["k_bytes"], sx_bytes=doc["sx_bytes"],
            m=doc["m"], gpu_count=doc["gpu_count"], strategy=strategy,
        )
        rows, _ = compare_sim_to_closed_form(model, dw_deduction=args.dw_deduction)
        print(f"-- {strategy.value} (m={model.m}, N={model.gpu_count})")
        print(comparison_table(rows))
        results[strategy.value] = {
            t.value: {"analytic_bytes": r.analytic_bytes,
                      "simulated_bytes": r.simulated_bytes,
                      "delta_bytes": r.delta_bytes,
                      "provenance": ("derived, not closed-form-verbatim"
                                     if t.value in ("dW", "sX") else "closed form")}
            for t, r in rows.items()
        }
    if args.out:
        fileio.save_json({"format_version": fileio.FORMAT_VERSION,
                          "kind": "swap_comparison", "results": results}, args.out)
    return 0


def cmd_gantt(args) -> int:
    report = fileio.report_from_doc(fileio.load_json(args.report))
    doc = render_gantt(report, fmt=args.format)
    if args.out:
        Path(args.out).write_text(doc, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(doc, end="")
    return 0


def _parse_packs(text: str) -> list[tuple[int, int]]:
    """Pack syntax, 1-based to match reports: '1,2,3-4,5' -> [(0,0),(1,1),(2,3),(4,4)]."""
    packs = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-")
        else:
            lo = hi = part
        packs.append((int(lo) - 1, int(hi) - 1))
    return packs


def cmd_reduction(args) -> int:
    if args.action == "build":
        inst = build_reduction(args.numbers, scale=args.scale)
        doc = {
            "format_version": fileio.FORMAT_VERSION,
            "kind": "reduction_instance",
            "microbatches": inst.microbatches,
            "gpu_count": inst.gpu_count,
            "mem_per_gpu": inst.mem_per_gpu,
            "scale": inst.scale,
            "source": list(inst.source),
            "layers": [list(l) for l in inst.layers],
        }
        if args.out:
            fileio.save_json(doc, args.out)
        print(f"{inst.layer_count} layers, A={inst.scale}, "
              f"T={target_makespan(inst)}")
        return 0

    inst = build_reduction(args.numbers, scale=args.scale)
    if args.action == "eval":
        if not args.packs:
            raise ValidationError("reduction eval needs --packs")
        sched = evaluate_schedule(inst, _parse_packs(args.packs))
        print(f"makespan: {sched.makespan} (target T={target_makespan(inst)})")
        return 0
    if args.action == "verify":
        res = verify_reduction(args.numbers, scale=args.scale)
        target = int(res.target) if float(res.target).is_integer() else res.target
        print(f"Partition: {'YES' if res.partition_yes else 'NO'}, "
              f"T={target}, achievable: {'YES' if res.t_achievable else 'NO'} "
              f"(best makespan {res.best_makespan})")
        if res.partition_yes != res.t_achievable:
            print("reduction equivalence VIOLATED", file=sys.stderr)
            return EXIT_INTERNAL
        return 0
    if args.action == "gantt":
        if args.packs:
            packs = _parse_packs(args.packs)
        else:
            packs, _ = enumerate_optimal(inst)
        sched = evaluate_schedule(inst, packs)
        doc = render_gantt(schedule_trace(sched), fmt=args.format,
                           annotations=forced_idle_annotations(inst, sched))
        if args.out:
            Path(args.out).write_text(doc, encoding="utf-8")
            print(f"wrote {args.out} (makespan {sched.makespan})")
        else:
            print(doc, end="")
        return 0
    raise ValidationError(f"unknown reduction action {args.action!r}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wrapsched", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-profiles", help="synthesize profile samples")
    p.add_argument("--spec", required=True, help="synth_spec JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--stride", type=int, default=4)
    p.set_defaults(func=cmd_gen_profiles)

    p = sub.add_parser("fit-profiles", help="fit cost models from samples")
    p.add_argument("--samples", required=True, help="profile_samples JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--stride", type=int, default=4)
    p.set_defaults(func=cmd_fit_profiles)

    p = sub.add_parser("pack", help="balanced-time packing")
    p.add_argument("--machine", required=True)
    p.add_argument("--profiles", required=True)
    p.add_argument("--pass", dest="pass_", choices=("F", "B"), default="B")
    p.add_argument("--microbatch", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_pack)

    p = sub.add_parser("search", help="configuration sweep")
    p.add_argument("--machine", required=True)
    p.add_argument("--profiles", required=True)
    p.add_argument("--spec", required=True, help="search_spec JSON")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--layer-graph", help="optional layer_graph JSON for branch relays")
    p.add_argument("--jobs", type=int, default=0, help="override worker count")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("simulate", help="simulate a configuration or graph")
    p.add_argument("--machine", required=True)
    p.add_argument("--profiles", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--config", help="configuration JSON")
    group.add_argument("--graph", help="task_graph JSON")
    p.add_argument("--layer-graph")
    p.add_argument("--out", required=True)
    p.add_argument("--trace-csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze-swaps", help="closed-form vs simulated volumes")
    p.add_argument("--model", required=True, help="ideal_model JSON")
    p.add_argument("--dw-deduction", choices=("per_gpu", "global"), default="per_gpu")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze_swaps)

    p = sub.add_parser("gantt", help="render a simulation report")
    p.add_argument("--report", required=True)
    p.add_argument("--format", choices=("text", "svg"), default="text")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gantt)

    p = sub.add_parser("reduction", help="Partition reduction tools")
    p.add_argument("action", choices=("build", "eval", "verify", "gantt"))
    p.add_argument("numbers", type=int, nargs="+", help="Partition numbers")
    p.add_argument("--scale", type=int, help="override the time scale A")
    p.add_argument("--packs", help="1-based pack list, e.g. '1,2,3-4,5'")
    p.add_argument("--format", choices=("text", "svg"), default="text")
    p.add_argument("--out")
    p.set_defaults(func=cmd_reduction)
    return ap


def main(argv: "list[str] | None" = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _INFEASIBLE as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ValidationError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except WrapschedError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    raise SystemExit(main())
