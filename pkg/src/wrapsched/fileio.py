"""Versioned JSON interchange for every artifact the CLI reads or writes.

Field names embed their units (``_ns``, ``_bytes``, ``_bytes_per_s``) and
every document carries ``format_version`` so stale files fail loudly.
"""

from __future__ import annotations

import json
from typing import Any

from .core import Configuration, LayerNode, MachineModel, Mode, TensorKind
from .errors import SchemaError
from .profiler import AffineModel, ProfileSample, ProfileSet, SynthSpec
from .simulator import SimReport, TraceEvent
from .search import SearchResult, SearchSpec, Strategy
from .taskgraph import Channel, ChannelKind, Task, TaskGraph, TaskType

FORMAT_VERSION = 1


def _require(doc: Any, kind: str) -> dict:
    if not isinstance(doc, dict):
        raise SchemaError(f"{kind}: expected a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise SchemaError(f"{kind}: format_version {version!r} != {FORMAT_VERSION}")
    if doc.get("kind") != kind:
        raise SchemaError(f"expected kind={kind!r}, got {doc.get('kind')!r}")
    return doc


def _field(doc: dict, name: str, kind: str) -> Any:
    if name not in doc:
        raise SchemaError(f"{kind}: missing field {name!r}")
    return doc[name]


def load_json(path: "str | Path") -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def save_json(doc: Any, path: "str | Path") -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


# -- machine ---------------------------------------------------------------

def machine_to_doc(m: MachineModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "machine",
        "gpu_count": m.gpu_count,
        "gpu_mem_capacity_bytes": m.gpu_mem_capacity,
        "pcie_bandwidth_bytes_per_s": m.pcie_bandwidth,
        "root_link_bandwidth_bytes_per_s": m.root_link_bandwidth,
        "p2p_groups": [list(g) for g in m.p2p_groups],
        "cpu_offload_update": m.cpu_offload_update,
        "update_cpu_rate_bytes_per_s": m.update_cpu_rate,
    }


def machine_from_doc(doc: Any) -> MachineModel:
    doc = _require(doc, "machine")
    return MachineModel(
        gpu_count=_field(doc, "gpu_count", "machine"),
        gpu_mem_capacity=_field(doc, "gpu_mem_capacity_bytes", "machine"),
        pcie_bandwidth=_field(doc, "pcie_bandwidth_bytes_per_s", "machine"),
        root_link_bandwidth=doc.get("root_link_bandwidth_bytes_per_s", 0),
        p2p_groups=tuple(tuple(g) for g in doc.get("p2p_groups", [])),
        cpu_offload_update=doc.get("cpu_offload_update", False),
        update_cpu_rate=doc.get("update_cpu_rate_bytes_per_s", 4 << 30),
    )


# -- layer graph -------------------------------------------------------------

def layer_graph_from_doc(doc: Any) -> list[LayerNode]:
    doc = _require(doc, "layer_graph")
    nodes = []
    for item in _field(doc, "nodes", "layer_graph"):
        nodes.append(LayerNode(
            id=_field(item, "id", "layer_graph.node"),
            kind=item.get("kind", "layer"),
            predecessors=tuple(item.get("predecessors", [])),
        ))
    return nodes


def layer_graph_to_doc(nodes: "list[LayerNode]") -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "layer_graph",
        "nodes": [{"id": n.id, "kind": n.kind, "predecessors": list(n.predecessors)}
                  for n in nodes],
    }


# -- profile samples and sets ------------------------------------------------

def samples_to_doc(samples: "list[ProfileSample]", seed: "int | None" = None) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": "profile_samples",
        "samples": [{
            "layer_id": s.layer_id,
            "pass": s.pass_,
            "microbatch": s.microbatch,
            "compute_time_ns": s.compute_time_ns,
            "mem_bytes": s.mem_bytes,
            "x_bytes": s.x_bytes,
            "y_bytes": s.y_bytes,
            "w_bytes": s.w_bytes,
            "dw_bytes": s.dw_bytes,
            "k_bytes": s.k_bytes,
        } for s in samples],
    }
    if seed is not None:
        doc["seed"] = seed
    return doc


def samples_from_doc(doc: Any) -> list[ProfileSample]:
    doc = _require(doc, "profile_samples")
    out = []
    for item in _field(doc, "samples", "profile_samples"):
        out.append(ProfileSample(
            layer_id=_field(item, "layer_id", "sample"),
            pass_=_field(item, "pass", "sample"),
            microbatch=_field(item, "microbatch", "sample"),
            compute_time_ns=_field(item, "compute_time_ns", "sample"),
            mem_bytes=_field(item, "mem_bytes", "sample"),
            x_bytes=_field(item, "x_bytes", "sample"),
            y_bytes=_field(item, "y_bytes", "sample"),
            w_bytes=_field(item, "w_bytes", "sample"),
            dw_bytes=_field(item, "dw_bytes", "sample"),
            k_bytes=_field(item, "k_bytes", "sample"),
        ))
    return out


def _model_doc(m: AffineModel) -> list[float]:
    return [m.slope, m.intercept]


def profileset_to_doc(p: ProfileSet) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "profile_set",
        "layer_count": p.layer_count,
        "u_max_f": p.u_max_f,
        "u_max_b": p.u_max_b,
        "time_models": {f"{layer}:{pass_}": _model_doc(m)
                        for (layer, pass_), m in sorted(p._time.items())},
        "mem_models": {f"{layer}:{pass_}": _model_doc(m)
                       for (layer, pass_), m in sorted(p._mem.items())},
        "x_models": {str(layer): _model_doc(m) for layer, m in sorted(p._x.items())},
        "y_models": {str(layer): _model_doc(m) for layer, m in sorted(p._y.items())},
        "w_bytes": {str(layer): v for layer, v in sorted(p._w.items())},
        "dw_bytes": {str(layer): v for layer, v in sorted(p._dw.items())},
        "k_bytes": {str(layer): v for layer, v in sorted(p._k.items())},
        "max_rel_residual": {f"{layer}:{pass_}": v
                             for (layer, pass_), v in sorted(p.residuals.items())},
    }


def profileset_from_doc(doc: Any) -> ProfileSet:
    doc = _require(doc, "profile_set")

    def models(key: str) -> dict:
        out = {}
        for name, (slope, intercept) in _field(doc, key, "profile_set").items():
            layer, pass_ = name.split(":")
            out[(int(layer), pass_)] = AffineModel(slope, intercept)
        return out

    def layer_models(key: str) -> dict:
        return {int(layer): AffineModel(s, b)
                for layer, (s, b) in _field(doc, key, "profile_set").items()}

    def sizes(key: str) -> dict:
        return {int(layer): v for layer, v in _field(doc, key, "profile_set").items()}

    residuals = {}
    for name, v in doc.get("max_rel_residual", {}).items():
        layer, pass_ = name.split(":")
        residuals[(int(layer), pass_)] = v
    return ProfileSet(
        layer_count=_field(doc, "layer_count", "profile_set"),
        time_models=models("time_models"),
        mem_models=models("mem_models"),
        x_models=layer_models("x_models"),
        y_models=layer_models("y_models"),
        w_bytes=sizes("w_bytes"),
        dw_bytes=sizes("dw_bytes"),
        k_bytes=sizes("k_bytes"),
        u_max_f=_field(doc, "u_max_f", "profile_set"),
        u_max_b=_field(doc, "u_max_b", "profile_set"),
        residuals=residuals,
    )


def synth_spec_from_doc(doc: Any) -> SynthSpec:
    doc = _require(doc, "synth_spec")
    kwargs = {}
    for name in ("layer_count", "preset", "u_max", "base_time_ns",
                 "time_intercept_ns", "ratio_b", "mem_ratio_b", "w_bytes",
                 "act_bytes_per_u", "k_ratio", "seed"):
        if name in doc:
            kwargs[name] = doc[name]
    if "layer_count" not in kwargs:
        raise SchemaError("synth_spec: missing field 'layer_count'")
    return SynthSpec(**kwargs)


def synth_spec_to_doc(spec: SynthSpec) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "synth_spec",
        "layer_count": spec.layer_count,
        "preset": spec.preset,
        "u_max": spec.u_max,
        "base_time_ns": spec.base_time_ns,
        "time_intercept_ns": spec.time_intercept_ns,
        "ratio_b": spec.ratio_b,
        "mem_ratio_b": spec.mem_ratio_b,
        "w_bytes": spec.w_bytes,
        "act_bytes_per_u": spec.act_bytes_per_u,
        "k_ratio": spec.k_ratio,
        "seed": spec.seed,
    }


# -- configuration -----------------------------------------------------------

def config_to_doc(cfg: Configuration) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "configuration",
        "u_f": cfg.u_f,
        "p_f": [list(p) for p in cfg.p_f],
        "u_b": cfg.u_b,
        "p_b": [list(p) for p in cfg.p_b],
        "minibatch": cfg.minibatch,
        "mode": cfg.mode.value,
    }


def config_from_doc(doc: Any) -> Configuration:
    doc = _require(doc, "configuration")
    cfg = Configuration(
        u_f=_field(doc, "u_f", "configuration"),
        p_f=tuple((p[0], p[1]) for p in _field(doc, "p_f", "configuration")),
        u_b=_field(doc, "u_b", "configuration"),
        p_b=tuple((p[0], p[1]) for p in _field(doc, "p_b", "configuration")),
        minibatch=_field(doc, "minibatch", "configuration"),
        mode=Mode(_field(doc, "mode", "configuration")),
    )
    cfg.validate()
    return cfg


# -- task graph ---------------------------------------------------------------

def _channel_doc(ch: Channel) -> dict:
    out: dict[str, Any] = {"kind": ch.kind.value}
    if ch.src_task is not None:
        out["src_task"] = ch.src_task
    if ch.dst_task is not None:
        out["dst_task"] = ch.dst_task
    if ch.src_layer is not None:
        out["src_layer"] = ch.src_layer
    return out


def _channel_from(doc: dict) -> Channel:
    return Channel(
        kind=ChannelKind(doc["kind"]),
        src_task=doc.get("src_task"),
        dst_task=doc.get("dst_task"),
        src_layer=doc.get("src_layer"),
    )


def taskgraph_to_doc(g: TaskGraph) -> dict:
    tasks = []
    for t in g.tasks:
        tasks.append({
            "index": t.index,
            "pack": list(t.pack),
            "type": t.type.value,
            "group": list(t.group),
            "device": [t.device[0], t.device[1]],
            "recompute": t.recompute,
            "inputs": {tensor.value: {str(layer): _channel_doc(ch)
                                      for layer, ch in entries.items()}
                       for tensor, entries in t.inputs.items()},
            "outputs": {tensor.value: {str(layer): _channel_doc(ch)
                                       for layer, ch in entries.items()}
                        for tensor, entries in t.outputs.items()},
        })
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": "task_graph",
        "mode": g.mode.value,
        "minibatch": g.minibatch,
        "machine": machine_to_doc(g.machine),
        "tasks": tasks,
    }
    if g.config is not None:
        doc["config"] = config_to_doc(g.config)
    return doc


def taskgraph_from_doc(doc: Any) -> TaskGraph:
    doc = _require(doc, "task_graph")
    tasks = []
    for item in _field(doc, "tasks", "task_graph"):
        tasks.append(Task(
            index=item["index"],
            pack=(item["pack"][0], item["pack"][1]),
            type=TaskType(item["type"]),
            group=tuple(item["group"]),
            device=(item["device"][0], item["device"][1]),
            recompute=item.get("recompute", False),
            inputs={TensorKind(tensor): {int(layer): _channel_from(ch)
                                         for layer, ch in entries.items()}
                    for tensor, entries in item.get("inputs", {}).items()},
            outputs={TensorKind(tensor): {int(layer): _channel_from(ch)
                                          for layer, ch in entries.items()}
                     for tensor, entries in item.get("outputs", {}).items()},
        ))
    graph = TaskGraph(
        tasks=tasks,
        mode=Mode(_field(doc, "mode", "task_graph")),
        machine=machine_from_doc(_field(doc, "machine", "task_graph")),
        minibatch=_field(doc, "minibatch", "task_graph"),
        config=config_from_doc(doc["config"]) if "config" in doc else None,
    )
    graph.validate()
    return graph


# -- simulation report ---------------------------------------------------------

def report_to_doc(r: SimReport) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "sim_report",
        "makespan_ns": r.makespan_ns,
        "gpu_busy_ns": {str(g): v for g, v in sorted(r.gpu_busy_ns.items())},
        "gpu_idle_ns": {str(g): v for g, v in sorted(r.gpu_idle_ns.items())},
        "channel_volumes_bytes": dict(sorted(r.channel_volumes.items())),
        "tensor_volumes_bytes": {t: dict(sorted(v.items()))
                                 for t, v in sorted(r.tensor_volumes.items())},
        "per_gpu_volumes_bytes": {str(g): dict(sorted(v.items()))
                                  for g, v in sorted(r.per_gpu_volumes.items())},
        "caveats": list(r.caveats),
        "trace": [[e.resource, e.task, e.kind, e.label, e.start_ns, e.end_ns]
                  for e in r.trace],
    }


def report_from_doc(doc: Any) -> SimReport:
    doc = _require(doc, "sim_report")
    return SimReport(
        makespan_ns=_field(doc, "makespan_ns", "sim_report"),
        gpu_busy_ns={int(g): v for g, v in doc.get("gpu_busy_ns", {}).items()},
        gpu_idle_ns={int(g): v for g, v in doc.get("gpu_idle_ns", {}).items()},
        channel_volumes=doc.get("channel_volumes_bytes", {}),
        tensor_volumes=doc.get("tensor_volumes_bytes", {}),
        per_gpu_volumes={int(g): v
                         for g, v in doc.get("per_gpu_volumes_bytes", {}).items()},
        trace=[TraceEvent(*row) for row in doc.get("trace", [])],
        caveats=tuple(doc.get("caveats", [])),
    )


def trace_to_csv(r: SimReport) -> str:
    lines = ["resource,task,kind,start_ns,end_ns"]
    for e in r.trace:
        lines.append(f"{e.resource},{e.task},{e.kind},{e.start_ns},{e.end_ns}")
    return "\n".join(lines) + "\n"


# -- search -------------------------------------------------------------------

def search_spec_from_doc(doc: Any) -> SearchSpec:
    doc = _require(doc, "search_spec")
    return SearchSpec(
        minibatch=_field(doc, "minibatch", "search_spec"),
        mode=Mode(doc.get("mode", "pp")),
        strategy=Strategy(doc.get("strategy", "distinct_fb")),
        u_fmax=doc.get("u_fmax"),
        u_bmax=doc.get("u_bmax"),
        stride=doc.get("stride", 1),
        jobs=doc.get("jobs", 1),
    )


def search_spec_to_doc(spec: SearchSpec) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": "search_spec",
        "minibatch": spec.minibatch,
        "mode": spec.mode.value,
        "strategy": spec.strategy.value,
        "stride": spec.stride,
        "jobs": spec.jobs,
    }
    if spec.u_fmax is not None:
        doc["u_fmax"] = spec.u_fmax
    if spec.u_bmax is not None:
        doc["u_bmax"] = spec.u_bmax
    return doc


def search_result_to_doc(res: SearchResult) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "search_result",
        "best": config_to_doc(res.best) if res.best else None,
        "best_time_ns": res.best_time_ns,
        "explored": res.explored,
        "wall_time_s": res.wall_time_s,
        "candidates": [{
            "u_f": c.u_f, "u_b": c.u_b,
            "pf_count": c.pf_count, "pb_count": c.pb_count,
            "time_ns": c.time_ns, "note": c.note,
        } for c in res.log],
    }
