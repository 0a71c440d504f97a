"""Gantt rendering of simulation traces and reduction schedules.

One lane per resource; deterministic output (byte-identical for identical
input).  The text format is a scaled ASCII chart for terminals, the SVG
format a standalone document with one rectangle per event and optional
annotations (for example the forced-idle windows of a reduction schedule).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .simulator import SimReport, TraceEvent


@dataclass(frozen=True)
class GanttAnnotation:
    resource: str
    start_ns: int
    end_ns: int
    label: str


_LANE_H = 26
_CHART_W = 1000
_LEFT_PAD = 150


def _as_events(source: "SimReport | Sequence[TraceEvent]") -> list[TraceEvent]:
    if isinstance(source, SimReport):
        events = list(source.trace)
    else:
        events = list(source)
    return sorted(events, key=lambda e: (e.resource, e.start_ns, e.end_ns, e.task))


def render_gantt(source: "SimReport | Sequence[TraceEvent]", fmt: str = "text",
                 annotations: Sequence[GanttAnnotation] = ()) -> str:
    if fmt == "text":
        return _render_text(_as_events(source), annotations)
    if fmt == "svg":
        return _render_svg(_as_events(source), annotations)
    raise ValueError(f"unknown format {fmt!r}")


def _lanes(events: list[TraceEvent]) -> list[str]:
    return sorted({e.resource for e in events})


def _render_text(events: list[TraceEvent], annotations: Sequence[GanttAnnotation],
                 width: int = 80) -> str:
    lines = ["gantt"]
    if not events:
        return "\n".join(lines) + "\n"
    span = max(e.end_ns for e in events)
    lines[0] = f"gantt span={span}ns"
    scale = span / width if span else 1
    for lane in _lanes(events):
        row = [" "] * width
        for e in events:
            if e.resource != lane or e.end_ns == e.start_ns:
                continue
            lo = min(width - 1, int(e.start_ns / scale))
            hi = min(width, max(lo + 1, int(e.end_ns / scale)))
            mark = "#" if e.kind == "compute" else "-"
            for i in range(lo, hi):
                row[i] = mark
        lines.append(f"{lane:>18} |{''.join(row)}|")
    for a in sorted(annotations, key=lambda a: (a.resource, a.start_ns)):
        lines.append(f"{'note':>18}  {a.resource} [{a.start_ns}..{a.end_ns}] {a.label}")
    return "\n".join(lines) + "\n"


def _render_svg(events: list[TraceEvent], annotations: Sequence[GanttAnnotation]) -> str:
    lanes = _lanes(events)
    span = max((e.end_ns for e in events), default=0)
    height = _LANE_H * max(1, len(lanes)) + 40
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_LEFT_PAD + _CHART_W + 20}" '
        f'height="{height}" font-family="monospace" font-size="11">',
        f'<text x="4" y="14">span {span} ns</text>',
    ]
    if span == 0:
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def x(t: int) -> int:
        return _LEFT_PAD + (t * _CHART_W) // span

    palette = {"compute": "#4c72b0", "W": "#dd8452", "K": "#937860",
               "sX": "#8172b3", "X": "#55a868", "Y": "#55a868",
               "dY": "#c44e52", "dX": "#c44e52", "dW": "#c44e52"}
    for li, lane in enumerate(lanes):
        y = 24 + li * _LANE_H
        out.append(f'<text x="4" y="{y + 16}">{lane}</text>')
        for e in events:
            if e.resource != lane:
                continue
            w = max(1, x(e.end_ns) - x(e.start_ns))
            color = palette.get(e.kind, "#999999")
            out.append(
                f'<rect x="{x(e.start_ns)}" y="{y + 4}" width="{w}" '
                f'height="{_LANE_H - 8}" fill="{color}" stroke="#333">'
                f"<title>{e.label} [{e.start_ns}..{e.end_ns}]</title></rect>"
            )
            if w > 8 * len(e.label):
                out.append(
                    f'<text x="{x(e.start_ns) + 2}" y="{y + 16}" '
                    f'fill="#ffffff">{e.label}</text>'
                )
    for a in sorted(annotations, key=lambda a: (a.resource, a.start_ns)):
        if a.resource in lanes:
            li = lanes.index(a.resource)
            y = 24 + li * _LANE_H
            out.append(
                f'<rect x="{x(a.start_ns)}" y="{y + 4}" '
                f'width="{max(1, x(a.end_ns) - x(a.start_ns))}" height="{_LANE_H - 8}" '
                f'fill="none" stroke="#c44e52" stroke-dasharray="4 2"/>'
            )
            out.append(
                f'<text x="{x(a.start_ns) + 2}" y="{y + _LANE_H - 8}" '
                f'fill="#c44e52">{a.label}</text>'
            )
    out.append("</svg>")
    return "\n".join(out) + "\n"
