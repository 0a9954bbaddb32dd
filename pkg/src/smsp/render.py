"""Gantt renderings of timed schedules: plain text and standalone SVG."""

from __future__ import annotations

from xml.sax.saxutils import escape

from .schedule import Batch, Maint, SetupChange, TimedSchedule, makespan


def _slot_label(slot) -> str:
    if isinstance(slot, Batch):
        refs = sorted(slot.ops, key=lambda r: str(r.lot))
        index = refs[0].index
        if len(refs) == 1:
            return f"{refs[0].lot},{index}"
        return "[" + ",".join(str(r.lot) for r in refs) + f"],{index}"
    if isinstance(slot, SetupChange):
        return str(slot.setup)
    return str(slot.label)


def _slot_kind(slot) -> str:
    if isinstance(slot, Batch):
        return "batch"
    if isinstance(slot, SetupChange):
        return "setup"
    return "maint"


def gantt_text(ts: TimedSchedule) -> str:
    """One line per machine, slots as ``[start-end] label`` in time order."""
    lines = []
    width = max((len(f"{ms.machine.group}/{ms.machine.id}")
                 for ms, _, _ in ts.machine_rows()), default=0)
    for ms, starts, durs in ts.machine_rows():
        name = f"{ms.machine.group}/{ms.machine.id}".ljust(width)
        cells = [f"[{start}-{start + dur}] {_slot_label(slot)}"
                 for slot, start, dur in zip(ms.slots, starts, durs)]
        lines.append(f"{name} | " + "  ".join(cells))
    return "\n".join(lines) + "\n"


_SVG_STYLE = """\
  rect.batch { fill: url(#hatch-batch); stroke: #333; }
  rect.setup { fill: url(#hatch-setup); stroke: #333; }
  rect.maint { fill: url(#hatch-maint); stroke: #333; }
  text { font-family: sans-serif; font-size: 11px; }
  line.grid { stroke: #bbb; stroke-dasharray: 2 3; }
"""

_SVG_DEFS = """\
  <defs>
    <pattern id="hatch-batch" width="6" height="6" patternUnits="userSpaceOnUse">
      <rect width="6" height="6" fill="#e8f0fe"/>
      <path d="M0 6H6M6 0V6" stroke="#9db7e8" stroke-width="1"/>
    </pattern>
    <pattern id="hatch-setup" width="6" height="6" patternUnits="userSpaceOnUse">
      <rect width="6" height="6" fill="#fdf2e0"/>
      <path d="M0 0L6 6M6 0L0 6" stroke="#d9a648" stroke-width="1"/>
    </pattern>
    <pattern id="hatch-maint" width="8" height="4" patternUnits="userSpaceOnUse">
      <rect width="8" height="4" fill="#f4e1e1"/>
      <path d="M0 2H8M2 0V2M6 2V4" stroke="#c98484" stroke-width="1"/>
    </pattern>
  </defs>
"""

_ROW_H = 30
_LEFT = 150
_TOP = 20


def gantt_svg(ts: TimedSchedule, scale: float = 6.0) -> str:
    """Standalone SVG chart: one row per machine, slots as labeled boxes with
    hatch classes by kind; fixed horizontal units-per-time-step scale."""
    rows = list(ts.machine_rows())
    horizon = max(makespan(ts), 1)
    width = _LEFT + int(horizon * scale) + 30
    height = _TOP + _ROW_H * max(len(rows), 1) + 30
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f"<style>{_SVG_STYLE}</style>", _SVG_DEFS]
    tick = 10 if horizon <= 200 else 50
    for t in range(0, horizon + 1, tick):
        x = _LEFT + t * scale
        out.append(f'<line class="grid" x1="{x:.1f}" y1="{_TOP}" x2="{x:.1f}" '
                   f'y2="{_TOP + _ROW_H * len(rows)}"/>')
        out.append(f'<text x="{x:.1f}" y="{_TOP + _ROW_H * len(rows) + 14}" '
                   f'text-anchor="middle">{t}</text>')
    for row, (ms, starts, durs) in enumerate(rows):
        y = _TOP + row * _ROW_H
        out.append(f'<text x="{_LEFT - 8}" y="{y + _ROW_H * 0.65:.1f}" text-anchor="end">'
                   f"{escape(f'{ms.machine.group}/{ms.machine.id}')}</text>")
        for slot, start, dur in zip(ms.slots, starts, durs):
            x = _LEFT + start * scale
            w = max(dur * scale, 1.0)
            out.append(f'<rect class="{_slot_kind(slot)}" x="{x:.1f}" y="{y + 3}" '
                       f'width="{w:.1f}" height="{_ROW_H - 6}"/>')
            out.append(f'<text x="{x + w / 2:.1f}" y="{y + _ROW_H * 0.65:.1f}" '
                       f'text-anchor="middle">{escape(_slot_label(slot))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
