"""Static artifacts from training traces: CSV files and SVG plots.

Everything here is a pure function of its inputs rendered through fixed
string formatting, so re-running a report on the same trace produces
byte-identical files.
"""

from __future__ import annotations

import os

import numpy as np

from .envs import MixtureSpec
from .errors import ValidationError
from .training import TraceRow, TrainTrace

_COLORS = {
    "e_winning": "#1f77b4",
    "e_losing": "#d62728",
    "i_acc": "#2ca02c",
    "i_acc_held": "#17becf",
    "u": "#9467bd",
    "total": "#8c564b",
    "preference": "#e377c2",
    "regularization": "#7f7f7f",
}


def _fmt(value: float) -> str:
    return repr(float(value))


def write_trace_csv(trace: TrainTrace, path) -> None:
    """One row per eval step, one column per trace field."""
    trace.validate()
    lines = [",".join(TraceRow.FIELDS)]
    for row in trace.rows:
        cells = []
        for name in TraceRow.FIELDS:
            value = getattr(row, name)
            cells.append(str(value) if name in ("step", "variant") else _fmt(value))
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


def write_series_csv(trace: TrainTrace, name: str, path) -> None:
    lines = [f"step,{name}"]
    for row in trace.rows:
        lines.append(f"{row.step},{_fmt(getattr(row, name))}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


def _scale(values: np.ndarray, lo: float, hi: float, out_lo: float, out_hi: float) -> np.ndarray:
    span = hi - lo if hi > lo else 1.0
    return out_lo + (values - lo) / span * (out_hi - out_lo)


def _polyline(xs: np.ndarray, ys: np.ndarray, color: str, dash: str = "") -> str:
    points = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
    return f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash_attr} points="{points}"/>'


def _panel(
    rows: list[TraceRow],
    series: list[str],
    y_offset: float,
    height: float,
    width: float,
    title: str,
    hline: float | None = None,
) -> list[str]:
    left, right, top, bottom = 60.0, width - 20.0, y_offset + 24.0, y_offset + height - 28.0
    steps = np.array([r.step for r in rows], dtype=np.float64)
    data = {name: np.array([getattr(r, name) for r in rows]) for name in series}
    lo = min(min(v.min() for v in data.values()), hline if hline is not None else np.inf)
    hi = max(max(v.max() for v in data.values()), hline if hline is not None else -np.inf)
    pad = 0.05 * (hi - lo if hi > lo else 1.0)
    lo, hi = lo - pad, hi + pad
    parts = [
        f'<rect x="{left:.2f}" y="{top:.2f}" width="{right - left:.2f}" height="{bottom - top:.2f}" '
        'fill="none" stroke="#999999" stroke-width="1"/>',
        f'<text x="{left:.2f}" y="{y_offset + 16:.2f}" font-size="13" fill="#333333">{title}</text>',
        f'<text x="{left - 6:.2f}" y="{bottom:.2f}" font-size="10" text-anchor="end" fill="#555555">{lo:.4g}</text>',
        f'<text x="{left - 6:.2f}" y="{top + 8:.2f}" font-size="10" text-anchor="end" fill="#555555">{hi:.4g}</text>',
        f'<text x="{left:.2f}" y="{bottom + 14:.2f}" font-size="10" fill="#555555">step {int(steps[0])}</text>',
        f'<text x="{right:.2f}" y="{bottom + 14:.2f}" font-size="10" text-anchor="end" fill="#555555">step {int(steps[-1])}</text>',
    ]
    xs = _scale(steps, steps[0], steps[-1] if steps[-1] > steps[0] else steps[0] + 1.0, left, right)
    if hline is not None:
        y = _scale(np.array([hline]), lo, hi, bottom, top)[0]
        parts.append(_polyline(np.array([left, right]), np.array([y, y]), "#777777", dash="4 3"))
    legend_x = left + 8.0
    for name in series:
        ys = _scale(data[name], lo, hi, bottom, top)
        parts.append(_polyline(xs, ys, _COLORS.get(name, "#000000")))
        parts.append(
            f'<text x="{legend_x:.2f}" y="{top + 14:.2f}" font-size="11" fill="{_COLORS.get(name, "#000000")}">{name}</text>'
        )
        legend_x += 9.0 * len(name) + 18.0
    return parts


def render_trace_svg(trace: TrainTrace) -> str:
    """Line plots of winner/loser D-MSE (with the pre-alignment reference)
    and of implicit accuracy with the evaluation metric."""
    trace.validate()
    width, panel_h = 640.0, 300.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{2 * panel_h:.0f}" '
        f'viewBox="0 0 {width:.0f} {2 * panel_h:.0f}">',
        '<rect width="100%" height="100%" fill="#ffffff"/>',
    ]
    parts += _panel(
        trace.rows,
        ["e_winning", "e_losing"],
        0.0,
        panel_h,
        width,
        f"average D-MSE ({trace.variant}); dashed = pre-alignment reference",
        hline=trace.reference_dmse,
    )
    parts += _panel(
        trace.rows,
        ["i_acc", "i_acc_held", "u"],
        panel_h,
        panel_h,
        width,
        "implicit accuracy (train probe, held-out) and evaluation metric",
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_scatter_svg(samples: np.ndarray, spec: MixtureSpec, title: str) -> str:
    """Generated samples over the mixture component circles (1 and 3 sigma)."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[1] != 2 or samples.shape[0] < 1:
        raise ValidationError("scatter needs a non-empty (n, 2) sample array")
    size, margin = 480.0, 40.0
    span = max(np.abs(spec.means).max() + 4.0 * spec.std, np.abs(samples).max(), 1e-9)

    def sx(v: np.ndarray) -> np.ndarray:
        return margin + (v + span) / (2.0 * span) * (size - 2.0 * margin)

    def sy(v: np.ndarray) -> np.ndarray:
        return size - margin - (v + span) / (2.0 * span) * (size - 2.0 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size:.0f}" height="{size:.0f}" '
        f'viewBox="0 0 {size:.0f} {size:.0f}">',
        '<rect width="100%" height="100%" fill="#ffffff"/>',
        f'<text x="{margin:.2f}" y="20" font-size="13" fill="#333333">{title}</text>',
    ]
    unit = (size - 2.0 * margin) / (2.0 * span)
    for mean in spec.means:
        cx, cy = sx(mean[0]), sy(mean[1])
        parts.append(
            f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{spec.std * unit:.2f}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>'
        )
        parts.append(
            f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{3.0 * spec.std * unit:.2f}" fill="none" '
            'stroke="#1f77b4" stroke-width="0.8" stroke-dasharray="3 3"/>'
        )
    for point in samples:
        parts.append(f'<circle cx="{sx(point[0]):.2f}" cy="{sy(point[1]):.2f}" r="1.4" fill="#d62728" fill-opacity="0.5"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def report(trace: TrainTrace, out_dir, samples: np.ndarray | None = None, mixture: MixtureSpec | None = None) -> list[str]:
    """Write the trace CSVs and plots into out_dir; returns written names."""
    trace.validate()
    os.makedirs(out_dir, exist_ok=True)
    written = ["trace.csv"]
    write_trace_csv(trace, os.path.join(out_dir, "trace.csv"))
    for name in ("total", "preference", "regularization", "i_acc", "i_acc_held", "e_winning", "e_losing", "u"):
        filename = f"series_{name}.csv"
        write_series_csv(trace, name, os.path.join(out_dir, filename))
        written.append(filename)
    with open(os.path.join(out_dir, "trace.svg"), "w", encoding="utf-8") as fh:
        fh.write(render_trace_svg(trace))
    written.append("trace.svg")
    if samples is not None and mixture is not None:
        with open(os.path.join(out_dir, "samples.svg"), "w", encoding="utf-8") as fh:
            fh.write(render_scatter_svg(samples, mixture, f"samples ({trace.variant})"))
        written.append("samples.svg")
    return written
