"""Trace, snapshot and scatter-plot writers."""

from __future__ import annotations

import colorsys
import csv
import json
from pathlib import Path

import numpy as np

from .propagation import PropagationTrace

TRACE_FORMAT = "swarmflow-trace"
TRACE_VERSION = 1


def trace_summary(trace: PropagationTrace, label: str = "") -> dict:
    sys = trace.system
    steps = []
    for k, t in enumerate(trace.grid):
        z = trace.states[k]
        entry = {"k": k, "t": float(t), "mean": z.mean(axis=0).tolist(), "std": z.std(axis=0).tolist()}
        if k > 0:
            entry["energy_mean"] = float(trace.interval_energy[k - 1].mean())
            if trace.eta is not None:
                entry["eta_norm_max"] = float(np.linalg.norm(trace.eta[k - 1], axis=1).max())
        steps.append(entry)
    return {
        "format": TRACE_FORMAT,
        "version": TRACE_VERSION,
        "label": label,
        "system": {"name": sys.name, "A": sys.A.tolist(), "B": sys.B.tolist()},
        "d": sys.d,
        "n": int(trace.states.shape[1]),
        "K": trace.K,
        "grid": trace.grid.tolist(),
        "energy_total_mean": float(trace.energy.mean()),
        "steps": steps,
    }


def write_snapshot_csv(points: np.ndarray, path) -> None:
    """Columns ``member_id, x1..xd``; values written with 17 significant digits."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["member_id"] + [f"x{j + 1}" for j in range(points.shape[1])])
        for i, p in enumerate(points):
            w.writerow([i] + [f"{v:.17g}" for v in p])


def position_colors(points: np.ndarray) -> list[str]:
    """Fixed hue map over the (first two coordinates of the) start positions."""
    xy = points[:, :2] if points.shape[1] > 1 else np.column_stack([points[:, 0], np.zeros(len(points))])
    centered = xy - xy.mean(axis=0)
    hue = (np.arctan2(centered[:, 1], centered[:, 0]) / (2 * np.pi)) % 1.0
    radius = np.linalg.norm(centered, axis=1)
    light = 0.35 + 0.3 * radius / (radius.max() or 1.0)
    out = []
    for h, l in zip(hue, light):
        r, g, b = colorsys.hls_to_rgb(h, l, 0.85)
        out.append(f"#{int(255 * r):02x}{int(255 * g):02x}{int(255 * b):02x}")
    return out


def write_svg(points: np.ndarray, colors: list[str], bounds, path, title: str = "",
              size: int = 480) -> None:
    (x0, y0), (x1, y1) = bounds
    span = max(x1 - x0, y1 - y0) or 1.0
    pad = 12

    def px(x, y):
        return (pad + (x - x0) / span * (size - 2 * pad),
                size - pad - (y - y0) / span * (size - 2 * pad))

    ys = points[:, 1] if points.shape[1] > 1 else np.zeros(len(points))
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    if title:
        lines.append(f'<text x="{pad}" y="{pad + 4}" font-size="12" font-family="sans-serif">{title}</text>')
    for (x, y), col in zip(zip(points[:, 0], ys), colors):
        cx, cy = px(x, y)
        lines.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="1.6" fill="{col}"/>')
    lines.append("</svg>")
    Path(path).write_text("\n".join(lines) + "\n")


def export_trace(trace: PropagationTrace, out_dir, label: str = "", svg: bool = True) -> Path:
    """Write ``trace.json`` and per-step snapshots under ``out_dir``."""
    out_dir = Path(out_dir)
    snap_dir = out_dir / "snapshots"
    snap_dir.mkdir(parents=True, exist_ok=True)
    summary = trace_summary(trace, label)
    colors = position_colors(trace.states[0])
    flat = trace.states.reshape(-1, trace.states.shape[-1])
    ys = flat[:, 1] if flat.shape[1] > 1 else np.zeros(len(flat))
    bounds = ((flat[:, 0].min(), ys.min()), (flat[:, 0].max(), ys.max()))
    files = []
    for k, z in enumerate(trace.states):
        name = f"step_{k:03d}"
        write_snapshot_csv(z, snap_dir / f"{name}.csv")
        files.append(f"snapshots/{name}.csv")
        if svg:
            write_svg(z, colors, bounds, snap_dir / f"{name}.svg", title=f"t = {trace.grid[k]:.4g}")
    summary["snapshots"] = files
    path = out_dir / "trace.json"
    path.write_text(json.dumps(summary, indent=2) + "\n")
    return path
