"""Flood-performance metrics, duration curves and comparison tables."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MetricsWindow:
    """Half-open step range ``[k_b, k_f)`` of a log."""

    k_b: int
    k_f: int
    h_c_lim: float = 1.8
    dt: float = 1.0

    def __post_init__(self):
        if self.k_f <= self.k_b:
            raise ValueError("window end must follow its start")
        if self.h_c_lim <= 0:
            raise ValueError("h_c_lim must be positive")

    @property
    def slice(self) -> slice:
        return slice(self.k_b, self.k_f)


def _window(x, window):
    x = np.asarray(x, dtype=float)
    return x if window is None else x[window.slice]


def peak_flow_reduction(q_in, q_out, window: MetricsWindow | None = None) -> float:
    """Relative drop from the inflow peak to the outflow peak; NaN when there is no inflow."""
    peak_in = _window(q_in, window).max()
    if not peak_in > 0:
        return float("nan")
    return float((peak_in - _window(q_out, window).max()) / peak_in)


def relative_max_flood_depth(h_c, h_c_lim: float, window: MetricsWindow | None = None) -> float:
    if h_c_lim <= 0:
        raise ValueError("h_c_lim must be positive")
    return float(_window(h_c, window).max() / h_c_lim)


def control_effort(u, window: MetricsWindow | None = None) -> float:
    """Total variation of the valve command."""
    return float(np.abs(np.diff(_window(u, window))).sum())


def relative_control_effort(commands: dict[str, np.ndarray],
                            window: MetricsWindow | None = None) -> dict[str, float]:
    """Effort of each controller divided by the largest effort in the set."""
    effort = {name: control_effort(u, window) for name, u in commands.items()}
    top = max(effort.values(), default=0.0)
    if top <= 0:
        return {name: 0.0 for name in effort}
    return {name: e / top for name, e in effort.items()}


def flood_duration(h_c, h_c_lim: float, dt: float, window: MetricsWindow | None = None) -> float:
    """Hours during which any reach is strictly above ``h_c_lim``.

    ``h_c`` is either a ``(steps, reaches)`` matrix or the per-step maximum.
    """
    h = _window(h_c, window)
    if h.ndim == 2:
        h = h.max(axis=1)
    return float(np.count_nonzero(h > h_c_lim) * dt / 3600.0)


def exceedance_curve(series):
    """Values sorted high to low with Weibull exceedance probabilities ``m/(N+1)``."""
    x = np.sort(np.asarray(series, dtype=float).ravel())[::-1]
    if x.size == 0:
        raise ValueError("exceedance curve of an empty series")
    return x, np.arange(1, x.size + 1) / (x.size + 1.0)


@dataclass
class ControlMetrics:
    controller: str
    peak_reduction: list[float]
    relative_max_flood_depth: float
    relative_control_effort: float
    flood_duration_h: float
    control_effort: float


def compare(logs, windows: list[MetricsWindow], h_c_lim: float) -> list[ControlMetrics]:
    """Metrics for each log; peak reductions per window, the rest over the whole log."""
    rel = relative_control_effort({log.controller: log.u for log in logs})
    rows = []
    for log in logs:
        rows.append(ControlMetrics(
            controller=log.controller,
            peak_reduction=[peak_flow_reduction(log.q_w, log.q_r, w) for w in windows],
            relative_max_flood_depth=relative_max_flood_depth(log.h_c_max, h_c_lim),
            relative_control_effort=rel[log.controller],
            flood_duration_h=flood_duration(log.h_c_max, h_c_lim, log.dt),
            control_effort=control_effort(log.u),
        ))
    return rows


def _header(n_peaks: int) -> list[str]:
    return (["controller"] + [f"peak_reduction_{i + 1}_pct" for i in range(n_peaks)]
            + ["relative_max_flood_depth_pct", "relative_control_effort_pct",
               "flood_duration_h"])


def _cells(row: ControlMetrics) -> list[str]:
    return ([row.controller] + [f"{100 * p:.2f}" for p in row.peak_reduction]
            + [f"{100 * row.relative_max_flood_depth:.2f}",
               f"{100 * row.relative_control_effort:.2f}", f"{row.flood_duration_h:.2f}"])


def table_csv(rows: list[ControlMetrics]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_header(len(rows[0].peak_reduction) if rows else 0))
    for row in rows:
        w.writerow(_cells(row))
    return buf.getvalue()


def table_text(rows: list[ControlMetrics]) -> str:
    """Aligned plain-text version of :func:`table_csv`."""
    lines = [_header(len(rows[0].peak_reduction) if rows else 0)] + [_cells(r) for r in rows]
    widths = [max(len(line[i]) for line in lines) for i in range(len(lines[0]))]
    out = []
    for k, line in enumerate(lines):
        out.append("  ".join(c.rjust(w) if k and i else c.ljust(w)
                             for i, (c, w) in enumerate(zip(line, widths))).rstrip())
    return "\n".join(out) + "\n"


def duration_curve_csv(series: dict[str, np.ndarray]) -> str:
    """Exceedance curves of several series side by side (value, probability pairs)."""
    curves = {name: exceedance_curve(x) for name, x in series.items()}
    n = max(v.size for v, _ in curves.values())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"{name}_{c}" for name in curves for c in ("value", "exceedance")])
    for i in range(n):
        row = []
        for v, p in curves.values():
            row += [f"{v[i]:.6g}", f"{p[i]:.6g}"] if i < v.size else ["", ""]
        w.writerow(row)
    return buf.getvalue()
