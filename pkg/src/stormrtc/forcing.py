"""Exogenous inputs: rainfall hyetographs and evapotranspiration rates.

Series are piecewise constant on a uniform grid: sample ``k`` holds over
``[start + k*step, start + (k+1)*step)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np


class ForcingError(ValueError):
    pass


@dataclass(frozen=True)
class StepSeries:
    """Piecewise-constant series on a uniform time grid (seconds)."""

    values: np.ndarray
    step: float
    start: float = 0.0
    origin: datetime | None = field(default=None, compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1:
            raise ForcingError("series values must be one-dimensional")
        if not self.step > 0:
            raise ForcingError("series step must be positive")
        if not np.all(np.isfinite(values)):
            raise ForcingError("series contains non-finite values")
        if np.any(values < 0):
            k = int(np.flatnonzero(values < 0)[0])
            raise ForcingError(f"negative value at row {k}")
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.size

    @property
    def timestamps(self) -> np.ndarray:
        return self.start + self.step * np.arange(self.values.size)

    @property
    def end(self) -> float:
        return self.start + self.step * self.values.size

    def at(self, t) -> np.ndarray | float:
        """Value held at time ``t``; zero outside the covered window."""
        t = np.asarray(t, dtype=float)
        k = np.floor((t - self.start) / self.step + 1e-9).astype(int)
        inside = (k >= 0) & (k < self.values.size)
        out = np.where(inside, self.values[np.clip(k, 0, self.values.size - 1)], 0.0)
        return float(out) if out.ndim == 0 else out

    def covers(self, t0: float, t1: float) -> bool:
        return self.start <= t0 + 1e-9 and self.end >= t1 - 1e-9

    def resample(self, step: float) -> "StepSeries":
        """Re-grid with piecewise-constant hold; cumulative totals are preserved.

        The cumulative curve is integrated exactly and differenced on the new
        grid, so a target step that divides the original one is a pure hold.
        """
        n_new = int(round((self.end - self.start) / step))
        if n_new < 1 or abs(n_new * step - (self.end - self.start)) > 1e-6 * step:
            raise ForcingError("resample step must divide the series span")
        edges = self.start + self.step * np.arange(self.values.size + 1)
        cum = np.concatenate([[0.0], np.cumsum(self.values * self.step)])
        new_edges = self.start + step * np.arange(n_new + 1)
        new_cum = np.interp(new_edges, edges, cum)
        values = np.maximum(np.diff(new_cum) / step, 0.0)
        return type(self)(values, step, self.start, self.origin)

    def window(self, t0: float, n: int, step: float | None = None) -> np.ndarray:
        """``n`` consecutive held values starting at ``t0`` sampled every ``step``."""
        step = self.step if step is None else step
        return np.asarray(self.at(t0 + step * np.arange(n)), dtype=float)


class RainSeries(StepSeries):
    """Rainfall intensity in mm/h."""

    def total_depth(self) -> float:
        """Cumulative depth in mm."""
        return float(self.values.sum() * self.step / 3600.0)

    def then(self, other: "RainSeries", gap: float = 0.0) -> "RainSeries":
        """Concatenate ``other`` after a dry ``gap`` (seconds)."""
        if abs(other.step - self.step) > 1e-9:
            raise ForcingError("cannot concatenate series with different steps")
        n_gap = int(round(gap / self.step))
        if abs(n_gap * self.step - gap) > 1e-6:
            raise ForcingError("gap must be a multiple of the series step")
        values = np.concatenate([self.values, np.zeros(n_gap), other.values])
        return RainSeries(values, self.step, self.start, self.origin)

    def padded(self, until: float) -> "RainSeries":
        """Extend with dry steps so the series covers ``[start, until)``."""
        n = int(np.ceil((until - self.start) / self.step - 1e-9))
        if n <= self.values.size:
            return self
        values = np.concatenate([self.values, np.zeros(n - self.values.size)])
        return RainSeries(values, self.step, self.start, self.origin)


class EtSeries(StepSeries):
    """Evapotranspiration (watershed) or evaporation (reservoir) rate in mm/day."""

    @classmethod
    def constant(cls, rate: float, span: float, step: float = 3600.0) -> "EtSeries":
        n = max(int(np.ceil(span / step)), 1)
        return cls(np.full(n, float(rate)), step)


@dataclass(frozen=True)
class IdfCurve:
    """Sherman intensity-duration-frequency relation ``i = a / (d + b)**c``.

    ``d`` is the duration in minutes and ``i`` the mean intensity in mm/h for
    the curve's return period.
    """

    a: float
    b: float
    c: float
    return_period: float = 0.0
    min_duration: float = 5.0
    max_duration: float = 1440.0

    def __post_init__(self):
        if self.a <= 0 or self.b < 0 or self.c <= 0:
            raise ForcingError("Sherman coefficients must satisfy a > 0, b >= 0, c > 0")

    def intensity(self, minutes):
        d = np.asarray(minutes, dtype=float)
        return self.a / (d + self.b) ** self.c

    def depth(self, minutes):
        """Cumulative depth (mm) of a storm lasting ``minutes``."""
        d = np.asarray(minutes, dtype=float)
        return self.intensity(d) * d / 60.0

    @classmethod
    def from_depth(cls, depth_mm: float, duration_min: float, b: float = 15.0,
                   c: float = 0.8, **kwargs) -> "IdfCurve":
        """Curve with the given shape whose ``duration_min`` storm totals ``depth_mm``."""
        i = depth_mm / (duration_min / 60.0)
        return cls(a=i * (duration_min + b) ** c, b=b, c=c, **kwargs)


HYETOGRAPH_METHODS = ("alternating-block", "constant")


def design_storm(idf: IdfCurve, duration: float, step: float,
                 method: str = "alternating-block", peak_position: float = 0.5) -> RainSeries:
    """Design hyetograph of ``duration`` seconds discretised in ``step`` blocks.

    ``peak_position`` in ``[0, 1]`` places the largest block of an
    alternating-block storm (0.5 is centred); blocks alternate right then
    left around it and run on along one side once the other is full.
    """
    if duration <= 0 or step <= 0:
        raise ForcingError("duration and step must be positive")
    n = int(round(duration / step))
    if n < 1 or abs(n * step - duration) > 1e-6 * step:
        raise ForcingError("duration must be a multiple of step")
    if not 0.0 <= peak_position <= 1.0:
        raise ForcingError("peak_position must lie in [0, 1]")
    minutes = duration / 60.0
    if not idf.min_duration <= minutes <= idf.max_duration:
        raise ForcingError(
            f"duration {minutes:g} min outside IDF validity range "
            f"[{idf.min_duration:g}, {idf.max_duration:g}]")

    if method == "constant":
        return RainSeries(np.full(n, float(idf.intensity(minutes))), step)
    if method != "alternating-block":
        raise ForcingError(f"unknown hyetograph method {method!r}")

    cum = idf.depth(step / 60.0 * np.arange(1, n + 1))
    blocks = np.diff(np.concatenate([[0.0], cum]))
    if np.any(blocks < -1e-12):
        raise ForcingError("IDF depth is not monotone over the storm; check coefficients")
    order = np.sort(np.maximum(blocks, 0.0))[::-1]
    depth = np.empty(n)
    depth[_block_positions(n, peak_position)] = order
    return RainSeries(depth / (step / 3600.0), step)


def _block_positions(n: int, peak_position: float) -> list[int]:
    """Slots for blocks sorted by decreasing depth."""
    left = right = int(np.floor(peak_position * (n - 1)))
    positions = [left]
    go_right = True
    while len(positions) < n:
        if (go_right and right < n - 1) or left == 0:
            right += 1
            positions.append(right)
        else:
            left -= 1
            positions.append(left)
        go_right = not go_right
    return positions


def _read_two_columns(path, value_name: str):
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ForcingError(f"{path}: empty file") from None
        if len(header) < 2 or header[1].strip() != value_name:
            raise ForcingError(f"{path}: expected header 'timestamp,{value_name}'")
        stamps, values = [], []
        for k, row in enumerate(reader):
            if not row or not "".join(row).strip():
                continue
            try:
                stamps.append(datetime.fromisoformat(row[0].strip()))
                values.append(float(row[1]))
            except (ValueError, IndexError) as exc:
                raise ForcingError(f"{path}: malformed row {k}: {exc}") from None
    if not stamps:
        raise ForcingError(f"{path}: no data rows")
    values = np.asarray(values)
    bad = np.flatnonzero(values < 0)
    if bad.size:
        raise ForcingError(f"negative intensity at row {int(bad[0])}")
    return stamps, values


def _regularise(stamps, values, fill_gaps: bool):
    """Uniform-step values from timestamped rows (each row holds until the next)."""
    t = np.array([(s - stamps[0]).total_seconds() for s in stamps])
    if t.size == 1:
        raise ForcingError("at least two rows are needed to infer the time step")
    dt = np.diff(t)
    if np.any(dt <= 0):
        k = int(np.flatnonzero(dt <= 0)[0]) + 1
        raise ForcingError(f"non-monotonic timestamp at row {k}")
    step = float(dt.min())
    ratio = dt / step
    if np.allclose(ratio, 1.0):
        return values.astype(float), step
    if not fill_gaps or not np.allclose(ratio, np.round(ratio)):
        k = int(np.flatnonzero(~np.isclose(ratio, 1.0))[0]) + 1
        raise ForcingError(f"irregular spacing at row {k}; pass fill_gaps to zero-fill")
    idx = np.round(t / step).astype(int)
    out = np.zeros(idx[-1] + 1)
    out[idx] = values
    return out, step


def load_rain_csv(path, step: float | None = None, fill_gaps: bool = False) -> RainSeries:
    """Read ``timestamp,intensity_mm_per_hr`` rows into a :class:`RainSeries`.

    ``step`` resamples to a new uniform step (seconds) with piecewise-constant
    hold; ``fill_gaps`` allows missing rows on the native grid, treated as dry.
    """
    stamps, values = _read_two_columns(path, "intensity_mm_per_hr")
    values, native = _regularise(stamps, values, fill_gaps)
    series = RainSeries(values, native, 0.0, stamps[0])
    return series if step is None or step == native else series.resample(step)


def load_et_csv(path, step: float | None = None, fill_gaps: bool = False) -> EtSeries:
    stamps, values = _read_two_columns(path, "rate_mm_per_day")
    values, native = _regularise(stamps, values, fill_gaps)
    series = EtSeries(values, native, 0.0, stamps[0])
    return series if step is None or step == native else series.resample(step)


def synthetic_storms(span: float, step: float, rng: np.random.Generator,
                     mean_gap_h: float = 72.0, mean_duration_h: float = 4.0,
                     mean_intensity: float = 6.0) -> RainSeries:
    """Rectangular-pulse rain season: storm starts arrive as a Poisson process,
    durations and intensities are exponential.

    Durations are rounded up to whole steps, so every storm lasts at least one
    step. Overlapping storms add.
    """
    if min(span, step, mean_gap_h, mean_duration_h, mean_intensity) <= 0:
        raise ForcingError("synthetic storm parameters must be positive")
    n = int(np.ceil(span / step - 1e-9))
    values = np.zeros(n)
    t = rng.exponential(mean_gap_h * 3600.0)
    while t < span:
        k0 = int(t // step)
        k1 = k0 + max(int(np.ceil(rng.exponential(mean_duration_h * 3600.0) / step)), 1)
        values[k0:min(k1, n)] += rng.exponential(mean_intensity)
        t += rng.exponential(mean_gap_h * 3600.0)
    return RainSeries(values, step)
