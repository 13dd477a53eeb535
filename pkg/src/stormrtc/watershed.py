"""Gridded rainfall-runoff plant.

Cells are flattened row-major. Depths ``h_ef`` and ``f_d`` are in mm, rates
in mm/h, outlet discharge in m^3/s, time steps in seconds.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import InstabilityError

# D8 neighbour offsets, fixed order also used to break slope ties
NEIGHBOURS = ((-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1))

MM_H_TO_M3_S = 1.0 / 3.6e6  # (mm/h) * m^2 -> m^3/s


class GridError(ValueError):
    pass


def _as_field(value, shape, name):
    arr = np.broadcast_to(np.asarray(value, dtype=float), shape).astype(float)
    if not np.all(np.isfinite(arr)):
        raise GridError(f"{name} contains non-finite values")
    return arr


def fill_and_route(dem, dx: float, dy: float, outlet: tuple[int, int],
                   min_slope: float = 1e-4):
    """Priority-flood the DEM from the outlet and pick D8 steepest descent.

    Every cell is raised, if needed, to at least ``min_slope * distance``
    above the neighbour it was reached from, so all cells drain to the
    outlet with a slope of at least ``min_slope``.

    Returns ``(filled, downstream, slope)`` where ``downstream`` holds the
    flat index of the receiving cell (-1 for the outlet).
    """
    dem = np.asarray(dem, dtype=float)
    rows, cols = dem.shape
    i0, j0 = outlet
    if not (0 <= i0 < rows and 0 <= j0 < cols):
        raise GridError("outlet lies outside the grid")
    if not (i0 in (0, rows - 1) or j0 in (0, cols - 1)):
        raise GridError("outlet must be a boundary cell")
    if not np.all(np.isfinite(dem)):
        raise GridError("DEM contains non-finite elevations")
    if min_slope <= 0:
        raise GridError("min_slope must be positive")

    dist = {(di, dj): float(np.hypot(di * dy, dj * dx)) for di, dj in NEIGHBOURS}
    filled = dem.copy()
    done = np.zeros(dem.shape, dtype=bool)
    done[i0, j0] = True
    heap = [(filled[i0, j0], 0, i0, j0)]
    order = 1
    while heap:
        z, _, i, j = heapq.heappop(heap)
        for di, dj in NEIGHBOURS:
            a, b = i + di, j + dj
            if 0 <= a < rows and 0 <= b < cols and not done[a, b]:
                done[a, b] = True
                floor = z + min_slope * dist[di, dj]
                if filled[a, b] < floor:
                    filled[a, b] = floor
                heapq.heappush(heap, (filled[a, b], order, a, b))
                order += 1

    downstream = np.full(rows * cols, -1, dtype=np.int64)
    slope = np.zeros(rows * cols)
    for i in range(rows):
        for j in range(cols):
            if (i, j) == (i0, j0):
                continue
            best, target = 0.0, -1
            for di, dj in NEIGHBOURS:
                a, b = i + di, j + dj
                if 0 <= a < rows and 0 <= b < cols:
                    s = (filled[i, j] - filled[a, b]) / dist[di, dj]
                    if s > best:
                        best, target = s, a * cols + b
            if target < 0:
                # cannot happen after the flood; kept as a guard against bad input
                raise GridError(f"cell ({i}, {j}) has no downslope neighbour after filling")
            downstream[i * cols + j] = target
            slope[i * cols + j] = best
    return filled, downstream, slope


def direction_matrix(downstream: np.ndarray) -> sparse.csr_matrix:
    """Boolean routing matrix: entry ``(r, c)`` is 1 when cell ``c`` drains into ``r``."""
    q = downstream.size
    src = np.flatnonzero(downstream >= 0)
    data = np.ones(src.size)
    return sparse.csr_matrix((data, (downstream[src], src)), shape=(q, q))


@dataclass
class WatershedGrid:
    """Static description of the catchment.

    Per-cell fields may be given as scalars or ``(rows, cols)`` arrays. The
    derived routing (``filled``, ``downstream``, ``slope``, ``lam``) is built
    on construction.
    """

    dem: np.ndarray
    dx: float
    dy: float
    outlet: tuple[int, int]
    manning: np.ndarray | float = 0.3
    h0: np.ndarray | float = 10.0
    k_sat: np.ndarray | float = 10.92
    suction: np.ndarray | float = 110.0
    moisture_deficit: np.ndarray | float = 0.453
    k_f: float = 1e-5
    f_d_min: float = 5.0
    min_slope: float = 1e-4
    outlet_slope: float | None = None

    filled: np.ndarray = field(init=False, repr=False)
    downstream: np.ndarray = field(init=False, repr=False)
    slope: np.ndarray = field(init=False, repr=False)
    lam: np.ndarray = field(init=False, repr=False)
    B_d: sparse.csr_matrix = field(init=False, repr=False)
    flat: "_FlatFields" = field(init=False, repr=False)

    def __post_init__(self):
        self.dem = np.atleast_2d(np.asarray(self.dem, dtype=float))
        shape = self.dem.shape
        if self.dx <= 0 or self.dy <= 0:
            raise GridError("cell sizes must be positive")
        self.outlet = (int(self.outlet[0]), int(self.outlet[1]))
        self.manning = _as_field(self.manning, shape, "manning")
        self.h0 = _as_field(self.h0, shape, "h0")
        self.k_sat = _as_field(self.k_sat, shape, "k_sat")
        self.suction = _as_field(self.suction, shape, "suction")
        self.moisture_deficit = _as_field(self.moisture_deficit, shape, "moisture_deficit")
        if np.any(self.manning <= 0):
            raise GridError("manning must be positive")
        if np.any(self.h0 < 0) or np.any(self.k_sat < 0) or np.any(self.suction < 0):
            raise GridError("h0, k_sat and suction must be non-negative")
        if np.any(self.moisture_deficit < 0) or np.any(self.moisture_deficit > 1):
            raise GridError("moisture_deficit must lie in [0, 1]")
        if self.k_f <= 0:
            raise GridError("k_f must be positive")
        if self.f_d_min <= 0:
            raise GridError("f_d_min must be positive")

        self.filled, self.downstream, self.slope = fill_and_route(
            self.dem, self.dx, self.dy, self.outlet, self.min_slope)
        o = self.outlet_index
        if self.outlet_slope is None:
            feeders = self.downstream == o
            self.slope[o] = self.slope[feeders].max() if feeders.any() else self.min_slope
        else:
            if self.outlet_slope <= 0:
                raise GridError("outlet_slope must be positive")
            self.slope[o] = self.outlet_slope
        self.lam = conveyance(self.k_f, self.dx, self.dy, self.slope, self.manning.ravel())
        self.B_d = direction_matrix(self.downstream)
        self.flat = _FlatFields(self)

    @property
    def shape(self) -> tuple[int, int]:
        return self.dem.shape

    @property
    def n_cells(self) -> int:
        return self.dem.size

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @property
    def area(self) -> float:
        return self.cell_area * self.n_cells

    @property
    def outlet_index(self) -> int:
        return self.outlet[0] * self.dem.shape[1] + self.outlet[1]

    @property
    def pervious(self) -> np.ndarray:
        """Cells that infiltrate (non-zero conductivity), flattened."""
        return self.k_sat.ravel() > 0

    def initial_state(self, f_d0: float = 10.0, h_ef0: float = 0.0) -> "WatershedState":
        q = self.n_cells
        h = np.full(q, float(h_ef0))
        f_d = np.full(q, max(float(f_d0), self.f_d_min))
        return WatershedState(h, f_d, outlet_discharge(self, h))

    def flow_accumulation(self) -> np.ndarray:
        """Number of cells (self included) draining through each cell."""
        acc = np.ones(self.n_cells)
        # topological order: process cells from highest filled elevation down
        for c in np.argsort(-self.filled.ravel(), kind="stable"):
            d = self.downstream[c]
            if d >= 0:
                acc[d] += acc[c]
        return acc

    def max_stable_dt(self, rain_mm_h: float) -> float:
        """Advisory explicit step (s) at the equilibrium depth for ``rain_mm_h``.

        A cell accumulating ``x`` cells of runoff settles where
        ``lam * e^(5/3) = x * rain``; the linear residence time
        ``e / ((5/3) * lam * e^(2/3))`` there must exceed the step.
        """
        if rain_mm_h <= 0:
            return float("inf")
        supply = self.flow_accumulation() * rain_mm_h
        excess = (supply / self.lam) ** 0.6
        rate = (5.0 / 3.0) * self.lam * excess ** (2.0 / 3.0)
        return float(3600.0 / rate.max())

    def with_(self, **changes) -> "WatershedGrid":
        return replace(self, **changes)


class _FlatFields:
    """Flattened per-cell arrays reused across steps."""

    def __init__(self, grid: WatershedGrid):
        self.h0 = grid.h0.ravel()
        self.k_sat = grid.k_sat.ravel()
        self.suction = grid.suction.ravel()
        self.dtheta = grid.moisture_deficit.ravel()
        self.pervious = self.k_sat > 0
        self.src = np.flatnonzero(grid.downstream >= 0)
        self.dst = grid.downstream[self.src]


@dataclass
class WatershedState:
    h_ef: np.ndarray
    f_d: np.ndarray
    q_out: float

    def copy(self) -> "WatershedState":
        return WatershedState(self.h_ef.copy(), self.f_d.copy(), float(self.q_out))


@dataclass(frozen=True)
class WatershedFluxes:
    """Volumes (m^3) exchanged by the surface water during one step."""

    rain: float
    et: float
    infiltration: float
    outlet: float
    clipped: float


def conveyance(k_f, dx, dy, slope, manning):
    """Lumped Manning conveyance ``lam`` so that outflow is ``lam * depth**(5/3)``."""
    return k_f * 0.5 * (dx + dy) * np.sqrt(slope) / manning


def consistent_k_f(dx: float, dy: float) -> float:
    """``k_f`` making ``lam * h**(5/3)`` a Manning flux in mm/h for ``h`` in mm.

    Manning velocity over a cell of length ``L`` drains ``v * h / L``;
    with depth in mm and rate in mm/h this gives ``36 / L`` per unit
    ``sqrt(s)/n``. Dividing by the mean cell size gives ``36 / (dx * dy)``
    for square-ish cells.
    """
    return 36.0 / (dx * dy)


def infiltration_capacity(k_sat, suction, moisture_deficit, h_ef, f_d):
    """Green-Ampt capacity (mm/h) for cumulative infiltration ``f_d`` (mm)."""
    f_d = np.asarray(f_d, dtype=float)
    if np.any(f_d <= 0):
        raise ValueError("cumulative infiltration f_d must be positive")
    return k_sat * (1.0 + (suction + h_ef) * moisture_deficit / f_d)


def infiltration_step(capacity, supply, f_d, dt, f_d_min=5.0, drying=0.0):
    """Infiltration rate and updated cumulative depth for one explicit step.

    ``supply`` is the water rate available at the surface (mm/h). ``drying``
    (mm/h) lowers ``f_d`` where nothing infiltrates. Returns ``(f, f_d_new)``.
    """
    f = np.clip(np.minimum(capacity, supply), 0.0, None)
    dth = dt / 3600.0
    f_d_new = np.maximum(f_d + (f - np.where(f > 0, 0.0, drying)) * dth, f_d_min)
    return f, f_d_new


def cell_outflow(h_ef, h0, lam):
    """Kinematic overland outflow (mm/h) above the initial abstraction."""
    return lam * np.maximum(np.asarray(h_ef, dtype=float) - h0, 0.0) ** (5.0 / 3.0)


def outlet_discharge(grid: WatershedGrid, h_ef) -> float:
    o = grid.outlet_index
    q = cell_outflow(h_ef[o], grid.h0.flat[o], grid.lam[o])
    return float(q * grid.cell_area * MM_H_TO_M3_S)


def watershed_step(grid: WatershedGrid, state: WatershedState, rain: float,
                   et_mm_day: float, dt: float, neg_tol: float = 1.0):
    """Advance the surface-water balance by ``dt`` seconds.

    Returns ``(new_state, fluxes)``. Depths that undershoot zero are clipped
    and the clipped volume is reported; an undershoot beyond ``neg_tol`` mm
    or a non-finite value raises :class:`InstabilityError`.
    """
    c = grid.flat
    dth = dt / 3600.0
    h = state.h_ef
    q_out = cell_outflow(h, c.h0, grid.lam)
    q_in = np.bincount(c.dst, weights=q_out[c.src], minlength=h.size)

    e_tr = et_mm_day / 24.0
    available = h / dth + q_in + rain
    et = np.minimum(e_tr, available)
    cap = np.where(c.pervious,
                   infiltration_capacity(c.k_sat, c.suction, c.dtheta, h, state.f_d), 0.0)
    f, f_d = infiltration_step(cap, available - et, state.f_d, dt, grid.f_d_min,
                               drying=np.where(c.pervious, e_tr - et, 0.0))

    h_new = h + dth * (q_in + rain - et - f - q_out)
    if not np.all(np.isfinite(h_new)):
        raise InstabilityError("watershed depth became non-finite; reduce the time step")
    low = h_new.min()
    if low < -neg_tol:
        cell = int(np.argmin(h_new))
        raise InstabilityError(
            f"watershed depth {low:.3g} mm at cell {cell}; reduce the time step "
            f"(advisory at current rain: {grid.max_stable_dt(max(rain, 1.0)):.3g} s)")
    clipped = 0.0
    if low < 0:
        neg = np.minimum(h_new, 0.0)
        clipped = -float(neg.sum()) * grid.cell_area / 1000.0
        h_new = h_new - neg

    to_m3 = grid.cell_area * dth / 1000.0
    fluxes = WatershedFluxes(
        rain=rain * h.size * to_m3,
        et=float(et.sum()) * to_m3,
        infiltration=float(f.sum()) * to_m3,
        outlet=float(q_out[grid.outlet_index]) * to_m3,
        clipped=clipped,
    )
    return WatershedState(h_new, f_d, outlet_discharge(grid, h_new)), fluxes


def storage(grid: WatershedGrid, state: WatershedState) -> float:
    """Ponded surface volume (m^3)."""
    return float(state.h_ef.sum()) * grid.cell_area / 1000.0


def v_tilted_dem(rows: int, cols: int, dx: float, dy: float,
                 hill_slope: float = 0.05, channel_slope: float = 0.02):
    """V-shaped catchment: hillslopes fall toward the centre column, which
    falls toward the last row. Returns ``(dem, outlet)``."""
    if cols % 2 == 0:
        raise GridError("V-tilted catchment needs an odd number of columns")
    jc = cols // 2
    i = np.arange(rows)[:, None]
    j = np.arange(cols)[None, :]
    dem = hill_slope * np.abs(j - jc) * dx + channel_slope * (rows - 1 - i) * dy
    return dem, (rows - 1, jc)


def v_tilted_grid(rows: int = 50, cols: int = 81, dx: float = 20.0, dy: float = 20.0,
                  hill_slope: float = 0.05, channel_slope: float = 0.02,
                  pervious: dict | None = None, impervious: dict | None = None,
                  **kwargs) -> WatershedGrid:
    """Procedural V-tilted catchment with pervious hillslopes and an
    impervious centre column.

    ``pervious``/``impervious`` map parameter names (``manning``, ``h0``,
    ``k_sat``, ``suction``, ``moisture_deficit``) to values for each land cover.
    """
    dem, outlet = v_tilted_dem(rows, cols, dx, dy, hill_slope, channel_slope)
    per = {"manning": 0.3, "h0": 10.0, "k_sat": 10.92, "suction": 110.0,
           "moisture_deficit": 0.453}
    imp = {"manning": 0.018, "h0": 0.0, "k_sat": 0.0, "suction": 0.0,
           "moisture_deficit": 0.0}
    per.update(pervious or {})
    imp.update(impervious or {})
    centre = np.zeros(dem.shape, dtype=bool)
    centre[:, cols // 2] = True
    fields = {k: np.where(centre, imp[k], per[k]) for k in per}
    return WatershedGrid(dem, dx, dy, outlet, **fields, **kwargs)


def load_matrix(path) -> np.ndarray:
    """Read a row-major matrix file delimited by commas or whitespace."""
    path = Path(path)
    with path.open() as fh:
        first = fh.readline()
    try:
        arr = np.loadtxt(path, ndmin=2, delimiter="," if "," in first else None)
    except ValueError as exc:
        raise GridError(f"{path}: {exc}") from None
    if not np.all(np.isfinite(arr)):
        raise GridError(f"{path}: non-finite entries")
    return arr
