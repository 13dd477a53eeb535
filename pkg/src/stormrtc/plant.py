"""Watershed -> reservoir -> channel chain: stepping, linearised assembly and
the closed-loop simulation driver."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from . import reservoir as rs
from . import watershed as ws
from .errors import InstabilityError
from .forcing import EtSeries, RainSeries


@dataclass
class Forcing:
    """Rain (mm/h) over watershed and pond, watershed ET and pond evaporation (mm/day)."""

    rain: RainSeries
    et: EtSeries | float = 0.0
    evaporation: EtSeries | float | None = None

    def rain_at(self, t):
        return self.rain.at(t)

    def et_at(self, t):
        return self.et.at(t) if isinstance(self.et, EtSeries) else float(self.et)

    def evaporation_at(self, t):
        if self.evaporation is None:
            return self.et_at(t)
        if isinstance(self.evaporation, EtSeries):
            return self.evaporation.at(t)
        return float(self.evaporation)


@dataclass
class Plant:
    grid: ws.WatershedGrid
    reservoir: rs.ReservoirSpec
    channel: ch.ChannelSpec
    dt: float = 1.0
    rain_on_pond: bool = True

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def n_states(self) -> int:
        return 2 * self.grid.n_cells + 3 + self.channel.n

    def initial_state(self, h_r: float = 0.0, u: float = 1.0, f_d0: float = 10.0,
                      h_c: float | np.ndarray = 0.0) -> "PlantState":
        h_c = np.broadcast_to(np.asarray(h_c, dtype=float), (self.channel.n,)).copy()
        res = rs.ReservoirState(h_r, float(rs.outflow(self.reservoir, h_r, u)), h_r, u)
        return PlantState(self.grid.initial_state(f_d0), res, h_c)

    def outputs(self, state: "PlantState") -> np.ndarray:
        """Measured outputs: pond depth followed by channel depths."""
        return np.concatenate([[state.res.h], state.h_c])


@dataclass
class PlantState:
    ws: ws.WatershedState
    res: rs.ReservoirState
    h_c: np.ndarray

    def vector(self) -> np.ndarray:
        """Stacked state ``[h_ef, f_d, q_w, h_r, q_r, h_c]``."""
        return np.concatenate([self.ws.h_ef, self.ws.f_d, [self.ws.q_out, self.res.h,
                                                            self.res.q_out], self.h_c])

    def copy(self) -> "PlantState":
        return PlantState(self.ws.copy(), self.res.copy(), self.h_c.copy())


@dataclass(frozen=True)
class StepFluxes:
    """Volumes (m^3) moved during one plant step."""

    watershed: ws.WatershedFluxes
    reservoir: rs.ReservoirFluxes
    release: float
    channel_outflow: float
    channel_clipped: float


def plant_step(plant: Plant, state: PlantState, u: float, rain: float, et: float,
               evaporation: float):
    """One step of the chain. Returns ``(new_state, fluxes)``.

    The pond receives the watershed discharge of the current state and the
    channel receives exactly the flow the pond released.
    """
    dt = plant.dt
    w_new, wf = ws.watershed_step(plant.grid, state.ws, rain, et, dt)
    pond_rain = rain if plant.rain_on_pond else 0.0
    r_new, q_rel, rf = rs.reservoir_step(plant.reservoir, state.res, state.ws.q_out,
                                         pond_rain, evaporation, u, dt)
    h_c, q_end, clipped = ch.channel_step(plant.channel, state.h_c, q_rel, dt)
    fluxes = StepFluxes(wf, rf, q_rel * dt, float(q_end) * dt, float(clipped))
    return PlantState(w_new, r_new, h_c), fluxes


@dataclass
class LinearizedSystem:
    E: np.ndarray
    A: np.ndarray
    B: np.ndarray
    psi: np.ndarray

    @property
    def n(self) -> int:
        return self.E.shape[0]

    def residual(self, x_next, x, u) -> np.ndarray:
        return self.E @ x_next - (self.A @ x + self.B @ np.atleast_1d(u) + self.psi)


class StateLayout:
    """Index ranges of the stacked state vector."""

    def __init__(self, q: int, n_c: int):
        self.h_ef = slice(0, q)
        self.f_d = slice(q, 2 * q)
        self.q_w = 2 * q
        self.h_r = 2 * q + 1
        self.q_r = 2 * q + 2
        self.h_c = slice(2 * q + 3, 2 * q + 3 + n_c)
        self.n = 2 * q + 3 + n_c


def mask_matrix(q: int, n_c: int) -> np.ndarray:
    """Diagonal 0/1 matrix with zeros on the algebraic flow rows."""
    lay = StateLayout(q, n_c)
    e = np.ones(lay.n)
    e[[lay.q_w, lay.q_r]] = 0.0
    return np.diag(e)


def assemble(plant: Plant, state: PlantState, u: float, rain: float, et: float,
             evaporation: float) -> LinearizedSystem:
    """Linearised DAE ``E x+ = A x + B u + psi`` about the current state.

    The watershed rows carry their nonlinear increment in ``psi`` (identity
    in ``A``), the pond row uses the relinearised orifice/spillway law with
    the watershed discharge entering through ``A``, and the channel rows use
    the Jacobian of the Euler map with the release at ``u`` in ``psi``.
    Algebraic rows state the outflow closures at the current instant.
    """
    grid, spec, chan, dt = plant.grid, plant.reservoir, plant.channel, plant.dt
    q, n_c = grid.n_cells, chan.n
    lay = StateLayout(q, n_c)
    if state.ws.h_ef.size != q or state.h_c.size != n_c:
        raise ValueError("state dimensions do not match the plant")
    E = mask_matrix(q, n_c)
    A = np.zeros((lay.n, lay.n))
    B = np.zeros((lay.n, 1))
    psi = np.zeros(lay.n)

    w_next, _ = ws.watershed_step(grid, state.ws, rain, et, dt)
    A[lay.h_ef, lay.h_ef] = np.eye(q)
    A[lay.f_d, lay.f_d] = np.eye(q)
    psi[lay.h_ef] = w_next.h_ef - state.ws.h_ef
    psi[lay.f_d] = w_next.f_d - state.ws.f_d

    A[lay.q_w, lay.q_w] = 1.0
    psi[lay.q_w] = -ws.outlet_discharge(grid, state.ws.h_ef)

    r = state.res
    A_r, B_r, alpha, beta, gamma, mu = rs.step_matrices(spec, r.h_op, r.u_op, dt, r.h)
    pond_rain = rain if plant.rain_on_pond else 0.0
    vertical = (pond_rain / 3.6e6 - evaporation / 8.64e7) * float(spec.surface(r.h))
    A[lay.h_r, lay.h_r] = A_r
    A[lay.h_r, lay.q_w] = dt * mu
    B[lay.h_r, 0] = B_r
    psi[lay.h_r] = dt * mu * (alpha * r.h_op + beta * r.u_op - gamma + vertical)

    A[lay.q_r, lay.q_r] = -1.0
    psi[lay.q_r] = float(rs.outflow(spec, r.h, r.u_op))

    q_rel = float(rs.release(spec, r.h, u, r.h_op, r.u_op))
    J = ch.channel_jacobian(chan, state.h_c, dt)
    A[lay.h_c, lay.h_c] = J
    h_next = state.h_c + dt * ch.channel_flows(chan, state.h_c, q_rel) / chan.plan_area
    psi[lay.h_c] = h_next - J @ state.h_c
    return LinearizedSystem(E, A, B, psi)


@dataclass
class ControlContext:
    """What a controller sees when it is queried."""

    t: float
    y: np.ndarray
    state: PlantState
    plant: Plant
    forcing: Forcing
    interval: float
    u_prev: float

    @property
    def h_r(self) -> float:
        return float(self.y[0])

    def rain_active(self, threshold: float = 0.1) -> bool:
        return self.forcing.rain_at(self.t) > threshold


class Controller:
    """Base class: ``reset`` once per simulation, ``__call__`` per control interval."""

    name = "controller"

    def reset(self, plant: Plant, forcing: Forcing, interval: float, rng=None):
        pass

    def __call__(self, ctx: ControlContext) -> float:
        raise NotImplementedError


LEDGER_COLUMNS = (
    "rain_ws_m3", "et_m3", "infiltration_m3", "ws_outlet_m3", "ws_clipped_m3",
    "rain_pond_m3", "evap_pond_m3", "release_m3", "pond_clipped_m3",
    "channel_out_m3", "channel_clipped_m3",
)


@dataclass
class SimulationLog:
    """Per-step record (after each step) plus cumulative volume ledger."""

    controller: str
    dt: float
    time: np.ndarray
    rain: np.ndarray
    q_w: np.ndarray
    h_r: np.ndarray
    q_r: np.ndarray
    u: np.ndarray
    h_c_max: np.ndarray
    h_c_outlet: np.ndarray
    ledger: dict[str, np.ndarray]
    storage0: dict[str, float]
    storage: dict[str, float]
    h_c: np.ndarray | None = None
    n_clipped_u: int = 0
    n_queries: int = 0
    controller_seconds: float = 0.0
    diagnostics: list = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return self.time.size

    def totals(self) -> dict[str, float]:
        return {k: float(v[-1]) if v.size else 0.0 for k, v in self.ledger.items()}

    def audit(self) -> dict[str, float]:
        """Closure residuals (m^3) of each subsystem and the whole chain.

        Positive residual means water unaccounted for (lost).
        """
        t = self.totals()
        d = {k: self.storage[k] - self.storage0[k] for k in self.storage}
        ws_res = (t["rain_ws_m3"] - t["et_m3"] - t["infiltration_m3"] - t["ws_outlet_m3"]
                  + t["ws_clipped_m3"] - d["watershed"])
        pond_res = (t["ws_outlet_m3"] + t["rain_pond_m3"] - t["evap_pond_m3"]
                    - t["release_m3"] + t["pond_clipped_m3"] - d["pond"])
        ch_res = t["release_m3"] - t["channel_out_m3"] + t["channel_clipped_m3"] - d["channel"]
        rain = t["rain_ws_m3"] + t["rain_pond_m3"]
        chain = (rain - t["et_m3"] - t["infiltration_m3"] - t["evap_pond_m3"]
                 - t["channel_out_m3"] + t["ws_clipped_m3"] + t["pond_clipped_m3"]
                 + t["channel_clipped_m3"] - sum(d.values()))
        return {"watershed": ws_res, "pond": pond_res, "channel": ch_res, "chain": chain,
                "rain": rain, "ws_rain": t["rain_ws_m3"], "pond_inflow": t["ws_outlet_m3"],
                "channel_inflow": t["release_m3"]}


def _storages(plant: Plant, state: PlantState) -> dict[str, float]:
    return {
        "watershed": ws.storage(plant.grid, state.ws),
        "pond": plant.reservoir.storage(state.res.h),
        "channel": plant.channel.storage(state.h_c),
    }


def simulate(plant: Plant, state: PlantState, controller: Controller, forcing: Forcing,
             duration: float, control_interval: float, rng=None, keep_channel: bool = False,
             on_step=None) -> SimulationLog:
    """Run the closed loop for ``duration`` seconds.

    The controller is queried at ``t = 0`` and every ``control_interval``
    seconds; its command is clipped to ``[0, 1]`` and held in between.
    """
    dt = plant.dt
    per = control_interval / dt
    if abs(per - round(per)) > 1e-9 or round(per) < 1:
        raise ValueError("control interval must be a positive multiple of dt")
    per = int(round(per))
    n = int(round(duration / dt))
    controller.reset(plant, forcing, control_interval, rng)

    cols = {k: np.empty(n) for k in ("time", "rain", "q_w", "h_r", "q_r", "u", "h_c_max",
                                     "h_c_outlet")}
    ledger = np.zeros((n, len(LEDGER_COLUMNS)))
    h_c_all = np.empty((n, plant.channel.n)) if keep_channel else None
    storage0 = _storages(plant, state)
    state = state.copy()
    u = float(state.res.u_op)
    clipped_u = 0
    queries = 0
    spent = 0.0
    acc = np.zeros(len(LEDGER_COLUMNS))
    for k in range(n):
        t = k * dt
        rain = float(forcing.rain_at(t))
        if k % per == 0:
            ctx = ControlContext(t, plant.outputs(state), state, plant, forcing,
                                 control_interval, u)
            tic = time.perf_counter()
            raw = float(controller(ctx))
            spent += time.perf_counter() - tic
            queries += 1
            if not np.isfinite(raw):
                raw = u
            u_new = min(max(raw, 0.0), 1.0)
            clipped_u += u_new != raw
            u = u_new
        try:
            state, fx = plant_step(plant, state, u, rain, forcing.et_at(t),
                                   forcing.evaporation_at(t))
        except InstabilityError as exc:
            raise InstabilityError(f"t={t:.0f} s: {exc}") from None
        w, r = fx.watershed, fx.reservoir
        acc += (w.rain, w.et, w.infiltration, w.outlet, w.clipped, r.rain, r.evaporation,
                fx.release, r.clipped, fx.channel_outflow, fx.channel_clipped)
        ledger[k] = acc
        cols["time"][k] = t + dt
        cols["rain"][k] = rain
        cols["q_w"][k] = state.ws.q_out
        cols["h_r"][k] = state.res.h
        cols["q_r"][k] = state.res.q_out
        cols["u"][k] = u
        cols["h_c_max"][k] = state.h_c.max()
        cols["h_c_outlet"][k] = state.h_c[-1]
        if h_c_all is not None:
            h_c_all[k] = state.h_c
        if on_step is not None:
            on_step(k, state)

    return SimulationLog(
        controller=getattr(controller, "name", type(controller).__name__), dt=dt,
        ledger={name: ledger[:, i] for i, name in enumerate(LEDGER_COLUMNS)},
        storage0=storage0, storage=_storages(plant, state), h_c=h_c_all,
        n_clipped_u=int(clipped_u), n_queries=queries, controller_seconds=spent,
        diagnostics=list(getattr(controller, "diagnostics", [])), **cols)
