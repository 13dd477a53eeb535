"""Receding-horizon valve control by forward simulation and pattern search."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from . import reservoir as rs
from . import watershed as ws
from .plant import ControlContext, Controller, Forcing, Plant, PlantState

log = logging.getLogger(__name__)

INFEASIBLE = 1e30


@dataclass
class MpcConfig:
    horizon: int = 8
    control_horizon: int = 2
    interval: float = 3600.0
    rho_u: float = 1.0
    rho_x: float = 1.0
    rho_r: float = 1e3
    rho_c: float = 1e4
    h_ref_c: float = 1.8
    h_ref_r: float | None = None  # defaults to the spillway crest
    du_min: float = -1.0
    du_max: float = 1.0
    dt_internal: float | None = None  # defaults to the plant step
    max_evals: int = 2000
    tol: float = 1e-9
    restarts: int = 2
    warm_variance: float = 0.2
    initial_step: float = 0.25
    min_step: float = 1.0 / 64.0

    def __post_init__(self):
        if not self.horizon >= self.control_horizon >= 1:
            raise ValueError("need horizon >= control_horizon >= 1")
        if min(self.rho_u, self.rho_x, self.rho_r, self.rho_c) < 0:
            raise ValueError("weights must be non-negative")
        if not self.du_min <= 0 <= self.du_max:
            raise ValueError("slew bounds must bracket zero")
        if self.h_ref_c <= 0 or (self.h_ref_r is not None and self.h_ref_r <= 0):
            raise ValueError("references must be positive")
        if self.interval <= 0 or self.warm_variance < 0 or self.restarts < 0:
            raise ValueError("interval, warm_variance and restarts must be non-negative")


@dataclass
class Prediction:
    """Forecast pond and channel depths for a batch of trajectories.

    ``h_r`` holds the pond depth at the end of each interval, ``h_r_peak``
    and ``h_c_peak`` the highest depths reached within each interval.
    """

    h_r: np.ndarray
    h_r_peak: np.ndarray
    h_c_peak: np.ndarray


def project(U, u_prev: float, du_min: float, du_max: float) -> np.ndarray:
    """Nearest-by-forward-pass trajectory within ``[0, 1]`` and the slew bounds."""
    U = np.array(U, dtype=float, copy=True)
    prev = np.full(U.shape[:-1], float(u_prev))
    for j in range(U.shape[-1]):
        lo = np.maximum(prev + du_min, 0.0)
        hi = np.minimum(prev + du_max, 1.0)
        U[..., j] = np.clip(U[..., j], lo, hi)
        prev = U[..., j]
    return U


def is_feasible(U, u_prev, du_min, du_max, atol=0.0) -> bool:
    U = np.asarray(U, dtype=float)
    d = np.diff(np.concatenate([np.broadcast_to([u_prev], U.shape[:-1] + (1,)), U], axis=-1),
                axis=-1)
    return bool(np.all(U >= -atol) and np.all(U <= 1 + atol)
                and np.all(d >= du_min - atol) and np.all(d <= du_max + atol))


@dataclass
class WatershedForecast:
    """Pond inflow and rain averaged over each internal prediction step."""

    q_in: np.ndarray
    rain: np.ndarray
    evaporation: np.ndarray
    dt: float


def forecast_inflow(plant: Plant, state: PlantState, forcing: Forcing, t0: float,
                    span: float, dt_internal: float) -> WatershedForecast:
    """Run the watershed ahead (it does not depend on the valve) and block-average."""
    sub = dt_internal / plant.dt
    if abs(sub - round(sub)) > 1e-9 or round(sub) < 1:
        raise ValueError("internal step must be a multiple of the plant step")
    sub = int(round(sub))
    n = int(round(span / plant.dt))
    n -= n % sub
    t = t0 + plant.dt * np.arange(n)
    rain = np.asarray(forcing.rain_at(t), dtype=float)
    et = np.broadcast_to(forcing.et_at(t), (n,))
    evap = np.broadcast_to(forcing.evaporation_at(t), (n,))
    q = np.empty(n)
    w = state.ws
    for k in range(n):
        q[k] = w.q_out
        w, _ = ws.watershed_step(plant.grid, w, rain[k], et[k], plant.dt)
    pond_rain = rain if plant.rain_on_pond else np.zeros(n)
    blocks = lambda x: np.asarray(x, dtype=float).reshape(-1, sub).mean(axis=1)
    return WatershedForecast(blocks(q), blocks(pond_rain), blocks(evap), dt_internal)


def predict(plant: Plant, state: PlantState, U, fc: WatershedForecast,
            interval: float) -> Prediction:
    """Advance pond and channel under each valve trajectory in ``U`` (batch x horizon)."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    n_b, n_u = U.shape
    per = interval / fc.dt
    if abs(per - round(per)) > 1e-9:
        raise ValueError("control interval must be a multiple of the internal step")
    per = int(round(per))
    if fc.q_in.size < n_u * per:
        raise ValueError("forecast shorter than the prediction horizon")
    spec, chan = plant.reservoir, plant.channel
    h = np.full(n_b, state.res.h)
    h_op = np.full(n_b, state.res.h_op)
    u_op = np.full(n_b, state.res.u_op)
    h_c = np.broadcast_to(state.h_c, (n_b, chan.n)).copy()
    out_h = np.empty((n_b, n_u))
    peak_h = np.empty((n_b, n_u))
    peak_c = np.empty((n_b, n_u, chan.n))
    dt = fc.dt
    area = chan.plan_area
    with np.errstate(all="ignore"):
        for j in range(n_u):
            u = U[:, j]
            ph = h.copy()
            pc = h_c.copy()
            for k in range(j * per, (j + 1) * per):
                h_new, q_rel, _, _ = rs.advance(spec, h, u, h_op, u_op, fc.q_in[k],
                                                fc.rain[k], fc.evaporation[k], dt)
                q = ch.reach_flows(chan, h_c)
                dq = -q
                dq[:, 1:] += q[:, :-1]
                dq[:, 0] += q_rel
                h_c = np.maximum(h_c + dt * dq / area, 0.0)
                h_op, u_op, h = h, u, h_new
                np.maximum(ph, h, out=ph)
                np.maximum(pc, h_c, out=pc)
            out_h[:, j] = h
            peak_h[:, j] = ph
            peak_c[:, j] = pc
    return Prediction(out_h, peak_h, peak_c)


def objective(U, pred: Prediction, cfg: MpcConfig, u_prev: float, h_r0: float,
              h_ref_r: float) -> np.ndarray:
    """Slew, pond-change and exceedance penalties for each trajectory in the batch."""
    U = np.atleast_2d(U)
    du = np.diff(np.concatenate([np.full((U.shape[0], 1), u_prev), U], axis=1), axis=1)
    dh = np.diff(np.concatenate([np.full((U.shape[0], 1), h_r0), pred.h_r], axis=1), axis=1)
    J = (cfg.rho_u * np.sum(du ** 2, axis=1) + cfg.rho_x * np.sum(dh ** 2, axis=1)
         + cfg.rho_r * np.sum(np.maximum(pred.h_r_peak - h_ref_r, 0.0), axis=1)
         + cfg.rho_c * np.sum(np.maximum(pred.h_c_peak - cfg.h_ref_c, 0.0), axis=(1, 2)))
    return np.where(np.isfinite(J), J, INFEASIBLE)


@dataclass
class SolveResult:
    U: np.ndarray
    J: float
    J0: float
    J_warm: float
    iterations: int
    evaluations: int


class Problem:
    """One MPC solve: caches the watershed forecast and counts evaluations."""

    def __init__(self, plant: Plant, state: PlantState, forcing: Forcing, t0: float,
                 cfg: MpcConfig, u_prev: float):
        self.plant, self.state, self.cfg, self.u_prev = plant, state, cfg, float(u_prev)
        dt_i = cfg.dt_internal or plant.dt
        self.fc = forecast_inflow(plant, state, forcing, t0, cfg.horizon * cfg.interval, dt_i)
        self.h_ref_r = cfg.h_ref_r if cfg.h_ref_r is not None else plant.reservoir.crest
        self.evaluations = 0

    def project(self, U):
        return project(U, self.u_prev, self.cfg.du_min, self.cfg.du_max)

    def __call__(self, U) -> np.ndarray:
        U = np.atleast_2d(U)
        self.evaluations += U.shape[0]
        pred = predict(self.plant, self.state, U, self.fc, self.cfg.interval)
        return objective(U, pred, self.cfg, self.u_prev, self.state.res.h, self.h_ref_r)


def pattern_search(problem, starts, J_starts, cfg: MpcConfig):
    """Compass search run in lockstep from several starts.

    Each iteration polls ``x +/- step * e_i`` (projected) for every active
    start, moves to the best poll when it strictly improves, otherwise halves
    that start's step. Returns the best point, its cost and the iteration count.
    """
    X = np.array(starts, dtype=float)
    J = np.array(J_starts, dtype=float)
    n_s, n = X.shape
    step = np.full(n_s, cfg.initial_step)
    eye = np.eye(n)
    iterations = 0
    while problem.evaluations < cfg.max_evals:
        active = np.flatnonzero(step >= cfg.min_step)
        if active.size == 0:
            break
        iterations += 1
        polls = np.concatenate([X[active, None, :] + step[active, None, None] * eye,
                                X[active, None, :] - step[active, None, None] * eye], axis=1)
        polls = problem.project(polls.reshape(-1, n)).reshape(active.size, 2 * n, n)
        Jp = problem(polls.reshape(-1, n)).reshape(active.size, 2 * n)
        best = np.argmin(Jp, axis=1)
        for a, s in enumerate(active):
            jb = Jp[a, best[a]]
            if jb < J[s] - cfg.tol * max(1.0, abs(J[s])):
                X[s], J[s] = polls[a, best[a]], jb
            else:
                step[s] *= 0.5
    i = int(np.argmin(J))
    return X[i], float(J[i]), iterations


def solve(problem: Problem, warm, rng: np.random.Generator) -> SolveResult:
    """Best trajectory found from the perturbed warm start, the plain warm
    start, constant seeds and random restarts. Never worse than either warm start."""
    cfg = problem.cfg
    n = cfg.horizon
    warm = problem.project(np.broadcast_to(np.asarray(warm, dtype=float), (n,)))
    delta = rng.normal(0.0, np.sqrt(cfg.warm_variance), n)
    perturbed = problem.project(warm * (1.0 + delta))
    seeds = [warm, perturbed] + [problem.project(np.full(n, c)) for c in (0.0, 0.5, 1.0)]
    seeds += [problem.project(rng.uniform(0.0, 1.0, n)) for _ in range(cfg.restarts)]
    seeds = np.array(seeds)
    J_seeds = problem(seeds)
    J_warm, J0 = float(J_seeds[0]), float(J_seeds[1])

    # pattern search from the warm starts plus the best of the other seeds
    order = 2 + np.argsort(J_seeds[2:], kind="stable")[:cfg.restarts]
    pick = np.concatenate([[0, 1], order])
    x, J, iterations = pattern_search(problem, seeds[pick], J_seeds[pick], cfg)
    # ties keep the unperturbed warm start
    if not J < J_warm:
        x, J = warm, J_warm
    return SolveResult(x, J, J0, J_warm, iterations, problem.evaluations)


@dataclass
class Mpc(Controller):
    """Solves every ``control_horizon`` intervals and applies the first moves."""

    cfg: MpcConfig = field(default_factory=MpcConfig)
    name = "mpc"

    def reset(self, plant, forcing, interval, rng=None):
        if abs(interval - self.cfg.interval) > 1e-9:
            raise ValueError("simulation control interval must equal the MPC interval")
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.pending: list[float] = []
        self.cache: np.ndarray | None = None
        self.diagnostics: list[dict] = []

    def __call__(self, ctx: ControlContext) -> float:
        if not self.pending:
            cfg = self.cfg
            if self.cache is None or self.cache.size == 0:
                warm = np.full(cfg.horizon, ctx.u_prev)
            else:
                warm = np.concatenate([self.cache,
                                       np.full(cfg.horizon - self.cache.size, self.cache[-1])])
            problem = Problem(ctx.plant, ctx.state, ctx.forcing, ctx.t, cfg, ctx.u_prev)
            res = solve(problem, warm, self.rng)
            self.pending = list(res.U[:cfg.control_horizon])
            self.cache = res.U[cfg.control_horizon:]
            self.diagnostics.append({"time_s": ctx.t, "iterations": res.iterations,
                                     "evaluations": res.evaluations, "J0": res.J0,
                                     "J_warm": res.J_warm, "J": res.J})
        return float(self.pending.pop(0))
