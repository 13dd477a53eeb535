"""Controlled detention pond: orifice + spillway release and linearised stepping.

Depths in m, flows in m^3/s, rain in mm/h, evaporation in mm/day. The
outflow and linearisation functions broadcast over array arguments so that
many candidate trajectories can be advanced at once.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid

from .errors import InstabilityError

HAT_FLOOR = 1e-3  # m, head below which the orifice gain is frozen


class ReservoirError(ValueError):
    pass


@dataclass(frozen=True)
class StageArea:
    """Monotone piecewise-linear surface area (m^2) as a function of depth (m)."""

    depth: np.ndarray
    area: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=float)
        a = np.asarray(self.area, dtype=float)
        if d.ndim != 1 or d.shape != a.shape or d.size < 2:
            raise ReservoirError("stage-area table needs two equal-length columns")
        if np.any(np.diff(d) <= 0):
            raise ReservoirError("stage-area depths must be strictly increasing")
        if np.any(np.diff(a) < 0) or a[0] <= 0:
            raise ReservoirError("stage-area areas must be positive and non-decreasing")
        object.__setattr__(self, "depth", d)
        object.__setattr__(self, "area", a)

    def __call__(self, h):
        return np.interp(h, self.depth, self.area)

    @classmethod
    def from_csv(cls, path) -> "StageArea":
        data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1])


@dataclass(frozen=True)
class ReservoirSpec:
    k_o: float = 1.538
    k_s: float = 6.3
    crest: float = 5.5
    h_o: float = 0.0
    h_m: float = 0.24
    area: float | StageArea = 10530.0
    porosity: float = 1.0

    def __post_init__(self):
        if not self.k_o > 0:
            raise ReservoirError("k_o must be positive")
        if not self.k_s > 0:
            raise ReservoirError("k_s must be positive")
        if self.crest <= 0:
            raise ReservoirError("crest must be positive")
        if self.h_o < 0 or self.h_m < 0:
            raise ReservoirError("h_o and h_m must be non-negative")
        if not 0 < self.porosity <= 1:
            raise ReservoirError("porosity must lie in (0, 1]")
        if not isinstance(self.area, StageArea) and not self.area > 0:
            raise ReservoirError("area must be positive")

    @classmethod
    def with_orifice_diameter(cls, diameter: float, **kwargs) -> "ReservoirSpec":
        """Reservoir whose engagement depth is 20% of the orifice diameter."""
        return cls(h_m=0.2 * diameter, **kwargs)

    @property
    def engagement(self) -> float:
        return self.h_o + self.h_m

    def surface(self, h):
        if isinstance(self.area, StageArea):
            return self.area(h)
        return np.full_like(np.asarray(h, dtype=float), self.area) if np.ndim(h) else float(self.area)

    def storage(self, h) -> float:
        """Stored volume (m^3) at depth ``h`` integrated over the stage-area curve."""
        if isinstance(self.area, StageArea):
            grid = np.linspace(0.0, float(h), 201)
            return float(trapezoid(self.area(grid), grid)) * self.porosity
        return float(h) * self.area * self.porosity


@dataclass
class ReservoirState:
    h: float
    q_out: float
    h_op: float
    u_op: float

    def copy(self) -> "ReservoirState":
        return ReservoirState(self.h, self.q_out, self.h_op, self.u_op)


@dataclass(frozen=True)
class ReservoirFluxes:
    """Volumes (m^3) over one step."""

    inflow: float
    rain: float
    evaporation: float
    release: float
    clipped: float
    storage_change: float


def head(spec: ReservoirSpec, h):
    return np.maximum(np.asarray(h, dtype=float) - spec.engagement, 0.0)


def outflow(spec: ReservoirSpec, h, u):
    """Orifice release scaled by opening ``u`` plus spillway overflow above the crest."""
    h = np.asarray(h, dtype=float)
    q = u * spec.k_o * np.sqrt(head(spec, h))
    return q + spec.k_s * np.maximum(h - spec.crest, 0.0) ** 1.5


def linearize(spec: ReservoirSpec, h_op, u_op):
    """Slopes of :func:`outflow` at ``(h_op, u_op)``: returns ``(alpha, beta, gamma)``.

    ``alpha = dq/dh``, ``beta = dq/du`` and ``gamma`` the outflow itself. The
    orifice term of ``alpha`` vanishes when the head is zero and uses a
    frozen head of ``HAT_FLOOR`` when it is positive but smaller.
    """
    hat = head(spec, h_op)
    root = np.sqrt(np.where(hat > 0, np.maximum(hat, HAT_FLOOR), 1.0))
    alpha = np.where(hat > 0, u_op * spec.k_o / (2.0 * root), 0.0)
    alpha = alpha + 1.5 * spec.k_s * np.sqrt(np.maximum(np.asarray(h_op) - spec.crest, 0.0))
    beta = spec.k_o * np.sqrt(hat)
    gamma = outflow(spec, h_op, u_op)
    return alpha, beta, gamma


def step_matrices(spec: ReservoirSpec, h_op, u_op, dt: float, h=None):
    """Scalar update coefficients ``(A, B, alpha, beta, gamma, mu)`` of the
    linearised balance ``h+ = A h + B u + psi``."""
    alpha, beta, gamma = linearize(spec, h_op, u_op)
    mu = 1.0 / (spec.surface(h_op if h is None else h) * spec.porosity)
    return 1.0 - dt * alpha * mu, -dt * beta * mu, alpha, beta, gamma, mu


def release(spec: ReservoirSpec, h, u, h_op, u_op):
    """Linearised release about ``(h_op, u_op)`` evaluated at ``(h, u)``, floored at zero."""
    alpha, beta, gamma = linearize(spec, h_op, u_op)
    return np.maximum(gamma + alpha * (h - h_op) + beta * (u - u_op), 0.0)


def advance(spec: ReservoirSpec, h, u, h_op, u_op, q_in, rain, evap_mm_day, dt):
    """Vectorised core of :func:`reservoir_step`.

    Returns ``(h_new, q_release, net_vertical, clipped)`` where
    ``q_release`` is the flow handed downstream over the step and
    ``clipped`` the volume added back when a negative depth is clipped.
    """
    area = spec.surface(h)
    storage_rate = area * spec.porosity
    vertical = (rain / 3.6e6 - evap_mm_day / 8.64e7) * area
    q = release(spec, h, u, h_op, u_op)
    # never release more than is stored plus what arrives this step
    cap = np.maximum(h * storage_rate / dt + q_in + vertical, 0.0)
    q = np.minimum(q, cap)
    h_new = h + dt * (q_in + vertical - q) / storage_rate
    clipped = np.maximum(-h_new, 0.0) * storage_rate
    return np.maximum(h_new, 0.0), q, vertical, clipped


def reservoir_step(spec: ReservoirSpec, state: ReservoirState, q_in: float, rain: float,
                   evap_mm_day: float, u: float, dt: float):
    """Advance the pond by ``dt`` seconds with valve opening ``u``.

    Uses the linearisation about the stored operating point, then refreshes
    the operating point to ``(h(k), u(k))``. Returns ``(state, q_release, fluxes)``.
    """
    if not 0.0 <= u <= 1.0:
        raise ReservoirError("valve opening must lie in [0, 1]")
    h_new, q, vertical, clipped = advance(spec, state.h, u, state.h_op, state.u_op,
                                          q_in, rain, evap_mm_day, dt)
    h_new, q = float(h_new), float(q)
    if not np.isfinite(h_new):
        raise InstabilityError("reservoir depth became non-finite; reduce the time step")
    area = float(spec.surface(state.h))
    fluxes = ReservoirFluxes(
        inflow=q_in * dt,
        rain=rain / 3.6e6 * area * dt,
        evaporation=evap_mm_day / 8.64e7 * area * dt,
        release=q * dt,
        clipped=float(clipped),
        storage_change=(h_new - state.h) * area * spec.porosity,
    )
    new = ReservoirState(h_new, float(outflow(spec, h_new, u)), state.h, float(u))
    return new, q, fluxes


def steady_depth(spec: ReservoirSpec, q_in: float, u: float = 1.0) -> float:
    """Depth below the crest where the orifice passes ``q_in`` exactly."""
    if q_in <= 0:
        return spec.engagement
    return spec.engagement + (q_in / (u * spec.k_o)) ** 2
