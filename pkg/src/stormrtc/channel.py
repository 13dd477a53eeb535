"""Explicit diffusive-wave routing along a chain of rectangular sub-reaches.

Reach 0 is upstream and receives the reservoir release; the last reach
discharges through a fixed outlet slope. Depths in m, flows in m^3/s.
Functions accept depth arrays with leading batch dimensions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import InstabilityError


class ChannelError(ValueError):
    pass


@dataclass
class ChannelSpec:
    width: np.ndarray
    length: np.ndarray
    manning: np.ndarray
    bed: np.ndarray
    outlet_slope: float = 0.025

    A_slope: np.ndarray = field(init=False, repr=False)
    b_slope: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.width = np.atleast_1d(np.asarray(self.width, dtype=float))
        n = self.width.size
        self.length = np.broadcast_to(np.asarray(self.length, dtype=float), (n,)).copy()
        self.manning = np.broadcast_to(np.asarray(self.manning, dtype=float), (n,)).copy()
        self.bed = np.asarray(self.bed, dtype=float)
        if self.bed.shape != (n,):
            raise ChannelError("bed elevations must have one entry per reach")
        for name in ("width", "length", "manning"):
            if np.any(getattr(self, name) <= 0):
                raise ChannelError(f"{name} must be positive")
        if self.outlet_slope < 0:
            raise ChannelError("outlet_slope must be non-negative")
        self.A_slope, self.b_slope = slope_operator(self.length, self.bed, self.outlet_slope)

    @classmethod
    def uniform(cls, n_reaches: int = 100, width: float = 3.0, length: float = 30.0,
                manning: float = 0.3, bed_slope: float = 0.025,
                outlet_slope: float = 0.025, datum: float = 0.0) -> "ChannelSpec":
        if n_reaches < 1:
            raise ChannelError("need at least one reach")
        bed = datum + bed_slope * length * np.arange(n_reaches - 1, -1, -1, dtype=float)
        return cls(np.full(n_reaches, width), length, manning, bed, outlet_slope)

    @property
    def n(self) -> int:
        return self.width.size

    @property
    def plan_area(self) -> np.ndarray:
        return self.width * self.length

    def storage(self, h) -> float:
        return float(np.sum(np.asarray(h) * self.plan_area))


def slope_operator(length, bed, outlet_slope):
    """``(A, b)`` with water-surface slopes ``A @ h + b``.

    Row ``i`` takes the drop from reach ``i`` to ``i+1`` over ``length[i]``;
    the last row is the fixed outlet slope.
    """
    n = length.size
    A = np.zeros((n, n))
    b = np.empty(n)
    idx = np.arange(n - 1)
    A[idx, idx] = 1.0 / length[:-1]
    A[idx, idx + 1] = -1.0 / length[:-1]
    b[:-1] = (bed[:-1] - bed[1:]) / length[:-1]
    b[-1] = outlet_slope
    return A, b


def section_geometry(spec: ChannelSpec, h):
    """Flow area and hydraulic radius of rectangular sections."""
    h = np.asarray(h, dtype=float)
    a = spec.width * h
    return a, a / (spec.width + 2.0 * h)


def surface_slopes(spec: ChannelSpec, h):
    h = np.asarray(h, dtype=float)
    s = np.empty_like(h)
    s[..., :-1] = (h[..., :-1] - h[..., 1:]) / spec.length[:-1] + spec.b_slope[:-1]
    s[..., -1] = spec.b_slope[-1]
    return s


def reach_flows(spec: ChannelSpec, h):
    """Manning discharge out of each reach; adverse slopes carry no flow."""
    a, r = section_geometry(spec, h)
    s = np.maximum(surface_slopes(spec, h), 0.0)
    return a * r ** (2.0 / 3.0) * np.sqrt(s) / spec.manning


def channel_flows(spec: ChannelSpec, h, inflow):
    """Net flux (m^3/s) into each reach given the upstream inflow."""
    q = reach_flows(spec, h)
    dq = -q
    dq[..., 1:] += q[..., :-1]
    dq[..., 0] += inflow
    return dq


def channel_step(spec: ChannelSpec, h, inflow, dt: float, neg_tol: float = 1e-3):
    """Explicit Euler update. Returns ``(h_new, outlet_flow, clipped_volume)``.

    ``outlet_flow`` is the discharge leaving the last reach during the step.
    """
    q = reach_flows(spec, h)
    dq = -q
    dq[..., 1:] += q[..., :-1]
    dq[..., 0] += inflow
    h_new = h + dt * dq / spec.plan_area
    if not np.all(np.isfinite(h_new)):
        raise InstabilityError("channel depth became non-finite; reduce the time step")
    low = h_new.min()
    clipped = 0.0
    if low < 0:
        if low < -neg_tol:
            raise InstabilityError(
                f"channel depth {low:.3g} m; reduce the time step "
                f"(advisory {max_stable_dt(spec, np.maximum(h, 0)):.3g} s)")
        neg = np.minimum(h_new, 0.0)
        clipped = -np.sum(neg * spec.plan_area, axis=-1)
        h_new = h_new - neg
    return h_new, q[..., -1], clipped


def flow_derivatives(spec: ChannelSpec, h):
    """Partials of each reach flow with respect to its own depth and the
    next reach's depth: returns ``(dq_i/dh_i, dq_i/dh_{i+1})``."""
    h = np.asarray(h, dtype=float)
    w = spec.width
    a, r = section_geometry(spec, h)
    s = surface_slopes(spec, h)
    wet = h > 0
    flowing = wet & (s > 0)
    s_pos = np.where(flowing, s, 1.0)
    r_safe = np.where(wet, r, 1.0)
    dr = w ** 2 / (w + 2.0 * h) ** 2
    # d(a r^(2/3))/dh
    dconv = np.where(wet, w * r_safe ** (2.0 / 3.0) + a * (2.0 / 3.0) * r_safe ** (-1.0 / 3.0) * dr, 0.0)
    conv = a * r ** (2.0 / 3.0)
    dslope_self = np.concatenate([1.0 / spec.length[:-1], [0.0]])
    own = (dconv * np.sqrt(s_pos) + conv * 0.5 / np.sqrt(s_pos) * dslope_self) / spec.manning
    nxt = (-conv * 0.5 / np.sqrt(s_pos) * dslope_self) / spec.manning
    own = np.where(flowing, own, 0.0)
    nxt = np.where(flowing, nxt, 0.0)
    nxt[-1] = 0.0
    return own, nxt


def channel_jacobian(spec: ChannelSpec, h0, dt: float) -> np.ndarray:
    """Jacobian of the Euler step map ``h -> h + dt * dq(h) / (dx dy)`` at ``h0``."""
    own, nxt = flow_derivatives(spec, h0)
    n = spec.n
    J = np.zeros((n, n))
    idx = np.arange(n)
    # reach i loses q_i(h_i, h_{i+1}) and gains q_{i-1}(h_{i-1}, h_i)
    J[idx, idx] -= own
    J[idx[:-1], idx[:-1] + 1] -= nxt[:-1]
    J[idx[1:], idx[:-1]] += own[:-1]
    J[idx[1:], idx[1:]] += nxt[:-1]
    return np.eye(n) + dt * J / spec.plan_area[:, None]


def normal_depth(spec: ChannelSpec, q: float, reach: int = 0, slope: float | None = None) -> float:
    """Depth carrying ``q`` in uniform flow on ``slope`` (bed slope of ``reach`` by default)."""
    if q <= 0:
        return 0.0
    s = spec.b_slope[reach] if slope is None else slope
    w, n = spec.width[reach], spec.manning[reach]

    def resid(h):
        a = w * h
        return a * (a / (w + 2 * h)) ** (2.0 / 3.0) * np.sqrt(s) / n - q

    hi = 1.0
    while resid(hi) < 0:
        hi *= 2.0
    return float(brentq(resid, 0.0, hi, xtol=1e-14, rtol=1e-14))


def max_stable_dt(spec: ChannelSpec, h) -> float:
    """Advisory explicit step (s): the tighter of the wave-celerity bound and
    the decay bound of the Jacobian's diagonal."""
    h = np.asarray(h, dtype=float)
    a, r = section_geometry(spec, h)
    s = np.maximum(surface_slopes(spec, h), 0.0)
    v = r ** (2.0 / 3.0) * np.sqrt(s) / spec.manning
    with np.errstate(divide="ignore"):
        celerity = np.where(v > 0, spec.length / (5.0 / 3.0 * v), np.inf).min()
        own, _ = flow_derivatives(spec, h)
        decay = np.where(own > 0, spec.plan_area / own, np.inf).min()
    return float(min(celerity, decay))
