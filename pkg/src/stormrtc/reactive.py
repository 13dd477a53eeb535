"""Measurement-driven valve controllers: rule-based and linear-quadratic."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import reservoir as rs
from .plant import ControlContext, Controller
from .riccati import RiccatiError, lift, solve_dare

log = logging.getLogger(__name__)


def passive(h: float = 0.0) -> float:
    return 1.0


def on_off(h: float, h_cr: float = 3.0) -> float:
    return 1.0 if h >= h_cr else 0.0


def detention(raining: bool, hours_since_rain: float | None, t_d: float = 6.0) -> float:
    """Closed while it rains and for ``t_d`` hours after; open otherwise.

    ``hours_since_rain`` is ``None`` when no rain has been seen yet.
    """
    if raining:
        return 0.0
    if hours_since_rain is not None and hours_since_rain <= t_d:
        return 0.0
    return 1.0


def dlqr_command(K, h: float) -> float:
    return float(np.clip(-np.ravel(K)[0] * h, 0.0, 1.0))


class Passive(Controller):
    name = "passive"

    def __call__(self, ctx: ControlContext) -> float:
        return passive(ctx.h_r)


@dataclass
class OnOff(Controller):
    h_cr: float = 3.0
    name = "onoff"

    def __post_init__(self):
        if self.h_cr <= 0:
            raise ValueError("h_cr must be positive")

    def __call__(self, ctx: ControlContext) -> float:
        return on_off(ctx.h_r, self.h_cr)


@dataclass
class Detention(Controller):
    """Holds the valve shut during rain and for ``t_d`` hours after it stops.

    Rain is judged from the gauge record up to the query time, using
    ``threshold`` (mm/h) to separate wet from dry steps.
    """

    t_d: float = 6.0
    threshold: float = 0.1
    name = "detention"

    def __post_init__(self):
        if self.t_d < 0:
            raise ValueError("t_d must be non-negative")

    def reset(self, plant, forcing, interval, rng=None):
        rain = forcing.rain
        wet = np.flatnonzero(rain.values > self.threshold)
        self._wet_end = rain.start + (wet + 1) * rain.step
        self._wet_start = rain.start + wet * rain.step

    def __call__(self, ctx: ControlContext) -> float:
        raining = ctx.forcing.rain_at(ctx.t) > self.threshold
        seen = self._wet_start < ctx.t
        since = None
        if seen.any():
            since = (ctx.t - self._wet_end[seen][-1]) / 3600.0
        return detention(raining, since, self.t_d)


def reservoir_pair(ctx: ControlContext):
    """Pond update coefficients about the plant's operating point, lifted
    from the plant step to the control interval."""
    spec = ctx.plant.reservoir
    res = ctx.state.res
    A, B, *_ = rs.step_matrices(spec, res.h_op, res.u_op, ctx.plant.dt, res.h)
    steps = int(round(ctx.interval / ctx.plant.dt))
    return lift(A, B, steps)


@dataclass
class Dlqr(Controller):
    """Regulator ``u = clip(-K h)`` re-synthesised at every query."""

    q: float = 1.0
    r: float = 1.0
    name = "dlqr"

    def reset(self, plant, forcing, interval, rng=None):
        self.u = 1.0
        self.failures = 0

    def __call__(self, ctx: ControlContext) -> float:
        A, B = reservoir_pair(ctx)
        try:
            _, K = solve_dare(A, B, [[self.q]], [[self.r]])
        except RiccatiError as exc:
            self.failures += 1
            log.debug("dlqr keeps previous command: %s", exc)
            return self.u
        self.u = dlqr_command(K, ctx.h_r)
        return self.u


@dataclass
class Dlqi(Controller):
    """Servo controller on ``[h, e]`` with ``e`` the integral of ``r - h`` (m*s).

    Weights: ``q_h`` on the depth, ``q_e`` on the integral state and ``r_u``
    on the command. The integrator is frozen while the command saturates
    in the direction the error would push it.
    """

    reference: float = 1.0
    q_h: float = 1.0
    q_e: float = 1.5e3
    r_u: float = 1e2
    name = "dlqi"

    def reset(self, plant, forcing, interval, rng=None):
        self.u = 1.0
        self.e = 0.0
        self.failures = 0

    def gains(self, A, B, interval: float):
        A_aug = np.array([[A[0, 0], 0.0], [-interval, 1.0]])
        B_aug = np.array([[B[0, 0]], [0.0]])
        _, K = solve_dare(A_aug, B_aug, np.diag([self.q_h, self.q_e]), [[self.r_u]])
        return K[0, 0], K[0, 1]

    def __call__(self, ctx: ControlContext) -> float:
        A, B = reservoir_pair(ctx)
        h = ctx.h_r
        try:
            k_h, k_e = self.gains(A, B, ctx.interval)
        except RiccatiError as exc:
            self.failures += 1
            log.debug("dlqi keeps previous command: %s", exc)
            return self.u
        raw = -k_h * h - k_e * self.e
        self.u = float(np.clip(raw, 0.0, 1.0))
        de = ctx.interval * (self.reference - h)
        push = -k_e * de
        if not ((raw > 1.0 and push > 0) or (raw < 0.0 and push < 0)):
            self.e += de
        return self.u


REACTIVE = {
    "passive": Passive,
    "onoff": OnOff,
    "detention": Detention,
    "dlqr": Dlqr,
    "dlqi": Dlqi,
}
