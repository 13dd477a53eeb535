from __future__ import annotations

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from stormrtc import reservoir as rs


def test_orifice_outflow_hand_value(pond):
    assert rs.outflow(pond, 4.24, 1.0) == pytest.approx(3.076, rel=1e-12)


def test_spillway_outflow_hand_value(pond):
    assert rs.outflow(pond, 6.5, 0.0) == pytest.approx(6.3, rel=1e-12)


def test_no_release_below_engagement(pond):
    assert rs.outflow(pond, 0.2, 1.0) == 0.0


def test_linearization_hand_values(pond):
    alpha, beta, gamma = rs.linearize(pond, 4.24, 1.0)
    assert alpha == pytest.approx(0.3845, rel=1e-12)
    assert beta == pytest.approx(3.076, rel=1e-12)
    assert gamma == pytest.approx(3.076, rel=1e-12)


def test_closed_valve_has_no_orifice_slope(pond):
    alpha, beta, _ = rs.linearize(pond, 3.0, 0.0)
    assert alpha == 0.0
    assert beta == pytest.approx(1.538 * np.sqrt(2.76))


def test_zero_head_gives_finite_coefficients(pond):
    for h in (0.0, 0.24, 0.2400001):
        alpha, beta, gamma = rs.linearize(pond, h, 1.0)
        assert np.isfinite([alpha, beta, gamma]).all()


@settings(max_examples=100, deadline=None)
@given(h=st.floats(0.25, 8.0), u=st.floats(0.0, 1.0))
def test_slopes_match_central_differences(h, u):
    spec = rs.ReservoirSpec()
    assume(abs(h - spec.crest) > 1e-3)
    eps = 1e-6
    alpha, beta, _ = rs.linearize(spec, h, u)
    fd_h = (rs.outflow(spec, h + eps, u) - rs.outflow(spec, h - eps, u)) / (2 * eps)
    fd_u = (rs.outflow(spec, h, u + eps) - rs.outflow(spec, h, u - eps)) / (2 * eps)
    assert alpha == pytest.approx(fd_h, rel=1e-6, abs=1e-12)
    assert beta == pytest.approx(fd_u, rel=1e-6, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(h=st.floats(0.3, 7.0), u=st.floats(0.0, 1.0), q_in=st.floats(0.0, 10.0))
def test_linear_step_at_operating_point_is_the_euler_step(h, u, q_in):
    spec, dt = rs.ReservoirSpec(), 1.0
    state = rs.ReservoirState(h, float(rs.outflow(spec, h, u)), h, u)
    new, q, _ = rs.reservoir_step(spec, state, q_in, 0.0, 0.0, u, dt)
    euler = h + dt * (q_in - rs.outflow(spec, h, u)) / spec.area
    assert new.h == pytest.approx(euler, rel=1e-12, abs=1e-12)
    A, B, alpha, beta, gamma, mu = rs.step_matrices(spec, h, u, dt)
    psi = dt * mu * (alpha * h + beta * u - gamma + q_in)
    assert A * h + B * u + psi == pytest.approx(euler, rel=1e-12, abs=1e-12)


def _route(spec, inflow, u, dt=10.0, rain=0.0, evap=0.0):
    state = rs.ReservoirState(0.0, 0.0, 0.0, u)
    books = np.zeros(5)
    for q_in in inflow:
        state, _, fx = rs.reservoir_step(spec, state, q_in, rain, evap, u, dt)
        books += (fx.inflow, fx.rain, fx.evaporation, fx.release, fx.clipped)
    return state, books


@pytest.mark.parametrize("u", [0.0, 0.3, 1.0])
def test_event_volume_balance(pond, u):
    t = np.arange(0, 24 * 3600, 10.0)
    inflow = 6.0 * np.exp(-((t - 6 * 3600) / 7200.0) ** 2)
    state, (q_in, rain, evap, out, clip) = _route(pond, inflow, u, rain=5.0, evap=2.0)
    resid = q_in + rain - evap - out + clip - pond.storage(state.h)
    assert abs(resid) <= 5e-3 * q_in
    assert abs(resid) <= 1e-8 * q_in


def test_release_never_drains_below_empty(pond):
    state = rs.ReservoirState(0.3, 0.0, 6.0, 1.0)  # stale operating point far above
    new, q, fx = rs.reservoir_step(pond, state, 0.0, 0.0, 0.0, 1.0, 3600.0)
    assert new.h >= 0.0
    assert q * 3600.0 <= 0.3 * pond.area + 1e-9


def test_steady_depth_root(pond):
    q_in = 0.8
    root = pond.engagement + (q_in / pond.k_o) ** 2
    assert rs.steady_depth(pond, q_in) == pytest.approx(root, abs=1e-12)
    state = rs.ReservoirState(0.0, 0.0, 0.0, 1.0)
    for _ in range(int(72 * 3600 / 10)):
        state, _, _ = rs.reservoir_step(pond, state, q_in, 0.0, 0.0, 1.0, 10.0)
    assert abs(state.h - root) <= 1e-4


def test_stage_area_table(tmp_path):
    p = tmp_path / "stage.csv"
    p.write_text("h_m,area_m2\n0,1000\n2,3000\n6,3000\n")
    spec = rs.ReservoirSpec(area=rs.StageArea.from_csv(p))
    assert spec.surface(1.0) == pytest.approx(2000.0)
    assert spec.storage(2.0) == pytest.approx(4000.0, rel=1e-6)
    assert spec.storage(4.0) == pytest.approx(10000.0, rel=1e-4)


@pytest.mark.parametrize("kwargs, message", [
    (dict(k_o=-1.0), "k_o must be positive"),
    (dict(k_s=0.0), "k_s must be positive"),
    (dict(porosity=1.5), "porosity"),
    (dict(area=-3.0), "area"),
])
def test_spec_validation(kwargs, message):
    with pytest.raises(rs.ReservoirError, match=message):
        rs.ReservoirSpec(**kwargs)


def test_stage_area_must_be_monotone():
    with pytest.raises(rs.ReservoirError):
        rs.StageArea(np.array([0.0, 1.0]), np.array([10.0, 5.0]))


def test_engagement_from_orifice_diameter():
    spec = rs.ReservoirSpec.with_orifice_diameter(1.2)
    assert spec.h_m == pytest.approx(0.24)


def test_valve_command_range(pond):
    state = rs.ReservoirState(1.0, 0.0, 1.0, 1.0)
    with pytest.raises(rs.ReservoirError):
        rs.reservoir_step(pond, state, 0.0, 0.0, 0.0, 1.2, 1.0)
