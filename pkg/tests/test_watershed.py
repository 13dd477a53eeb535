from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stormrtc import watershed as ws
from stormrtc.errors import InstabilityError


@pytest.mark.parametrize("f_d, expected", [(5.0, 119.74872), (1e12, 10.92)])
def test_green_ampt_capacity(f_d, expected):
    c = ws.infiltration_capacity(10.92, 110.0, 0.453, 0.0, f_d)
    assert c == pytest.approx(expected, rel=1e-6)


def test_zero_deficit_gives_k_sat():
    c = ws.infiltration_capacity(10.92, 110.0, 0.0, 30.0, np.array([5.0, 50.0, 500.0]))
    np.testing.assert_allclose(c, 10.92)


def test_capacity_rejects_non_positive_f_d():
    with pytest.raises(ValueError):
        ws.infiltration_capacity(1.0, 1.0, 0.1, 0.0, 0.0)


def test_infiltration_limited_by_supply_and_floor():
    f, f_d = ws.infiltration_step(np.array([50.0, 5.0, 20.0]), np.array([10.0, 30.0, 0.0]),
                                  np.array([10.0, 10.0, 5.2]), 3600.0, drying=1.0)
    np.testing.assert_allclose(f, [10.0, 5.0, 0.0])
    np.testing.assert_allclose(f_d, [20.0, 15.0, 5.0])


def test_conveyance_and_outflow_hand_values():
    lam = ws.conveyance(1e-5, 20.0, 20.0, 0.05, 0.018)
    assert lam == pytest.approx(2.48452e-3, rel=1e-5)
    assert ws.cell_outflow(10.0, 0.0, lam) == pytest.approx(0.1153212, rel=1e-6)
    assert ws.cell_outflow(9.0, 10.0, lam) == 0.0


def test_v_tilted_routing(tiny_grid):
    rows, cols = tiny_grid.shape
    jc = cols // 2
    down = tiny_grid.downstream.reshape(rows, cols)
    for i in range(rows):
        for j in range(cols):
            d = down[i, j]
            if (i, j) == tiny_grid.outlet:
                assert d == -1
            elif j == jc:
                assert divmod(d, cols) == (i + 1, jc)
            else:
                assert divmod(d, cols) == (i, j + (1 if j < jc else -1))


def test_outlet_must_be_on_boundary():
    with pytest.raises(ws.GridError, match="boundary"):
        ws.fill_and_route(np.zeros((3, 3)), 1.0, 1.0, (1, 1))


def test_pit_is_filled_and_drained():
    dem = np.array([[5.0, 5.0, 5.0], [5.0, 1.0, 5.0], [5.0, 4.0, 5.0]])
    filled, down, slope = ws.fill_and_route(dem, 10.0, 10.0, (2, 1), min_slope=1e-3)
    assert filled[1, 1] > filled[2, 1]
    assert np.all(filled >= dem)
    assert np.all(slope[down >= 0] > 0)


def _reaches_outlet(down, outlet):
    for c in range(down.size):
        seen = 0
        while c != outlet:
            c = down[c]
            seen += 1
            assert c >= 0 and seen <= down.size
    return True


@settings(max_examples=40, deadline=None)
@given(dem=arrays(np.float64, st.tuples(st.integers(2, 7), st.integers(2, 7)),
                  elements=st.floats(0.0, 50.0)),
       side=st.integers(0, 3))
def test_routing_drains_every_cell(dem, side):
    rows, cols = dem.shape
    outlet = [(0, cols // 2), (rows - 1, cols // 2), (rows // 2, 0), (rows // 2, cols - 1)][side]
    filled, down, slope = ws.fill_and_route(dem, 10.0, 10.0, outlet)
    o = outlet[0] * cols + outlet[1]
    assert _reaches_outlet(down, o)
    assert np.all(slope[down >= 0] > 0)
    B = ws.direction_matrix(down).toarray()
    sums = B.sum(axis=0)
    assert sums[o] == 0 and np.all(np.delete(sums, o) == 1)


def test_flow_accumulation_counts_all_cells(tiny_grid):
    acc = tiny_grid.flow_accumulation()
    assert acc[tiny_grid.outlet_index] == tiny_grid.n_cells
    assert acc.min() == 1


def _run(grid, rain, et, dt, steps, state=None):
    state = grid.initial_state() if state is None else state
    total = np.zeros(5)
    for _ in range(steps):
        state, fx = ws.watershed_step(grid, state, rain, et, dt)
        total += (fx.rain, fx.et, fx.infiltration, fx.outlet, fx.clipped)
    return state, total


def test_mass_balance_through_storm_and_drying(tiny_grid):
    s0 = tiny_grid.initial_state()
    s1, t1 = _run(tiny_grid, 60.0, 2.0, 1.0, 1800, s0)
    s2, t2 = _run(tiny_grid, 0.0, 2.0, 1.0, 3600, s1)
    rain, et, inf, out, clip = t1 + t2
    resid = rain - et - inf - out + clip - ws.storage(tiny_grid, s2)
    assert abs(resid) <= 1e-9 * rain


def test_equilibrium_outflow_equals_rain():
    grid = ws.v_tilted_grid(6, 5, 20.0, 20.0, k_f=ws.consistent_k_f(20.0, 20.0),
                            pervious={"k_sat": 0.0, "h0": 0.0})
    state, _ = _run(grid, 20.0, 0.0, 2.0, 20000)
    supply = 20.0 / 3.6e6 * grid.area
    assert state.q_out == pytest.approx(supply, rel=1e-3)


def test_drying_lowers_f_d_to_floor(tiny_grid):
    state = tiny_grid.initial_state(f_d0=6.0)
    state, _ = _run(tiny_grid, 0.0, 24.0, 60.0, 30, state)
    per = tiny_grid.pervious
    np.testing.assert_allclose(state.f_d[per], 5.5)
    state, _ = _run(tiny_grid, 0.0, 24.0, 60.0, 60, state)
    np.testing.assert_allclose(state.f_d[per], tiny_grid.f_d_min)
    assert state.h_ef.min() >= 0


def test_steps_within_advisory_never_clip(tiny_grid):
    dt = 0.9 * tiny_grid.max_stable_dt(120.0)
    state = tiny_grid.initial_state()
    for _ in range(int(3600 / dt)):
        state, fx = ws.watershed_step(tiny_grid, state, 120.0, 2.0, dt)
        assert fx.clipped <= 1e-12
    assert np.all(np.isfinite(state.h_ef))


def test_oversized_step_raises():
    grid = ws.v_tilted_grid(5, 5, 5.0, 5.0, k_f=ws.consistent_k_f(5.0, 5.0))
    state = grid.initial_state()
    with pytest.raises(InstabilityError):
        for _ in range(200):
            state, _ = ws.watershed_step(grid, state, 200.0, 0.0, 600.0)


def test_matrix_grid_from_files(tmp_path):
    dem, outlet = ws.v_tilted_dem(4, 5, 10.0, 10.0)
    np.savetxt(tmp_path / "dem.txt", dem)
    loaded = ws.load_matrix(tmp_path / "dem.txt")
    grid = ws.WatershedGrid(loaded, 10.0, 10.0, outlet)
    np.testing.assert_allclose(grid.dem, dem)
    assert grid.n_cells == 20


@pytest.mark.parametrize("kwargs, message", [
    (dict(manning=0.0), "manning"),
    (dict(k_sat=-1.0), "non-negative"),
    (dict(moisture_deficit=1.5), "moisture_deficit"),
    (dict(k_f=0.0), "k_f"),
])
def test_grid_validation(kwargs, message):
    dem, outlet = ws.v_tilted_dem(3, 3, 10.0, 10.0)
    with pytest.raises(ws.GridError, match=message):
        ws.WatershedGrid(dem, 10.0, 10.0, outlet, **kwargs)
