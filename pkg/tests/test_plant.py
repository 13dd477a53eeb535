from __future__ import annotations

import numpy as np
import pytest

from stormrtc import watershed as ws
from stormrtc.forcing import RainSeries
from stormrtc.plant import (Controller, Forcing, StateLayout, assemble, mask_matrix,
                            plant_step, simulate)
from stormrtc.reactive import Passive


class Constant(Controller):
    name = "constant"

    def __init__(self, value):
        self.value = value

    def __call__(self, ctx):
        return self.value


class Counting(Controller):
    name = "counting"

    def reset(self, plant, forcing, interval, rng=None):
        self.times = []

    def __call__(self, ctx):
        self.times.append(ctx.t)
        return 0.5


@pytest.fixture
def storm():
    return Forcing(RainSeries(np.array([40.0, 80.0, 20.0, 0.0]), 900.0), et=2.0)


def test_mask_zeroes_algebraic_rows():
    E = mask_matrix(4, 3)
    lay = StateLayout(4, 3)
    assert E[lay.q_w, lay.q_w] == 0 and E[lay.q_r, lay.q_r] == 0
    assert np.trace(E) == lay.n - 2


def _wet_state(plant):
    state = plant.initial_state(h_r=1.5, u=0.6)
    state.ws.h_ef[:] = 15.0
    state.ws.q_out = ws.outlet_discharge(plant.grid, state.ws.h_ef)
    state.h_c[:] = np.linspace(0.8, 0.4, plant.channel.n)
    return state


def test_assembly_structure(tiny_plant):
    state = _wet_state(tiny_plant)
    sys_ = assemble(tiny_plant, state, 0.4, 30.0, 2.0, 2.0)
    lay = StateLayout(tiny_plant.grid.n_cells, tiny_plant.channel.n)
    assert np.flatnonzero(sys_.B[:, 0]).tolist() == [lay.h_r]
    assert sys_.A[lay.h_r, lay.q_w] == pytest.approx(tiny_plant.dt / tiny_plant.reservoir.area)
    np.testing.assert_array_equal(sys_.A[lay.h_ef, lay.h_ef], np.eye(tiny_plant.grid.n_cells))


def test_assembly_reproduces_the_nonlinear_step(tiny_plant):
    state = _wet_state(tiny_plant)
    u, rain = 0.4, 30.0
    sys_ = assemble(tiny_plant, state, u, rain, 2.0, 2.0)
    new, _ = plant_step(tiny_plant, state, u, rain, 2.0, 2.0)
    res = sys_.residual(new.vector(), state.vector(), u)
    lay = StateLayout(tiny_plant.grid.n_cells, tiny_plant.channel.n)
    dynamic = np.ones(lay.n, dtype=bool)
    dynamic[[lay.q_w, lay.q_r]] = False
    np.testing.assert_allclose(res[dynamic], 0.0, atol=1e-10)
    # algebraic rows state the outflow closures of the current state
    alg = sys_.A @ state.vector() + sys_.psi
    assert alg[lay.q_w] == pytest.approx(0.0, abs=1e-12)
    assert alg[lay.q_r] == pytest.approx(0.0, abs=1e-12)


def test_chain_closes(tiny_plant, storm):
    log = simulate(tiny_plant, tiny_plant.initial_state(), Passive(), storm, 6 * 3600, 900)
    audit = log.audit()
    assert audit["rain"] > 0
    for key in ("watershed", "pond", "channel", "chain"):
        assert abs(audit[key]) <= 1e-9 * audit["rain"]


def test_controller_queried_each_interval(tiny_plant, storm):
    c = Counting()
    log = simulate(tiny_plant, tiny_plant.initial_state(), c, storm, 3600, 600)
    assert c.times == [0.0, 600.0, 1200.0, 1800.0, 2400.0, 3000.0]
    assert log.n_queries == 6
    assert np.all(log.u == 0.5)


def test_out_of_range_commands_are_clipped(tiny_plant, storm):
    log = simulate(tiny_plant, tiny_plant.initial_state(), Constant(1.7), storm, 1800, 600)
    assert np.all(log.u == 1.0)
    assert log.n_clipped_u == 3


def test_interval_must_be_a_multiple_of_dt(tiny_plant, storm):
    with pytest.raises(ValueError):
        simulate(tiny_plant, tiny_plant.initial_state(), Passive(), storm, 600, 2.5)


def test_simulation_is_deterministic(tiny_plant, storm):
    runs = [simulate(tiny_plant, tiny_plant.initial_state(), Passive(), storm, 3600, 900)
            for _ in range(2)]
    for name in ("q_w", "h_r", "q_r", "h_c_max"):
        np.testing.assert_array_equal(getattr(runs[0], name), getattr(runs[1], name))


def test_dry_system_stays_empty(tiny_plant):
    dry = Forcing(RainSeries(np.zeros(4), 900.0), et=0.0)
    log = simulate(tiny_plant, tiny_plant.initial_state(), Passive(), dry, 3600, 900)
    assert log.q_w.max() == 0 and log.h_r.max() == 0 and log.h_c_max.max() == 0
