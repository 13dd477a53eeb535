# %% [markdown]
# # MPC solver against brute force
#
# With a two-move horizon the MPC cost is a function of two numbers, so the
# pattern search can be checked against an exhaustive 65 x 65 grid at states
# taken from a passive desk run.

# %%
from __future__ import annotations

import numpy as np

from stormrtc import config
from stormrtc.mpc import MpcConfig, Problem, solve
from stormrtc.plant import simulate
from stormrtc.reactive import Passive

scenario, _ = config.load(config.bundled("desk_two_storms"))
plant = scenario.plant
hours = (6, 10, 11, 14, 16, 28)
keep = {int(h * 3600 / plant.dt) - 1: h for h in hours}
states = {}
simulate(plant, scenario.initial_state(), Passive(), scenario.forcing, 29 * 3600.0, 900.0,
         on_step=lambda k, s: states.__setitem__(keep[k], s.copy()) if k in keep else None)

# %%
cfg = MpcConfig(**{**scenario.controller("mpc").params, "horizon": 2, "control_horizon": 2})
g = np.linspace(0.0, 1.0, 65)
grid = np.array(np.meshgrid(g, g, indexing="ij")).reshape(2, -1).T
for h, state in states.items():
    problem = Problem(plant, state, scenario.forcing, h * 3600.0, cfg, 1.0)
    J = problem(grid)
    res = solve(Problem(plant, state, scenario.forcing, h * 3600.0, cfg, 1.0), np.ones(2),
                np.random.default_rng(h))
    print(f"{h:2d} h  pond {state.res.h:4.2f} m  grid best {J.min():10.4g} at {grid[J.argmin()]}  "
          f"search {res.J:10.4g} at {np.round(res.U, 3)}  ({res.evaluations} evaluations)")

# %% [markdown]
# A cost in the thousands means a flood penalty is unavoidable from that
# state: even a closed valve cannot keep the channel below its limit.
