from __future__ import annotations

import numpy as np
import pytest

from stormrtc import channel as ch
from stormrtc import config
from stormrtc import reservoir as rs
from stormrtc import watershed as ws
from stormrtc.plant import Plant


@pytest.fixture
def tiny_grid():
    """5 x 5 V-tilted catchment with consistent conveyance."""
    return ws.v_tilted_grid(5, 5, 20.0, 20.0, k_f=ws.consistent_k_f(20.0, 20.0))


@pytest.fixture
def pond():
    return rs.ReservoirSpec()


@pytest.fixture
def tiny_plant(tiny_grid, pond):
    return Plant(tiny_grid, pond, ch.ChannelSpec.uniform(5, length=30.0), dt=1.0)


@pytest.fixture(scope="session")
def desk():
    scenario, findings = config.load(config.bundled("desk_two_storms"))
    assert scenario is not None, findings
    return scenario


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture
def acceptance_lines(request):
    """Criterion number -> result line, echoed in the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE_KEY, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
