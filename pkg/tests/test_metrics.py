from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stormrtc import metrics as mt


def test_flood_duration_counts_strict_exceedance():
    h = np.array([0.0, 1.8, 1.9, 2.0] + [2.5] * 8 + [1.0])
    assert mt.flood_duration(h, 1.8, 60.0) == pytest.approx(10 / 60)


def test_flood_duration_uses_the_deepest_reach():
    h = np.array([[0.1, 2.0], [2.0, 0.1], [0.1, 0.1]])
    assert mt.flood_duration(h, 1.8, 3600.0) == pytest.approx(2.0)


def test_exceedance_probabilities():
    x, p = mt.exceedance_curve([2.0, 5.0, 1.0])
    np.testing.assert_array_equal(x, [5.0, 2.0, 1.0])
    np.testing.assert_allclose(p, [0.25, 0.5, 0.75])
    with pytest.raises(ValueError):
        mt.exceedance_curve([])


def test_control_effort():
    assert mt.control_effort([0, 1, 0, 1, 0]) == 4.0
    assert mt.control_effort(np.ones(100)) == 0.0
    rel = mt.relative_control_effort({"passive": np.ones(5), "a": [0, 1, 0], "b": [0, 0.5, 0.5]})
    assert rel == {"passive": 0.0, "a": 1.0, "b": 0.25}
    assert mt.relative_control_effort({"passive": np.ones(3)}) == {"passive": 0.0}


def test_peak_reduction_and_windows():
    q_in = np.array([0.0, 10.0, 0.0, 0.0, 4.0, 0.0])
    q_out = np.array([0.0, 2.0, 5.0, 0.0, 1.0, 3.0])
    assert mt.peak_flow_reduction(q_in, q_out) == pytest.approx(0.5)
    w1, w2 = mt.MetricsWindow(0, 3), mt.MetricsWindow(3, 6)
    assert mt.peak_flow_reduction(q_in, q_out, w1) == pytest.approx(0.5)
    assert mt.peak_flow_reduction(q_in, q_out, w2) == pytest.approx(0.25)
    assert np.isnan(mt.peak_flow_reduction(np.zeros(3), np.zeros(3)))


def test_relative_depth():
    assert mt.relative_max_flood_depth([0.9, 2.7, 1.0], 1.8) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        mt.relative_max_flood_depth([1.0], 0.0)


@pytest.mark.parametrize("kb,kf,lim", [(3, 3, 1.0), (4, 2, 1.0), (0, 2, -1.0)])
def test_window_validation(kb, kf, lim):
    with pytest.raises(ValueError):
        mt.MetricsWindow(kb, kf, lim)


@settings(max_examples=100, deadline=None)
@given(arrays(float, st.integers(1, 60), elements=st.floats(0, 10)))
def test_exceedance_curve_is_monotone(x):
    v, p = mt.exceedance_curve(x)
    assert np.all(np.diff(v) <= 0) and np.all(np.diff(p) > 0)
    assert 0 < p[0] and p[-1] < 1


@settings(max_examples=100, deadline=None)
@given(arrays(float, st.integers(2, 40), elements=st.floats(0, 1)), st.floats(0.1, 2.0))
def test_scaling_effort_scales_linearly(u, s):
    assert mt.control_effort(s * u) == pytest.approx(s * mt.control_effort(u), abs=1e-9)


class _Log:
    def __init__(self, name, u, q_w, q_r, h):
        self.controller, self.u, self.q_w, self.q_r, self.h_c_max = name, u, q_w, q_r, h
        self.dt = 3600.0


def test_comparison_tables():
    q_w = np.array([0.0, 4.0, 0.0, 2.0])
    logs = [_Log("passive", np.ones(4), q_w, np.array([0, 2.0, 1, 1]), np.array([0, 1, 2, 1.0])),
            _Log("onoff", np.array([0, 1, 0, 1.0]), q_w, np.array([0, 1.0, 1, 0.5]),
                 np.array([0, 1, 1, 1.0]))]
    rows = mt.compare(logs, [mt.MetricsWindow(0, 2), mt.MetricsWindow(2, 4)], 1.8)
    assert rows[0].flood_duration_h == 1.0 and rows[1].flood_duration_h == 0.0
    assert rows[1].relative_control_effort == 1.0 and rows[0].relative_control_effort == 0.0
    assert rows[1].peak_reduction == pytest.approx([0.75, 0.5])
    csv_lines = mt.table_csv(rows).splitlines()
    assert csv_lines[0].startswith("controller,peak_reduction_1_pct,peak_reduction_2_pct")
    assert csv_lines[2] == "onoff,75.00,50.00,55.56,100.00,0.00"
    text = mt.table_text(rows).splitlines()
    assert len(text) == 3 and len({len(line) for line in text}) == 1
    curve = mt.duration_curve_csv({"a": np.array([1.0, 2.0]), "b": np.array([3.0])})
    assert curve.splitlines() == ["a_value,a_exceedance,b_value,b_exceedance",
                                  "2,0.333333,3,0.5", "1,0.666667,,"]
