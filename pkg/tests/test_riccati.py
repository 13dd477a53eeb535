from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from stormrtc.riccati import RiccatiError, lift, riccati_residual, solve_dare

GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0


def random_pair(rng, n, m):
    A = rng.normal(size=(n, n))
    A *= rng.uniform(0.3, 1.4) / max(np.abs(np.linalg.eigvals(A)).max(), 1e-9)
    B = rng.normal(size=(n, m))
    L = rng.normal(size=(n, n))
    Q = L @ L.T + 0.1 * np.eye(n)
    M = rng.normal(size=(m, m))
    R = M @ M.T + 0.5 * np.eye(m)
    return A, B, Q, R


def test_scalar_golden_ratio():
    P, K = solve_dare(1.0, 1.0, 1.0, 1.0)
    assert P[0, 0] == pytest.approx(GOLDEN, abs=1e-6)
    assert K[0, 0] == pytest.approx(GOLDEN - 1.0, abs=1e-6)


def test_random_pairs_against_scipy(rng):
    for k in range(50):
        n = 1 + k % 3
        A, B, Q, R = random_pair(rng, n, 1 + k % 2)
        P, K = solve_dare(A, B, Q, R)
        ref = scipy.linalg.solve_discrete_are(A, B, Q, R)
        np.testing.assert_allclose(P, ref, rtol=1e-7, atol=1e-9)
        assert riccati_residual(P, A, B, Q, R) <= 1e-10 * max(1.0, np.linalg.norm(P))
        assert np.abs(np.linalg.eigvals(A - B @ K)).max() < 1.0


@settings(max_examples=60, deadline=None)
@given(a=st.floats(-1.5, 1.5), b=st.floats(0.05, 3.0), q=st.floats(0.01, 10.0),
       r=st.floats(0.01, 10.0))
def test_scalar_root(a, b, q, r):
    # stabilising root of b^2 P^2 + (r (1 - a^2) - q b^2) P - q r = 0
    c1 = r * (1 - a * a) - q * b * b
    root = (-c1 + np.sqrt(c1 * c1 + 4 * b * b * q * r)) / (2 * b * b)
    P, K = solve_dare(a, b, q, r)
    assert P[0, 0] == pytest.approx(root, rel=1e-8, abs=1e-10)
    assert abs(a - b * K[0, 0]) < 1.0


def test_unstabilisable_pair_raises():
    with pytest.raises(RiccatiError):
        solve_dare(np.diag([1.2, 0.5]), np.array([[0.0], [1.0]]), np.eye(2), [[1.0]])


def test_weights_are_checked():
    with pytest.raises(ValueError, match="R must be"):
        solve_dare(1.0, 1.0, 1.0, 0.0)
    with pytest.raises(ValueError, match="Q must be"):
        solve_dare(1.0, 1.0, -1.0, 1.0)


def test_lift_matches_recursion(rng):
    A = rng.normal(size=(3, 3)) * 0.4
    B = rng.normal(size=(3, 1))
    An, Bn = lift(A, B, 7)
    x, u = rng.normal(size=3), 0.7
    y = x.copy()
    for _ in range(7):
        y = A @ y + B[:, 0] * u
    np.testing.assert_allclose(An @ x + Bn[:, 0] * u, y, rtol=1e-12)
