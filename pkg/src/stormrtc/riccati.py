"""Discrete algebraic Riccati equation and LQ gains."""
from __future__ import annotations

import numpy as np


class RiccatiError(RuntimeError):
    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


def riccati_residual(P, A, B, Q, R) -> float:
    """Frobenius norm of ``A'PA - A'PB (R + B'PB)^-1 B'PA + Q - P``."""
    BtP = B.T @ P
    rhs = A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + BtP @ B, BtP @ A) + Q
    return float(np.linalg.norm(rhs - P))


def lq_gain(P, A, B, R) -> np.ndarray:
    BtP = B.T @ P
    return np.linalg.solve(R + BtP @ B, BtP @ A)


def _matrices(A, B, Q, R):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    B = B.reshape(A.shape[0], -1) if B.ndim < 2 else B
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n, m = B.shape
    if A.shape != (n, n) or Q.shape != (n, n) or R.shape != (m, m):
        raise ValueError("inconsistent dimensions for A, B, Q, R")
    return A, B, Q, R


def solve_dare(A, B, Q, R, tol: float = 1e-10, max_iter: int = 100):
    """Stabilising solution ``P`` and gain ``K`` (``u = -K x``).

    Uses the structure-preserving doubling iteration, which converges
    quadratically for stabilisable and detectable data. Raises
    :class:`RiccatiError` with the last residual when it does not settle.
    """
    A, B, Q, R = _matrices(A, B, Q, R)
    if not np.allclose(R, R.T) or np.any(np.linalg.eigvalsh(0.5 * (R + R.T)) <= 0):
        raise ValueError("R must be symmetric positive definite")
    if np.any(np.linalg.eigvalsh(0.5 * (Q + Q.T)) < -1e-12):
        raise ValueError("Q must be symmetric positive semidefinite")
    n = A.shape[0]
    I = np.eye(n)
    Ak = A.copy()
    G = B @ np.linalg.solve(R, B.T)
    H = 0.5 * (Q + Q.T)
    residual = float("inf")
    for _ in range(max_iter):
        W = I + G @ H
        try:
            WA = np.linalg.solve(W, Ak)
            WG = np.linalg.solve(W, G)
        except np.linalg.LinAlgError:
            raise RiccatiError("singular doubling step; pair may not be stabilisable",
                               residual) from None
        H_next = H + Ak.T @ H @ WA
        G = G + Ak @ WG @ Ak.T
        Ak = Ak @ WA
        H_next = 0.5 * (H_next + H_next.T)
        if not np.all(np.isfinite(H_next)):
            raise RiccatiError("doubling iteration diverged; pair may not be stabilisable",
                               residual)
        change = np.linalg.norm(H_next - H)
        H = H_next
        if change <= tol * max(1.0, np.linalg.norm(H)):
            residual = riccati_residual(H, A, B, Q, R)
            break
    else:
        residual = riccati_residual(H, A, B, Q, R)
        raise RiccatiError(f"no convergence in {max_iter} doubling steps "
                           f"(residual {residual:.3g})", residual)
    K = lq_gain(H, A, B, R)
    if np.max(np.abs(np.linalg.eigvals(A - B @ K))) >= 1.0:
        raise RiccatiError("solution is not stabilising; pair may not be stabilisable", residual)
    return H, K


def lift(A, B, steps: int):
    """Zero-order-hold lifting of ``x+ = A x + B u`` over ``steps`` steps."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    A_n = np.eye(A.shape[0])
    B_n = np.zeros_like(B)
    for _ in range(steps):
        B_n = A @ B_n + B
        A_n = A @ A_n
    return A_n, B_n
