"""Active-set non-negative least squares.

Lawson-Hanson style solver returning a KKT point of
``min_{x >= 0} ||A x - b||_2``: the solution is non-negative, the gradient is
non-negative up to tolerance, and complementary slackness holds.
"""

from __future__ import annotations

import numpy as np

__all__ = ["nnls", "kkt_residuals"]


def nnls(A, b, tol: float | None = None, max_iter: int | None = None) -> np.ndarray:
    """Solve ``min_{x >= 0} ||A x - b||_2`` by active-set iteration."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    if b.shape != (m,):
        raise ValueError(f"b must have shape ({m},), got {b.shape}")
    if tol is None:
        tol = 10 * np.finfo(float).eps * max(m, n) * max(1.0, float(np.abs(A).max(initial=0.0)))
    if max_iter is None:
        max_iter = 3 * n

    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    w = A.T @ b
    outer = 0
    while (~passive).any() and np.max(w[~passive], initial=-np.inf) > tol:
        outer += 1
        if outer > max_iter:
            break
        j = int(np.argmax(np.where(passive, -np.inf, w)))
        passive[j] = True
        while True:
            z = np.zeros(n)
            cols = np.flatnonzero(passive)
            z[cols] = np.linalg.lstsq(A[:, cols], b, rcond=None)[0]
            if z[cols].min(initial=1.0) > 0:
                x = z
                break
            # step to the boundary along x -> z, drop the blocking variables
            bad = cols[z[cols] <= 0]
            alpha = np.min(x[bad] / (x[bad] - z[bad]))
            x = x + alpha * (z - x)
            passive[(x <= tol) & passive] = False
            x[~passive] = 0.0
        w = A.T @ (b - A @ x)
    return x


def kkt_residuals(A, b, x) -> tuple[float, float, float]:
    """(negativity, gradient, complementarity) violations of the NNLS KKT system."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    x = np.asarray(x, dtype=float)
    grad = A.T @ (A @ x - b)
    neg = float(max(0.0, -x.min(initial=0.0)))
    grad_violation = float(max(0.0, -grad.min(initial=0.0)))
    comp = float(np.abs(x * grad).max(initial=0.0))
    return neg, grad_violation, comp
