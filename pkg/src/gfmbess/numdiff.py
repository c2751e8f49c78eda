"""Central finite differences."""

from __future__ import annotations

import numpy as np

__all__ = ["fd_step", "fd_jacobian"]


def fd_step(x) -> np.ndarray:
    """Per-component central-difference step ``max(1e-7, 1e-7 |x_j|)``."""
    return np.maximum(1e-7, 1e-7 * np.abs(np.asarray(x, dtype=float)))


def fd_jacobian(fun, x, h=None, *, vectorized: bool = False, extended: bool = False) -> np.ndarray:
    """Central-difference Jacobian of ``fun`` at ``x``.

    With ``vectorized=True`` all ``2n`` perturbed points go to ``fun`` as one
    ``(n, 2n)`` batch.  ``extended=True`` (vectorized only) builds that batch in
    ``np.longdouble`` so the difference quotient loses less to cancellation; it
    needs ``fun`` to propagate the dtype and is a no-op where ``longdouble`` is
    plain double.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    h = fd_step(x) if h is None else np.broadcast_to(np.asarray(h, dtype=float), (n,))
    if vectorized:
        work = np.longdouble if extended else float
        pts = np.repeat(x.astype(work)[:, None], 2 * n, axis=1)
        idx = np.arange(n)
        pts[idx, idx] += h
        pts[idx, n + idx] -= h
        # divide by the step that was actually realized in floating point
        span = pts[idx, idx] - pts[idx, n + idx]
        f = fun(pts)
        return ((f[:, :n] - f[:, n:]) / span).astype(float)
    cols = []
    for j in range(n):
        xp = x.copy()
        xm = x.copy()
        xp[j] += h[j]
        xm[j] -= h[j]
        cols.append((np.asarray(fun(xp), dtype=float) - np.asarray(fun(xm), dtype=float))
                    / (xp[j] - xm[j]))
    return np.column_stack(cols)
