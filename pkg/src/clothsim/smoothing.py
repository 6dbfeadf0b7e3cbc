"""Aggregated Jacobi smoothing for the global system.

One aggregated step advances the iterate by two damped Jacobi updates using a
single residual evaluation:

    t  = D^-1 r,            r = b - H x
    x' = x + c (2 t - c D^-1 H t),   c = 1 - omega

which is algebraically identical to applying x <- x + c D^-1 (b - H x) twice.
"""

from __future__ import annotations

import numpy as np

from .constraints import GlobalSystem


class SmootherDivergence(RuntimeError):
    pass


def ajacobi_smooth(
    system: GlobalSystem,
    b: np.ndarray,
    x0: np.ndarray,
    iterations: int,
    omega: float = 0.0,
    diag_delta: np.ndarray | None = None,
) -> np.ndarray:
    """Apply ceil(iterations/2) rank-2 aggregated steps (= `iterations` Jacobi
    updates, rounded up to an even count).

    omega is the SOR-like damping weight; 0 leaves the update undamped. A
    residual growing tenfold over 20 iterations aborts with a hint to raise it.
    """
    H = system.H
    diag = system.diag if diag_delta is None else system.diag + diag_delta
    if (diag <= 0).any():
        raise ValueError("nonpositive diagonal entry")
    c = 1.0 - omega
    inv_d = 1.0 / diag
    if x0.ndim == 2:
        inv_d = inv_d[:, None]
    x = x0.astype(np.float64, copy=True)

    def matvec(v):
        out = H @ v
        if diag_delta is not None:
            out = out + (diag_delta[:, None] if v.ndim == 2 else diag_delta) * v
        return out

    steps = (iterations + 1) // 2
    ref_norm = None
    for k in range(steps):
        r = b - matvec(x)
        if 2 * k % 20 == 0:
            norm = float(np.linalg.norm(r))
            if ref_norm is not None and norm > 10.0 * ref_norm:
                raise SmootherDivergence(
                    f"residual grew from {ref_norm:g} to {norm:g}; raise omega"
                )
            ref_norm = norm
        t = inv_d * r
        x += c * (2.0 * t - c * (inv_d * matvec(t)))
    return x


def jacobi_step(system: GlobalSystem, b, x, omega: float = 0.0, diag_delta=None):
    """Single damped Jacobi update (reference path for the aggregated step)."""
    diag = system.diag if diag_delta is None else system.diag + diag_delta
    inv_d = 1.0 / diag
    if x.ndim == 2:
        inv_d = inv_d[:, None]
    hx = system.H @ x
    if diag_delta is not None:
        hx = hx + (diag_delta[:, None] if x.ndim == 2 else diag_delta) * x
    return x + (1.0 - omega) * (inv_d * (b - hx))
