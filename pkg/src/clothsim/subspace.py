"""Rest-shape eigenbasis solves for the global stage.

The basis is computed once from the elastic-only matrix. Collision activity
only perturbs the diagonal, so the reduced matrix update is a weighted sum of
precomputed per-vertex rank-one blocks, and stays cheap regardless of mesh
size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .constraints import GlobalSystem


class EigensolverError(RuntimeError):
    pass


@dataclass
class Subspace:
    """Eigenbases of the elastic global matrix over free vertices.

    U (warm-start basis, width r_bar) is orthonormal with U^T H U diagonal;
    V is its first r columns. Collision-time reduced updates sum per-vertex
    rank-one terms w_j V_j V_j^T assembled on the fly from the rows of V.
    """

    U: np.ndarray                   # (nf, r_bar)
    eigenvalues: np.ndarray         # (r_bar,), ascending
    r: int
    UHX: np.ndarray                 # (r_bar, 3) precomputed U^T H X
    VHX: np.ndarray                 # (r, 3)
    rest: np.ndarray                # (nf, 3) rest positions of free vertices

    @property
    def V(self) -> np.ndarray:
        return self.U[:, : self.r]

    @property
    def eigenvalues_r(self) -> np.ndarray:
        return self.eigenvalues[: self.r]


def build_subspace(system: GlobalSystem, rest: np.ndarray, r_bar: int, r: int) -> Subspace:
    """Smallest-r_bar eigenpairs of H by shift-invert iteration.

    Falls back to a dense solve for tiny systems where the iterative solver
    cannot honor k < n.
    """
    H = system.H
    n = H.shape[0]
    if not (0 < r <= r_bar <= n):
        raise ValueError("need 0 < r <= r_bar <= n")
    if r_bar >= n - 1:
        w, vecs = np.linalg.eigh(H.toarray())
        w, vecs = w[:r_bar], vecs[:, :r_bar]
    else:
        try:
            # fixed start vector keeps the basis (and downstream frames)
            # bitwise reproducible across runs
            v0 = np.random.default_rng(0).standard_normal(n)
            w, vecs = spla.eigsh(H, k=r_bar, sigma=0.0, which="LM", v0=v0)
        except (spla.ArpackNoConvergence, RuntimeError) as err:
            raise EigensolverError(f"shift-invert eigensolver failed: {err}") from err
        order = np.argsort(w)
        w, vecs = w[order], vecs[:, order]
    if (w <= 0).any():
        raise EigensolverError(f"nonpositive eigenvalue {w.min():g}: H is not SPD")

    V = vecs[:, :r]
    HX = H @ rest
    return Subspace(
        U=vecs,
        eigenvalues=w,
        r=r,
        UHX=vecs.T @ HX,
        VHX=V.T @ HX,
        rest=rest.copy(),
    )


def subspace_solve_free(sub: Subspace, b: np.ndarray) -> np.ndarray:
    """Solve the elastic global system in the warm-start basis.

    Exact Galerkin solve relative to the rest pose: the reduced residual
    U^T (b - H x) vanishes for the returned x.
    """
    q = (sub.U.T @ b - sub.UHX) / sub.eigenvalues[:, None]
    return sub.rest + sub.U @ q


def reduced_update(sub: Subspace, active_vertices: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted sum of rank-one blocks: the reuse-basis image of the collision
    diagonal. Cost scales with the active count and r^2, never with mesh size."""
    if len(active_vertices) == 0:
        return np.zeros((sub.r, sub.r))
    w = np.asarray(weights, dtype=np.float64)
    if (w < 0).any():
        raise ValueError("collision weights must be nonnegative")
    rows = sub.V[active_vertices]
    return rows.T @ (w[:, None] * rows)


@dataclass
class ReducedSystem:
    """r x r collision-corrected system with its scaled approximate inverse."""

    A: np.ndarray
    inverse: np.ndarray             # X with A X = (1/beta) Id
    beta: float
    used_fallback: bool = False

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self.beta * (self.inverse @ rhs)


def build_reduced(sub: Subspace, delta_reduced: np.ndarray, rhs_scale: float) -> ReducedSystem:
    """Factor the reduced matrix via the scaled-inverse trick.

    beta tracks the magnitude of the right-hand side so the inverse's entries
    stay near unity; a residual check falls back to a pivoted direct solve
    when the approximation degrades.
    """
    A = np.diag(sub.eigenvalues_r) + delta_reduced
    beta = rhs_scale if rhs_scale > 0 else 1.0
    try:
        lu, piv = sla.lu_factor(A)
        inverse = sla.lu_solve((lu, piv), np.eye(sub.r) / beta)
    except sla.LinAlgError:
        return ReducedSystem(A=A, inverse=np.linalg.pinv(A) / beta, beta=beta, used_fallback=True)
    resid = np.abs(A @ (beta * inverse) - np.eye(sub.r)).max()
    if not np.isfinite(resid) or resid > 1e-4:
        inverse = np.linalg.pinv(A) / beta
        return ReducedSystem(A=A, inverse=inverse, beta=beta, used_fallback=True)
    return ReducedSystem(A=A, inverse=inverse, beta=beta)


def subspace_solve_reuse(
    sub: Subspace,
    b: np.ndarray,
    active_vertices: np.ndarray,
    weights: np.ndarray,
) -> np.ndarray:
    """Solve the collision-corrected system in the reuse basis.

    Returns the rest pose plus the reduced displacement; the only mesh-size
    dependent work is the two tall projections.
    """
    delta = reduced_update(sub, active_vertices, weights)
    V = sub.V
    rhs = V.T @ b - sub.VHX
    if len(active_vertices):
        # V^T (Delta H) X with a diagonal Delta H touches only active rows
        rhs -= V[active_vertices].T @ (weights[:, None] * sub.rest[active_vertices])
    reduced = build_reduced(sub, delta, float(np.abs(rhs).mean()))
    q = reduced.solve(rhs)
    return sub.rest + V @ q


def reduced_correction(
    sub: Subspace,
    system: GlobalSystem,
    b: np.ndarray,
    x: np.ndarray,
    diag_delta: np.ndarray,
    reduced: ReducedSystem | None = None,
) -> tuple[np.ndarray, ReducedSystem]:
    """Coarse-level correction of the current iterate.

    Galerkin step in the reuse basis around x (rather than the rest pose), so
    components of x outside the basis are preserved; the smoother handles
    them. Returns (corrected x, reduced system for reuse within an iteration).
    """
    residual = b - system.H @ x - diag_delta[:, None] * x
    rhs = sub.V.T @ residual
    if reduced is None:
        active = np.flatnonzero(diag_delta)
        delta = reduced_update(sub, active, diag_delta[active])
        reduced = build_reduced(sub, delta, float(np.abs(rhs).mean()))
    q = reduced.solve(rhs)
    return x + sub.V @ q, reduced


def warmstart_correction(sub: Subspace, system: GlobalSystem, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Galerkin correction in the full warm-start basis (elastic system only)."""
    rhs = sub.U.T @ (b - system.H @ x)
    return x + sub.U @ (rhs / sub.eigenvalues[:, None])


def spectrum(sub: Subspace, residual: np.ndarray, modes: int) -> np.ndarray:
    """Per-mode magnitudes |U_m . residual| for the first `modes` modes."""
    if modes > sub.U.shape[1]:
        raise ValueError("more modes requested than the basis holds")
    coeff = sub.U[:, :modes].T @ residual
    if coeff.ndim == 2:
        return np.linalg.norm(coeff, axis=1)
    return np.abs(coeff)
