"""Independent validation oracles.

These deliberately avoid the production collision code paths: intersection
uses a separating-axis test (float and exact rational variants), and the
impact-time oracle uses dense time sampling with bisection refinement. Tests
compare the fast implementations against these.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from .subspace import Subspace, spectrum


# ---------------------------------------------------------------------------
# triangle-triangle intersection (separating axis test)

def _sat_axes(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """All candidate separating axes for triangle batches p, q of shape (m,3,3)."""
    ep = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
    eq = np.stack([q[:, 1] - q[:, 0], q[:, 2] - q[:, 1], q[:, 0] - q[:, 2]], axis=1)
    np_n = np.cross(ep[:, 0], ep[:, 1])[:, None, :]
    nq_n = np.cross(eq[:, 0], eq[:, 1])[:, None, :]
    cross = np.cross(ep[:, :, None, :], eq[:, None, :, :]).reshape(len(p), 9, 3)
    inplane_p = np.cross(np_n, ep)
    inplane_q = np.cross(nq_n, eq)
    return np.concatenate([np_n, nq_n, cross, inplane_p, inplane_q], axis=1)  # (m,17,3)


def tri_tri_intersect(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Boolean per pair; True when the (closed) triangles intersect.

    p, q: (m,3,3) triangle vertex batches. Touching counts as intersecting.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.ndim == 2:
        p, q = p[None], q[None]
    axes = _sat_axes(p, q)
    scale = np.abs(np.concatenate([p, q], axis=1)).max(axis=(1, 2)) + 1.0
    usable = np.linalg.norm(axes, axis=2) > 1e-14 * scale[:, None] ** 2
    proj_p = np.einsum("maj,mvj->mav", axes, p)
    proj_q = np.einsum("maj,mvj->mav", axes, q)
    sep = (proj_p.max(axis=2) < proj_q.min(axis=2)) | (proj_q.max(axis=2) < proj_p.min(axis=2))
    return ~(sep & usable).any(axis=1)


def tri_tri_intersect_exact(p, q) -> bool:
    """Rational-arithmetic separating axis test for one triangle pair."""
    P = [[Fraction(float(c)) for c in v] for v in p]
    Q = [[Fraction(float(c)) for c in v] for v in q]

    def sub(a, b):
        return [a[0] - b[0], a[1] - b[1], a[2] - b[2]]

    def cross(a, b):
        return [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]

    def dot(a, b):
        return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]

    ep = [sub(P[1], P[0]), sub(P[2], P[1]), sub(P[0], P[2])]
    eq = [sub(Q[1], Q[0]), sub(Q[2], Q[1]), sub(Q[0], Q[2])]
    n_p = cross(ep[0], ep[1])
    n_q = cross(eq[0], eq[1])
    axes = [n_p, n_q]
    axes += [cross(a, b) for a in ep for b in eq]
    axes += [cross(n_p, e) for e in ep]
    axes += [cross(n_q, e) for e in eq]
    for axis in axes:
        if axis[0] == 0 and axis[1] == 0 and axis[2] == 0:
            continue
        dp = [dot(axis, v) for v in P]
        dq = [dot(axis, v) for v in Q]
        if max(dp) < min(dq) or max(dq) < min(dp):
            return False
    return True


def oracle_intersect(x: np.ndarray, triangles: np.ndarray, chunk: int = 512) -> np.ndarray:
    """All intersecting triangle pairs at positions x, as an (k,2) index array.

    Exhaustive over every pair; the AABB prefilter is a pure optimization (a
    pair it discards has disjoint bounds and cannot intersect). Pairs sharing
    a vertex are skipped — adjacent triangles touch by construction.
    """
    x = np.asarray(x, dtype=np.float64)
    triangles = np.asarray(triangles, dtype=np.int64)
    m = len(triangles)
    pts = x[triangles]                                   # (m,3,3)
    lo = pts.min(axis=1)
    hi = pts.max(axis=1)
    # sort boxes along x so each chunk only scans the slab it can reach
    order = np.argsort(lo[:, 0], kind="stable")
    lo = lo[order]
    hi = hi[order]
    pts = pts[order]
    tris_sorted = triangles[order]
    hits = []
    for start in range(0, m, chunk):
        stop = min(start + chunk, m)
        rows = np.arange(start, stop)
        jmax = int(np.searchsorted(lo[:, 0], hi[rows, 0].max(), side="right"))
        cols = np.arange(start, jmax)
        if not len(cols):
            continue
        overlap = (
            (lo[rows, None] <= hi[None, cols]) & (lo[None, cols] <= hi[rows, None])
        ).all(axis=2)
        ii, jj = np.nonzero(overlap)
        ii = rows[ii]
        jj = cols[jj]
        keep = jj > ii                                    # each unordered pair once
        ii, jj = ii[keep], jj[keep]
        if not len(ii):
            continue
        shared = (tris_sorted[ii][:, :, None] == tris_sorted[jj][:, None, :]).any(axis=(1, 2))
        ii, jj = ii[~shared], jj[~shared]
        if not len(ii):
            continue
        inter = tri_tri_intersect(pts[ii], pts[jj])
        if inter.any():
            hits.append(np.stack([order[ii[inter]], order[jj[inter]]], axis=1))
    if not hits:
        return np.zeros((0, 2), dtype=np.int64)
    out = np.concatenate(hits)
    out.sort(axis=1)
    return out


# ---------------------------------------------------------------------------
# dense time-sampling impact oracle

def _closest_distance(kind: int, pts: np.ndarray) -> float:
    """Minimum distance of one primitive pair, brute parameter sampling."""
    grid = np.linspace(0.0, 1.0, 33)
    if kind == 0:
        v, t0, t1, t2 = pts
        u, w = np.meshgrid(grid, grid, indexing="ij")
        mask = u + w <= 1.0
        surf = t0 + u[mask, None] * (t1 - t0) + w[mask, None] * (t2 - t0)
        return float(np.linalg.norm(surf - v, axis=1).min())
    a0, a1, b0, b1 = pts
    s, t = np.meshgrid(grid, grid, indexing="ij")
    pa = a0 + s.ravel()[:, None] * (a1 - a0)
    pb = b0 + t.ravel()[:, None] * (b1 - b0)
    return float(np.linalg.norm(pa - pb, axis=1).min())


def _signed_volume(kind: int, pts: np.ndarray) -> float:
    """Signed coplanarity measure of one pair configuration (4,3)."""
    if kind == 0:
        v, t0, t1, t2 = pts
        return float(np.dot(np.cross(t1 - t0, t2 - t0), v - t0))
    a0, a1, b0, b1 = pts
    return float(np.dot(np.cross(a1 - a0, b1 - b0), b0 - a0))


def oracle_ccd(kind: int, idx, x_start: np.ndarray, x_end: np.ndarray, substeps: int = 256):
    """Earliest impact time of one pair by dense sampling, or None.

    Looks for sign changes of the coplanarity volume over uniform samples,
    refines each by bisection, and accepts the first whose configuration is
    an actual near-contact. Also catches persistent-coplanar paths by distance.
    """
    if substeps < 256:
        raise ValueError("substeps must be at least 256")
    idx = np.asarray(idx).reshape(4)
    p0 = x_start[idx]
    p1 = x_end[idx]
    scale = float(np.linalg.norm(np.concatenate([p0, p1]), axis=1).max()) + 1.0
    tol = 1e-6 * scale

    def at(t):
        return (1.0 - t) * p0 + t * p1

    ts = np.linspace(0.0, 1.0, substeps + 1)
    vols = np.array([_signed_volume(kind, at(t)) for t in ts])
    flat = np.abs(vols).max() <= 1e-12 * scale ** 3
    if flat:
        for t in ts[1:]:
            if _closest_distance(kind, at(t)) <= tol:
                return float(t)
        return None
    for i in range(substeps):
        a, b = ts[i], ts[i + 1]
        fa, fb = vols[i], vols[i + 1]
        if fa == 0.0 and i > 0:
            root = a
        elif fa * fb > 0.0:
            continue
        else:
            root = None
        if root is None:
            for _ in range(80):
                mid = 0.5 * (a + b)
                fm = _signed_volume(kind, at(mid))
                if fa * fm <= 0.0:
                    b, fb = mid, fm
                else:
                    a, fa = mid, fm
            root = 0.5 * (a + b)
        if root > 0.0 and _closest_distance(kind, at(root)) <= tol:
            return float(root)
    return None


# ---------------------------------------------------------------------------
# modal residual report

def spectrum_report(residual: np.ndarray, sub: Subspace, modes: int):
    """Rows (mode index, |U_m . residual|) for the first `modes` modes."""
    coeffs = spectrum(sub, residual, modes)
    return [(m + 1, float(c)) for m, c in enumerate(coeffs)]
