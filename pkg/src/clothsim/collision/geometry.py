"""Closest-point queries between cloth primitives, batched over pairs."""

from __future__ import annotations

import numpy as np

_EPS = 1e-14


def point_triangle_closest(p: np.ndarray, t0: np.ndarray, t1: np.ndarray, t2: np.ndarray):
    """Closest point on each triangle (t0,t1,t2) to each point p.

    Inputs are (m,3). Returns (closest (m,3), bary (m,2), distance (m,)),
    bary = (b1, b2) for t0 + b1*(t1-t0) + b2*(t2-t0), clamped to the triangle.
    """
    p, t0, t1, t2 = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (p, t0, t1, t2))
    ab = t1 - t0
    ac = t2 - t0
    ap = p - t0

    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - t1
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - t2
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    m = len(p)
    b1 = np.zeros(m)
    b2 = np.zeros(m)
    done = np.zeros(m, dtype=bool)

    # vertex regions
    reg_a = (d1 <= 0) & (d2 <= 0)
    done |= reg_a
    reg_b = ~done & (d3 >= 0) & (d4 <= d3)
    b1[reg_b] = 1.0
    done |= reg_b
    reg_c = ~done & (d6 >= 0) & (d5 <= d6)
    b2[reg_c] = 1.0
    done |= reg_c

    # edge AB
    vc = d1 * d4 - d3 * d2
    reg_ab = ~done & (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    denom = d1 - d3
    v = np.divide(d1, denom, out=np.zeros(m), where=np.abs(denom) > _EPS)
    b1[reg_ab] = v[reg_ab]
    done |= reg_ab

    # edge AC
    vb = d5 * d2 - d1 * d6
    reg_ac = ~done & (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    denom = d2 - d6
    w = np.divide(d2, denom, out=np.zeros(m), where=np.abs(denom) > _EPS)
    b2[reg_ac] = w[reg_ac]
    done |= reg_ac

    # edge BC
    va = d3 * d6 - d5 * d4
    reg_bc = ~done & (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
    denom = (d4 - d3) + (d5 - d6)
    w = np.divide(d4 - d3, denom, out=np.zeros(m), where=np.abs(denom) > _EPS)
    b1[reg_bc] = 1.0 - w[reg_bc]
    b2[reg_bc] = w[reg_bc]
    done |= reg_bc

    # interior
    inside = ~done
    denom = va + vb + vc
    inv = np.divide(1.0, denom, out=np.zeros(m), where=np.abs(denom) > _EPS)
    b1[inside] = (vb * inv)[inside]
    b2[inside] = (vc * inv)[inside]

    closest = t0 + b1[:, None] * ab + b2[:, None] * ac
    dist = np.linalg.norm(p - closest, axis=1)
    return closest, np.stack([b1, b2], axis=1), dist


def segment_segment_closest(a0, a1, b0, b1):
    """Closest points between segments (a0,a1) and (b0,b1), batched (m,3).

    Returns (pa (m,3), pb (m,3), params (m,2), distance (m,)). Parallel edges
    clamp to endpoint-segment closest points.
    """
    a0, a1, b0, b1 = (np.atleast_2d(np.asarray(v, dtype=np.float64)) for v in (a0, a1, b0, b1))
    d1 = a1 - a0
    d2 = b1 - b0
    r = a0 - b0
    a = np.einsum("ij,ij->i", d1, d1)
    e = np.einsum("ij,ij->i", d2, d2)
    f = np.einsum("ij,ij->i", d2, r)
    c = np.einsum("ij,ij->i", d1, r)
    b = np.einsum("ij,ij->i", d1, d2)
    denom = a * e - b * b

    s = np.divide(b * f - c * e, denom, out=np.zeros_like(a), where=denom > _EPS * np.maximum(a * e, 1.0))
    s = np.clip(s, 0.0, 1.0)
    t = np.divide(b * s + f, e, out=np.zeros_like(a), where=e > _EPS)
    t_clamped = np.clip(t, 0.0, 1.0)
    # re-derive s where t was clamped
    moved = t != t_clamped
    s_new = np.divide(b * t_clamped - c, a, out=np.zeros_like(a), where=a > _EPS)
    s = np.where(moved, np.clip(s_new, 0.0, 1.0), s)
    t = t_clamped

    pa = a0 + s[:, None] * d1
    pb = b0 + t[:, None] * d2
    dist = np.linalg.norm(pa - pb, axis=1)
    return pa, pb, np.stack([s, t], axis=1), dist


def pair_witness(kind, idx, x):
    """Closest-point witness for collision pairs at positions x.

    kind: (m,) 0 = vertex-triangle, 1 = edge-edge; idx: (m,4) vertex ids
    (VT: vertex, tri0, tri1, tri2; EE: a0, a1, b0, b1).
    Returns (point_on_first (m,3), point_on_second (m,3), bary (m,2), dist (m,)).

    For VT the "first" primitive is the vertex; bary parameterizes the triangle.
    For EE, bary = (s on edge a, t on edge b).
    """
    kind = np.asarray(kind)
    idx = np.asarray(idx)
    m = len(kind)
    p1 = np.zeros((m, 3))
    p2 = np.zeros((m, 3))
    bary = np.zeros((m, 2))
    dist = np.zeros(m)
    vt = kind == 0
    if vt.any():
        iv = idx[vt]
        closest, bb, dd = point_triangle_closest(x[iv[:, 0]], x[iv[:, 1]], x[iv[:, 2]], x[iv[:, 3]])
        p1[vt] = x[iv[:, 0]]
        p2[vt] = closest
        bary[vt] = bb
        dist[vt] = dd
    ee = kind == 1
    if ee.any():
        ie = idx[ee]
        pa, pb, params, dd = segment_segment_closest(x[ie[:, 0]], x[ie[:, 1]], x[ie[:, 2]], x[ie[:, 3]])
        p1[ee] = pa
        p2[ee] = pb
        bary[ee] = params
        dist[ee] = dd
    return p1, p2, bary, dist
