"""Sample-based boolean collision classifier.

Instead of solving for an impact time, the classifier evaluates the dot
product of the pair's relative offset at the interval start and end, at a few
points of the barycentric domain. A non-positive value at any sample means
the pair may collide this iteration and must stay active. The per-pair cost
is a handful of dot products; no root finding is involved anywhere below.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import point_triangle_closest, segment_segment_closest

# covering radius of a square lattice with spacing s is s/sqrt(2)
_SQRT2 = np.sqrt(2.0)

# default interior patterns; the closest-point projection sample is appended
# separately at query time
_TRI_PATTERNS = {
    1: np.array([[1.0 / 3.0, 1.0 / 3.0]]),
    3: np.array([[1.0 / 6.0, 1.0 / 6.0], [2.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 2.0 / 3.0]]),
    6: np.array(
        [
            [1.0 / 6.0, 1.0 / 6.0],
            [2.0 / 3.0, 1.0 / 6.0],
            [1.0 / 6.0, 2.0 / 3.0],
            [0.5, 0.25],
            [0.25, 0.5],
            [1.0 / 3.0, 1.0 / 3.0],
        ]
    ),
}
_BOX_PATTERNS = {
    1: np.array([[0.5, 0.5]]),
    3: np.array([[0.25, 0.25], [0.5, 0.5], [0.75, 0.75]]),
    6: np.array(
        [
            [0.25, 0.25],
            [0.5, 0.5],
            [0.75, 0.75],
            [0.25, 0.75],
            [0.75, 0.25],
            [0.5, 0.25],
        ]
    ),
}


@dataclass
class SampleSet:
    """Fixed sample points in the pair parameter domain.

    `interval` is the covering radius: the largest distance from any domain
    point to its nearest sample. `includes_projection` marks that the
    closest-point sample is appended per pair at evaluation time.
    """

    vt_points: np.ndarray           # (kv,2) inside the barycentric triangle
    ee_points: np.ndarray           # (ke,2) inside the unit box
    interval: float
    includes_projection: bool = True


def _covering_radius(points: np.ndarray, domain: str, grid: int = 64) -> float:
    """Max distance from a dense domain probe to the nearest sample."""
    u = np.linspace(0.0, 1.0, grid)
    gx, gy = np.meshgrid(u, u)
    probes = np.stack([gx.ravel(), gy.ravel()], axis=1)
    if domain == "triangle":
        probes = probes[probes.sum(axis=1) <= 1.0]
    d = np.linalg.norm(probes[:, None, :] - points[None, :, :], axis=2)
    return float(d.min(axis=1).max())


def default_samples(count: int = 3) -> SampleSet:
    if count not in _TRI_PATTERNS:
        raise ValueError(f"no built-in pattern with {count} samples (choose 1, 3 or 6)")
    vt = _TRI_PATTERNS[count]
    ee = _BOX_PATTERNS[count]
    interval = max(_covering_radius(vt, "triangle"), _covering_radius(ee, "box"))
    return SampleSet(vt_points=vt, ee_points=ee, interval=interval)


def lattice_samples(interval: float, domain: str) -> np.ndarray:
    """Square lattice over the domain with covering radius <= interval."""
    if interval <= 0:
        raise ValueError("sample interval must be positive")
    spacing = interval * _SQRT2
    k = max(int(np.ceil(1.0 / spacing)), 1)
    u = (np.arange(k) + 0.5) / k
    gx, gy = np.meshgrid(u, u)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    if domain == "triangle":
        # fold points above the diagonal back into the lower simplex
        over = pts.sum(axis=1) > 1.0
        pts[over] = 1.0 - pts[over][:, ::-1]
        pts = np.unique(pts, axis=0)
    return pts


def sample_bound(h0: float, h1: float, edge_bound: float, alpha: float) -> float:
    """Sample interval below which no collision (impact before alpha) is missed.

    h0: lower bound on the pair distance at the interval start; h1: upper
    bound on the pair distance during the interval; edge_bound: upper bound on
    the primitive edge lengths; alpha: line-search scale in (0,1).
    """
    if not (h0 > 0 and h1 >= h0 and edge_bound > 0 and 0 < alpha < 1):
        raise ValueError("need h0 > 0, h1 >= h0, edge_bound > 0, 0 < alpha < 1")
    return (1.0 / alpha - 1.0) * h0 * h0 / (2.0 * _SQRT2 * edge_bound * (h1 + 2.0 * edge_bound))


def _param_points(kind, idx, x, lam):
    """Trajectory endpoints p1(lam), p2(lam) for each pair at positions x.

    lam: (m, k, 2) per-pair parameter samples. Returns p1, p2 of shape (m,k,3).
    """
    p = x[idx]                                       # (m,4,3)
    l1 = lam[..., 0:1]
    l2 = lam[..., 1:2]
    vt = (kind == 0)[:, None, None]
    p1 = np.where(vt, p[:, None, 0], p[:, None, 0] + l1 * (p[:, None, 1] - p[:, None, 0]))
    p2_vt = p[:, None, 1] + l1 * (p[:, None, 2] - p[:, None, 1]) + l2 * (p[:, None, 3] - p[:, None, 1])
    p2_ee = p[:, None, 2] + l2 * (p[:, None, 3] - p[:, None, 2])
    p2 = np.where(vt, p2_vt, p2_ee)
    return p1, p2


def query_q(kind, idx, x_start, x_end, lam) -> np.ndarray:
    """Dot product of the pair offset at interval end and start, per sample.

    kind (m,), idx (m,4), lam (m,k,2) or (k,2) shared across pairs.
    Non-positive values are a necessary condition for a collision.
    """
    kind = np.asarray(kind)
    idx = np.asarray(idx)
    lam = np.asarray(lam, dtype=np.float64)
    if lam.ndim == 2:
        lam = np.broadcast_to(lam, (len(kind),) + lam.shape)
    p1_0, p2_0 = _param_points(kind, idx, x_start, lam)
    p1_1, p2_1 = _param_points(kind, idx, x_end, lam)
    return np.einsum("mkj,mkj->mk", p2_1 - p1_1, p2_0 - p1_0)


def partial_ccd(kind, idx, x_start, x_end, samples: SampleSet) -> np.ndarray:
    """True per pair if any sampled query value is non-positive.

    Classification only: a pair flagged True stays active this iteration; it
    never produces an impact time.
    """
    kind = np.asarray(kind)
    idx = np.asarray(idx)
    m = len(kind)
    if m == 0:
        return np.zeros(0, dtype=bool)
    kv = len(samples.vt_points)
    ke = len(samples.ee_points)
    k = max(kv, ke) + (1 if samples.includes_projection else 0)
    lam = np.empty((m, k, 2))
    vt = kind == 0
    # pad shorter patterns by repeating the first point
    lam[vt, : max(kv, ke)] = np.resize(samples.vt_points, (max(kv, ke), 2))
    lam[~vt, : max(kv, ke)] = np.resize(samples.ee_points, (max(kv, ke), 2))
    p_s = x_start[idx]
    p_e = x_end[idx]
    if samples.includes_projection:
        if vt.any():
            q = p_s[vt]
            _, bary, _ = point_triangle_closest(q[:, 0], q[:, 1], q[:, 2], q[:, 3])
            lam[vt, -1] = bary
        if (~vt).any():
            q = p_s[~vt]
            _, _, params, _ = segment_segment_closest(q[:, 0], q[:, 1], q[:, 2], q[:, 3])
            lam[~vt, -1] = params

    # The offset p2(lam) - p1(lam) is affine in (1, l1, l2) with vector
    # coefficients u0, u1, u2 at each interval end, so Q(l) collapses to a
    # quadratic in (l1, l2) with six scalar coefficient fields per pair.
    vtc = vt[:, None]

    def basis(p):
        u0 = np.where(vtc, p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        u1 = np.where(vtc, p[:, 2] - p[:, 1], p[:, 0] - p[:, 1])
        u2 = np.where(vtc, p[:, 3] - p[:, 1], p[:, 3] - p[:, 2])
        return u0, u1, u2

    e = basis(p_e)
    s = basis(p_s)
    dots = [[np.einsum("ma,ma->m", e[i], s[j])[:, None] for j in range(3)] for i in range(3)]
    l1 = lam[:, :, 0]
    l2 = lam[:, :, 1]
    q = (
        dots[0][0]
        + (dots[0][1] + dots[1][0]) * l1
        + (dots[0][2] + dots[2][0]) * l2
        + dots[1][1] * (l1 * l1)
        + (dots[1][2] + dots[2][1]) * (l1 * l2)
        + dots[2][2] * (l2 * l2)
    )
    return (q <= 0.0).any(axis=1)
