"""Continuous collision detection via cubic coplanarity root finding.

Primitive trajectories are linear within the step, so the scalar coplanarity
test (triple product) is cubic in time. Roots are isolated on monotone
intervals (split at the derivative's roots) and refined by bisection, then
validated with an inflated inside test. Ambiguity is resolved conservatively:
a grazing or near-degenerate candidate is reported as a hit.
"""

from __future__ import annotations

import numpy as np

from .geometry import point_triangle_closest, segment_segment_closest, pair_witness

# inside-test inflation: false positives allowed, false negatives not
_BARY_TOL = 1e-8
_BISECT_ITERS = 80

# monomial coefficients from samples at t = 0, 1/3, 2/3, 1 (exact for cubics)
_NODES = np.array([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0])
_FIT = np.linalg.inv(np.vander(_NODES, 4, increasing=True))


def _gather(kind: np.ndarray, idx: np.ndarray, x: np.ndarray):
    """Rows (u, v, w) whose triple product u x v . w is the coplanarity value."""
    p = x[idx]                      # (m,4,3)
    vt = (kind == 0)[:, None]
    # VT: (t1-t0) x (t2-t0) . (p-t0);  EE: (a1-a0) x (b1-b0) . (b0-a0)
    u = np.where(vt, p[:, 2] - p[:, 1], p[:, 1] - p[:, 0])
    v = np.where(vt, p[:, 3] - p[:, 1], p[:, 3] - p[:, 2])
    w = np.where(vt, p[:, 0] - p[:, 1], p[:, 2] - p[:, 0])
    return u, v, w


def coplanarity_coefficients(kind, idx, x_start, x_end) -> np.ndarray:
    """Monomial coefficients (m,4), lowest order first, of the coplanarity cubic."""
    samples = []
    for t in _NODES:
        xt = (1.0 - t) * x_start + t * x_end
        u, v, w = _gather(kind, idx, xt)
        samples.append(np.einsum("ij,ij->i", np.cross(u, v), w))
    f = np.stack(samples, axis=1)       # (m,4) values at the nodes
    return f @ _FIT.T


def _poly_eval(c: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Evaluate per-pair cubics; c is (m,4), t broadcasts against (m, ...)."""
    c0, c1, c2, c3 = (c[:, j].reshape((-1,) + (1,) * (t.ndim - 1)) for j in range(4))
    return c0 + t * (c1 + t * (c2 + t * c3))


def _candidate_roots(c: np.ndarray) -> np.ndarray:
    """Coplanarity-root candidates per pair in (0,1], padded with nan.

    Up to 3 bisection roots (one per monotone interval, split at the
    derivative's roots) plus up to 2 tangency candidates at the breakpoints
    themselves, since double roots produce no sign change.
    """
    m = len(c)
    # derivative roots -> monotone breakpoints
    a, b, lin = 3.0 * c[:, 3], 2.0 * c[:, 2], c[:, 1]
    quad = np.abs(a) > 0
    disc = b * b - 4.0 * a * lin
    ok = quad & (disc >= 0)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = np.where(ok, (-b - sq) / (2.0 * a), np.nan)
        r2 = np.where(ok, (-b + sq) / (2.0 * a), np.nan)
        rlin = np.where(~quad & (np.abs(b) > 0), -lin / b, np.nan)
    breaks = np.stack(
        [np.where(quad, np.minimum(r1, r2), rlin), np.where(quad, np.maximum(r1, r2), np.nan)],
        axis=1,
    )
    breaks[~((breaks > 0.0) & (breaks < 1.0))] = np.nan
    breaks = np.sort(breaks, axis=1)     # valid breakpoints first, nan last

    # monotone interval bounds, 0 <= b1 <= b2 <= 1 per pair
    b1 = np.where(np.isnan(breaks[:, 0]), 1.0, breaks[:, 0])
    b2 = np.where(np.isnan(breaks[:, 1]), b1, np.maximum(breaks[:, 1], b1))
    lo = np.stack([np.zeros(m), b1, b2], axis=1)
    hi = np.stack([b1, b2, np.ones(m)], axis=1)

    f_lo = _poly_eval(c, lo)
    f_hi = _poly_eval(c, hi)
    sign_change = (hi > lo) & (f_lo * f_hi < 0)
    # exact zero at an interior interval endpoint is itself a root
    endpoint_root = (hi > lo) & (f_hi == 0)

    llo, lhi = lo.copy(), hi.copy()
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (llo + lhi)
        f_mid = _poly_eval(c, mid)
        go_right = sign_change & (np.sign(f_mid) == np.sign(f_lo))
        llo = np.where(go_right, mid, llo)
        f_lo = np.where(go_right, f_mid, f_lo)
        lhi = np.where(sign_change & ~go_right, mid, lhi)
    roots = np.full((m, 5), np.nan)
    roots[:, :3] = np.where(sign_change, 0.5 * (llo + lhi), np.where(endpoint_root, hi, np.nan))

    # tangency candidates: breakpoints where |f| is tiny relative to scale
    scale = np.abs(c).sum(axis=1) + 1e-300
    for j in range(2):
        t = breaks[:, j]
        f = np.abs(_poly_eval(c, np.where(np.isnan(t), 0.0, t)))
        roots[:, 3 + j] = np.where(~np.isnan(t) & (f <= 1e-9 * scale), t, np.nan)
    roots[~((roots > 0.0) & (roots <= 1.0))] = np.nan
    return roots


def _validate(kind, idx, x_start, x_end, t: np.ndarray, tol: float) -> np.ndarray:
    """True where the coplanar configuration at time t actually intersects."""
    valid = np.zeros(len(t), dtype=bool)
    have = ~np.isnan(t)
    if not have.any():
        return valid
    xt = (1.0 - t[have, None, None]) * x_start[idx[have]] + t[have, None, None] * x_end[idx[have]]
    k = kind[have]
    res = np.zeros(k.shape, dtype=bool)
    vt = k == 0
    if vt.any():
        q = xt[vt]
        _, bary, dist = point_triangle_closest(q[:, 0], q[:, 1], q[:, 2], q[:, 3])
        b1, b2 = bary[:, 0], bary[:, 1]
        scale = np.linalg.norm(q[:, 2] - q[:, 1], axis=1) + np.linalg.norm(q[:, 3] - q[:, 1], axis=1)
        inside = (b1 >= -_BARY_TOL) & (b2 >= -_BARY_TOL) & (b1 + b2 <= 1.0 + _BARY_TOL)
        res[vt] = inside & (dist <= tol * np.maximum(scale, 1.0))
    ee = k == 1
    if ee.any():
        q = xt[ee]
        _, _, params, dist = segment_segment_closest(q[:, 0], q[:, 1], q[:, 2], q[:, 3])
        scale = np.linalg.norm(q[:, 1] - q[:, 0], axis=1) + np.linalg.norm(q[:, 3] - q[:, 2], axis=1)
        res[ee] = dist <= tol * np.maximum(scale, 1.0)
    valid[have] = res
    return valid


def full_ccd(kind, idx, x_start, x_end, tol: float = 1e-6):
    """Earliest time of impact in (0,1] per pair, nan where no impact.

    kind (m,), idx (m,4) as in pair_witness; positions are (n,3) snapshots at
    the interval endpoints. Near-coplanar motion (vanishing cubic) falls back
    to dense distance sampling so tunneling through a coplanar slide is still
    caught.
    """
    kind = np.asarray(kind)
    idx = np.asarray(idx)
    m = len(kind)
    if m == 0:
        return np.full(0, np.nan)
    c = coplanarity_coefficients(kind, idx, x_start, x_end)
    roots = _candidate_roots(c)

    # degenerate cubics (coplanar throughout) are handled by dense sampling below
    scale0 = np.abs(_pair_extent(idx, x_start, x_end)) ** 3
    flat = np.abs(c).sum(axis=1) <= 1e-12 * np.maximum(scale0, 1e-30)
    roots[flat] = np.nan

    toi = np.full(m, np.nan)
    order = np.argsort(np.where(np.isnan(roots), np.inf, roots), axis=1)
    sorted_roots = np.take_along_axis(roots, order, axis=1)
    for j in range(sorted_roots.shape[1]):
        t = sorted_roots[:, j]
        pending = np.isnan(toi) & ~np.isnan(t)
        if not pending.any():
            continue
        t_try = np.where(pending, t, np.nan)
        ok = _validate(kind, idx, x_start, x_end, t_try, tol)
        toi[pending & ok] = t[pending & ok]

    if flat.any():
        fkind, fidx = kind[flat], idx[flat]
        hit_t = np.full(fidx.shape[0], np.nan)
        # the distance can change by at most the two sides' displacement bounds,
        # so pairs starting farther apart than that need no sampling
        _, _, _, dist0 = pair_witness(fkind, fidx, x_start)
        delta = np.linalg.norm(x_end[fidx] - x_start[fidx], axis=2)   # (f,4)
        side1 = np.where(fkind[:, None] == 0, [1, 0, 0, 0], [1, 1, 0, 0]).astype(bool)
        reach = np.max(np.where(side1, delta, 0.0), axis=1) + np.max(np.where(side1, 0.0, delta), axis=1)
        ext = np.maximum(_pair_extent(fidx, x_start, x_end), 1.0)
        near = dist0 <= reach + 1e-9 * ext
        if near.any():
            nidx = fidx[near]
            nkind = fkind[near]
            p_start = x_start[nidx]
            p_delta = x_end[nidx] - p_start
            local = np.arange(4 * len(nidx)).reshape(-1, 4)
            sub_t = np.full(len(nidx), np.nan)
            for t in np.linspace(0.0, 1.0, 65)[1:]:
                xt_pairs = p_start + t * p_delta
                _, _, _, dist = pair_witness(nkind, local, xt_pairs.reshape(-1, 3))
                newly = np.isnan(sub_t) & (dist <= 1e-9 * ext[near])
                sub_t[newly] = t
            hit_t[near] = sub_t
        toi[flat] = hit_t
    return toi


def _pair_extent(idx, x_start, x_end) -> np.ndarray:
    p0 = x_start[idx]
    p1 = x_end[idx]
    lo = np.minimum(p0.min(axis=1), p1.min(axis=1))
    hi = np.maximum(p0.max(axis=1), p1.max(axis=1))
    return np.linalg.norm(hi - lo, axis=1)


def _witness_distance(kind: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Witness distance per pair from gathered endpoint rows p of shape (m,4,3)."""
    d = np.empty(len(kind))
    vt = kind == 0
    if vt.any():
        *_, dist = point_triangle_closest(p[vt, 0], p[vt, 1], p[vt, 2], p[vt, 3])
        d[vt] = dist
    ee = ~vt
    if ee.any():
        *_, dist = segment_segment_closest(p[ee, 0], p[ee, 1], p[ee, 2], p[ee, 3])
        d[ee] = dist
    return d


def distance_toi(kind, idx, x_start, x_end, floor_frac: float = 0.2,
                 max_iterations: int = 64) -> np.ndarray:
    """Earliest time each pair's witness distance falls to floor_frac times
    its starting value; nan when the trajectory never gets that close.

    Conservative distance march: the witness distance is 1-Lipschitz in each
    side's displacement, so advancing time by (d - goal) / L can never skip
    past the goal. Separating or distant pairs exit after a couple of
    evaluations, which is what lets resting contact recover: a pair brushing
    at a tiny gap while moving apart reports no impact here even though the
    coplanarity cubic sees a grazing root.
    """
    kind = np.asarray(kind)
    idx = np.asarray(idx)
    m = len(kind)
    toi = np.full(m, np.nan)
    if m == 0:
        return toi
    p0 = x_start[idx]
    dp = x_end[idx] - p0
    mag = np.linalg.norm(dp, axis=2)                        # (m,4)
    side1 = np.zeros((m, 4), dtype=bool)
    side1[kind == 0, 0] = True
    side1[kind != 0, :2] = True
    L = np.where(side1, mag, 0.0).max(axis=1) + np.where(side1, 0.0, mag).max(axis=1)

    d = _witness_distance(kind, p0)
    goal = floor_frac * d
    toi[d <= 0.0] = 0.0                                     # already touching
    t = np.zeros(m)
    alive = np.flatnonzero((d > 0.0) & (L > 0.0))
    for _ in range(max_iterations):
        if alive.size == 0:
            break
        t[alive] += (d[alive] - goal[alive]) / L[alive]
        alive = alive[t[alive] <= 1.0]
        if alive.size == 0:
            break
        pts = p0[alive] + t[alive, None, None] * dp[alive]
        d[alive] = _witness_distance(kind[alive], pts)
        hit = d[alive] <= goal[alive] * (1.0 + 1e-9)
        toi[alive[hit]] = t[alive[hit]]
        alive = alive[~hit]
    # unresolved pairs: report the (safe) time reached so far
    toi[alive] = t[alive]
    return toi


def global_toi(kind, idx, x_start, x_end, alpha: float = 0.8) -> float:
    """Step scale guaranteeing x_start + t * (x_end - x_start) stays separated.

    Minimum impact time over all pairs (1 if none), scaled by alpha when an
    impact truncates the step.
    """
    toi = full_ccd(kind, idx, x_start, x_end)
    finite = toi[~np.isnan(toi)]
    if finite.size == 0:
        return 1.0
    t = float(finite.min())
    if t <= 0.0:
        raise RuntimeError(
            f"nonpositive impact time {t}: start state was not collision-free "
            f"(pair {int(np.nanargmin(toi))})"
        )
    return alpha * t
