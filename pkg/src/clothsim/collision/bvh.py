"""Patch-based bounding volume hierarchy for broad-phase culling.

Triangles are grouped into small connected patches (five to eight) once, from
topology; the binary tree over patch centroids is also built once. Each query
only refits axis-aligned boxes around the swept (start -> end) positions, so
soundness never depends on how stale the tree shape is.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pairs import VT, EE, PairSet

PATCH_TARGET = 8


def build_patches(triangles: np.ndarray, n_vertices: int) -> list[np.ndarray]:
    """Greedy BFS grouping of connected triangles into patches of <= 8."""
    m = len(triangles)
    # adjacency over shared edges
    edge_map: dict[tuple[int, int], int] = {}
    adj: list[list[int]] = [[] for _ in range(m)]
    for t, tri in enumerate(triangles):
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(a, b), max(a, b))
            other = edge_map.pop(key, None)
            if other is None:
                edge_map[key] = t
            else:
                adj[t].append(other)
                adj[other].append(t)
    assigned = np.full(m, -1, dtype=np.int64)
    patches = []
    for seed in range(m):
        if assigned[seed] >= 0:
            continue
        group = [seed]
        assigned[seed] = len(patches)
        queue = [seed]
        while queue and len(group) < PATCH_TARGET:
            t = queue.pop(0)
            for u in adj[t]:
                if assigned[u] < 0 and len(group) < PATCH_TARGET:
                    assigned[u] = len(patches)
                    group.append(u)
                    queue.append(u)
        patches.append(np.asarray(group, dtype=np.int64))
    return patches


@dataclass
class PatchBVH:
    """Static-topology hierarchy; boxes are refit per query."""

    triangles: np.ndarray            # (m,3) world triangles
    tri_edges: np.ndarray            # (m,3) edge ids per triangle
    edges: np.ndarray                # (e,2) unique world edges
    tri_static: np.ndarray           # (m,) both-sides-static exclusion mask
    patches: list[np.ndarray]
    patch_of_tri: np.ndarray
    # flat binary tree
    node_left: np.ndarray
    node_right: np.ndarray
    node_patch: np.ndarray           # patch id at leaves, -1 inside
    node_order: np.ndarray           # topological order, children before parents

    @classmethod
    def build(cls, triangles: np.ndarray, rest_positions: np.ndarray, tri_static=None) -> "PatchBVH":
        triangles = np.asarray(triangles, dtype=np.int64)
        patches = build_patches(triangles, len(rest_positions))
        patch_of_tri = np.zeros(len(triangles), dtype=np.int64)
        for p, group in enumerate(patches):
            patch_of_tri[group] = p

        raw = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
        raw.sort(axis=1)
        edges, inverse = np.unique(raw, axis=0, return_inverse=True)
        tri_edges = inverse.reshape(3, len(triangles)).T.copy()

        if tri_static is None:
            tri_static = np.zeros(len(triangles), dtype=bool)

        centroids = rest_positions[triangles].mean(axis=1)
        patch_centroids = np.stack([centroids[g].mean(axis=0) for g in patches])

        left, right, node_patch = [], [], []

        def split(patch_ids: np.ndarray) -> int:
            node = len(left)
            left.append(-1)
            right.append(-1)
            node_patch.append(-1)
            if len(patch_ids) == 1:
                node_patch[node] = int(patch_ids[0])
                return node
            pts = patch_centroids[patch_ids]
            axis = int(np.argmax(pts.max(axis=0) - pts.min(axis=0)))
            order = patch_ids[np.argsort(pts[:, axis], kind="stable")]
            half = len(order) // 2
            left[node] = split(order[:half])
            right[node] = split(order[half:])
            return node

        import sys

        limit = sys.getrecursionlimit()
        sys.setrecursionlimit(max(limit, 10000))
        split(np.arange(len(patches)))
        sys.setrecursionlimit(limit)

        node_left = np.asarray(left)
        node_right = np.asarray(right)
        # children-first order for bottom-up refits
        order = []
        stack = [0]
        while stack:
            n = stack.pop()
            order.append(n)
            if node_left[n] >= 0:
                stack.extend((node_left[n], node_right[n]))
        order = np.asarray(order[::-1])

        return cls(
            triangles=triangles,
            tri_edges=tri_edges,
            edges=edges,
            tri_static=np.asarray(tri_static, dtype=bool),
            patches=patches,
            patch_of_tri=patch_of_tri,
            node_left=node_left,
            node_right=node_right,
            node_patch=np.asarray(node_patch),
            node_order=order,
        )


def swept_boxes(points_start: np.ndarray, points_end: np.ndarray, margin: float):
    lo = np.minimum(points_start.min(axis=1), points_end.min(axis=1)) - margin
    hi = np.maximum(points_start.max(axis=1), points_end.max(axis=1)) + margin
    return lo, hi


def _boxes_overlap(lo_a, hi_a, lo_b, hi_b):
    return ((lo_a <= hi_b) & (lo_b <= hi_a)).all(axis=-1)


def _refit(bvh: PatchBVH, tri_lo: np.ndarray, tri_hi: np.ndarray):
    n_nodes = len(bvh.node_left)
    node_lo = np.empty((n_nodes, 3))
    node_hi = np.empty((n_nodes, 3))
    patch_lo = np.stack([tri_lo[g].min(axis=0) for g in bvh.patches])
    patch_hi = np.stack([tri_hi[g].max(axis=0) for g in bvh.patches])
    for n in bvh.node_order:
        if bvh.node_patch[n] >= 0:
            node_lo[n] = patch_lo[bvh.node_patch[n]]
            node_hi[n] = patch_hi[bvh.node_patch[n]]
        else:
            l, r = bvh.node_left[n], bvh.node_right[n]
            node_lo[n] = np.minimum(node_lo[l], node_lo[r])
            node_hi[n] = np.maximum(node_hi[l], node_hi[r])
    return node_lo, node_hi


def _patch_pairs(bvh: PatchBVH, node_lo, node_hi) -> np.ndarray:
    """Overlapping patch pairs (a <= b) via frontier-based dual traversal."""
    frontier = np.array([[0, 0]])
    out = []
    left, right, patch = bvh.node_left, bvh.node_right, bvh.node_patch
    while len(frontier):
        a, b = frontier[:, 0], frontier[:, 1]
        keep = _boxes_overlap(node_lo[a], node_hi[a], node_lo[b], node_hi[b])
        a, b = a[keep], b[keep]
        leaf_a = patch[a] >= 0
        leaf_b = patch[b] >= 0
        both = leaf_a & leaf_b
        if both.any():
            out.append(np.stack([patch[a[both]], patch[b[both]]], axis=1))
        nxt = []
        self_pair = (a == b) & ~leaf_a
        if self_pair.any():
            sa = a[self_pair]
            nxt.append(np.stack([left[sa], left[sa]], axis=1))
            nxt.append(np.stack([left[sa], right[sa]], axis=1))
            nxt.append(np.stack([right[sa], right[sa]], axis=1))
        cross = (a != b)
        split_a = cross & ~leaf_a & (leaf_b | (a >= b))
        if split_a.any():
            sa, sb = a[split_a], b[split_a]
            nxt.append(np.stack([left[sa], sb], axis=1))
            nxt.append(np.stack([right[sa], sb], axis=1))
        split_b = cross & ~split_a & ~leaf_b
        if split_b.any():
            sa, sb = a[split_b], b[split_b]
            nxt.append(np.stack([sa, left[sb]], axis=1))
            nxt.append(np.stack([sa, right[sb]], axis=1))
        frontier = np.concatenate(nxt) if nxt else np.zeros((0, 2), dtype=np.int64)
    if not out:
        return np.zeros((0, 2), dtype=np.int64)
    pairs = np.concatenate(out)
    pairs.sort(axis=1)
    return np.unique(pairs, axis=0)


def broad_phase(x_start: np.ndarray, x_end: np.ndarray, bvh: PatchBVH, margin: float) -> PairSet:
    """Candidate vertex-triangle and edge-edge pairs along the step trajectory.

    Sound superset: any pair whose margin-inflated swept boxes overlap is
    returned. Pairs sharing a vertex and static-static pairs are excluded.
    """
    tris = bvh.triangles
    tri_lo, tri_hi = swept_boxes(x_start[tris], x_end[tris], margin)
    node_lo, node_hi = _refit(bvh, tri_lo, tri_hi)
    ppairs = _patch_pairs(bvh, node_lo, node_hi)
    if not len(ppairs):
        return PairSet.empty()

    # expand patch pairs to triangle pairs (patches padded to a fixed width)
    padded = np.full((len(bvh.patches), PATCH_TARGET), -1, dtype=np.int64)
    for p, group in enumerate(bvh.patches):
        padded[p, : len(group)] = group
    cross = ppairs[:, 0] != ppairs[:, 1]
    ga = padded[ppairs[cross, 0]]
    gb = padded[ppairs[cross, 1]]
    ta = np.repeat(ga, PATCH_TARGET, axis=1).ravel()
    tb = np.tile(gb, (1, PATCH_TARGET)).ravel()
    gs = padded[ppairs[~cross, 0]]
    iu, ju = np.triu_indices(PATCH_TARGET, k=1)
    ta = np.concatenate([ta, gs[:, iu].ravel()])
    tb = np.concatenate([tb, gs[:, ju].ravel()])
    keep = (ta >= 0) & (tb >= 0)
    ta, tb = ta[keep], tb[keep]
    keep = _boxes_overlap(tri_lo[ta], tri_hi[ta], tri_lo[tb], tri_hi[tb])
    keep &= ~(bvh.tri_static[ta] & bvh.tri_static[tb])
    ta, tb = ta[keep], tb[keep]
    if not len(ta):
        return PairSet.empty()

    # per-primitive swept boxes
    pts = np.stack([x_start, x_end], axis=1)                  # (n,2,3)
    v_lo = pts.min(axis=1) - margin
    v_hi = pts.max(axis=1) + margin
    ed = bvh.edges
    e_lo, e_hi = swept_boxes(x_start[ed], x_end[ed], margin)

    kinds, ids, codes = [], [], []
    n_tri = len(tris)
    n_edge = len(ed)

    # vertex-triangle: vertices of one triangle against the other, both ways
    for verts, faces in ((ta, tb), (tb, ta)):
        v = tris[verts].reshape(-1)                            # 3 per pair
        f = np.repeat(faces, 3)
        shared = (tris[f] == v[:, None]).any(axis=1)
        ok = _boxes_overlap(v_lo[v], v_hi[v], tri_lo[f], tri_hi[f]) & ~shared
        v, f = v[ok], f[ok]
        kinds.append(np.full(len(v), VT, dtype=np.int8))
        ids.append(np.concatenate([v[:, None], tris[f]], axis=1))
        codes.append(v * n_tri + f)

    # edge-edge: 3 x 3 edge combinations
    ea = bvh.tri_edges[ta]
    eb = bvh.tri_edges[tb]
    ia, ib = np.meshgrid(np.arange(3), np.arange(3), indexing="ij")
    e1 = ea[:, ia.ravel()].reshape(-1)
    e2 = eb[:, ib.ravel()].reshape(-1)
    va = ed[e1]
    vb = ed[e2]
    shared = (
        (va[:, 0:1] == vb).any(axis=1) | (va[:, 1:2] == vb).any(axis=1) | (e1 == e2)
    )
    ok = _boxes_overlap(e_lo[e1], e_hi[e1], e_lo[e2], e_hi[e2]) & ~shared
    e1, e2 = e1[ok], e2[ok]
    kinds.append(np.full(len(e1), EE, dtype=np.int8))
    ids.append(np.concatenate([ed[e1], ed[e2]], axis=1))
    codes.append(
        len(tris[0]) * n_tri * len(x_start)  # past the VT code range
        + np.minimum(e1, e2) * n_edge + np.maximum(e1, e2)
    )

    # dedup (the same primitive pair shows up through several triangle pairs)
    _, unique_rows = np.unique(np.concatenate(codes), return_index=True)
    unique_rows.sort()
    kind = np.concatenate(kinds)[unique_rows]
    return PairSet(
        kind=kind,
        idx=np.concatenate(ids)[unique_rows],
        life_span=np.zeros(len(kind), dtype=np.int64),
        weight=np.zeros(len(kind)),
    )
