"""Projective-dynamics constraints: local projections and global-system assembly.

All projections are batched over constraints; single-constraint inputs work
through the same code paths (leading axis of size 1 or plain (k,3) arrays).
The global matrix is scalar n_free x n_free and is applied per coordinate,
which keeps the three components decoupled and the diagonal exploitable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import ClothMesh, triangle_areas


def project_stretch(x_pair: np.ndarray, rest_length) -> np.ndarray:
    """Target endpoint pair at rest length, centered on the input midpoint.

    Accepts a single (2,3) pair or a batch (m,2,3). Coincident endpoints fall
    back to the +x axis.
    """
    x = np.asarray(x_pair, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    rest = np.atleast_1d(np.asarray(rest_length, dtype=np.float64))
    d = x[:, 1] - x[:, 0]
    norm = np.linalg.norm(d, axis=1)
    unit = np.zeros_like(d)
    ok = norm > 0
    unit[ok] = d[ok] / norm[ok, None]
    unit[~ok] = (1.0, 0.0, 0.0)
    mid = 0.5 * (x[:, 0] + x[:, 1])
    half = 0.5 * rest[:, None] * unit
    out = np.stack([mid - half, mid + half], axis=1)
    return out[0] if single else out


def bend_coefficients(rest_quad: np.ndarray) -> np.ndarray:
    """Cotangent coefficients of the quadratic hinge flatness functional.

    rest_quad: (s,4,3) stencil rest positions ordered (edge v0, edge v1,
    opposite w0, opposite w1). For a planar rest stencil the returned
    coefficients annihilate the rest positions (flat quad is a fixed point).
    """
    q = np.asarray(rest_quad, dtype=np.float64)
    single = q.ndim == 2
    if single:
        q = q[None]
    x0, x1, x2, x3 = q[:, 0], q[:, 1], q[:, 2], q[:, 3]

    def cot(a, b):
        # cotangent of the angle between a and b
        cross = np.linalg.norm(np.cross(a, b), axis=-1)
        cross = np.maximum(cross, 1e-300)
        return np.einsum("ij,ij->i", a, b) / cross

    c01 = cot(x1 - x0, x2 - x0)
    c02 = cot(x1 - x0, x3 - x0)
    c03 = cot(x0 - x1, x2 - x1)
    c04 = cot(x0 - x1, x3 - x1)
    k = np.stack([c03 + c04, c01 + c02, -c01 - c03, -c02 - c04], axis=1)
    return k[0] if single else k


def project_bend(x_quad: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """Remove the stencil's component along the flatness functional.

    Least-squares projection onto { x : sum_j k_j x_j = 0 }; linear in the
    input, idempotent, and the identity on quads already satisfying it.
    """
    x = np.asarray(x_quad, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    k = np.atleast_2d(np.asarray(coeffs, dtype=np.float64))
    residual = np.einsum("sj,sjd->sd", k, x)
    k2 = np.einsum("sj,sj->s", k, k)
    k2 = np.maximum(k2, 1e-300)
    out = x - k[:, :, None] * (residual / k2[:, None])[:, None, :]
    return out[0] if single else out


def project_collision(vertex_x: np.ndarray, witness_point: np.ndarray, normal: np.ndarray, d_hat: float) -> np.ndarray:
    """Collision-free target for a single vertex.

    Moves the vertex along `normal` (unit separating direction, pointing from
    the witness point toward the vertex side) until its offset is >= d_hat;
    a vertex already clear maps to itself.
    """
    vertex_x = np.asarray(vertex_x, dtype=np.float64)
    gap = float(np.dot(vertex_x - witness_point, normal))
    if gap >= d_hat:
        return vertex_x.copy()
    return vertex_x + (d_hat - gap) * normal


@dataclass
class ElasticConstraints:
    """Batched stretch and bend constraints with fixed topology and weights."""

    edges: np.ndarray               # (e,2)
    edge_rest: np.ndarray           # (e,)
    stretch_w: np.ndarray           # (e,)
    stencils: np.ndarray            # (s,4)
    bend_k: np.ndarray              # (s,4) flatness coefficients
    bend_w: np.ndarray              # (s,)

    @property
    def mean_weight(self) -> float:
        w = np.concatenate([self.stretch_w, self.bend_w])
        return float(w.mean()) if w.size else 1.0


def build_elastic(mesh: ClothMesh, stretch_stiffness: float, bend_stiffness: float) -> ElasticConstraints:
    """Weights scale with the rest measure (edge length / stencil area) so the
    material response is mesh-resolution invariant."""
    stretch_w = stretch_stiffness * mesh.edge_rest_lengths
    if len(mesh.bend_stencils):
        quads = mesh.rest_positions[mesh.bend_stencils]
        k = bend_coefficients(quads)
        # stencil area: thirds of the two incident triangle areas
        a1 = triangle_areas(mesh.rest_positions, mesh.bend_stencils[:, [0, 1, 2]])
        a2 = triangle_areas(mesh.rest_positions, mesh.bend_stencils[:, [0, 1, 3]])
        bend_w = bend_stiffness * (a1 + a2) / 3.0
    else:
        k = np.zeros((0, 4))
        bend_w = np.zeros(0)
    return ElasticConstraints(
        edges=mesh.edges,
        edge_rest=mesh.edge_rest_lengths,
        stretch_w=stretch_w,
        stencils=mesh.bend_stencils,
        bend_k=k,
        bend_w=bend_w,
    )


@dataclass
class GlobalSystem:
    """Scalar left-hand side of the global blend solve, pinned rows eliminated.

    H_ff acts on free vertices; H_fp carries the pinned columns into the
    right-hand side. Collision terms never touch H: they live in the diagonal
    delta and the rhs, refreshed every iteration.
    """

    H: sp.csr_matrix                 # (nf, nf)
    H_fp: sp.csr_matrix              # (nf, np)
    diag: np.ndarray                 # (nf,) diagonal of H
    mass_over_h2: np.ndarray         # (nf,)
    collision_diag_delta: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.H @ x


def assemble_global(mesh: ClothMesh, elastic: ElasticConstraints, h: float) -> GlobalSystem:
    """H = M/h^2 + sum_i w_i S_i^T A_i^T A_i S_i over the elastic set.

    Assembled once per scene; symmetric positive definite because the mass
    term is strictly positive on the diagonal.
    """
    if h <= 0:
        raise ValueError("time step must be positive")
    if not (np.isfinite(elastic.stretch_w).all() and np.isfinite(elastic.bend_w).all()):
        raise ValueError("non-finite constraint weight")
    n = mesh.vertex_count
    rows, cols, vals = [], [], []

    # stretch: difference operator stamp [[w,-w],[-w,w]]
    e = elastic.edges
    w = elastic.stretch_w
    rows.append(np.concatenate([e[:, 0], e[:, 1], e[:, 0], e[:, 1]]))
    cols.append(np.concatenate([e[:, 0], e[:, 1], e[:, 1], e[:, 0]]))
    vals.append(np.concatenate([w, w, -w, -w]))

    # bend: k outer k stamp over the 4-vertex stencil
    if len(elastic.stencils):
        s = elastic.stencils
        k = elastic.bend_k
        wb = elastic.bend_w
        for a in range(4):
            for b in range(4):
                rows.append(s[:, a])
                cols.append(s[:, b])
                vals.append(wb * k[:, a] * k[:, b])

    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(mesh.vertex_mass / (h * h))

    H_full = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    free = mesh.free
    H_ff = H_full[free][:, free].tocsr()
    H_fp = H_full[free][:, mesh.pinned].tocsr()
    return GlobalSystem(
        H=H_ff,
        H_fp=H_fp,
        diag=H_ff.diagonal().copy(),
        mass_over_h2=mesh.vertex_mass[free] / (h * h),
        collision_diag_delta=np.zeros(free.size),
    )


def elastic_rhs(elastic: ElasticConstraints, x: np.ndarray, n: int) -> np.ndarray:
    """sum_i w_i S_i^T A_i^T B_i y_i for the elastic constraints at state x.

    Targets y_i are the local projections of the current positions.
    """
    b = np.zeros((n, 3))
    if len(elastic.edges):
        pairs = x[elastic.edges]                          # (e,2,3)
        targets = project_stretch(pairs, elastic.edge_rest)
        y = targets[:, 1] - targets[:, 0]                 # projected edge vector
        w = elastic.stretch_w[:, None]
        np.add.at(b, elastic.edges[:, 0], -w * y)
        np.add.at(b, elastic.edges[:, 1], w * y)
    # bend targets satisfy k.y = 0 exactly, so their rhs contribution is zero.
    return b


def assemble_rhs(
    system: GlobalSystem,
    mesh: ClothMesh,
    elastic: ElasticConstraints,
    z: np.ndarray,
    x: np.ndarray,
    pinned_positions: np.ndarray,
    collision_vertices: np.ndarray | None = None,
    collision_weights: np.ndarray | None = None,
    collision_targets: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Right-hand side over free vertices plus the collision diagonal delta.

    Collision constraints are per-vertex positional (identity maps), so each
    one adds w to the diagonal delta and w * target to the rhs.
    """
    n = mesh.vertex_count
    b_full = elastic_rhs(elastic, x, n)
    b = b_full[mesh.free] + system.mass_over_h2[:, None] * z[mesh.free]
    if mesh.pinned.size:
        b -= system.H_fp @ pinned_positions
    delta = np.zeros(system.H.shape[0])
    if collision_vertices is not None and len(collision_vertices):
        fidx = mesh.free_index[collision_vertices]
        keep = fidx >= 0
        np.add.at(delta, fidx[keep], collision_weights[keep])
        np.add.at(b, fidx[keep], collision_weights[keep, None] * collision_targets[keep])
    return b, delta
