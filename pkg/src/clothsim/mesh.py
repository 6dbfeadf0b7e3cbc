"""Triangle cloth mesh: topology extraction, rest-state data, lumped masses."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    """Invalid mesh topology or geometry."""


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a = vertices[triangles[:, 1]] - vertices[triangles[:, 0]]
    b = vertices[triangles[:, 2]] - vertices[triangles[:, 0]]
    return 0.5 * np.linalg.norm(np.cross(a, b), axis=1)


@dataclass
class ClothMesh:
    """Immutable cloth mesh with precomputed rest-state quantities.

    Shared read-only by every other module; never mutated after construction.
    """

    rest_positions: np.ndarray          # (n, 3) float64
    triangles: np.ndarray               # (m, 3) int
    edges: np.ndarray                   # (e, 2) int, sorted pairs, lexicographic order
    edge_rest_lengths: np.ndarray       # (e,)
    bend_stencils: np.ndarray           # (s, 4) int: edge v0, v1, opposite w0, w1
    vertex_mass: np.ndarray             # (n,) kg
    pinned: np.ndarray                  # sorted int indices
    density: float

    free: np.ndarray = field(init=False)        # indices of unpinned vertices
    free_index: np.ndarray = field(init=False)  # vertex id -> position in `free`, -1 if pinned

    def __post_init__(self):
        pin_mask = np.zeros(self.vertex_count, dtype=bool)
        pin_mask[self.pinned] = True
        self.free = np.flatnonzero(~pin_mask)
        self.free_index = np.full(self.vertex_count, -1, dtype=np.int64)
        self.free_index[self.free] = np.arange(self.free.size)

    @property
    def vertex_count(self) -> int:
        return self.rest_positions.shape[0]

    @property
    def total_mass(self) -> float:
        return float(self.vertex_mass.sum())


@dataclass
class SimState:
    """Per-vertex dynamic state advanced by the stepper."""

    x: np.ndarray                 # (n, 3) positions
    x_dot: np.ndarray             # (n, 3) velocities
    x_prev: np.ndarray            # positions at step start
    delta_f: np.ndarray           # (n, 3) forwarded residual force
    step_index: int = 0

    @classmethod
    def rest(cls, mesh: ClothMesh) -> "SimState":
        n = mesh.vertex_count
        return cls(
            x=mesh.rest_positions.copy(),
            x_dot=np.zeros((n, 3)),
            x_prev=mesh.rest_positions.copy(),
            delta_f=np.zeros((n, 3)),
        )


def _extract_edges(triangles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unique sorted edges plus, for each edge, the ids of incident triangles.

    Returns (edges (e,2), tri_of_edge (e,2) with -1 for boundary slots).
    """
    raw = np.concatenate(
        [triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]]
    )
    raw.sort(axis=1)
    tri_ids = np.tile(np.arange(len(triangles)), 3)
    edges, inverse = np.unique(raw, axis=0, return_inverse=True)
    tri_of_edge = np.full((len(edges), 2), -1, dtype=np.int64)
    counts = np.zeros(len(edges), dtype=np.int64)
    for eid, tid in zip(inverse, tri_ids):
        if counts[eid] > 1:
            raise MeshError(f"non-manifold edge {tuple(edges[eid])}")
        tri_of_edge[eid, counts[eid]] = tid
        counts[eid] += 1
    return edges, tri_of_edge


def _bend_stencils(triangles: np.ndarray, edges: np.ndarray, tri_of_edge: np.ndarray) -> np.ndarray:
    """One (v0, v1, w0, w1) stencil per interior edge; w are the opposite vertices."""
    stencils = []
    for (v0, v1), (t0, t1) in zip(edges, tri_of_edge):
        if t1 < 0:
            continue
        w0 = [v for v in triangles[t0] if v != v0 and v != v1][0]
        w1 = [v for v in triangles[t1] if v != v0 and v != v1][0]
        stencils.append((v0, v1, w0, w1))
    if not stencils:
        return np.zeros((0, 4), dtype=np.int64)
    return np.asarray(stencils, dtype=np.int64)


def build_mesh(
    vertices,
    triangles,
    density: float,
    pins=(),
) -> ClothMesh:
    """Construct a ClothMesh with lumped one-third-area vertex masses.

    Raises MeshError for degenerate triangles, out-of-range indices, or a
    non-positive density.
    """
    vertices = np.ascontiguousarray(vertices, dtype=np.float64)
    triangles = np.ascontiguousarray(triangles, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 3 or len(vertices) < 3:
        raise MeshError("need at least 3 vertices of dimension 3")
    if triangles.ndim != 2 or triangles.shape[1] != 3 or len(triangles) < 1:
        raise MeshError("need at least one triangle")
    if density <= 0:
        raise MeshError("density must be positive")
    n = len(vertices)
    if triangles.min() < 0 or triangles.max() >= n:
        bad = int(np.flatnonzero((triangles < 0).any(axis=1) | (triangles >= n).any(axis=1))[0])
        raise MeshError(f"triangle {bad} references an out-of-range vertex")
    repeated = (
        (triangles[:, 0] == triangles[:, 1])
        | (triangles[:, 1] == triangles[:, 2])
        | (triangles[:, 0] == triangles[:, 2])
    )
    if repeated.any():
        raise MeshError(f"triangle {int(np.flatnonzero(repeated)[0])} repeats a vertex")

    areas = triangle_areas(vertices, triangles)
    degenerate = areas <= 0.0
    if degenerate.any():
        raise MeshError(f"triangle {int(np.flatnonzero(degenerate)[0])} has zero rest area")

    mass = np.zeros(n)
    np.add.at(mass, triangles.ravel(), np.repeat(density * areas / 3.0, 3))

    edges, tri_of_edge = _extract_edges(triangles)
    rest_lengths = np.linalg.norm(
        vertices[edges[:, 1]] - vertices[edges[:, 0]], axis=1
    )
    if (rest_lengths <= 0).any():
        raise MeshError("zero-length edge in rest shape")
    stencils = _bend_stencils(triangles, edges, tri_of_edge)

    pinned = np.unique(np.asarray(sorted(pins), dtype=np.int64)) if len(list(pins)) else np.zeros(0, dtype=np.int64)
    if pinned.size and (pinned.min() < 0 or pinned.max() >= n):
        raise MeshError("pin index out of range")

    return ClothMesh(
        rest_positions=vertices,
        triangles=triangles,
        edges=edges,
        edge_rest_lengths=rest_lengths,
        bend_stencils=stencils,
        vertex_mass=mass,
        pinned=pinned,
        density=float(density),
    )


def inertia_target(
    state: SimState,
    mesh: ClothMesh,
    h: float,
    f_ext: np.ndarray,
    pinned_next: np.ndarray | None = None,
) -> np.ndarray:
    """Predicted position the inertia term pulls toward.

    z = x + h*v + h^2 M^-1 (f_ext + delta_f); pinned vertices are overwritten
    with their prescribed next position (defaults to staying put).
    """
    if h <= 0:
        raise ValueError("time step must be positive")
    z = state.x + h * state.x_dot + (h * h) * (f_ext + state.delta_f) / mesh.vertex_mass[:, None]
    if mesh.pinned.size:
        if pinned_next is None:
            z[mesh.pinned] = state.x[mesh.pinned]
        else:
            z[mesh.pinned] = pinned_next
    if not np.isfinite(z).all():
        raise FloatingPointError("non-finite inertia target")
    return z


def load_obj(path) -> tuple[np.ndarray, np.ndarray]:
    """Read an ASCII OBJ file (v/f records, 1-based indices).

    Quad faces are split (0,1,2) / (0,2,3); other polygons are fanned.
    """
    verts: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(c) for c in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) - 1 for tok in parts[1:]]
                for k in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[k], idx[k + 1]))
    return np.asarray(verts, dtype=np.float64), np.asarray(faces, dtype=np.int64)


def save_obj(path, vertices: np.ndarray, triangles: np.ndarray) -> None:
    """Write an ASCII OBJ with 9 decimal digits (bit-stable round trip at display scale)."""
    with open(path, "w") as fh:
        for v in vertices:
            fh.write(f"v {v[0]:.9f} {v[1]:.9f} {v[2]:.9f}\n")
        for t in triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")
