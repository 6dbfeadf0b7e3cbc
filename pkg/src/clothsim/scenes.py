"""Built-in scene generators.

Every acceptance run uses meshes produced here, so no external assets are
needed. Generators return raw (vertices, triangles) arrays; scene builders
assemble them into a ready Simulation.
"""

from __future__ import annotations

import numpy as np

from .mesh import ClothMesh, build_mesh
from .stepper import Simulation, StepConfig


def grid_cloth(resolution: int, size: float = 1.0, height: float = 0.0):
    """Square cloth in the xy plane at the given height, (res*res, 3) vertices."""
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    ticks = np.linspace(0.0, size, resolution)
    xs, ys = np.meshgrid(ticks, ticks, indexing="ij")
    verts = np.stack([xs.ravel(), ys.ravel(), np.full(resolution ** 2, float(height))], axis=1)
    tris = []
    for i in range(resolution - 1):
        for j in range(resolution - 1):
            a = i * resolution + j
            b = a + 1
            c = a + resolution
            d = c + 1
            if (i + j) % 2 == 0:
                tris += [[a, b, c], [b, d, c]]
            else:
                tris += [[a, b, d], [a, d, c]]
    return verts, np.asarray(tris, dtype=np.int64)


def strip_cloth(length_segments: int, width_segments: int, length: float, width: float):
    """Rectangular strip along +x in the xz plane (hangs under gravity)."""
    xs = np.linspace(0.0, length, length_segments + 1)
    ys = np.linspace(0.0, width, width_segments + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    verts = np.stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)], axis=1)
    cols = width_segments + 1
    tris = []
    for i in range(length_segments):
        for j in range(width_segments):
            a = i * cols + j
            b = a + 1
            c = a + cols
            d = c + 1
            tris += [[a, c, b], [b, c, d]]
    return verts, np.asarray(tris, dtype=np.int64)


def icosphere(subdivisions: int = 2, radius: float = 1.0, center=(0.0, 0.0, 0.0)):
    """Geodesic sphere by repeated icosahedron subdivision."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = list(verts)
    for _ in range(subdivisions):
        cache: dict = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        next_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            next_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = next_faces
    out = np.asarray(verts) * radius + np.asarray(center)
    return out, np.asarray(faces, dtype=np.int64)


def box_mesh(center=(0.0, 0.0, 0.0), extents=(1.0, 1.0, 1.0), divisions: int = 4):
    """Axis-aligned box tessellated into divisions^2 quads per face."""
    cx, cy, cz = center
    hx, hy, hz = (e / 2.0 for e in extents)
    verts: list = []
    tris: list = []

    def face(origin, du, dv):
        base = len(verts)
        for i in range(divisions + 1):
            for j in range(divisions + 1):
                verts.append(origin + du * (i / divisions) + dv * (j / divisions))
        cols = divisions + 1
        for i in range(divisions):
            for j in range(divisions):
                a = base + i * cols + j
                b = a + 1
                c = a + cols
                d = c + 1
                tris.append([a, b, c])
                tris.append([b, d, c])

    o = np.array([cx, cy, cz])
    ex = np.array([2 * hx, 0, 0])
    ey = np.array([0, 2 * hy, 0])
    ez = np.array([0, 0, 2 * hz])
    corner = o - np.array([hx, hy, hz])
    face(corner + ez, ex, ey)             # top
    face(corner, ey, ex)                  # bottom
    face(corner, ex, ez)                  # front
    face(corner + ey, ez, ex)             # back
    face(corner, ez, ey)                  # left
    face(corner + ex, ey, ez)             # right
    # weld coincident corner/edge vertices so adjacent faces share indices
    v = np.asarray(verts, dtype=np.float64)
    t = np.asarray(tris, dtype=np.int64)
    scale = max(hx, hy, hz)
    key = np.round(v / (1e-9 * scale)).astype(np.int64)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return v[first[order]], rank[inverse[t]]


def _pin_rows(resolution: int, rows) -> np.ndarray:
    """Vertex indices of whole grid rows (first index axis)."""
    idx = []
    for r in rows:
        idx.extend(range(r * resolution, (r + 1) * resolution))
    return np.asarray(idx, dtype=np.int64)


def build_scene(
    kind: str,
    resolution: int = 32,
    size: float = 1.0,
    density: float = 0.3,
    stretch_stiffness: float = 160.0,
    bend_stiffness: float = 3e-4,
    config: StepConfig | None = None,
) -> Simulation:
    """Assemble one of the named scenes into a Simulation at rest."""
    cfg = config if config is not None else StepConfig()
    if kind == "free_fall":
        verts, tris = grid_cloth(resolution, size, height=1.0)
        mesh = build_mesh(verts, tris, density, pins=[])
        return Simulation(mesh, cfg, stretch_stiffness, bend_stiffness)

    if kind == "hanging":
        verts, tris = grid_cloth(resolution, size, height=0.0)
        pins = _pin_rows(resolution, [0])
        mesh = build_mesh(verts, tris, density, pins=pins)
        return Simulation(mesh, cfg, stretch_stiffness, bend_stiffness)

    if kind == "sphere_drape":
        radius = 0.25 * size
        verts, tris = grid_cloth(resolution, size, height=radius + 2.0 * cfg.d_hat + 0.01 * size)
        verts[:, :2] -= size / 2.0                       # center over the sphere
        mesh = build_mesh(verts, tris, density, pins=[])
        sphere = icosphere(3, radius, center=(0.0, 0.0, 0.0))
        return Simulation(mesh, cfg, stretch_stiffness, bend_stiffness, obstacles=[sphere])

    if kind == "desk_fold":
        verts, tris = grid_cloth(resolution, size, height=0.25 * size)
        verts[:, :2] -= size / 2.0
        mesh = build_mesh(verts, tris, density, pins=[])
        desk = box_mesh(center=(0.0, 0.0, 0.1 * size),
                        extents=(0.45 * size, 0.45 * size, 0.2 * size), divisions=6)
        floor = box_mesh(center=(0.0, 0.0, -0.05 * size),
                         extents=(2.0 * size, 2.0 * size, 0.02 * size), divisions=4)
        return Simulation(mesh, cfg, stretch_stiffness, bend_stiffness, obstacles=[desk, floor])

    if kind == "twist":
        verts, tris = grid_cloth(resolution, size, height=0.0)
        pins = _pin_rows(resolution, [0, resolution - 1])
        mesh = build_mesh(verts, tris, density, pins=pins)
        rest_pins = verts[pins]
        center = verts.mean(axis=0)
        # both pinned rails rotate about the cloth's long axis, opposite ways
        rate = np.pi / 2.0                               # rad/s
        half = len(pins) // 2

        def pin_motion(t: float) -> np.ndarray:
            out = rest_pins.copy()
            for sign, rows in ((1.0, slice(0, half)), (-1.0, slice(half, None))):
                ang = sign * rate * t
                ca, sa = np.cos(ang), np.sin(ang)
                rel = rest_pins[rows] - center
                y = rel[:, 1] * ca - rel[:, 2] * sa
                z = rel[:, 1] * sa + rel[:, 2] * ca
                out[rows] = center + np.stack([rel[:, 0], y, z], axis=1)
            return out

        return Simulation(mesh, cfg, stretch_stiffness, bend_stiffness, pin_motion=pin_motion)

    raise ValueError(f"unknown scene kind {kind!r}")
