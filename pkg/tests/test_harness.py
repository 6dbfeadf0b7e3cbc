import csv
import numpy as np
import pytest

from clothsim.cli import main
from clothsim.config import (
    ConfigError,
    SceneConfig,
    load_config,
    parse_config,
    save_config,
    serialize_config,
)
from clothsim.mesh import load_obj
from clothsim.oracles import (
    oracle_ccd,
    oracle_intersect,
    tri_tri_intersect,
    tri_tri_intersect_exact,
)


# ---------------------------------------------------------------------------
# config round trips


def test_config_round_trip_default():
    cfg = SceneConfig()
    text = serialize_config(cfg)
    assert parse_config(text) == cfg
    assert serialize_config(parse_config(text)) == text


def test_config_round_trip_modified():
    cfg = SceneConfig(name="twist-run", steps=400, seed=7)
    cfg.scene.kind = "twist"
    cfg.scene.resolution = 70
    cfg.material.bend_stiffness = 1.25e-4
    cfg.solver.barrier_mode = "dbb"
    cfg.solver.h = 1.0 / 120.0
    cfg.solver.gravity = (0.0, 0.0, -1.625)
    assert parse_config(serialize_config(cfg)) == cfg


def test_config_save_load(tmp_path):
    cfg = SceneConfig(name="saved")
    path = tmp_path / "scene.toml"
    save_config(cfg, path)
    assert load_config(path) == cfg


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        parse_config('name = "x"\n[solver]\nfoo = 1\n')
    with pytest.raises(ConfigError):
        parse_config('nonsense = true\n')


# ---------------------------------------------------------------------------
# intersection oracle


def test_separated_triangles_empty():
    x = np.array(
        [
            [0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0],
            [0.0, 0.0, 5.0], [1.0, 0.0, 5.0], [0.0, 1.0, 5.0],
        ]
    )
    tris = np.array([[0, 1, 2], [3, 4, 5]])
    assert len(oracle_intersect(x, tris)) == 0


def test_coplanar_overlapping_reported():
    x = np.array(
        [
            [0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 2.0, 0.0],
            [0.5, 0.5, 0.0], [2.5, 0.5, 0.0], [0.5, 2.5, 0.0],
        ]
    )
    tris = np.array([[0, 1, 2], [3, 4, 5]])
    hits = oracle_intersect(x, tris)
    assert len(hits) == 1
    assert sorted(hits[0]) == [0, 1]


def test_piercing_reported():
    x = np.array(
        [
            [0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 2.0, 0.0],
            [0.5, 0.5, -1.0], [0.6, 0.5, 1.0], [0.5, 0.6, 1.0],
        ]
    )
    tris = np.array([[0, 1, 2], [3, 4, 5]])
    assert len(oracle_intersect(x, tris)) == 1


def _near_degenerate_pairs(n, rng):
    """Triangle pairs biased toward touching/coplanar configurations."""
    p = rng.uniform(-1.0, 1.0, size=(n, 3, 3))
    q = np.empty_like(p)
    mode = rng.integers(0, 4, size=n)
    for i in range(n):
        if mode[i] == 0:
            # nearly coplanar, slight offset
            q[i] = p[i][[1, 2, 0]] + rng.normal(scale=1e-9, size=(3, 3))
        elif mode[i] == 1:
            # share an edge geometrically, third vertex free
            q[i, 0] = p[i, 0]
            q[i, 1] = p[i, 1]
            q[i, 2] = rng.uniform(-1.0, 1.0, size=3)
        elif mode[i] == 2:
            # vertex exactly on the other triangle's plane
            normal = np.cross(p[i, 1] - p[i, 0], p[i, 2] - p[i, 0])
            normal /= np.linalg.norm(normal)
            base = p[i, 0] + 0.3 * (p[i, 1] - p[i, 0]) + 0.3 * (p[i, 2] - p[i, 0])
            q[i, 0] = base
            q[i, 1] = base + rng.uniform(-0.5, 0.5, size=3)
            q[i, 2] = base + rng.uniform(-0.5, 0.5, size=3)
        else:
            # generic small separation
            q[i] = p[i] + rng.normal(scale=1e-3, size=(3, 3))
    # snap to a coarse float grid so exact arithmetic sees the same inputs
    return np.round(p, 6), np.round(q, 6)


def _exact_separation_margin(p, q):
    """Largest normalized separation over all axes, in exact arithmetic.

    Returns 0 when the triangles intersect. The square of the margin is
    computed rationally; only the final value is floated.
    """
    from fractions import Fraction

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
    axes = [n_p, n_q] + [cross(a, b) for a in ep for b in eq]
    axes += [cross(n_p, e) for e in ep] + [cross(n_q, e) for e in eq]
    best = Fraction(0)
    for axis in axes:
        norm2 = dot(axis, axis)
        if norm2 == 0:
            continue
        dp = [dot(axis, v) for v in P]
        dq = [dot(axis, v) for v in Q]
        gap = max(min(dq) - max(dp), min(dp) - max(dq))
        if gap > 0:
            best = max(best, gap * gap / norm2)
    return float(best) ** 0.5


def test_sat_matches_exact_arithmetic(rng):
    n = 10_000
    p, q = _near_degenerate_pairs(n, rng)
    got = tri_tri_intersect(p, q)
    for i in range(n):
        ref = tri_tri_intersect_exact(p[i], q[i])
        if got[i] == ref:
            continue
        # the float test is deliberately conservative: it may report contact
        # when the exact separation is below float rounding, but must never
        # miss an exact intersection
        assert bool(got[i]) and not ref, f"pair {i}: false negative"
        scale = float(np.abs(np.concatenate([p[i], q[i]])).max()) + 1.0
        assert _exact_separation_margin(p[i], q[i]) <= 1e-12 * scale, (
            f"pair {i}: separation visible at float precision was missed"
        )


# ---------------------------------------------------------------------------
# dense-time impact oracle


def test_oracle_ccd_linear_crossing():
    x0 = np.array(
        [[0.25, 0.25, -1.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]
    )
    x1 = x0.copy()
    x1[0, 2] = 1.0
    t = oracle_ccd(0, [0, 1, 2, 3], x0, x1, substeps=512)
    assert t is not None
    assert abs(t - 0.5) <= 1.0 / 512.0


def test_oracle_ccd_no_crossing():
    x0 = np.array(
        [[0.25, 0.25, 1.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]
    )
    x1 = x0 + np.array([0.1, 0.0, 0.5])
    assert oracle_ccd(0, [0, 1, 2, 3], x0, x1) is None


def test_oracle_ccd_agrees_with_full_ccd(rng):
    from clothsim.collision.ccd import full_ccd

    n = 200
    kind = np.zeros(n, dtype=np.int8)
    kind[n // 2 :] = 1
    x0 = rng.uniform(-1.0, 1.0, size=(4 * n, 3))
    x1 = x0 + rng.uniform(-1.0, 1.0, size=(4 * n, 3))
    idx = np.arange(4 * n).reshape(n, 4)
    toi = full_ccd(kind, idx, x0, x1)
    for i in range(n):
        ref = oracle_ccd(int(kind[i]), idx[i], x0, x1, substeps=2048)
        if ref is not None:
            assert not np.isnan(toi[i])
            assert abs(toi[i] - ref) <= 1.0 / 1024.0


# ---------------------------------------------------------------------------
# CLI


def _write_free_fall_config(tmp_path, steps=10, stride=1, resolution=4):
    cfg = SceneConfig(name="freefall", steps=steps)
    cfg.scene.kind = "free_fall"
    cfg.scene.resolution = resolution
    cfg.output.directory = str(tmp_path / "out")
    cfg.output.frame_stride = stride
    path = tmp_path / "scene.toml"
    save_config(cfg, path)
    return path, cfg


def test_cli_simulate_free_fall(tmp_path):
    path, cfg = _write_free_fall_config(tmp_path)
    assert main(["simulate", str(path)]) == 0
    out = tmp_path / "out"
    frames = sorted(out.glob("frame_*.obj"))
    assert len(frames) == 11  # initial frame plus one per step
    verts0, _ = load_obj(frames[0])
    verts10, _ = load_obj(frames[-1])
    # ballistic drop after 10 steps of h=1/150
    h = cfg.solver.h
    drop = sum(-9.8 * h * h * (k + 1) for k in range(10))
    assert np.allclose(verts10[:, 2] - verts0[:, 2], drop, atol=1e-6)
    with open(out / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 10
    assert {"step", "lg_iterations", "outer_loops", "toi_exit"} <= set(rows[0])


def test_cli_verify_flag_checks_oracle(tmp_path):
    path, _ = _write_free_fall_config(tmp_path, steps=3)
    assert main(["verify", str(path)]) == 0
    with open(tmp_path / "out" / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert all(row["penetration_free"] == "1" for row in rows)


def test_cli_barrier_and_steps_overrides(tmp_path):
    path, _ = _write_free_fall_config(tmp_path, steps=50)
    assert main(["simulate", str(path), "--steps", "2", "--barrier", "dbb"]) == 0
    with open(tmp_path / "out" / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2


def test_cli_spectrum(tmp_path):
    path, _ = _write_free_fall_config(tmp_path, resolution=8)
    assert main(["spectrum", str(path), "--modes", "20"]) == 0
    with open(tmp_path / "out" / "spectra.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 20
    pre = np.array([float(r["pre_solve"]) for r in rows])
    post = np.array([float(r["post_solve"]) for r in rows])
    # the subspace solve annihilates the low-mode residual
    assert np.linalg.norm(post[:10]) <= 1e-4 * max(np.linalg.norm(pre[:10]), 1e-30)


def test_cli_bench_ccd_small(capsys):
    assert main(["bench-ccd", "--pairs", "2000", "--seed", "1"]) == 0
    out = capsys.readouterr().out
    assert "speedup" in out
