"""Command-line harness.

Subcommands:
  simulate <config>   run a scene, write OBJ frames and a metrics CSV
  verify <config>     simulate with the exhaustive intersection oracle on
  spectrum <config>   modal residual report before/after a subspace solve
  bench-ccd           micro-benchmark: classifier vs cubic impact times
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import SceneConfig, load_config, save_config
from .constraints import assemble_rhs
from .mesh import save_obj
from .oracles import oracle_ccd, oracle_intersect, spectrum_report
from .scenes import build_scene
from .smoothing import ajacobi_smooth
from .stepper import PenetrationError, Simulation
from .subspace import reduced_correction
from .collision import full_ccd, partial_ccd, default_samples

_METRIC_FIELDS = [
    "step", "lg_iterations", "outer_loops", "toi_exit", "active_pairs",
    "rf_triggered", "penetration_free",
    "t_warm_start", "t_local", "t_global", "t_smoothing",
    "t_broad", "t_narrow_partial", "t_narrow_full",
]


def _build(cfg: SceneConfig, args) -> Simulation:
    solver = cfg.solver
    if getattr(args, "steps", None):
        cfg.steps = args.steps
    if getattr(args, "barrier", None):
        solver = replace(solver, barrier_mode=args.barrier)
    if getattr(args, "iteration_cap", None) is not None:
        solver = replace(solver, iteration_cap=args.iteration_cap)
    if getattr(args, "verify", False):
        solver = replace(solver, verify=True)
    cfg.solver = solver
    sim = build_scene(
        cfg.scene.kind,
        resolution=cfg.scene.resolution,
        size=cfg.scene.size,
        density=cfg.material.density,
        stretch_stiffness=cfg.material.stretch_stiffness,
        bend_stiffness=cfg.material.bend_stiffness,
        config=solver,
    )
    if solver.verify:
        sim._verify_oracle = lambda xw, tris: oracle_intersect(xw, tris)
    return sim


def _simulate(args) -> int:
    cfg = load_config(args.config)
    sim = _build(cfg, args)
    out = Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.toml")

    mesh = sim.mesh
    stride = max(cfg.output.frame_stride, 1)
    save_obj(out / "frame_000000.obj", sim.state.x, mesh.triangles)
    t_begin = time.perf_counter()
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_METRIC_FIELDS)
        for step in range(1, cfg.steps + 1):
            try:
                rep = sim.step()
            except PenetrationError as exc:
                dump = out / f"state_dump_{step:06d}.obj"
                save_obj(dump, sim.state.x, mesh.triangles)
                print(f"invariant breach at step {step}: {exc}; state dump: {dump}",
                      file=sys.stderr)
                return 2
            writer.writerow([
                step, rep.lg_iterations, rep.outer_loops,
                f"{rep.toi_exit:.6f}", rep.active_pairs,
                int(rep.rf_triggered), int(rep.penetration_free),
            ] + [f"{rep.timings[k]:.3f}" for k in
                 ("warm_start", "local", "global", "smoothing",
                  "broad", "narrow_partial", "narrow_full")])
            if step % stride == 0 or step == cfg.steps:
                save_obj(out / f"frame_{step:06d}.obj", sim.state.x, mesh.triangles)
    elapsed = time.perf_counter() - t_begin
    print(f"{cfg.name}: {cfg.steps} steps in {elapsed:.1f}s -> {out}")
    return 0


def _verify(args) -> int:
    args.verify = True
    return _simulate(args)


def _spectrum(args) -> int:
    cfg = load_config(args.config)
    sim = _build(cfg, args)
    mesh = sim.mesh
    rng = np.random.default_rng(args.seed)

    # deflected state: one inertia target under gravity
    z = sim.state.x + 0.01 * cfg.scene.size * rng.standard_normal(sim.state.x.shape)
    z[mesh.pinned] = sim.state.x[mesh.pinned]
    b, delta = assemble_rhs(sim.system, mesh, sim.elastic, z, z,
                            sim.state.x[mesh.pinned])
    x0 = z[mesh.free]
    residual_pre = b - sim.system.H @ x0
    x1, _ = reduced_correction(sim.subspace, sim.system, b, x0, delta)
    residual_post = b - sim.system.H @ x1

    modes = min(args.modes, sim.subspace.U.shape[1])
    rows_pre = spectrum_report(residual_pre, sim.subspace, modes)
    rows_post = spectrum_report(residual_post, sim.subspace, modes)
    out = Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "spectra.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "pre_solve", "post_solve"])
        for (m, pre), (_, post) in zip(rows_pre, rows_post):
            writer.writerow([m, f"{pre:.12e}", f"{post:.12e}"])
    print(f"wrote {modes} modes -> {path}")
    return 0


def _random_pairs(n: int, rng):
    """Random VT and EE trajectories in the unit box, half of each kind."""
    kind = (np.arange(n) % 2).astype(np.int8)
    idx = np.arange(4 * n, dtype=np.int64).reshape(n, 4)
    x_start = rng.uniform(0.0, 1.0, (4 * n, 3))
    x_end = x_start + rng.uniform(-0.3, 0.3, (4 * n, 3))
    return kind, idx, x_start, x_end


def _bench_ccd(args) -> int:
    rng = np.random.default_rng(args.seed)
    kind, idx, x_start, x_end = _random_pairs(args.pairs, rng)
    samples = default_samples(3)

    batch = 100_000
    t_full = t_partial = 0.0
    hits_full = hits_partial = 0
    for lo in range(0, args.pairs, batch):
        hi = min(lo + batch, args.pairs)
        sl = slice(lo, hi)
        t0 = time.perf_counter()
        toi = full_ccd(kind[sl], idx[sl], x_start, x_end)
        t_full += time.perf_counter() - t0
        t0 = time.perf_counter()
        active = partial_ccd(kind[sl], idx[sl], x_start, x_end, samples)
        t_partial += time.perf_counter() - t0
        hits_full += int(np.count_nonzero(~np.isnan(toi)))
        hits_partial += int(np.count_nonzero(active))
    ratio = t_full / max(t_partial, 1e-12)
    print(f"pairs: {args.pairs}")
    print(f"full ccd:     {t_full:.3f}s  ({1e9 * t_full / args.pairs:.0f} ns/pair), {hits_full} impacts")
    print(f"partial ccd:  {t_partial:.3f}s  ({1e9 * t_partial / args.pairs:.0f} ns/pair), {hits_partial} active")
    print(f"speedup:      {ratio:.1f}x")
    if args.check:
        sel = rng.choice(args.pairs, size=min(200, args.pairs), replace=False)
        for i in sel:
            t = oracle_ccd(int(kind[i]), idx[i], x_start, x_end)
            f = full_ccd(kind[i:i + 1], idx[i:i + 1], x_start, x_end)[0]
            if (t is None) != np.isnan(f):
                print(f"mismatch on pair {i}: oracle={t} full={f}", file=sys.stderr)
                return 1
        print("oracle spot-check passed")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="clothsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--steps", type=int, default=None, help="override step count")
    common.add_argument("--verify", action="store_true", help="run the intersection oracle per step")
    common.add_argument("--barrier", choices=("ndb", "dbb"), default=None)
    common.add_argument("--iteration-cap", type=int, default=None, dest="iteration_cap")
    common.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("simulate", parents=[common], help="run a scene config")
    p.add_argument("config")
    p.set_defaults(func=_simulate)

    p = sub.add_parser("verify", parents=[common], help="simulate with per-step oracle checks")
    p.add_argument("config")
    p.set_defaults(func=_verify)

    p = sub.add_parser("spectrum", parents=[common], help="modal residual report")
    p.add_argument("config")
    p.add_argument("--modes", type=int, default=100)
    p.set_defaults(func=_spectrum)

    p = sub.add_parser("bench-ccd", parents=[common], help="classifier vs cubic benchmark")
    p.add_argument("--pairs", type=int, default=1_000_000)
    p.add_argument("--check", action="store_true", help="spot-check against the dense oracle")
    p.set_defaults(func=_bench_ccd)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
