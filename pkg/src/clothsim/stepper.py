"""Time-stepping orchestration.

Each step runs: collision-free warm start in the wide basis, an impact-time
clamp, outer/inner local-global loops with the reuse basis plus aggregated
Jacobi smoothing and the boolean trajectory classifier, a fresh exit line
search filtering, and (when the exit got truncated hard or the iteration
budget ran out) residual forwarding into the next step.

Prescribed geometry (pins, scripted obstacles) rides the same step trajectory
as the cloth, so impact-time clamps apply to the whole world; blocked pins
lag their prescription and catch up in later steps.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .mesh import ClothMesh, SimState, inertia_target
from .constraints import ElasticConstraints, GlobalSystem, assemble_global, assemble_rhs, build_elastic
from .subspace import Subspace, build_subspace, reduced_correction, warmstart_correction
from .smoothing import ajacobi_smooth
from .collision import (
    EE,
    VT,
    PairSet,
    PatchBVH,
    broad_phase,
    dbb_weight,
    dbb_weight_gradient,
    default_samples,
    distance_toi,
    sample_bound,
    full_ccd,
    ndb_weights,
    pair_witness,
    partial_ccd,
)


@dataclass
class StepConfig:
    h: float = 1.0 / 150.0
    eps_initial: float = 1e-3
    eps_inner: float = 5e-2
    eps_outer: float = 1e-3
    eps_toi: float = 0.1
    alpha: float = 0.8
    ndb_k: float = 0.0              # 0 -> mean elastic weight
    ndb_base: float = 2.0
    dbb_kappa: float = 0.0          # 0 -> scaled so the barrier at d_hat/2 matches ndb_k
    iteration_cap: int = 0          # max inner LG iterations per step, 0 = unlimited
    barrier_mode: str = "ndb"
    d_hat: float = 1e-3
    samples: int = 3
    smoothing_iterations: int = 32  # Jacobi updates per inner iteration (16 rank-2 steps)
    omega: float = 0.0
    gravity: tuple = (0.0, 0.0, -9.8)
    warm_start_cap: int = 10
    inner_cap: int = 10
    outer_cap: int = 40
    rf_iterations: int = 30
    rf_tolerance: float = 1e-10
    delta_f_cap: float = 1e6
    r_bar: int = 120
    r: int = 30
    verify: bool = False

    def __post_init__(self):
        if self.h <= 0 or not (0 < self.alpha < 1):
            raise ValueError("need h > 0 and 0 < alpha < 1")
        for name in ("eps_initial", "eps_inner", "eps_outer", "eps_toi", "d_hat"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.barrier_mode not in ("ndb", "dbb"):
            raise ValueError("barrier_mode must be 'ndb' or 'dbb'")


@dataclass
class StepReport:
    lg_iterations: int = 0
    outer_loops: int = 0
    toi_exit: float = 1.0
    rf_triggered: bool = False
    penetration_free: bool = True
    active_pairs: int = 0
    full_ccd_calls: int = 0
    partial_ccd_calls: int = 0
    cap_hit: bool = False
    timings: dict = field(default_factory=dict)



def _rms(v: np.ndarray) -> float:
    """Root-mean-square displacement magnitude, resolution invariant."""
    return float(np.linalg.norm(v)) / max(np.sqrt(v.size), 1.0)


class PenetrationError(RuntimeError):
    def __init__(self, message, state_dump=None):
        super().__init__(message)
        self.state_dump = state_dump


def _participation(pairs: PairSet) -> np.ndarray:
    """Per-endpoint share (m,4) of each pair's constraint weight."""
    gamma = np.empty((len(pairs), 4))
    vt = pairs.kind == VT
    lam = pairs.bary
    gamma[vt, 0] = 1.0
    gamma[vt, 1] = 1.0 - lam[vt, 0] - lam[vt, 1]
    gamma[vt, 2] = lam[vt, 0]
    gamma[vt, 3] = lam[vt, 1]
    ee = pairs.kind == EE
    gamma[ee, 0] = 1.0 - lam[ee, 0]
    gamma[ee, 1] = lam[ee, 0]
    gamma[ee, 2] = 1.0 - lam[ee, 1]
    gamma[ee, 3] = lam[ee, 1]
    return np.clip(gamma, 0.0, 1.0)


class Simulation:
    """One cloth plus optional obstacle meshes, stepped under a StepConfig."""

    def __init__(
        self,
        mesh: ClothMesh,
        config: StepConfig,
        stretch_stiffness: float = 160.0,
        bend_stiffness: float = 3e-4,
        obstacles=None,
        pin_motion=None,
        obstacle_motion=None,
    ):
        self.mesh = mesh
        self.config = config
        self.elastic = build_elastic(mesh, stretch_stiffness, bend_stiffness)
        self.system = assemble_global(mesh, self.elastic, config.h)
        r_bar = min(config.r_bar, mesh.free.size)
        r = min(config.r, r_bar)
        self.subspace = build_subspace(self.system, mesh.rest_positions[mesh.free], r_bar, r)
        self.samples = default_samples(config.samples)
        self.pin_motion = pin_motion
        self.obstacle_motion = obstacle_motion

        # collision world: cloth vertices first, then obstacle vertices
        n = mesh.vertex_count
        obs_verts = []
        obs_tris = []
        offset = n
        for verts, tris in (obstacles or []):
            obs_verts.append(np.asarray(verts, dtype=np.float64))
            obs_tris.append(np.asarray(tris, dtype=np.int64) + offset)
            offset += len(verts)
        self.obstacle_x = np.concatenate(obs_verts) if obs_verts else np.zeros((0, 3))
        world_tris = np.concatenate([mesh.triangles] + obs_tris) if obs_tris else mesh.triangles
        tri_static = np.zeros(len(world_tris), dtype=bool)
        tri_static[len(mesh.triangles):] = True
        world_rest = np.concatenate([mesh.rest_positions, self.obstacle_x])
        self.bvh = PatchBVH.build(world_tris, world_rest, tri_static)

        self.k = config.ndb_k if config.ndb_k > 0 else self.elastic.mean_weight
        if config.dbb_kappa > 0:
            self.kappa = config.dbb_kappa
        else:
            # match the life-span mode's initial weight at half the tolerance
            self.kappa = self.k / ((config.d_hat / 2.0) ** 2 * np.log(2.0))

        self.state = SimState.rest(mesh)
        self.gravity_force = mesh.vertex_mass[:, None] * np.asarray(config.gravity)
        self._verify_oracle = None  # injected by the harness in verify mode

    # -- world helpers -------------------------------------------------

    def world(self, cloth_x: np.ndarray, obstacle_x: np.ndarray | None = None) -> np.ndarray:
        if obstacle_x is None:
            obstacle_x = self.obstacle_x
        return np.concatenate([cloth_x, obstacle_x]) if len(obstacle_x) else cloth_x.copy()

    def _pin_targets(self, t: float) -> np.ndarray:
        if self.pin_motion is None or self.mesh.pinned.size == 0:
            return self.state.x[self.mesh.pinned]
        return np.asarray(self.pin_motion(t))

    def _obstacle_targets(self, t: float) -> np.ndarray:
        if self.obstacle_motion is None or not len(self.obstacle_x):
            return self.obstacle_x
        return np.asarray(self.obstacle_motion(t))

    # -- collision constraint machinery --------------------------------

    def _witness(self, pairs: PairSet, x_ref: np.ndarray) -> None:
        """Refresh separating direction, shares and distance at the reference state."""
        p1, p2, bary, dist = pair_witness(pairs.kind, pairs.idx, x_ref)
        n = p1 - p2
        norm = np.linalg.norm(n, axis=1)
        ok = norm > 1e-12
        n[ok] /= norm[ok, None]
        if (~ok).any():
            # touching witness: use the triangle normal / edge cross direction
            bad = np.flatnonzero(~ok)
            p = x_ref[pairs.idx[bad]]
            alt = np.where(
                (pairs.kind[bad] == VT)[:, None],
                np.cross(p[:, 2] - p[:, 1], p[:, 3] - p[:, 1]),
                np.cross(p[:, 1] - p[:, 0], p[:, 3] - p[:, 2]),
            )
            alt_n = np.linalg.norm(alt, axis=1)
            alt[alt_n > 0] /= alt_n[alt_n > 0, None]
            alt[alt_n == 0] = (1.0, 0.0, 0.0)
            n[bad] = alt
        pairs.bary = bary
        pairs.distance = dist
        pairs.normal = n

    def _pair_gaps(self, pairs: PairSet, x_world: np.ndarray) -> np.ndarray:
        """Signed gap of each pair along its frozen witness direction.

        Uses the witness shares and normal captured at the accepted state, so
        the sign stays meaningful even when the candidate has crossed over.
        """
        if len(pairs) == 0:
            return np.zeros(0)
        p = x_world[pairs.idx]
        vt = (pairs.kind == VT)[:, None]
        l1 = pairs.bary[:, 0:1]
        l2 = pairs.bary[:, 1:2]
        p1 = np.where(vt, p[:, 0], p[:, 0] + l1 * (p[:, 1] - p[:, 0]))
        p2 = np.where(
            vt,
            p[:, 1] + l1 * (p[:, 2] - p[:, 1]) + l2 * (p[:, 3] - p[:, 1]),
            p[:, 2] + l2 * (p[:, 3] - p[:, 2]),
        )
        return np.einsum("mj,mj->m", p1 - p2, pairs.normal)

    def _collision_terms(self, pairs: PairSet, engaged: np.ndarray, x_cand: np.ndarray):
        """Per-vertex positional constraints (ids, weights, targets) at the candidate.

        Each engaged pair pushes its two sides apart along the frozen witness
        direction until the gap reaches d_hat; immovable sides shift the whole
        correction onto the other side.
        """
        sel = np.flatnonzero(engaged & (pairs.weight > 0))
        if sel.size == 0:
            return None
        idx = pairs.idx[sel]
        kind = pairs.kind[sel]
        normal = pairs.normal[sel]
        gamma = _participation(PairSet(kind=kind, idx=idx, life_span=None, weight=None, bary=pairs.bary[sel]))
        w_pair = pairs.weight[sel]

        p = x_cand[idx]                                             # (m,4,3)
        vt = (kind == VT)[:, None]
        l1 = pairs.bary[sel][:, 0:1]
        l2 = pairs.bary[sel][:, 1:2]
        p1 = np.where(vt, p[:, 0], p[:, 0] + l1 * (p[:, 1] - p[:, 0]))
        p2 = np.where(
            vt,
            p[:, 1] + l1 * (p[:, 2] - p[:, 1]) + l2 * (p[:, 3] - p[:, 1]),
            p[:, 2] + l2 * (p[:, 3] - p[:, 2]),
        )
        gap = np.einsum("mj,mj->m", p1 - p2, normal)
        deficit = np.maximum(self.config.d_hat - gap, 0.0)

        n_cloth = self.mesh.vertex_count
        movable = (idx < n_cloth) & (self.mesh.free_index[np.minimum(idx, n_cloth - 1)] >= 0)
        side1 = np.zeros((len(sel), 4), dtype=bool)
        side1[kind == VT, 0] = True
        side1[kind == EE, :2] = True
        m1 = (movable & side1).any(axis=1)
        m2 = (movable & ~side1).any(axis=1)
        share1 = np.where(m1 & m2, 0.5, np.where(m1, 1.0, 0.0)) * deficit
        share2 = np.where(m1 & m2, 0.5, np.where(m2, 1.0, 0.0)) * deficit

        move = np.where(side1, share1[:, None], -share2[:, None])[:, :, None] * normal[:, None, :]
        targets = p + move
        weights = w_pair[:, None] * gamma

        flat_ids = idx.ravel()
        flat_w = weights.ravel()
        flat_t = targets.reshape(-1, 3)
        keep = movable.ravel() & (flat_w > 0)
        return flat_ids[keep], flat_w[keep], flat_t[keep]

    def _maybe_densify(self, x_from_w: np.ndarray, x_to_w: np.ndarray) -> None:
        """Velocity check: densify the classifier samples when motion outgrows
        the covering-interval bound for the base pattern."""
        if self._step_samples.interval <= 0 or len(x_from_w) == 0:
            return
        motion = float(np.abs(x_to_w - x_from_w).max())
        if motion <= 0:
            return
        d = self.config.d_hat
        interval_needed = sample_bound(d, 2.0 * d, max(motion, d), self.config.alpha)
        if self._step_samples.interval > interval_needed and self.config.samples < 6:
            self._step_samples = default_samples(6)

    def _carry_life_spans(self, old: PairSet, new: PairSet) -> None:
        if len(old) == 0 or len(new) == 0:
            return
        table = {row.tobytes(): int(s) for row, s in zip(old.keys(), old.life_span)}
        spans = np.array([table.get(row.tobytes(), 0) for row in new.keys()], dtype=np.int64)
        new.life_span = spans

    # -- energies -------------------------------------------------------

    def energy(self, x: np.ndarray, z: np.ndarray, collision=None):
        """Total variational energy and its gradient at cloth positions x.

        collision: None, ("quad", ids, weights, targets) for frozen-target
        quadratic penalties, or ("dbb", pairs, x_world) for the log-barrier.
        Pinned rows of the gradient are zeroed (they are not unknowns).
        """
        mesh, el, h = self.mesh, self.elastic, self.config.h
        grad = np.zeros_like(x)

        scale = mesh.vertex_mass[:, None] / (h * h)
        e_inertia = 0.5 * float(np.sum(scale * (x - z) ** 2))
        grad += scale * (x - z)

        e = x[el.edges[:, 1]] - x[el.edges[:, 0]]
        ln = np.linalg.norm(e, axis=1)
        stretch = el.stretch_w * (ln - el.edge_rest) ** 2
        e_stretch = 0.5 * float(stretch.sum())
        unit = np.zeros_like(e)
        ok = ln > 0
        unit[ok] = e[ok] / ln[ok, None]
        g = (el.stretch_w * (ln - el.edge_rest))[:, None] * unit
        np.add.at(grad, el.edges[:, 1], g)
        np.add.at(grad, el.edges[:, 0], -g)

        e_bend = 0.0
        if len(el.stencils):
            flat = np.einsum("sj,sjd->sd", el.bend_k, x[el.stencils])
            e_bend = 0.5 * float(np.sum(el.bend_w * np.einsum("sd,sd->s", flat, flat)))
            gb = el.bend_w[:, None, None] * el.bend_k[:, :, None] * flat[:, None, :]
            np.add.at(grad, el.stencils.ravel(), gb.reshape(-1, 3))

        e_barrier = 0.0
        if collision is not None:
            if collision[0] == "quad":
                _, ids, weights, targets = collision
                diff = x[ids] - targets
                e_barrier = 0.5 * float(np.sum(weights * np.einsum("mj,mj->m", diff, diff)))
                np.add.at(grad, ids, weights[:, None] * diff)
            elif collision[0] == "dbb":
                _, pairs, x_world = collision
                xw = x_world.copy()
                xw[: mesh.vertex_count] = x
                p1, p2, bary, dist = pair_witness(pairs.kind, pairs.idx, xw)
                e_barrier = float(np.sum(dbb_weight(dist, self.config.d_hat, self.kappa)))
                db = dbb_weight_gradient(dist, self.config.d_hat, self.kappa)
                n = p1 - p2
                nn = np.linalg.norm(n, axis=1)
                good = nn > 1e-12
                n[good] /= nn[good, None]
                gamma = _participation(PairSet(
                    kind=pairs.kind, idx=pairs.idx, life_span=None, weight=None, bary=bary,
                ))
                side1 = np.zeros((len(pairs), 4), dtype=bool)
                side1[pairs.kind == VT, 0] = True
                side1[pairs.kind == EE, :2] = True
                sgn = np.where(side1, 1.0, -1.0)
                contrib = (db[:, None] * gamma * sgn)[:, :, None] * n[:, None, :]
                ids = pairs.idx.ravel()
                cloth = ids < mesh.vertex_count
                np.add.at(grad, ids[cloth], contrib.reshape(-1, 3)[cloth])
            else:
                raise ValueError(f"unknown collision energy form {collision[0]!r}")

        grad[mesh.pinned] = 0.0
        total = e_inertia + e_stretch + e_bend + e_barrier
        return total, grad, {
            "inertia": e_inertia,
            "stretch": e_stretch,
            "bend": e_bend,
            "barrier": e_barrier,
        }

    # -- stepping -------------------------------------------------------

    def warm_start(self, z: np.ndarray, pin_next: np.ndarray):
        """Collision-free local-global iterations in the warm-start basis."""
        cfg = self.config
        mesh = self.mesh
        x = z.copy()
        if mesh.pinned.size:
            x[mesh.pinned] = pin_next
        iterations = 0
        for _ in range(cfg.warm_start_cap):
            b, _ = assemble_rhs(self.system, mesh, self.elastic, z, x, pin_next)
            x_new = warmstart_correction(self.subspace, self.system, b, x[mesh.free])
            dx = _rms(x_new - x[mesh.free])
            x[mesh.free] = x_new
            iterations += 1
            if dx < cfg.eps_initial:
                break
        return x, iterations

    def _inner_solve(self, z, x_cand, pin_next, coll_terms, report):
        """One local-global cycle: rhs, reuse-basis correction, smoothing."""
        mesh, cfg = self.mesh, self.config
        t0 = time.perf_counter()
        if coll_terms is None:
            b, delta = assemble_rhs(self.system, mesh, self.elastic, z, x_cand, pin_next)
        else:
            ids, weights, targets = coll_terms
            b, delta = assemble_rhs(
                self.system, mesh, self.elastic, z, x_cand, pin_next,
                collision_vertices=ids, collision_weights=weights, collision_targets=targets,
            )
        report.timings["local"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        xf, _ = reduced_correction(self.subspace, self.system, b, x_cand[mesh.free], delta)
        report.timings["global"] += time.perf_counter() - t0
        t0 = time.perf_counter()
        xf = ajacobi_smooth(self.system, b, xf, cfg.smoothing_iterations, cfg.omega, delta)
        report.timings["smoothing"] += time.perf_counter() - t0
        out = x_cand.copy()
        out[mesh.free] = xf
        return out

    def _full_ccd_site(self, x_from_w, x_to_w, report):
        """Broad phase + cubic CCD (pair activity) + distance march (filtering).

        The cubic roots flag which pairs are in collision; the line-search
        truncation uses the distance march, which admits separating motion
        even from a grazing gap so resting contact can push back out.
        """
        t0 = time.perf_counter()
        # boxes on both sides are inflated, so margin d_hat reaches the 2*d_hat gate
        pairs = broad_phase(x_from_w, x_to_w, self.bvh, self.config.d_hat)
        report.timings["broad"] += time.perf_counter() - t0
        t0 = time.perf_counter()
        toi = full_ccd(pairs.kind, pairs.idx, x_from_w, x_to_w)
        toi_filter = distance_toi(pairs.kind, pairs.idx, x_from_w, x_to_w,
                                  floor_frac=1.0 - self.config.alpha)
        report.timings["narrow_full"] += time.perf_counter() - t0
        report.full_ccd_calls += 1
        return pairs, toi, toi_filter

    def _clamp(self, toi: np.ndarray) -> float:
        finite = toi[~np.isnan(toi)]
        if finite.size == 0:
            return 1.0
        t = float(finite.min())
        if t <= 0.0:
            raise PenetrationError("impact at t<=0: step began in contact")
        return self.config.alpha * t

    def step(self) -> StepReport:
        cfg, mesh, state = self.config, self.mesh, self.state
        report = StepReport(timings={
            k: 0.0 for k in
            ("warm_start", "local", "global", "smoothing", "broad", "narrow_partial", "narrow_full")
        })
        self._step_samples = self.samples
        t_now = state.step_index * cfg.h
        pin_next = self._pin_targets(t_now + cfg.h)
        obs_next = self._obstacle_targets(t_now + cfg.h)
        f_ext = self.gravity_force

        z = inertia_target(state, mesh, cfg.h, f_ext, pinned_next=pin_next)

        t0 = time.perf_counter()
        x_cand, ws_iters = self.warm_start(z, pin_next)
        report.timings["warm_start"] += time.perf_counter() - t0

        x_start_w = self.world(state.x)
        x_cand_w = self.world(x_cand, obs_next)
        pairs, toi, toi_filter = self._full_ccd_site(x_start_w, x_cand_w, report)
        t_clamp = self._clamp(toi_filter)
        if t_clamp < 1.0:
            x_acc_w = x_start_w + t_clamp * (x_cand_w - x_start_w)
        else:
            x_acc_w = x_cand_w.copy()
        x_minus_w = x_acc_w.copy()

        self._witness(pairs, x_minus_w)
        hit = ~np.isnan(toi)
        engaged = hit | (pairs.distance < 2.0 * cfg.d_hat)
        if cfg.barrier_mode == "ndb":
            pairs.life_span = np.zeros(len(pairs), dtype=np.int64)
            pairs.weight = np.where(engaged, ndb_weights(pairs.life_span, self.k, cfg.ndb_base), 0.0)
        else:
            pairs.weight = dbb_weight(np.maximum(pairs.distance, 1e-12), 2.0 * cfg.d_hat, self.kappa)
            engaged = pairs.weight > 0

        x_cand = x_acc_w[: mesh.vertex_count].copy()
        obs_cand = x_acc_w[mesh.vertex_count:]
        pin_cand = x_cand[mesh.pinned] if mesh.pinned.size else pin_next

        outer_prev = x_cand.copy()
        self.last_outer_deltas = []
        dx_last = np.inf
        cap_hit = False
        toi_exit = 1.0
        exit_pairs = pairs

        for outer in range(cfg.outer_cap):
            for _ in range(cfg.inner_cap):
                coll = self._collision_terms(pairs, engaged, self.world(x_cand, obs_cand))
                x_new = self._inner_solve(z, x_cand, pin_cand, coll, report)
                dx_last = _rms(x_new[mesh.free] - x_cand[mesh.free])
                x_cand = x_new
                report.lg_iterations += 1

                x_cand_w = self.world(x_cand, obs_cand)
                t0 = time.perf_counter()
                active = partial_ccd(pairs.kind, pairs.idx, x_minus_w, x_cand_w, self._step_samples)
                report.timings["narrow_partial"] += time.perf_counter() - t0
                report.partial_ccd_calls += 1

                if cfg.barrier_mode == "ndb":
                    # a pair stays active while crossing or still too close
                    gap = self._pair_gaps(pairs, x_cand_w)
                    active = active | (gap < cfg.d_hat)
                    pairs.life_span = np.where(active, np.minimum(pairs.life_span + 1, 64), 0)
                    engaged = active | (gap < 2.0 * cfg.d_hat)
                    pairs.weight = np.where(engaged, ndb_weights(pairs.life_span, self.k, cfg.ndb_base), 0.0)
                else:
                    # baseline: distances must be refreshed with full narrow-phase work
                    t0 = time.perf_counter()
                    toi_in = distance_toi(pairs.kind, pairs.idx, x_minus_w, x_cand_w,
                                          floor_frac=1.0 - cfg.alpha)
                    report.timings["narrow_full"] += time.perf_counter() - t0
                    t_in = self._clamp(toi_in)
                    if t_in < 1.0:
                        x_cw = x_minus_w + t_in * (x_cand_w - x_minus_w)
                        x_cand = x_cw[: mesh.vertex_count].copy()
                        obs_cand = x_cw[mesh.vertex_count:]
                        pin_cand = x_cand[mesh.pinned] if mesh.pinned.size else pin_cand
                    self._witness(pairs, self.world(x_cand, obs_cand))
                    pairs.weight = dbb_weight(np.maximum(pairs.distance, 1e-12), 2.0 * cfg.d_hat, self.kappa)
                    engaged = pairs.weight > 0

                if cfg.iteration_cap and report.lg_iterations >= cfg.iteration_cap:
                    cap_hit = True
                    break
                if dx_last <= cfg.eps_inner:
                    break
            report.outer_loops += 1

            # every outer loop ends with a fresh pair set, impact times, and a
            # line-search filter: the candidate is truncated to the admissible
            # fraction of its displacement and becomes the new anchor, so the
            # collision-free bulk keeps moving while blocked pairs escalate
            x_cand_w = self.world(x_cand, obs_cand)
            new_pairs, toi, toi_filter = self._full_ccd_site(x_minus_w, x_cand_w, report)
            t_out = self._clamp(toi_filter)
            if t_out < 1.0:
                x_cand_w = x_minus_w + t_out * (x_cand_w - x_minus_w)
                x_cand = x_cand_w[: mesh.vertex_count].copy()
                obs_cand = x_cand_w[mesh.vertex_count:]
                pin_cand = x_cand[mesh.pinned] if mesh.pinned.size else pin_cand
                toi_exit = min(toi_exit, t_out)
            x_minus_w = x_cand_w.copy()
            self._witness(new_pairs, x_minus_w)
            if cfg.barrier_mode == "ndb":
                self._carry_life_spans(pairs, new_pairs)
                engaged = ~np.isnan(toi) | (new_pairs.distance < 2.0 * cfg.d_hat)
                new_pairs.weight = np.where(engaged, ndb_weights(new_pairs.life_span, self.k, cfg.ndb_base), 0.0)
            else:
                new_pairs.weight = dbb_weight(np.maximum(new_pairs.distance, 1e-12), 2.0 * cfg.d_hat, self.kappa)
                engaged = new_pairs.weight > 0
            pairs = new_pairs
            exit_pairs = pairs

            self._maybe_densify(x_minus_w, x_cand_w)

            dx_outer = _rms(x_cand[mesh.free] - outer_prev[mesh.free])
            self.last_outer_deltas.append(dx_outer)
            outer_prev = x_cand.copy()
            if cap_hit or dx_outer <= cfg.eps_outer:
                break

        # exit line search filtering on the final trajectory; toi_exit reports
        # the most restrictive admitted fraction across all filtering sites
        x_cand_w = self.world(x_cand, obs_cand)
        exit_pairs, toi, toi_filter = self._full_ccd_site(x_minus_w, x_cand_w, report)
        t_fin = self._clamp(toi_filter)
        if t_fin < 1.0:
            x_final_w = x_minus_w + t_fin * (x_cand_w - x_minus_w)
        else:
            x_final_w = x_cand_w
        toi_exit = min(toi_exit, t_fin)
        report.toi_exit = toi_exit
        report.cap_hit = cap_hit
        report.active_pairs = int(np.count_nonzero(engaged)) if len(pairs) else 0

        x_final = x_final_w[: mesh.vertex_count].copy()
        new_state = SimState(
            x=x_final,
            x_dot=(x_final - state.x) / cfg.h,
            x_prev=state.x.copy(),
            delta_f=np.zeros_like(state.x),
            step_index=state.step_index + 1,
        )
        self.obstacle_x = x_final_w[mesh.vertex_count:].copy()

        # residual forwarding
        needs_rf = toi_exit < cfg.eps_toi or (cap_hit and dx_last > cfg.eps_outer)
        if needs_rf:
            if len(exit_pairs):
                self._witness(exit_pairs, x_final_w)
            new_state.delta_f = self.residual_forward(x_final, z, exit_pairs, x_final_w)
            report.rf_triggered = True

        report.timings = {k: v * 1e3 for k, v in report.timings.items()}  # ms

        if cfg.verify and self._verify_oracle is not None:
            bad = self._verify_oracle(x_final_w, self.bvh.triangles)
            report.penetration_free = len(bad) == 0
            if not report.penetration_free:
                raise PenetrationError(
                    f"step {state.step_index}: {len(bad)} intersecting triangle pairs",
                    state_dump={"x": x_final, "pairs": bad},
                )

        self.state = new_state
        return report

    def residual_forward(self, x: np.ndarray, z: np.ndarray, pairs: PairSet, x_world: np.ndarray) -> np.ndarray:
        """Forwarded force from the unresolved residual at the step's exit.

        Approximates the quadratic-proxy displacement (all collision weights
        frozen at the base weight, no impact-time filtering anywhere) with
        reuse-basis corrections plus smoothing, then converts it to a force.
        """
        mesh, cfg = self.mesh, self.config
        # frozen-weight quadratic proxy of the barrier
        engaged = pairs.distance < 2.0 * cfg.d_hat if len(pairs) else np.zeros(0, dtype=bool)
        frozen = PairSet(
            kind=pairs.kind, idx=pairs.idx,
            life_span=np.zeros(len(pairs), dtype=np.int64),
            weight=np.where(engaged, self.k, 0.0),
            bary=pairs.bary, distance=pairs.distance, normal=pairs.normal,
        )
        coll = self._collision_terms(frozen, engaged, x_world) if len(pairs) else None
        if coll is not None:
            ids, weights, targets = coll
            quad = ("quad", ids[ids < mesh.vertex_count], weights[ids < mesh.vertex_count],
                    targets[ids < mesh.vertex_count])
        else:
            quad = None
        _, grad, _ = self.energy(x, z, collision=quad)
        f_r = -grad[mesh.free]

        # solve (H + delta) dx = f_r with the same two-level machinery
        delta = np.zeros(mesh.free.size)
        if quad is not None:
            fidx = mesh.free_index[quad[1]]
            keep = fidx >= 0
            np.add.at(delta, fidx[keep], quad[2][keep])
        dx = np.zeros((mesh.free.size, 3))
        reduced = None
        for _ in range(cfg.rf_iterations):
            dx, reduced = reduced_correction(self.subspace, self.system, f_r, dx, delta, reduced)
            dx = ajacobi_smooth(self.system, f_r, dx, cfg.smoothing_iterations, cfg.omega, delta)
            resid = f_r - self.system.H @ dx - delta[:, None] * dx
            if float(np.linalg.norm(resid)) <= cfg.rf_tolerance * max(float(np.linalg.norm(f_r)), 1e-30):
                break

        delta_f = np.zeros_like(x)
        delta_f[mesh.free] = 2.0 * mesh.vertex_mass[mesh.free, None] * dx / (cfg.h * cfg.h)
        norm = float(np.linalg.norm(delta_f))
        if norm > cfg.delta_f_cap:
            delta_f *= cfg.delta_f_cap / norm
        return delta_f

    def run(self, steps: int, on_step=None) -> list[StepReport]:
        reports = []
        for _ in range(steps):
            rep = self.step()
            reports.append(rep)
            if on_step is not None:
                on_step(self, rep)
        return reports
