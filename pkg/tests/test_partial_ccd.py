import numpy as np
import pytest

from clothsim.collision.ccd import full_ccd
from clothsim.collision.pairs import (
    LIFE_SPAN_CAP,
    PairSet,
    dbb_weight,
    dbb_weight_gradient,
    ndb_weights,
    update_ndb_weights,
)
from clothsim.collision.partial import (
    SampleSet,
    default_samples,
    lattice_samples,
    partial_ccd,
    query_q,
    sample_bound,
)


def _crossing_pair():
    x0 = np.array(
        [[0.25, 0.25, -1.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]
    )
    x1 = x0.copy()
    x1[0, 2] = 1.0
    return np.array([0]), np.array([[0, 1, 2, 3]]), x0, x1


def test_query_static_gap_positive():
    x = np.array(
        [[0.25, 0.25, 1.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]
    )
    q = query_q(np.array([0]), np.array([[0, 1, 2, 3]]), x, x, np.array([[0.25, 0.25]]))
    assert np.isclose(q[0, 0], 1.0)


def test_query_crossing_center_negative_one():
    kind, idx, x0, x1 = _crossing_pair()
    q = query_q(kind, idx, x0, x1, np.array([[0.25, 0.25]]))
    assert np.isclose(q[0, 0], -1.0)  # (0,0,-1) . (0,0,1)


def test_query_value_at_impact_witness():
    # Q at the impact parameters equals ((t*-1)/t*) * |p2(0)-p1(0)|^2
    kind, idx, x0, x1 = _crossing_pair()
    t = full_ccd(kind, idx, x0, x1)[0]
    lam = np.array([[0.25, 0.25]])  # impact point parameters
    q = query_q(kind, idx, x0, x1, lam)
    gap0 = 1.0  # |p2(0) - p1(0)| at the witness parameters
    assert np.isclose(q[0, 0], (t - 1.0) / t * gap0**2, atol=1e-9)


def test_partial_ccd_crossing_true():
    kind, idx, x0, x1 = _crossing_pair()
    assert partial_ccd(kind, idx, x0, x1, default_samples(3)).all()


def test_partial_ccd_receding_false():
    kind, idx, x0, _ = _crossing_pair()
    x1 = x0.copy()
    x1[0, 2] = -3.0  # moving away
    assert not partial_ccd(kind, idx, x0, x1, default_samples(3)).any()


def test_partial_ccd_matches_query_reference(rng):
    m = 5000
    kind = np.zeros(m, dtype=np.int8)
    kind[m // 2 :] = 1
    x0 = rng.normal(size=(4 * m, 3))
    x1 = x0 + 0.4 * rng.normal(size=(4 * m, 3))
    idx = np.arange(4 * m).reshape(m, 4)
    for count in (1, 3, 6):
        s = default_samples(count)
        got = partial_ccd(kind, idx, x0, x1, s)
        kmax = max(len(s.vt_points), len(s.ee_points))
        lam = np.empty((m, kmax + 1, 2))
        vt = kind == 0
        lam[vt, :kmax] = np.resize(s.vt_points, (kmax, 2))
        lam[~vt, :kmax] = np.resize(s.ee_points, (kmax, 2))
        from clothsim.collision.geometry import pair_witness

        _, _, bary, _ = pair_witness(kind, idx, x0)
        lam[:, -1] = bary
        ref = (query_q(kind, idx, x0, x1, lam) <= 0.0).any(axis=1)
        assert np.array_equal(got, ref)


def test_sample_bound_values():
    assert np.isclose(sample_bound(0.1, 0.2, 1.0, 0.8), 4.018e-4, rtol=5e-4)
    # alpha -> 1 sends the bound to zero
    assert sample_bound(0.1, 0.2, 1.0, 1.0 - 1e-12) < 1e-12
    # doubling the start distance quadruples the bound
    r1 = sample_bound(0.1, 0.3, 1.0, 0.8)
    r2 = sample_bound(0.2, 0.3, 1.0, 0.8)
    assert np.isclose(r2, 4.0 * r1)
    with pytest.raises(ValueError):
        sample_bound(-0.1, 0.2, 1.0, 0.8)


def test_lattice_samples_cover_domain():
    for domain in ("triangle", "box"):
        for interval in (0.3, 0.1, 0.05):
            pts = lattice_samples(interval, domain)
            u = np.linspace(0.0, 1.0, 80)
            gx, gy = np.meshgrid(u, u)
            probes = np.stack([gx.ravel(), gy.ravel()], axis=1)
            if domain == "triangle":
                probes = probes[probes.sum(axis=1) <= 1.0]
            d = np.linalg.norm(probes[:, None] - pts[None], axis=2).min(axis=1)
            assert d.max() <= interval + 0.02  # probe-grid discretization slack


def test_default_sample_domains():
    for count in (1, 3, 6):
        s = default_samples(count)
        assert (s.vt_points >= 0).all() and (s.vt_points.sum(axis=1) <= 1.0).all()
        assert (s.ee_points >= 0).all() and (s.ee_points <= 1.0).all()
        assert s.interval > 0


def test_ndb_weights_powers():
    assert ndb_weights(np.array([0]), 1.0, 2.0)[0] == 1.0
    assert ndb_weights(np.array([10]), 1.0, 2.0)[0] == 1024.0
    # life span is capped so weights stay finite
    assert np.isfinite(ndb_weights(np.array([LIFE_SPAN_CAP + 50]), 1.0, 2.0)[0])


def test_ndb_weight_reset_after_inactive():
    pairs = PairSet(
        kind=np.zeros(1, dtype=np.int8),
        idx=np.zeros((1, 4), dtype=np.int64),
        life_span=np.array([5]),
        weight=ndb_weights(np.array([5]), 1.0, 2.0),
    )
    pairs = update_ndb_weights(pairs, np.array([False]), 1.0, 2.0)
    assert pairs.life_span[0] == 0
    assert pairs.weight[0] == 1.0
    pairs = update_ndb_weights(pairs, np.array([True]), 1.0, 2.0)
    assert pairs.life_span[0] == 1
    assert pairs.weight[0] == 2.0


def test_dbb_weight_boundary_and_divergence():
    d_hat = 1e-3
    kappa = 1.0
    assert dbb_weight(d_hat, d_hat, kappa) == 0.0
    assert dbb_weight(2 * d_hat, d_hat, kappa) == 0.0
    small = np.array([1e-7, 1e-6, 1e-5, 1e-4])
    vals = dbb_weight(small, d_hat, kappa)
    assert (np.diff(vals) < 0).all()  # monotone increase toward d -> 0
    # log divergence: halving d keeps increasing the value without bound
    assert dbb_weight(1e-200, d_hat, kappa) > 50 * dbb_weight(1e-6, d_hat, kappa)
    g = dbb_weight_gradient(np.array([d_hat / 2]), d_hat, kappa)
    eps = 1e-9
    fd = (dbb_weight(d_hat / 2 + eps, d_hat, kappa) - dbb_weight(d_hat / 2 - eps, d_hat, kappa)) / (2 * eps)
    assert np.isclose(g[0], fd, rtol=1e-5)
