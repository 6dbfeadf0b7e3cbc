import numpy as np
import pytest
import scipy.sparse as sp

from clothsim.constraints import GlobalSystem, assemble_global, build_elastic
from clothsim.mesh import build_mesh
from clothsim.scenes import strip_cloth
from clothsim.smoothing import SmootherDivergence, ajacobi_smooth, jacobi_step
from clothsim.subspace import build_subspace, subspace_solve_free, spectrum


def _random_spd_system(n, rng, density=0.3):
    A = sp.random(n, n, density=density, random_state=np.random.RandomState(rng.integers(1 << 31)))
    A = A + A.T + sp.eye(n) * (2.0 * n * density + 1.0)  # diagonally dominant SPD
    A = A.tocsr()
    return GlobalSystem(
        H=A,
        H_fp=sp.csr_matrix((n, 0)),
        diag=A.diagonal().copy(),
        mass_over_h2=np.ones(n),
    )


def test_diagonal_system_converges_in_one_step():
    diag = np.array([2.0, 3.0, 4.0])
    system = GlobalSystem(
        H=sp.csr_matrix(np.diag(diag)),
        H_fp=sp.csr_matrix((3, 0)),
        diag=diag,
        mass_over_h2=np.ones(3),
    )
    b = np.array([[2.0], [6.0], [12.0]])
    x = ajacobi_smooth(system, b, np.zeros((3, 1)), iterations=2)
    assert np.allclose(x, b / diag[:, None])


def test_rank2_step_equals_two_jacobi_steps(rng):
    # acceptance criterion: one aggregated step == two sequential Jacobi steps
    for trial in range(100):
        n = int(rng.integers(5, 60))
        system = _random_spd_system(n, rng)
        b = rng.normal(size=(n, 3))
        x0 = rng.normal(size=(n, 3))
        delta = rng.uniform(0.0, 1.0, size=n) if trial % 2 else None

        x1 = jacobi_step(system, b, x0, omega=0.0, diag_delta=delta)
        x2 = jacobi_step(system, b, x1, omega=0.0, diag_delta=delta)
        agg = ajacobi_smooth(system, b, x0, iterations=2, omega=0.0, diag_delta=delta)
        scale = max(float(np.abs(x2).max()), 1.0)
        assert np.abs(agg - x2).max() <= 1e-12 * scale


def test_rank2_step_with_damping_matches(rng):
    for _ in range(20):
        n = 30
        system = _random_spd_system(n, rng)
        b = rng.normal(size=(n, 3))
        x0 = rng.normal(size=(n, 3))
        omega = float(rng.uniform(0.1, 0.9))
        x1 = jacobi_step(system, b, x0, omega=omega)
        x2 = jacobi_step(system, b, x1, omega=omega)
        agg = ajacobi_smooth(system, b, x0, iterations=2, omega=omega)
        assert np.abs(agg - x2).max() <= 1e-12 * max(float(np.abs(x2).max()), 1.0)


def test_divergence_detection():
    # a system the undamped iteration cannot handle: strong off-diagonal
    n = 40
    A = np.full((n, n), -1.0)
    np.fill_diagonal(A, 1.5)
    A = sp.csr_matrix(-A)  # make diagonal positive, keep it non-dominant
    A = sp.csr_matrix(np.abs(A.toarray()) * -1 + np.diag(np.full(n, 2.0)))
    system = GlobalSystem(
        H=A, H_fp=sp.csr_matrix((n, 0)), diag=A.diagonal().copy(), mass_over_h2=np.ones(n)
    )
    b = np.ones((n, 1))
    with pytest.raises(SmootherDivergence):
        ajacobi_smooth(system, b, np.zeros((n, 1)), iterations=400, omega=0.0)


def test_cantilever_smoothing_frequency_split():
    # stiff bending strip: plain smoothing stalls on low modes while high
    # modes decay fast
    verts, tris = strip_cloth(150, 4, 1.0, 0.1)
    pins = np.flatnonzero(verts[:, 0] == 0.0)
    mesh = build_mesh(verts, tris, density=0.3, pins=pins)
    elastic = build_elastic(mesh, 1600.0, 1.0)
    system = assemble_global(mesh, elastic, h=1.0 / 30.0)
    rest = mesh.rest_positions[mesh.free]
    r_bar = 60
    sub = build_subspace(system, rest, r_bar=r_bar, r=30)

    rng = np.random.default_rng(7)
    b = system.H @ (rest + 0.05 * rng.normal(size=rest.shape))
    x0 = rest.copy()
    x = ajacobi_smooth(system, b, x0, iterations=100, omega=0.3)

    def mode_norms(state):
        resid = b - system.H @ state
        return spectrum(sub, resid, modes=r_bar)

    before = mode_norms(x0)
    after = mode_norms(x)
    low = slice(0, 10)
    high = slice(30, r_bar)
    low_ratio = np.linalg.norm(after[low]) / np.linalg.norm(before[low])
    high_ratio = np.linalg.norm(after[high]) / np.linalg.norm(before[high])
    assert low_ratio >= 0.5      # low modes barely move
    assert high_ratio <= 0.1     # high modes drop by >= 90%
