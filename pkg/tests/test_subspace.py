import numpy as np
import pytest
import scipy.sparse as sp

from clothsim.constraints import GlobalSystem, assemble_global, build_elastic
from clothsim.mesh import build_mesh
from clothsim.scenes import grid_cloth
from clothsim.subspace import (
    Subspace,
    build_reduced,
    build_subspace,
    reduced_correction,
    reduced_update,
    spectrum,
    subspace_solve_free,
    subspace_solve_reuse,
    warmstart_correction,
)


def _system_from_diag(diag):
    H = sp.csr_matrix(np.diag(diag))
    return GlobalSystem(
        H=H,
        H_fp=sp.csr_matrix((len(diag), 0)),
        diag=np.asarray(diag, dtype=np.float64),
        mass_over_h2=np.ones(len(diag)),
    )


def test_diagonal_matrix_eigenpairs():
    diag = np.array([5.0, 1.0, 4.0, 2.0, 3.0])
    system = _system_from_diag(diag)
    rest = np.zeros((5, 3))
    sub = build_subspace(system, rest, r_bar=3, r=2)
    assert np.allclose(sub.eigenvalues, [1.0, 2.0, 3.0])
    # eigenvectors are coordinate axes of the smallest entries
    for col, j in zip(sub.U.T, (1, 3, 4)):
        assert np.isclose(abs(col[j]), 1.0)
        assert np.allclose(np.delete(col, j), 0.0, atol=1e-12)


def test_eigenpairs_match_dense_oracle(small_system):
    mesh, _, system = small_system
    rest = mesh.rest_positions[mesh.free]
    n = rest.shape[0]
    sub = build_subspace(system, rest, r_bar=12, r=6)
    dense = system.H.toarray()
    w_ref, v_ref = np.linalg.eigh(dense)
    assert np.allclose(sub.eigenvalues, w_ref[:12], rtol=1e-8, atol=1e-12)
    # eigenvectors up to sign (spectrum is simple for this mesh)
    for k in range(12):
        dot = abs(float(sub.U[:, k] @ v_ref[:, k]))
        assert dot >= 1.0 - 1e-8
    # U^T U = I and U^T H U diagonal
    assert np.allclose(sub.U.T @ sub.U, np.eye(12), atol=1e-10)
    UHU = sub.U.T @ dense @ sub.U
    off = UHU - np.diag(np.diag(UHU))
    assert np.abs(off).max() <= 1e-8 * np.abs(np.diag(UHU)).max()


def test_build_subspace_validates_ranks(small_system):
    mesh, _, system = small_system
    rest = mesh.rest_positions[mesh.free]
    with pytest.raises(ValueError):
        build_subspace(system, rest, r_bar=5, r=6)
    with pytest.raises(ValueError):
        build_subspace(system, rest, r_bar=0, r=0)


def test_solve_free_rest_equilibrium(small_system):
    mesh, _, system = small_system
    rest = mesh.rest_positions[mesh.free]
    sub = build_subspace(system, rest, r_bar=10, r=5)
    b = system.H @ rest
    x = subspace_solve_free(sub, b)
    assert np.allclose(x, rest, atol=1e-10)


def test_solve_free_complete_basis_is_direct_solve(rng):
    verts, tris = grid_cloth(4, 1.0)
    mesh = build_mesh(verts, tris, density=0.3, pins=[0, 1])
    elastic = build_elastic(mesh, 160.0, 3e-4)
    system = assemble_global(mesh, elastic, h=1.0 / 150.0)
    rest = mesh.rest_positions[mesh.free]
    n = rest.shape[0]
    sub = build_subspace(system, rest, r_bar=n, r=n)
    b = rng.normal(size=(n, 3))
    x = subspace_solve_free(sub, b)
    ref = np.linalg.solve(system.H.toarray(), b)
    assert np.linalg.norm(x - ref) <= 1e-8 * np.linalg.norm(ref)


def test_solve_free_annihilates_reduced_residual(small_system, rng):
    mesh, _, system = small_system
    rest = mesh.rest_positions[mesh.free]
    sub = build_subspace(system, rest, r_bar=10, r=5)
    b = rng.normal(size=(rest.shape[0], 3))
    x = subspace_solve_free(sub, b)
    reduced_residual = sub.U.T @ (b - system.H @ x)
    assert np.abs(reduced_residual).max() <= 1e-8 * np.linalg.norm(b)


def test_reduced_update_empty_and_single(small_system):
    mesh, _, system = small_system
    rest = mesh.rest_positions[mesh.free]
    sub = build_subspace(system, rest, r_bar=10, r=5)
    assert np.array_equal(reduced_update(sub, np.zeros(0, dtype=int), np.zeros(0)),
                          np.zeros((5, 5)))
    j = 7
    got = reduced_update(sub, np.array([j]), np.array([2.0]))
    assert np.allclose(got, 2.0 * np.outer(sub.V[j], sub.V[j]))
    with pytest.raises(ValueError):
        reduced_update(sub, np.array([j]), np.array([-1.0]))


def test_reduced_update_matches_dense_triple_product(rng):
    verts, tris = grid_cloth(36, 1.0)  # 1296 vertices
    mesh = build_mesh(verts, tris, density=0.3, pins=np.arange(36))
    elastic = build_elastic(mesh, 160.0, 3e-4)
    system = assemble_global(mesh, elastic, h=1.0 / 150.0)
    rest = mesh.rest_positions[mesh.free]
    sub = build_subspace(system, rest, r_bar=40, r=20)
    nf = rest.shape[0]
    active = rng.choice(nf, size=1000, replace=False)
    w = rng.uniform(0.1, 10.0, size=1000)
    delta_diag = np.zeros(nf)
    np.add.at(delta_diag, active, w)
    ref = sub.V.T @ (delta_diag[:, None] * sub.V)
    got = reduced_update(sub, active, w)
    assert np.abs(got - ref).max() <= 1e-10 * np.abs(ref).max()


def test_solve_reuse_no_collisions_matches_free(small_system, rng):
    mesh, _, system = small_system
    rest = mesh.rest_positions[mesh.free]
    sub = build_subspace(system, rest, r_bar=10, r=10)
    b = rng.normal(size=(rest.shape[0], 3))
    free = subspace_solve_free(sub, b)
    reuse = subspace_solve_reuse(sub, b, np.zeros(0, dtype=int), np.zeros(0))
    assert np.linalg.norm(free - reuse) <= 1e-10 * max(np.linalg.norm(free), 1.0)


def test_build_reduced_solves_dense(rng, small_system):
    mesh, _, system = small_system
    rest = mesh.rest_positions[mesh.free]
    sub = build_subspace(system, rest, r_bar=10, r=8)
    delta = rng.normal(size=(8, 8))
    delta = delta @ delta.T  # SPD perturbation
    reduced = build_reduced(sub, delta, rhs_scale=2.5)
    A = np.diag(sub.eigenvalues_r) + delta
    rhs = rng.normal(size=(8, 3))
    got = reduced.solve(rhs)
    ref = np.linalg.solve(A, rhs)
    resid = np.linalg.norm(A @ got - rhs) / np.linalg.norm(rhs)
    assert resid <= 1e-6
    assert np.allclose(got, ref, atol=1e-8)


def test_warmstart_and_spectrum(small_system, rng):
    mesh, _, system = small_system
    rest = mesh.rest_positions[mesh.free]
    sub = build_subspace(system, rest, r_bar=10, r=5)
    nf = rest.shape[0]
    # residual equal to eigenvector 4 projects to a unit coefficient there
    resid = np.tile(sub.U[:, 4][:, None], (1, 3)) / np.sqrt(3.0)
    coeffs = spectrum(sub, resid, modes=10)
    assert np.isclose(coeffs[4], 1.0)
    others = np.delete(coeffs, 4)
    assert np.abs(others).max() <= 1e-10
    assert np.allclose(spectrum(sub, np.zeros((nf, 3)), modes=10), 0.0)


def test_reduced_correction_improves_residual(small_system, rng):
    mesh, _, system = small_system
    rest = mesh.rest_positions[mesh.free]
    sub = build_subspace(system, rest, r_bar=10, r=5)
    nf = rest.shape[0]
    b = rng.normal(size=(nf, 3))
    x0 = rng.normal(size=(nf, 3))
    delta = np.zeros(nf)
    x1, _ = reduced_correction(sub, system, b, x0, delta)
    r0 = np.linalg.norm(sub.V.T @ (b - system.H @ x0))
    r1 = np.linalg.norm(sub.V.T @ (b - system.H @ x1))
    assert r1 <= 1e-8 * max(r0, 1.0)
