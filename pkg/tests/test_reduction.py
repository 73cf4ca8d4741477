import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shmrom.fem import CONCRETE, ParamPoint, build_fom, generate_portal_mesh
from shmrom.integrator import GenAlphaParams, StateHistory
from shmrom.loads import portal_load_coefficients
from shmrom.reduction import (PodBasis, ReductionError, collect_snapshots, incremental_pod, pod, project,
                              reconstruction_report, rom_solve, truncation_errors)
from shmrom.solvers import FomSolver, RomSolver

from conftest import PORTAL


def _frobenius_error(S, basis):
    R = S - basis @ (basis.T @ S)
    return np.linalg.norm(R) / np.linalg.norm(S)


def test_rank_one_snapshots():
    u = np.arange(1.0, 11.0)
    S = np.outer(u, [1.0, -2.0, 3.0, 0.5])
    b = pod(S, 1e-6)
    assert b.size == 1
    assert b.error < 1e-12
    np.testing.assert_allclose(np.abs(b.basis[:, 0]), u / np.linalg.norm(u))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-3, 0.5))
def test_truncation_identity(seed, eps):
    S = np.random.default_rng(seed).normal(size=(50, 30))
    b = pod(S, eps)
    assert abs(b.error - _frobenius_error(S, b.basis)) < 1e-10
    assert b.error < eps
    if b.size > 1:
        assert truncation_errors(b.singular_values)[b.size - 1] >= eps


def test_basis_orthonormal_and_size_monotone():
    rng = np.random.default_rng(0)
    S = rng.normal(size=(60, 40)) @ np.diag(np.logspace(0, -6, 40)) @ rng.normal(size=(40, 40))
    sizes = []
    for eps in (1e-1, 1e-2, 1e-3, 1e-4, 1e-5):
        b = pod(S, eps)
        np.testing.assert_allclose(b.basis.T @ b.basis, np.eye(b.size), atol=1e-12)
        sizes.append(b.size)
    assert sizes == sorted(sizes)


def test_pod_rejects_bad_input():
    with pytest.raises(ValueError, match="all-zero"):
        pod(np.zeros((5, 3)), 1e-3)
    with pytest.raises(ValueError):
        pod(np.full((5, 3), np.nan), 1e-3)
    with pytest.raises(ValueError):
        pod(np.ones((5, 3)), 0.0)
    with pytest.raises(ValueError):
        incremental_pod([], 1e-3)


def test_incremental_single_block_equals_pod():
    S = np.random.default_rng(1).normal(size=(40, 12))
    a, b = pod(S, 1e-2), incremental_pod([S], 1e-2)
    np.testing.assert_array_equal(a.basis, b.basis)


def test_incremental_identical_blocks():
    S = np.random.default_rng(2).normal(size=(40, 6)) @ np.diag([10, 5, 1, 0.1, 1e-3, 1e-6])
    one = incremental_pod([S], 1e-4)
    many = incremental_pod([S, S, S], 1e-4)
    assert one.size == many.size
    # same subspace
    np.testing.assert_allclose(many.basis @ many.basis.T, one.basis @ one.basis.T, atol=1e-8)


def test_incremental_reports_progress():
    blocks = [np.random.default_rng(k).normal(size=(30, 4)) for k in range(3)]
    seen = []
    incremental_pod(iter(blocks), 1e-3, on_update=lambda tau, b: seen.append((tau, b.size)))
    assert [t for t, _ in seen] == [1, 2, 3]
    assert seen[-1][1] == 12


@pytest.fixture(scope="module")
def small_fom():
    return build_fom(generate_portal_mesh(PORTAL, 0.5), CONCRETE)


def test_identity_basis_projection(small_fom):
    rom = project(small_fom, np.eye(small_fom.n_dofs))
    np.testing.assert_allclose(rom.mass, small_fom.mass.toarray(), atol=1e-12 * abs(small_fom.mass).max())
    K = small_fom.stiffness_at(2, 0.2).toarray()
    np.testing.assert_allclose(rom.stiffness_at(2, 0.2), K, atol=1e-12 * np.abs(K).max())


def test_projected_arrays_spd_and_energy(small_fom):
    rng = np.random.default_rng(3)
    W, _ = np.linalg.qr(rng.normal(size=(small_fom.n_dofs, 8)))
    rom = project(small_fom, W)
    assert np.linalg.eigvalsh(rom.mass).min() > 0
    assert np.linalg.eigvalsh(rom.stiffness_at(0, 0.0)).min() > 0
    v = rng.normal(size=8)
    K = small_fom.stiffness_at(1, 0.1)
    assert np.isclose(v @ rom.stiffness_at(1, 0.1) @ v, (W @ v) @ (K @ (W @ v)), rtol=1e-10)


def test_rank_deficient_basis(small_fom):
    W = np.zeros((small_fom.n_dofs, 2))
    W[0, :] = 1.0
    with pytest.raises(ReductionError):
        project(small_fom, W)
    with pytest.raises(ValueError):
        project(small_fom, np.eye(3))


def test_identity_basis_rom_equals_fom(small_fom):
    p = ParamPoint(g=3, amplitude=2e4, frequency=70.0, delta=0.2)
    params = GenAlphaParams(0.8)
    fom_h = FomSolver(small_fom, 5e-3, 60, params).solve(p)
    sol = rom_solve(project(small_fom, np.eye(small_fom.n_dofs)), portal_load_coefficients(p, 5e-3, 60),
                    p.g, p.delta, 5e-3, params)
    scale = np.abs(fom_h.displacement).max()
    np.testing.assert_allclose(sol.lift(), fom_h.displacement, atol=1e-10 * scale)
    rows = np.array([4, 9])
    np.testing.assert_array_equal(sol.lifted_history(rows).displacement, sol.lift(rows))


def test_reconstruction_report_identical_and_hand_case():
    V = np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]])
    h = StateHistory(displacement=V, dt=1.0)
    rep = reconstruction_report(h, h)
    np.testing.assert_array_equal(rep["displacement_l2"], [0.0, 0.0])
    h2 = StateHistory(displacement=np.array([[1.0, 2.0, 4.0], [0.0, 0.0, 0.0]]), dt=1.0)
    rep = reconstruction_report(h, h2, rows=[0])
    np.testing.assert_allclose(rep["displacement_l2"], [1 / np.sqrt(14)])
    np.testing.assert_allclose(rep["displacement_max"], [1 / 3])


def test_reconstruction_report_length_mismatch():
    with pytest.raises(ValueError):
        reconstruction_report(StateHistory(np.ones((1, 3)), 1.0), StateHistory(np.ones((1, 4)), 1.0))


def test_rom_reconstructs_in_sample_trajectory(small_fom):
    params = GenAlphaParams(0.8)
    solver = FomSolver(small_fom, 5e-3, 100, params)
    p = ParamPoint(g=1, amplitude=3e4, frequency=80.0, delta=0.2)
    basis = incremental_pod(collect_snapshots(solver.displacements, [p], np.arange(100)), 1e-6)
    rom = RomSolver(project(small_fom, basis), 5e-3, 100, params)
    V = solver.displacements(p)
    VR = rom.sensor_history(p, np.arange(small_fom.n_dofs)).displacement
    assert np.linalg.norm(V - VR) / np.linalg.norm(V) < 1e-4


def test_collect_snapshots_provenance():
    def bad(p):
        raise RuntimeError("boom")
    p = ParamPoint(g=0, amplitude=1.0, frequency=1.0)
    with pytest.raises(ReductionError, match="sample 1"):
        next(collect_snapshots(bad, [p], [0]))


def test_reduced_assembly_independent_of_mesh_size():
    W = 20
    times = []
    for h in (0.4, 0.1):
        fom = build_fom(generate_portal_mesh(PORTAL, h), CONCRETE)
        basis, _ = np.linalg.qr(np.random.default_rng(0).normal(size=(fom.n_dofs, W)))
        rom = project(fom, basis)
        best = np.inf
        for _ in range(5):
            t0 = time.perf_counter()
            for _ in range(200):
                rom.stiffness_at(2, 0.1)
            best = min(best, time.perf_counter() - t0)
        times.append(best)
    assert times[1] < 3 * times[0]


def test_pod_basis_size_property():
    b = PodBasis(basis=np.eye(4)[:, :2], singular_values=np.ones(4), error=0.5, tol=0.6)
    assert b.size == 2
