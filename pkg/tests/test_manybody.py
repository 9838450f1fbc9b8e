import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nelsonlab import fock
from nelsonlab.errors import ConvergenceError, TruncationError
from nelsonlab.harness.checks import random_many_body_state
from nelsonlab.manybody import (ManyBodyState, NelsonOperator, SpatialGrid, apply_hamiltonian,
                                dense_oracle, energy, product_initial_state, propagate)


def _setup(N=1, n_x=8, cutoff=1.5, mass=0.0, n_max=3, coupling=True):
    grid = SpatialGrid(1, 2 * math.pi, n_x)
    modes = fock.make_mode_grid(1, 2 * math.pi, cutoff, mass)
    basis = fock.make_fock_basis(modes.n_modes, n_max)
    return grid, modes, basis, NelsonOperator(grid, modes, basis, N, coupling=coupling)


# -- spatial grid ---------------------------------------------------------------------

def test_grid_validation():
    with pytest.raises(ValueError, match="n_x must be >= 2"):
        SpatialGrid(1, 1.0, 1)
    with pytest.raises(ValueError):
        SpatialGrid(2, 1.0, 4)
    g = SpatialGrid(3, 2.0, 4)
    assert g.positions.shape == (64, 3)
    assert np.all(g.laplacian_multiplier <= 0)
    assert g.positions.min() >= 0 and g.positions.max() < 2.0


def test_spectral_laplacian_on_plane_wave():
    g = SpatialGrid(1, 2 * math.pi, 16)
    for k in (0, 1, 3, -5):
        f = g.plane_wave(k)
        np.testing.assert_allclose(g.minus_laplacian(f), k**2 * f, atol=1e-12)
        np.testing.assert_allclose(g.gradient(f)[0], 1j * k * f, atol=1e-12)
        assert g.norm(f) == pytest.approx(1.0)
        assert g.h1_norm_sq(f) == pytest.approx(1 + k**2)


def test_gaussian_normalized_3d():
    g = SpatialGrid(3, 2 * math.pi, 6)
    assert g.norm(g.gaussian([1.0, 2.0, 3.0], 0.9)) == pytest.approx(1.0)


# -- states ---------------------------------------------------------------------------

def test_state_shape_validation():
    grid, modes, basis, _ = _setup()
    with pytest.raises(ValueError, match="shape"):
        ManyBodyState(2, grid, basis, np.zeros((8, basis.dim), complex))


def test_product_state_vacuum_is_exactly_normalized():
    grid, modes, basis, _ = _setup(n_x=16)
    phi = grid.gaussian(2.0, 0.7)
    psi = product_initial_state(phi, np.zeros(modes.n_modes), 2, grid, basis)
    assert psi.norm() == pytest.approx(1.0, abs=1e-14)
    assert np.all(psi.coeffs[..., 1:] == 0)


def test_product_state_mean_boson_number():
    grid = SpatialGrid(1, 2 * math.pi, 16)
    modes = fock.make_mode_grid(1, 2 * math.pi, 1.5, 1.0)
    alpha = np.zeros(modes.n_modes, complex)
    alpha[0] = 0.4
    N = 2
    basis = fock.make_fock_basis(modes.n_modes, fock.required_n_max(N * 0.16))
    psi = product_initial_state(grid.gaussian(3.0, 0.8), alpha, N, grid, basis)
    probs = psi.weight * np.sum(np.abs(psi.coeffs.reshape(-1, basis.dim)) ** 2, axis=0)
    assert float(probs @ basis.totals) == pytest.approx(0.32, abs=1e-8)


def test_product_state_errors():
    grid, modes, basis, _ = _setup()
    phi = grid.gaussian(2.0, 0.7)
    with pytest.raises(ValueError, match="normalized"):
        product_initial_state(2 * phi, np.zeros(modes.n_modes), 1, grid, basis)
    with pytest.raises(TruncationError, match=r"use n_max >= \d+"):
        product_initial_state(phi, np.array([0.8, 0.8]), 2, grid, basis)


# -- Hamiltonian ------------------------------------------------------------------------

def test_free_plane_wave_eigenstate():
    grid, modes, basis, op = _setup(coupling=False)
    for k in (0, 2, -3):
        c = np.zeros((grid.n_points, basis.dim), complex)
        c[:, 0] = grid.plane_wave(k)
        out = apply_hamiltonian(op, ManyBodyState(1, grid, basis, c))
        np.testing.assert_allclose(out.coeffs, k**2 * c, atol=1e-12)


def test_free_tensor_sum_action():
    grid, modes, basis, op = _setup(coupling=False, mass=1.0)
    phi = grid.gaussian(2.0, 0.9)
    for j in range(modes.n_modes):
        occ = np.zeros(modes.n_modes, int)
        occ[j] = 1
        c = np.zeros((grid.n_points, basis.dim), complex)
        c[:, basis.index(occ)] = phi
        expected = np.zeros_like(c)
        expected[:, basis.index(occ)] = grid.minus_laplacian(phi) + modes.omega[j] * phi
        np.testing.assert_allclose(op.apply(c), expected, atol=1e-12)


def test_shape_mismatch_raises():
    grid, modes, basis, op = _setup()
    wrong = ManyBodyState(2, grid, basis, np.zeros((8, 8, basis.dim), complex))
    with pytest.raises(ValueError, match="does not match"):
        apply_hamiltonian(op, wrong)


def test_dense_assembly_matches_independent_kron_construction():
    grid = SpatialGrid(1, 2 * math.pi, 4)
    modes = fock.make_mode_grid(1, 2 * math.pi, 0.5, 1.0)  # one mode
    basis = fock.make_fock_basis(1, 2)
    op = NelsonOperator(grid, modes, basis, 1)
    H = dense_oracle(op).matrix
    # independent construction: dense DFT Laplacian and per-node field blocks
    F = np.fft.fft(np.eye(4), axis=0)
    lap = np.real(np.linalg.inv(F) @ np.diag(grid.q_sq.ravel()) @ F)
    ref = np.kron(lap, np.eye(basis.dim)).astype(complex) + np.kron(np.eye(4), fock.free_field_hamiltonian(basis, modes).toarray())
    for x in range(4):
        block = fock.field_operator(modes, basis, grid.positions[x]).toarray()
        ref[x * 3:(x + 1) * 3, x * 3:(x + 1) * 3] += block
    np.testing.assert_allclose(H, ref, atol=1e-12)


def test_field_block_accessor():
    grid, modes, basis, op = _setup(n_x=4)
    c = np.zeros((4, basis.dim), complex)
    c[2] = np.arange(basis.dim)
    expected = np.zeros_like(c)
    expected[2] = op.field_block(2) @ c[2]
    np.testing.assert_allclose(op.interaction(c), expected, atol=1e-14)


@given(st.integers(1, 2), st.booleans(), st.integers(0, 10**6))
@settings(max_examples=10)
def test_adjoint_identity(N, coupling, seed):
    grid, modes, basis, op = _setup(N=N, n_x=4, coupling=coupling)
    rng = np.random.default_rng(seed)
    u = rng.normal(size=op.dim) + 1j * rng.normal(size=op.dim)
    v = rng.normal(size=op.dim) + 1j * rng.normal(size=op.dim)
    lhs = np.vdot(u, op.matvec(v))
    rhs = np.conj(np.vdot(v, op.matvec(u)))
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_dense_oracle_hermitian_and_cap():
    *_, op = _setup(n_x=4)
    orc = dense_oracle(op)
    assert np.max(np.abs(orc.matrix - orc.matrix.conj().T)) <= 1e-12
    *_, big = _setup(N=2, n_x=32)
    with pytest.raises(ValueError, match="cap"):
        dense_oracle(big)


def test_uncoupled_spectrum_is_tensor_sum():
    grid, modes, basis, op = _setup(n_x=4, coupling=False, mass=1.0)
    evals = dense_oracle(op).evals
    spatial = np.sort(grid.q_sq.ravel())
    field = np.sort(fock.free_field_hamiltonian(basis, modes).toarray().diagonal().real)
    np.testing.assert_allclose(evals, np.sort(np.add.outer(spatial, field).ravel()), atol=1e-12)


def test_coupling_lowers_ground_energy():
    *_, coupled = _setup(n_x=6, mass=1.0)
    *_, free = _setup(n_x=6, mass=1.0, coupling=False)
    assert dense_oracle(coupled).evals[0] < dense_oracle(free).evals[0] - 1e-6


# -- propagation ------------------------------------------------------------------------

def test_free_propagation_phases():
    grid, modes, basis, op = _setup(coupling=False, mass=1.0)
    k, j = 2, 1
    occ = np.zeros(modes.n_modes, int)
    occ[j] = 1
    c = np.zeros((grid.n_points, basis.dim), complex)
    c[:, basis.index(occ)] = grid.plane_wave(k)
    psi = ManyBodyState(1, grid, basis, c)
    out = propagate(op, psi, 0.01, 100)
    expected = np.exp(-1j * (k**2 + modes.omega[j]) * 1.0) * c
    assert math.sqrt(psi.weight) * np.linalg.norm(out.coeffs - expected) <= 1e-9
    assert out.t == pytest.approx(1.0)


def test_coupled_unitarity_and_energy():
    grid, modes, basis, op = _setup(N=2, n_x=6, n_max=3)
    psi0 = product_initial_state(grid.gaussian(2.0, 0.8), np.full(2, 0.1), 2, grid, basis, tol=1.0)
    psi, stats = propagate(op, psi0, 0.01, 100, return_stats=True)
    assert abs(psi.norm() - 1) <= 1e-9
    assert stats.max_norm_drift <= 1e-9
    assert stats.energy_drift <= 1e-7
    assert energy(op, psi) == pytest.approx(stats.energy_end)


def test_oracle_equivalence_n1():
    grid, modes, basis, op = _setup(N=1, n_x=8, n_max=3)
    psi0 = product_initial_state(grid.gaussian(2.0, 0.8), np.array([0.2, 0.1j]), 1, grid, basis, tol=1.0)
    exact = dense_oracle(op).propagate(psi0, 0.5)
    approx = propagate(op, psi0, 0.01, 50)
    assert math.sqrt(psi0.weight) * np.linalg.norm(approx.coeffs - exact.coeffs) <= 1e-8


def test_permutation_symmetry_preserved():
    grid, modes, basis, op = _setup(N=2, n_x=4)
    psi0 = random_many_body_state(np.random.default_rng(0), 2, grid, basis)
    out = propagate(op, psi0, 0.05, 10)
    np.testing.assert_allclose(out.coeffs, np.transpose(out.coeffs, (1, 0, 2)), atol=1e-9)


def test_propagate_argument_errors():
    grid, modes, basis, op = _setup(n_x=4)
    psi = random_many_body_state(np.random.default_rng(1), 1, grid, basis)
    with pytest.raises(ValueError, match="dt"):
        propagate(op, psi, 0.0, 1)
    with pytest.raises(ValueError, match="krylov_dim"):
        propagate(op, psi, 0.1, 1, krylov_dim=3)


def test_lanczos_failure_reports_residual():
    grid, modes, basis, op = _setup(n_x=16)
    psi = random_many_body_state(np.random.default_rng(1), 1, grid, basis)
    with pytest.raises(ConvergenceError) as info:
        propagate(op, psi, 5.0, 1, krylov_dim=4, tol=1e-14)
    assert info.value.residual > 1e-14
