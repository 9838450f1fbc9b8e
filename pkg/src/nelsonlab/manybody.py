"""Microscopic Nelson model: N particles on a periodic grid coupled to a truncated field.

A many-body state stores function values ``Psi(x_1, ..., x_N, n)`` on the grid
tensored with Fock amplitudes, as an array of shape ``(G,)*N + (D,)`` with
``G = n_x**d`` grid nodes and ``D`` Fock basis states. Inner products carry the
weight ``dx**(d*N)``.

The Hamiltonian ``H_N = sum_i (-Delta_i + Phi(x_i)/sqrt(N)) + H_f`` is applied
matrix-free: kinetic terms through FFTs, the field through per-mode ladder
matrices acting on the Fock axis, H_f as a diagonal.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla

from . import fock
from .errors import TruncationError
from .fock import FockBasis, ModeGrid
from .krylov import krylov_step

log = logging.getLogger(__name__)

DENSE_ORACLE_CAP = 4096


class SpatialGrid:
    """Uniform periodic grid on [0, L)^d with a spectral Laplacian."""

    def __init__(self, dim: int, L: float, n_x: int):
        if dim not in (1, 3):
            raise ValueError(f"dimension must be 1 or 3, got {dim}")
        if n_x < 2:
            raise ValueError("n_x must be >= 2")
        if not L > 0:
            raise ValueError("box length L must be > 0")
        self.dim, self.L, self.n_x = dim, float(L), int(n_x)
        self.dx = self.L / self.n_x
        axis = np.arange(n_x) * self.dx
        mesh = np.meshgrid(*([axis] * dim), indexing="ij")
        self.positions = np.stack([m.ravel() for m in mesh], axis=1)
        q = 2 * np.pi * np.fft.fftfreq(n_x, d=self.dx)
        qmesh = np.meshgrid(*([q] * dim), indexing="ij")
        # wavevector components per axis, shape (dim,) + (n_x,)*dim
        self.q = np.stack(qmesh)
        self.q_sq = np.sum(self.q**2, axis=0)
        self.laplacian_multiplier = -self.q_sq
        for arr in (self.positions, self.q, self.q_sq, self.laplacian_multiplier):
            arr.setflags(write=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_x,) * self.dim

    @property
    def n_points(self) -> int:
        return self.n_x**self.dim

    @property
    def cell(self) -> float:
        return self.dx**self.dim

    def __repr__(self):
        return f"SpatialGrid(dim={self.dim}, L={self.L}, n_x={self.n_x})"

    def inner(self, f, g) -> complex:
        return self.cell * np.vdot(f, g)

    def norm(self, f) -> float:
        return math.sqrt(self.cell) * float(np.linalg.norm(f))

    def _spectral(self, f, multiplier):
        f = np.asarray(f, dtype=complex)
        shaped = f.reshape(self.shape + f.shape[1:])
        axes = tuple(range(self.dim))
        fk = np.fft.fftn(shaped, axes=axes)
        mult = multiplier.reshape(multiplier.shape + (1,) * (fk.ndim - self.dim))
        return np.fft.ifftn(fk * mult, axes=axes).reshape(f.shape)

    def minus_laplacian(self, f):
        """-Delta f along the leading (grid) axis of ``f``."""
        return self._spectral(f, self.q_sq)

    def gradient(self, f) -> list[np.ndarray]:
        """Spectral gradient components of ``f`` along the leading axis."""
        return [self._spectral(f, 1j * self.q[c]) for c in range(self.dim)]

    def kinetic_propagator(self, f, t):
        """exp(i Delta t) f."""
        return self._spectral(f, np.exp(-1j * self.q_sq * t))

    def sobolev_weight(self, f):
        """sqrt(1 - Delta) f."""
        return self._spectral(f, np.sqrt(1.0 + self.q_sq))

    def h1_norm_sq(self, f) -> float:
        return float(np.real(self.inner(f, f) + self.inner(f, self.minus_laplacian(f))))

    def gaussian(self, center, width) -> np.ndarray:
        """Periodized normalized Gaussian exp(-|x-c|^2/(2 w^2))."""
        center = np.broadcast_to(np.asarray(center, dtype=float), (self.dim,))
        d = self.positions - center
        d -= self.L * np.round(d / self.L)
        f = np.exp(-np.sum(d**2, axis=1) / (2 * width**2)).astype(complex)
        return f / self.norm(f)

    def plane_wave(self, kvec) -> np.ndarray:
        kvec = np.broadcast_to(np.asarray(kvec, dtype=float), (self.dim,))
        return np.exp(1j * self.positions @ kvec) / math.sqrt(self.L**self.dim)


@dataclass(frozen=True)
class ManyBodyState:
    """Coefficients of Psi_N over (grid)^N tensor Fock basis at time ``t``."""

    N: int
    grid: SpatialGrid
    basis: FockBasis
    coeffs: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        expected = (self.grid.n_points,) * self.N + (self.basis.dim,)
        if self.coeffs.shape != expected:
            raise ValueError(f"coefficient shape {self.coeffs.shape} != {expected}")

    @property
    def weight(self) -> float:
        return self.grid.cell**self.N

    def inner(self, other: "ManyBodyState | np.ndarray") -> complex:
        c = other.coeffs if isinstance(other, ManyBodyState) else other
        return self.weight * np.vdot(self.coeffs, c)

    def norm(self) -> float:
        return math.sqrt(self.weight) * float(np.linalg.norm(self.coeffs))

    def evolve(self, coeffs: np.ndarray, t: float | None = None) -> "ManyBodyState":
        return replace(self, coeffs=coeffs, t=self.t if t is None else t)


def product_initial_state(phi0, alpha0, N: int, grid: SpatialGrid, basis: FockBasis,
                          tol: float = 1e-8) -> ManyBodyState:
    """phi0^{(x)N} (x) W(sqrt(N) alpha0) vacuum."""
    if N < 1:
        raise ValueError("N must be >= 1")
    phi0 = np.asarray(phi0, dtype=complex)
    if abs(grid.norm(phi0) - 1) > 1e-10:
        raise ValueError(f"phi0 must be normalized, got norm {grid.norm(phi0):.12f}")
    mean = N * float(np.sum(np.abs(alpha0) ** 2))
    loss = fock.coherent_truncation_loss(basis.n_max, mean)
    if loss > tol:
        need = max(fock.required_n_max(mean), fock.min_n_max_for_loss(mean, tol))
        raise TruncationError(
            f"n_max={basis.n_max} too small: coherent-state truncation loss "
            f"{loss:.2e} > {tol:.0e}; use n_max >= {need}")
    coeffs = fock.coherent_state(basis, math.sqrt(N) * np.asarray(alpha0, dtype=complex)).state
    for _ in range(N):
        coeffs = np.multiply.outer(phi0, coeffs)
    return ManyBodyState(N, grid, basis, coeffs)


class NelsonOperator:
    """Matrix-free H_N on (grid)^N tensor truncated Fock space."""

    def __init__(self, grid: SpatialGrid, modes: ModeGrid, basis: FockBasis, N: int,
                 coupling: bool = True):
        if modes.n_modes != basis.n_modes:
            raise ValueError("mode-count mismatch between mode grid and Fock basis")
        if modes.dim != grid.dim:
            raise ValueError("mode grid and spatial grid dimensions differ")
        if N < 1:
            raise ValueError("N must be >= 1")
        self.grid, self.modes, self.basis, self.N = grid, modes, basis, N
        self.coupling = coupling
        G, D = grid.n_points, basis.dim
        self.shape = (G,) * N + (D,)
        self.dim = G**N * D

        # -sum_i Delta_i is diagonal in the joint momentum representation
        kin = np.zeros((grid.n_x,) * (grid.dim * N))
        for i in range(N):
            idx = [None] * (grid.dim * N)
            idx[i * grid.dim:(i + 1) * grid.dim] = [slice(None)] * grid.dim
            kin = kin + grid.q_sq[tuple(idx)]
        self._kinetic = kin[..., None]
        self._field_energy = basis.states @ modes.omega

        # phase tables e^{i k_j x} at grid nodes, shape (G, M)
        self.node_phases = modes.phases(grid.positions)
        self._lowerT = [basis._annihilator_matrix(j).T.tocsr() for j in range(modes.n_modes)]
        self._raiseT = [basis._annihilator_matrix(j).tocsr() for j in range(modes.n_modes)]
        if coupling:
            # S_j(X) = sum_i e^{i k_j x_i} over the configuration space
            self._phase_sums = []
            for j in range(modes.n_modes):
                s = np.zeros((G,) * N, dtype=complex)
                for i in range(N):
                    idx = [None] * N
                    idx[i] = slice(None)
                    s = s + self.node_phases[:, j][tuple(idx)]
                self._phase_sums.append(s[..., None])

    def __repr__(self):
        return (f"NelsonOperator(N={self.N}, grid={self.grid!r}, modes={self.modes.n_modes}, "
                f"basis={self.basis!r}, coupling={self.coupling})")

    def lower(self, coeffs: np.ndarray, j: int) -> np.ndarray:
        """a_j acting on the Fock axis."""
        flat = coeffs.reshape(-1, self.basis.dim)
        return np.asarray(flat @ self._lowerT[j]).reshape(coeffs.shape)

    def raise_(self, coeffs: np.ndarray, j: int) -> np.ndarray:
        """a_j^dagger acting on the Fock axis."""
        flat = coeffs.reshape(-1, self.basis.dim)
        return np.asarray(flat @ self._raiseT[j]).reshape(coeffs.shape)

    def field_block(self, node: int) -> fock.SparseOperator:
        """Sparse Phi(x) for grid node ``node``."""
        return fock.field_operator(self.modes, self.basis, self.grid.positions[node])

    def kinetic(self, coeffs: np.ndarray) -> np.ndarray:
        G = self.grid
        shaped = coeffs.reshape((G.n_x,) * (G.dim * self.N) + (self.basis.dim,))
        axes = tuple(range(G.dim * self.N))
        out = np.fft.ifftn(np.fft.fftn(shaped, axes=axes) * self._kinetic, axes=axes)
        return out.reshape(coeffs.shape)

    def interaction(self, coeffs: np.ndarray) -> np.ndarray:
        out = np.zeros_like(coeffs, dtype=complex)
        if not self.coupling:
            return out
        for j, gj in enumerate(self.modes.g):
            s = self._phase_sums[j]
            out += gj * (s * self.lower(coeffs, j) + s.conj() * self.raise_(coeffs, j))
        return out / math.sqrt(self.N)

    def apply(self, coeffs: np.ndarray) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=complex).reshape(self.shape)
        return self.kinetic(coeffs) + self.interaction(coeffs) + coeffs * self._field_energy

    def matvec(self, flat: np.ndarray) -> np.ndarray:
        return self.apply(flat.reshape(self.shape)).ravel()


def apply_hamiltonian(op: NelsonOperator, psi: ManyBodyState) -> ManyBodyState:
    if psi.coeffs.shape != op.shape:
        raise ValueError(f"state shape {psi.coeffs.shape} does not match operator {op.shape}")
    return psi.evolve(op.apply(psi.coeffs))


def energy(op: NelsonOperator, psi: ManyBodyState) -> float:
    return float(np.real(psi.inner(op.apply(psi.coeffs))))


@dataclass
class PropagationStats:
    steps: int
    max_norm_drift: float
    energy_start: float
    energy_end: float
    krylov_error: float

    @property
    def energy_drift(self) -> float:
        return abs(self.energy_end - self.energy_start)


def propagate(op: NelsonOperator, psi: ManyBodyState, dt: float, steps: int,
              krylov_dim: int = 24, tol: float = 1e-9, return_stats: bool = False):
    """Advance ``psi`` by ``steps`` steps of exp(-i H_N dt)."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if psi.coeffs.shape != op.shape:
        raise ValueError(f"state shape {psi.coeffs.shape} does not match operator {op.shape}")
    v = psi.coeffs.ravel().astype(complex)
    norm0 = np.linalg.norm(v)
    e0 = energy(op, psi)
    max_drift, total_err = 0.0, 0.0
    for _ in range(steps):
        v, err = krylov_step(op.matvec, v, dt, krylov_dim, tol)
        total_err += err
        max_drift = max(max_drift, abs(np.linalg.norm(v) / norm0 - 1))
    out = psi.evolve(v.reshape(op.shape), psi.t + steps * dt)
    if not return_stats:
        return out
    stats = PropagationStats(steps, max_drift, e0, energy(op, out), total_err)
    log.debug("propagate: %s", stats)
    return out, stats


class DenseOracle:
    """Full Hamiltonian matrix with its eigendecomposition (small instances only)."""

    def __init__(self, matrix: np.ndarray, shape: tuple[int, ...]):
        self.matrix = matrix
        self.shape = shape
        herm = (matrix + matrix.conj().T) / 2
        self.evals, self.evecs = sla.eigh(herm)

    def propagate(self, psi: ManyBodyState, t: float) -> ManyBodyState:
        c = self.evecs.conj().T @ psi.coeffs.ravel()
        out = self.evecs @ (np.exp(-1j * self.evals * t) * c)
        return psi.evolve(out.reshape(self.shape), psi.t + t)


def dense_oracle(op: NelsonOperator, cap: int = DENSE_ORACLE_CAP) -> DenseOracle:
    """Assemble H_N column by column from the matrix-free application."""
    if op.dim > cap:
        raise ValueError(f"dimension {op.dim} above dense oracle cap {cap}")
    H = np.empty((op.dim, op.dim), dtype=complex)
    e = np.zeros(op.dim, dtype=complex)
    for col in range(op.dim):
        e[col] = 1.0
        H[:, col] = op.matvec(e)
        e[col] = 0.0
    return DenseOracle(H, op.shape)
