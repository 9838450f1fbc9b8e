"""Truncated bosonic Fock space over a finite set of field modes.

Field momenta live on the lattice ``k_j = 2*pi*j/L`` of the periodic box, so that
plane waves ``exp(i k x)`` are exactly periodic and momentum integrals become
sums with weight ``dk**d``. Ladder operators are dimensionless with
``[a_i, a_j^dagger] = delta_ij``; a continuum amplitude ``alpha(k)`` corresponds
to the discrete one through ``alpha(k_j) = alpha_j / sqrt(dk**d)``. All mode
amplitudes in this package use the discrete convention.

The creator is defined as the adjoint of the annihilator on the truncated
space: transitions out of the top sector ``sum(n) = n_max`` are dropped, which
keeps every Hamiltonian built from them exactly Hermitian and confines the
violation of the commutation relations to the top sector.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import comb, gammainc

from .errors import ConvergenceError

DEFAULT_MAX_FOCK_DIM = 2_000_000


@dataclass(frozen=True)
class ModeGrid:
    """Discretized field modes ``|k| <= cutoff`` with dispersion and form factors.

    Attributes:
        dim: spatial dimension (1 or 3).
        L: box length.
        cutoff: ultraviolet cutoff Lambda.
        mass: boson mass m_b.
        indices: integer multi-indices j, shape (M, dim).
        k: wavevectors 2*pi*j/L, shape (M, dim).
        omega: dispersion sqrt(|k|^2 + m_b^2), shape (M,).
        g: form factor sqrt(dk^d) (2 pi)^(-d/2) / sqrt(2 omega), shape (M,).
        theta: gradient weights g * k, shape (M, dim).
    """

    dim: int
    L: float
    cutoff: float
    mass: float
    indices: np.ndarray
    k: np.ndarray
    omega: np.ndarray
    g: np.ndarray
    theta: np.ndarray

    @property
    def n_modes(self) -> int:
        return len(self.omega)

    @property
    def dk(self) -> float:
        return 2 * np.pi / self.L

    @property
    def k_norm(self) -> np.ndarray:
        return np.linalg.norm(self.k, axis=1)

    @property
    def partner(self) -> np.ndarray:
        """Index of the mode carrying -k for every mode."""
        lookup = {tuple(j): n for n, j in enumerate(self.indices)}
        return np.array([lookup[tuple(-j)] for j in self.indices])

    # Discrete versions of the cutoff-function norms: dk^d-weighted sums.
    @property
    def kappa_norm_sq(self) -> float:
        return self.n_modes * self.dk**self.dim / (2 * np.pi) ** self.dim

    @property
    def eta_norm_sq(self) -> float:
        return float(np.sum(self.g**2))

    @property
    def theta_norm_sq(self) -> float:
        return float(np.sum(self.theta**2))

    def phases(self, x: np.ndarray) -> np.ndarray:
        """exp(i k_j . x) for positions of shape (P, dim); returns shape (P, M)."""
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        return np.exp(1j * x @ self.k.T)


def make_mode_grid(dim: int, L: float, cutoff: float, mass: float) -> ModeGrid:
    """Enumerate all lattice momenta 2*pi*j/L with |k| <= cutoff.

    The zero mode is dropped when ``mass == 0`` because its form factor diverges.
    """
    if dim not in (1, 3):
        raise ValueError(f"dimension must be 1 or 3, got {dim}")
    if not L > 0:
        raise ValueError("box length L must be > 0")
    if not cutoff > 0:
        raise ValueError("cutoff must be > 0")
    if not mass >= 0:
        raise ValueError("boson mass must be >= 0")

    dk = 2 * np.pi / L
    jmax = int(np.floor(cutoff / dk + 1e-12))
    rng = np.arange(-jmax, jmax + 1)
    grid = np.array(list(itertools.product(rng, repeat=dim)), dtype=np.int64).reshape(-1, dim)
    kvec = grid * dk
    knorm = np.linalg.norm(kvec, axis=1)
    keep = knorm <= cutoff * (1 + 1e-12)
    if mass == 0:
        keep &= knorm > 0
    grid, kvec = grid[keep], kvec[keep]
    if len(grid) == 0:
        raise ValueError("empty mode grid")

    omega = np.sqrt(np.sum(kvec**2, axis=1) + mass**2)
    g = np.sqrt(dk**dim) * (2 * np.pi) ** (-dim / 2) / np.sqrt(2 * omega)
    theta = g[:, None] * kvec
    for arr in (grid, kvec, omega, g, theta):
        arr.setflags(write=False)
    return ModeGrid(dim, float(L), float(cutoff), float(mass), grid, kvec, omega, g, theta)


def required_n_max(mean_number: float) -> int:
    """Boson cap for a coherent state with the given mean boson number.

    n_max = ceil(n) + 6 * ceil(sqrt(n + 1)) keeps the Poisson tail negligible.
    """
    return int(math.ceil(mean_number - 1e-12) + 6 * math.ceil(math.sqrt(mean_number + 1)))


def coherent_truncation_loss(n_max: int, mean_number: float) -> float:
    """1 - ||P W(alpha) vacuum|| for the projection P onto total boson number <= n_max.

    The total boson number of a coherent state is Poisson with mean sum |alpha_j|^2,
    so the loss follows from the Poisson tail P(n > n_max).
    """
    if mean_number <= 0:
        return 0.0
    tail = float(gammainc(n_max + 1, mean_number))  # regularized lower gamma = P(n > n_max)
    return tail / (1 + math.sqrt(1 - tail))


def min_n_max_for_loss(mean_number: float, tol: float) -> int:
    """Smallest n_max with coherent_truncation_loss(n_max, mean_number) <= tol."""
    k = int(math.floor(mean_number))
    while coherent_truncation_loss(k, mean_number) > tol:
        k += 1
    return k


class FockBasis:
    """Occupation tuples ``(n_1, ..., n_M)`` with total at most ``n_max``.

    Tuples are ordered by total boson number, then lexicographically, so the
    basis for a smaller ``n_max`` is a prefix of the basis for a larger one and
    the vacuum always has index 0.
    """

    def __init__(self, n_modes: int, n_max: int, max_dim: int = DEFAULT_MAX_FOCK_DIM):
        if n_modes < 1:
            raise ValueError("mode count must be >= 1")
        if n_max < 0:
            raise ValueError("n_max must be >= 0")
        size = int(comb(n_modes + n_max, n_max, exact=True))
        if size > max_dim:
            raise ValueError(f"basis too large: {size} > {max_dim}")
        self.n_modes = n_modes
        self.n_max = n_max

        states = []
        for total in range(n_max + 1):
            sector = []
            for combo in itertools.combinations_with_replacement(range(n_modes), total):
                occ = [0] * n_modes
                for m in combo:
                    occ[m] += 1
                sector.append(tuple(occ))
            states.extend(sorted(sector))
        self.states = np.array(states, dtype=np.int64).reshape(-1, n_modes)
        self.states.setflags(write=False)
        self.totals = self.states.sum(axis=1)
        self.totals.setflags(write=False)

        # mixed-radix codes give an O(log D) index lookup
        self._radix = (n_max + 1) ** np.arange(n_modes, dtype=np.int64)
        codes = self.states @ self._radix
        self._order = np.argsort(codes)
        self._sorted_codes = codes[self._order]
        self._ladder: dict[int, sp.csr_matrix] = {}

    @property
    def dim(self) -> int:
        return len(self.states)

    def __len__(self) -> int:
        return self.dim

    def __repr__(self) -> str:
        return f"FockBasis(n_modes={self.n_modes}, n_max={self.n_max}, dim={self.dim})"

    def index(self, occupation: Sequence[int]) -> int:
        return int(self.lookup(np.asarray(occupation)[None, :])[0])

    def lookup(self, occupations: np.ndarray) -> np.ndarray:
        """Basis indices of an array of occupation tuples (shape (P, M))."""
        occupations = np.asarray(occupations, dtype=np.int64)
        codes = occupations @ self._radix
        pos = np.searchsorted(self._sorted_codes, codes)
        pos = np.minimum(pos, len(self._sorted_codes) - 1)
        valid = (self._sorted_codes[pos] == codes) & (occupations.sum(axis=1) <= self.n_max)
        valid &= np.all(occupations >= 0, axis=1)
        if not np.all(valid):
            raise KeyError("occupation tuple outside the truncated basis")
        return self._order[pos]

    def sector_mask(self, total: int) -> np.ndarray:
        return self.totals == total

    def _annihilator_matrix(self, j: int) -> sp.csr_matrix:
        if not 0 <= j < self.n_modes:
            raise IndexError(f"mode index {j} out of range for {self.n_modes} modes")
        if j not in self._ladder:
            cols = np.nonzero(self.states[:, j] > 0)[0]
            lowered = self.states[cols].copy()
            lowered[:, j] -= 1
            rows = self.lookup(lowered)
            vals = np.sqrt(self.states[cols, j].astype(float))
            mat = sp.csr_matrix((vals, (rows, cols)), shape=(self.dim, self.dim))
            self._ladder[j] = mat
        return self._ladder[j]


def make_fock_basis(n_modes: int, n_max: int, max_dim: int = DEFAULT_MAX_FOCK_DIM) -> FockBasis:
    return FockBasis(n_modes, n_max, max_dim)


@dataclass(frozen=True)
class SparseOperator:
    """Sparse matrix on a truncated space plus a Hermiticity flag."""

    matrix: sp.csr_matrix
    hermitian: bool = False

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def entries(self):
        coo = self.matrix.tocoo()
        return coo.row, coo.col, coo.data

    def adjoint(self) -> "SparseOperator":
        return SparseOperator(self.matrix.conj().T.tocsr(), self.hermitian)

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def __matmul__(self, other):
        if isinstance(other, SparseOperator):
            return SparseOperator((self.matrix @ other.matrix).tocsr())
        return self.matrix @ other


def annihilator(basis: FockBasis, j: int) -> SparseOperator:
    return SparseOperator(basis._annihilator_matrix(j))


def creator(basis: FockBasis, j: int) -> SparseOperator:
    return SparseOperator(basis._annihilator_matrix(j).T.tocsr())


def number_operator(basis: FockBasis) -> SparseOperator:
    return SparseOperator(sp.diags(basis.totals.astype(float)).tocsr(), hermitian=True)


def free_field_hamiltonian(basis: FockBasis, grid: ModeGrid) -> SparseOperator:
    if basis.n_modes != grid.n_modes:
        raise ValueError(
            f"mode-count mismatch: basis has {basis.n_modes}, grid has {grid.n_modes}"
        )
    return SparseOperator(sp.diags(basis.states @ grid.omega).tocsr(), hermitian=True)


def _check_modes(grid: ModeGrid, basis: FockBasis):
    if basis.n_modes != grid.n_modes:
        raise ValueError(
            f"mode-count mismatch: basis has {basis.n_modes}, grid has {grid.n_modes}"
        )


def field_operator_parts(grid: ModeGrid, basis: FockBasis, x) -> tuple[SparseOperator, SparseOperator]:
    """Positive and negative frequency parts (Phi^+(x), Phi^-(x)) of the field."""
    _check_modes(grid, basis)
    ph = grid.phases(x)[0]
    plus = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    for j in range(grid.n_modes):
        plus = plus + grid.g[j] * ph[j] * basis._annihilator_matrix(j)
    plus = plus.tocsr()
    return SparseOperator(plus), SparseOperator(plus.conj().T.tocsr())


def field_operator(grid: ModeGrid, basis: FockBasis, x) -> SparseOperator:
    plus, minus = field_operator_parts(grid, basis, x)
    return SparseOperator((plus.matrix + minus.matrix).tocsr(), hermitian=True)


def field_gradient(grid: ModeGrid, basis: FockBasis, x) -> list[SparseOperator]:
    """Components of (grad Phi)(x) = sum_j i theta_j (e^{ikx} a_j - e^{-ikx} a_j^dagger)."""
    _check_modes(grid, basis)
    ph = grid.phases(x)[0]
    out = []
    for c in range(grid.dim):
        plus = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
        for j in range(grid.n_modes):
            plus = plus + 1j * grid.theta[j, c] * ph[j] * basis._annihilator_matrix(j)
        # i*theta*(e a - e* a^dag): the second half is the adjoint of the first
        plus = plus.tocsr()
        out.append(SparseOperator((plus + plus.conj().T).tocsr(), hermitian=True))
    return out


def vacuum(basis: FockBasis) -> np.ndarray:
    v = np.zeros(basis.dim, dtype=complex)
    v[0] = 1.0
    return v


class Displaced(NamedTuple):
    """Result of a Weyl displacement.

    ``norm_defect`` bounds the distance between ``state`` and the displacement
    computed without truncation.
    """

    state: np.ndarray
    norm_defect: float


def weyl_generator(basis: FockBasis, f) -> sp.csr_matrix:
    """Sparse anti-Hermitian matrix sum_j f_j a_j^dagger - conj(f_j) a_j."""
    f = np.asarray(f, dtype=complex)
    if f.shape != (basis.n_modes,):
        raise ValueError(f"amplitude vector must have shape ({basis.n_modes},)")
    lower = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    for j in np.nonzero(f)[0]:
        lower = lower + np.conj(f[j]) * basis._annihilator_matrix(j)
    lower = lower.tocsr()
    return (lower.conj().T - lower).tocsr()


def weyl_displace(basis: FockBasis, f, psi: np.ndarray, tol: float = 1e-14,
                  max_terms: int = 80) -> Displaced:
    """Apply W(f) = exp(sum_j f_j a_j^dagger - f_j^* a_j) to ``psi``.

    ``psi`` may be a single vector of shape (D,) or a batch of shape (D, R)
    whose columns are displaced independently. The exponential is evaluated by
    a Taylor series on sub-steps of norm at most 1/2.
    """
    if not tol > 0:
        raise ValueError("tol must be > 0")
    f = np.asarray(f, dtype=complex)
    psi = np.asarray(psi, dtype=complex)
    if psi.shape[0] != basis.dim:
        raise ValueError("state dimension does not match the basis")
    fnorm = float(np.linalg.norm(f))
    if fnorm == 0.0:
        return Displaced(psi.copy(), 0.0)

    gen = weyl_generator(basis, f)
    bound = 2 * fnorm * math.sqrt(max(basis.n_max, 1))
    n_sub = max(1, math.ceil(bound / 0.5))
    step = gen / n_sub
    top = basis.totals == basis.n_max
    leak_factor = fnorm * math.sqrt(basis.n_max + 1)

    def leak(v):
        return leak_factor * np.linalg.norm(v[top])

    v = psi.copy()
    scale = np.linalg.norm(psi)
    defect = 0.0
    prev_leak = leak(v)
    for _ in range(n_sub):
        term = v
        acc = v.copy()
        for n in range(1, max_terms + 1):
            term = step @ term / n
            acc += term
            tnorm = np.linalg.norm(term)
            if tnorm <= tol * scale / n_sub * 1e-3 or tnorm == 0.0:
                break
        else:
            raise ConvergenceError("Weyl Taylor series did not converge", tnorm)
        v = acc
        cur_leak = leak(v)
        defect += max(prev_leak, cur_leak) / n_sub
        prev_leak = cur_leak
    return Displaced(v, float(defect))


def coherent_state(basis: FockBasis, alpha, tol: float = 1e-14) -> Displaced:
    """W(alpha) applied to the vacuum."""
    return weyl_displace(basis, alpha, vacuum(basis), tol=tol)


def embed(psi: np.ndarray, small: FockBasis, large: FockBasis) -> np.ndarray:
    """Zero-pad Fock amplitudes (leading axis) from ``small`` into ``large``."""
    if small.n_modes != large.n_modes or large.n_max < small.n_max:
        raise ValueError("target basis must extend the source basis")
    out = np.zeros((large.dim,) + psi.shape[1:], dtype=complex)
    out[: small.dim] = psi
    return out
