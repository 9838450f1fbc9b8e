"""Counting functionals, reduced density matrices and the bounds relating them.

Conventions: grid functions are function values with the ``dx**d`` weight;
reduced density matrices of the charges are returned in the orthonormal grid
basis ``e_x / sqrt(dx**d)``; mode-space quantities use the dimensionless mode
amplitudes of :mod:`nelsonlab.fock`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import fock
from .effective import EffectiveState, SKGSystem
from .manybody import ManyBodyState, NelsonOperator, SpatialGrid

NORM_TOL = 1e-8
MUTATIONS = ("flip_dbeta_b_source",)


# -- slot helpers ---------------------------------------------------------------

def _on_slot(values: np.ndarray, N: int, slot: int = 0) -> np.ndarray:
    """Broadcast a grid function over configuration slot ``slot`` of a state array."""
    idx = [None] * (N + 1)
    idx[slot] = slice(None)
    return values[tuple(idx)]


def _lower(coeffs: np.ndarray, basis: fock.FockBasis, j: int) -> np.ndarray:
    flat = coeffs.reshape(-1, basis.dim)
    return np.asarray(flat @ basis._annihilator_matrix(j).T).reshape(coeffs.shape)


def _raise(coeffs: np.ndarray, basis: fock.FockBasis, j: int) -> np.ndarray:
    flat = coeffs.reshape(-1, basis.dim)
    return np.asarray(flat @ basis._annihilator_matrix(j)).reshape(coeffs.shape)


def _overlap_slot(psi: ManyBodyState, phi: np.ndarray) -> np.ndarray:
    """<phi|_1 Psi as an array over the remaining variables."""
    return psi.grid.cell * np.tensordot(phi.conj(), psi.coeffs, axes=(0, 0))


def project_p1(psi: ManyBodyState, phi: np.ndarray) -> np.ndarray:
    return np.multiply.outer(phi, _overlap_slot(psi, phi))


def project_q1(psi: ManyBodyState, phi: np.ndarray) -> np.ndarray:
    return psi.coeffs - project_p1(psi, phi)


def _minus_laplacian_slot(grid: SpatialGrid, coeffs: np.ndarray) -> np.ndarray:
    return grid.minus_laplacian(coeffs)


def _check_normalized(psi: ManyBodyState, phi: np.ndarray | None = None):
    if abs(psi.norm() - 1) > NORM_TOL:
        raise ValueError(f"state not normalized: norm {psi.norm():.12f}")
    if phi is not None and abs(psi.grid.norm(phi) - 1) > NORM_TOL:
        raise ValueError(f"condensate not normalized: norm {psi.grid.norm(phi):.12f}")


# -- beta functionals -----------------------------------------------------------

def beta_a(psi: ManyBodyState, phi: np.ndarray) -> float:
    """Fraction of particles outside phi: <Psi, q_1 Psi> = ||q_1 Psi||^2."""
    _check_normalized(psi, phi)
    q = project_q1(psi, phi)
    return psi.weight * float(np.vdot(q, q).real)


def beta_b(psi: ManyBodyState, alpha) -> float:
    """sum_j ||(a_j / sqrt(N) - alpha_j) Psi||^2."""
    alpha = np.asarray(alpha, dtype=complex)
    if alpha.shape != (psi.basis.n_modes,):
        raise ValueError("alpha does not match the Fock basis mode count")
    total = 0.0
    for j in range(psi.basis.n_modes):
        v = _lower(psi.coeffs, psi.basis, j) / math.sqrt(psi.N) - alpha[j] * psi.coeffs
        total += float(np.vdot(v, v).real)
    return psi.weight * total


def beta_b_via_weyl(psi: ManyBodyState, alpha, n_max: int | None = None,
                    return_defect: bool = False):
    """N^-1 <W(-sqrt(N) alpha) Psi, number W(-sqrt(N) alpha) Psi>.

    The displacement is carried out in an enlarged Fock space (cap ``n_max``,
    sized automatically when omitted) so that it approximates the untruncated
    Weyl operator; ``Psi`` itself is exact there because the enlarged basis
    extends the original one.
    """
    alpha = np.asarray(alpha, dtype=complex)
    f = -math.sqrt(psi.N) * alpha
    if n_max is None:
        reach = (math.sqrt(psi.basis.n_max) + float(np.linalg.norm(f))) ** 2
        n_max = psi.basis.n_max + fock.required_n_max(reach)
    big = fock.make_fock_basis(psi.basis.n_modes, max(n_max, psi.basis.n_max))
    batch = psi.coeffs.reshape(-1, psi.basis.dim).T  # (D, R)
    disp = fock.weyl_displace(big, f, fock.embed(batch, psi.basis, big))
    number = big.totals.astype(float)
    val = psi.weight * float(np.sum(number[:, None] * np.abs(disp.state) ** 2)) / psi.N
    return (val, disp.norm_defect) if return_defect else val


def beta_c(psi: ManyBodyState, phi: np.ndarray) -> float:
    """||grad_1 q_1 Psi||^2, evaluated spectrally."""
    _check_normalized(psi, phi)
    q = project_q1(psi, phi)
    return psi.weight * float(np.vdot(q, _minus_laplacian_slot(psi.grid, q)).real)


def beta(psi: ManyBodyState, phi, alpha) -> float:
    return beta_a(psi, phi) + beta_b(psi, alpha)


def beta2(psi: ManyBodyState, phi, alpha) -> float:
    return beta_a(psi, phi) + beta_b(psi, alpha) + beta_c(psi, phi)


# -- reduced density matrices ---------------------------------------------------

@dataclass(frozen=True)
class DensityMatrix:
    matrix: np.ndarray
    kind: str  # "charges" or "bosons"

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh((self.matrix + self.matrix.conj().T) / 2)

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T)))


def gamma_10(psi: ManyBodyState) -> DensityMatrix:
    """Partial trace over particles 2..N and the Fock factor."""
    C = psi.coeffs.reshape(psi.grid.n_points, -1) * math.sqrt(psi.weight)
    return DensityMatrix(C @ C.conj().T, "charges")


def gamma_01(psi: ManyBodyState) -> DensityMatrix:
    """gamma(j, l) = <Psi, a_l^dagger a_j Psi> / N."""
    M = psi.basis.n_modes
    lowered = np.array([_lower(psi.coeffs, psi.basis, j).ravel() for j in range(M)])
    return DensityMatrix(psi.weight * (lowered.conj() @ lowered.T).T / psi.N, "bosons")


def condensate_projector(phi: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    v = np.asarray(phi) * math.sqrt(grid.cell)
    return np.outer(v, v.conj())


def trace_norm(A: np.ndarray, herm_tol: float = 1e-10) -> float:
    """Sum of absolute eigenvalues of a Hermitian matrix."""
    A = np.asarray(A)
    err = np.max(np.abs(A - A.conj().T)) if A.size else 0.0
    if err > herm_tol * max(1.0, np.max(np.abs(A))):
        raise ValueError(f"matrix is not Hermitian (max deviation {err:.2e})")
    return float(np.sum(np.abs(np.linalg.eigvalsh((A + A.conj().T) / 2))))


def sobolev_matrix(grid: SpatialGrid) -> np.ndarray:
    """sqrt(1 - Delta) in the orthonormal grid basis."""
    return grid.sobolev_weight(np.eye(grid.n_points, dtype=complex))


def sobolev_trace_distance(gamma: DensityMatrix, phi: np.ndarray, grid: SpatialGrid) -> float:
    S = sobolev_matrix(grid)
    A = gamma.matrix - condensate_projector(phi, grid)
    B = S @ A @ S
    return trace_norm((B + B.conj().T) / 2)


def trace_distance_10(psi: ManyBodyState, phi) -> float:
    return trace_norm(gamma_10(psi).matrix - condensate_projector(phi, psi.grid))


def trace_distance_01(psi: ManyBodyState, alpha) -> float:
    alpha = np.asarray(alpha, dtype=complex)
    return trace_norm(gamma_01(psi).matrix - np.outer(alpha, alpha.conj()))


def projector_bound(gamma: np.ndarray, p: np.ndarray) -> tuple[float, float]:
    """Both sides of Tr|gamma - p| <= 2 ||gamma - p||_HS + Tr(gamma - p)."""
    A = gamma - p
    return trace_norm(A), 2 * float(np.linalg.norm(A)) + float(np.trace(A).real)


# -- condensation sandwich -------------------------------------------------------

@dataclass
class SandwichReport:
    beta_a: float
    beta_b: float
    beta_c: float
    trace_10: float
    upper_10: float
    trace_01: float
    bound_01: float
    sobolev_10: float
    bound_sobolev: float

    def max_excess(self) -> float:
        """Largest (lower side - upper side) over the four inequalities; <= 0 when all hold."""
        return max(self.beta_a - self.trace_10, self.trace_10 - self.upper_10,
                   self.trace_01 - self.bound_01, self.sobolev_10 - self.bound_sobolev)

    def violations(self, slack: float = 1e-9) -> list[str]:
        out = []
        if self.beta_a > self.trace_10 + slack:
            out.append(f"beta_a {self.beta_a:.3e} > trace distance {self.trace_10:.3e}")
        if self.trace_10 > self.upper_10 + slack:
            out.append(f"trace distance {self.trace_10:.3e} > sqrt(8 beta_a) {self.upper_10:.3e}")
        if self.trace_01 > self.bound_01 + slack:
            out.append(f"field trace distance {self.trace_01:.3e} > {self.bound_01:.3e}")
        if self.sobolev_10 > self.bound_sobolev + slack:
            out.append(f"Sobolev distance {self.sobolev_10:.3e} > {self.bound_sobolev:.3e}")
        return out


def lemma1_bounds(psi: ManyBodyState, phi, alpha) -> SandwichReport:
    grid = psi.grid
    ba, bb, bc = beta_a(psi, phi), beta_b(psi, alpha), beta_c(psi, phi)
    g10 = gamma_10(psi)
    alpha = np.asarray(alpha, dtype=complex)
    h1 = math.sqrt(grid.h1_norm_sq(phi))
    sac = ba + bc
    return SandwichReport(
        beta_a=ba, beta_b=bb, beta_c=bc,
        trace_10=trace_norm(g10.matrix - condensate_projector(phi, grid)),
        upper_10=math.sqrt(8 * ba),
        trace_01=trace_distance_01(psi, alpha),
        bound_01=3 * bb + 6 * float(np.linalg.norm(alpha)) * math.sqrt(bb),
        sobolev_10=sobolev_trace_distance(g10, phi, grid),
        bound_sobolev=(1 + h1**2) * sac + 2 * h1 * math.sqrt(sac),
    )


# -- quantized minus classical fields on particle 1 ----------------------------

class _SlotFields:
    """Phi and grad Phi (quantized over sqrt(N), classical) acting on slot 1."""

    def __init__(self, psi: ManyBodyState, system: SKGSystem, alpha):
        self.psi, self.system = psi, system
        self.N = psi.N
        self.alpha = np.asarray(alpha, dtype=complex)
        self.ph = system.phases  # (G, M)
        self.plus_cl, self.minus_cl = system.field_parts(self.alpha)
        self.grad_cl = system.field_gradient(self.alpha)

    def _sum(self, coeffs, weights, conj):
        out = np.zeros_like(coeffs, dtype=complex)
        basis = self.psi.basis
        for j in range(basis.n_modes):
            if weights[j] == 0:
                continue
            if conj:
                out += weights[j] * _on_slot(self.ph[:, j].conj(), self.N) * _raise(coeffs, basis, j)
            else:
                out += weights[j] * _on_slot(self.ph[:, j], self.N) * _lower(coeffs, basis, j)
        return out

    def plus_diff(self, coeffs):
        q = self._sum(coeffs, self.system.g, False) / math.sqrt(self.N)
        return q - _on_slot(self.plus_cl, self.N) * coeffs

    def minus_diff(self, coeffs):
        q = self._sum(coeffs, self.system.g, True) / math.sqrt(self.N)
        return q - _on_slot(self.minus_cl, self.N) * coeffs

    def diff(self, coeffs):
        return self.plus_diff(coeffs) + self.minus_diff(coeffs)

    def quantum(self, coeffs):
        g = self.system.g
        return (self._sum(coeffs, g, False) + self._sum(coeffs, g, True)) / math.sqrt(self.N)

    def grad_diff(self, coeffs, c):
        w = self.system.theta[:, c]
        q = 1j * (self._sum(coeffs, w, False) - self._sum(coeffs, w, True)) / math.sqrt(self.N)
        return q - _on_slot(self.grad_cl[c], self.N) * coeffs


@dataclass
class FieldDifferenceReport:
    """Squared norms of quantized-minus-classical fields and their bounds."""

    values: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)
    kappa_norm_sq: float = 0.0
    eta_norm_sq: float = 0.0
    theta_norm_sq: float = 0.0

    def violations(self, slack: float = 1e-10) -> list[str]:
        return [f"{k}: {self.values[k]:.3e} > {self.bounds[k]:.3e}"
                for k in self.values if self.values[k] > self.bounds[k] + slack]


def field_difference_norms(psi: ManyBodyState, phi, alpha, system: SKGSystem) -> FieldDifferenceReport:
    """Field-difference norms with the field evaluated at the first particle's position."""
    grid, N, w = psi.grid, psi.N, psi.weight
    fields = _SlotFields(psi, system, alpha)
    bb = beta_b(psi, alpha)
    eta2 = float(np.sum(system.g**2))
    theta2 = float(np.sum(system.theta**2))
    p1 = project_p1(psi, phi)
    q1 = psi.coeffs - p1

    def nsq(v):
        return w * float(np.vdot(v, v).real)

    rep = FieldDifferenceReport(kappa_norm_sq=system.modes.kappa_norm_sq,
                                eta_norm_sq=eta2, theta_norm_sq=theta2)
    rep.values["full"] = nsq(fields.diff(psi.coeffs))
    rep.bounds["full"] = eta2 * (4 * bb + 2 / N)
    rep.values["minus"] = nsq(fields.minus_diff(psi.coeffs))
    rep.bounds["minus"] = eta2 * (bb + 1 / N)
    rep.values["plus_p1"] = nsq(fields.plus_diff(p1))
    rep.bounds["plus_p1"] = eta2 * bb
    rep.values["grad_p1"] = sum(nsq(fields.grad_diff(p1, c)) for c in range(grid.dim))
    rep.bounds["grad_p1"] = theta2 * (4 * bb + 2 / N)
    rep.values["grad_q1"] = sum(nsq(fields.grad_diff(q1, c)) for c in range(grid.dim))
    rep.bounds["grad_q1"] = theta2 * (4 * bb + 2 / N)
    grad_phi = grid.gradient(np.asarray(phi, dtype=complex))
    chi = _overlap_slot(psi, phi)
    grad_phi_sq = sum(grid.cell * float(np.vdot(gc, gc).real) for gc in grad_phi)
    rep.values["field_grad_p1"] = sum(
        nsq(fields.diff(np.multiply.outer(gc, chi))) for gc in grad_phi)
    rep.bounds["field_grad_p1"] = eta2 * grad_phi_sq * (4 * bb + 2 / N)
    alpha = np.asarray(alpha, dtype=complex)
    rep.values["grad_classical_sup"] = float(np.max(np.linalg.norm(fields.grad_cl, axis=0)))
    rep.bounds["grad_classical_sup"] = 2 * float(
        np.sum(np.linalg.norm(system.theta, axis=1) * np.abs(alpha)))
    return rep


# -- exact time derivatives -----------------------------------------------------

def dbeta_dt_analytic(psi: ManyBodyState, eff: EffectiveState,
                      system: SKGSystem | NelsonOperator,
                      mutation: str | None = None) -> tuple[float, float, float]:
    """(d/dt beta_a, d/dt beta_b, d/dt beta_c) along the matched flows.

    The beta_b source term uses the particle average (1/N) sum_i e^{i k x_i},
    which equals the slot-1 expression for permutation-symmetric states and is
    exact for any state.
    """
    if mutation is not None and mutation not in MUTATIONS:
        raise ValueError(f"unknown mutation {mutation!r}; known: {MUTATIONS}")
    if isinstance(system, NelsonOperator):
        system = SKGSystem(system.grid, system.modes, system.coupling)
    phi, alpha = eff.phi, eff.alpha
    grid, N, w = psi.grid, psi.N, psi.weight
    fields = _SlotFields(psi, system, alpha)
    coeffs = psi.coeffs
    p1 = project_p1(psi, phi)
    q1 = coeffs - p1

    diff_psi = fields.diff(coeffs)
    da = -2 * w * np.vdot(coeffs, fields.diff(q1)).imag

    g = system.g
    rho = system.density_modes(phi)
    sign = -1.0 if mutation == "flip_dbeta_b_source" else 1.0
    src = np.zeros_like(coeffs, dtype=complex)
    loc = np.zeros_like(coeffs, dtype=complex)
    for j in range(psi.basis.n_modes):
        if g[j] == 0:
            continue
        fluct = _lower(coeffs, psi.basis, j) / math.sqrt(N) - alpha[j] * coeffs
        src += g[j] * np.conj(rho[j]) * fluct
        avg = sum(_on_slot(system.phases[:, j], N, i) for i in range(N)) / N
        loc += g[j] * avg * fluct
    db = sign * 2 * w * np.vdot(coeffs, src).imag - 2 * w * np.vdot(coeffs, loc).imag

    lap_q = _minus_laplacian_slot(grid, q1)
    p_diff = np.multiply.outer(phi, _overlap_slot(psi.evolve(diff_psi), phi))
    dc = (2 * w * np.vdot(p_diff, lap_q).imag
          - 2 * w * np.vdot(fields.diff(p1), lap_q).imag
          - 2 * w * np.vdot(fields.quantum(q1), lap_q).imag)
    return float(da), float(db), float(dc)


# -- Groenwall envelopes --------------------------------------------------------

@dataclass
class GronwallFit:
    """Envelope constants for a time series of a counting functional.

    ``C`` is the smallest constant with value(t) + 1/N <= e^{C L^p t}(value(0) + 1/N)
    at every sample, the integrated form of d/dt value <= C L^p (value + 1/N).
    ``C_stated`` is the smallest constant with value(t) <= e^{C L^p t}(value(0) + 1/N).
    Since C_stated <= C, ``valid`` (C finite and at most ``c_max``) covers both.
    """

    C: float
    C_stated: float
    valid: bool
    power: int


def envelope_constant(times: Sequence[float], values: Sequence[float], N: int, cutoff: float,
                      power: int = 2, c_max: float = 50.0) -> GronwallFit:
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(times) == 0:
        raise ValueError("empty series")
    if len(times) != len(values):
        raise ValueError("times and values differ in length")
    if len(times) < 3:
        raise ValueError("need at least 3 samples")
    if np.any(np.diff(times) < 0):
        raise ValueError("time series must be monotone in t")
    base = values[0] + 1.0 / N
    rate = cutoff**power
    C, C_stated = 0.0, 0.0
    for t, v in zip(times, values):
        if t <= times[0]:
            if v > values[0] * (1 + 1e-12) + 1e-300:
                C_stated = C = math.inf
            continue
        span = rate * (t - times[0])
        C = max(C, math.log((v + 1.0 / N) / base) / span)
        if v > 0:
            C_stated = max(C_stated, math.log(v / base) / span)
    return GronwallFit(C, C_stated, bool(math.isfinite(C) and C <= c_max), power)


def gronwall_fit(series: Sequence["IndicatorReport"], N: int, cutoff: float,
                 which: str = "beta", c_max: float = 50.0) -> GronwallFit:
    """Fit the envelope for ``beta`` (rate cutoff^2) or ``beta2`` (rate cutoff^4)."""
    if which not in ("beta", "beta2"):
        raise ValueError("which must be 'beta' or 'beta2'")
    if len(series) == 0:
        raise ValueError("empty series")
    times = [r.t for r in series]
    values = [getattr(r, which) for r in series]
    return envelope_constant(times, values, N, cutoff, 2 if which == "beta" else 4, c_max)


# -- one-snapshot report --------------------------------------------------------

@dataclass
class IndicatorReport:
    t: float
    beta_a: float
    beta_b: float
    beta_c: float
    tr_dist_10: float
    tr_dist_01: float
    sobolev_dist: float
    mean_boson: float
    dbeta_a_dt: float
    dbeta_b_dt: float
    dbeta_c_dt: float

    @property
    def beta(self) -> float:
        return self.beta_a + self.beta_b

    @property
    def beta2(self) -> float:
        return self.beta_a + self.beta_b + self.beta_c


def indicator_report(psi: ManyBodyState, eff: EffectiveState, system: SKGSystem) -> IndicatorReport:
    phi, alpha = eff.phi, eff.alpha
    g10 = gamma_10(psi)
    g01 = gamma_01(psi)
    da, db, dc = dbeta_dt_analytic(psi, eff, system)
    return IndicatorReport(
        t=psi.t,
        beta_a=beta_a(psi, phi),
        beta_b=beta_b(psi, alpha),
        beta_c=beta_c(psi, phi),
        tr_dist_10=trace_norm(g10.matrix - condensate_projector(phi, psi.grid)),
        tr_dist_01=trace_norm(g01.matrix - np.outer(alpha, np.conj(alpha))),
        sobolev_dist=sobolev_trace_distance(g10, phi, psi.grid),
        mean_boson=g01.trace,
        dbeta_a_dt=da, dbeta_b_dt=db, dbeta_c_dt=dc,
    )
