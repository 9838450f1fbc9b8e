"""Invariant suites at oracle scale, run by ``nelsonlab check``.

Every suite returns a :class:`SuiteResult`; on failure ``failing`` holds the
parameters (seed, instance index, sizes) needed to replay the instance.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla

from .. import fock
from .. import indicators as ind
from ..effective import SKGSystem
from ..manybody import (ManyBodyState, NelsonOperator, SpatialGrid, dense_oracle,
                        product_initial_state, propagate)
from .config import RunConfig


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)
    failing: dict | None = None


@dataclass
class CheckReport:
    seed: int
    mutation: str | None
    suites: list[SuiteResult]

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.suites)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "mutation": self.mutation, "passed": self.passed,
                "suites": [asdict(s) for s in self.suites]}


# -- random instances -------------------------------------------------------------

def random_complex(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def random_grid_function(rng, grid: SpatialGrid) -> np.ndarray:
    f = random_complex(rng, grid.n_points)
    return f / grid.norm(f)


def random_many_body_state(rng, N: int, grid: SpatialGrid, basis: fock.FockBasis,
                           symmetric: bool = True) -> ManyBodyState:
    c = random_complex(rng, (grid.n_points,) * N + (basis.dim,))
    if symmetric and N > 1:
        perms = list(itertools.permutations(range(N)))
        c = sum(np.transpose(c, p + (N,)) for p in perms) / len(perms)
    psi = ManyBodyState(N, grid, basis, c)
    return psi.evolve(c / psi.norm())


def random_density_matrix(rng, n: int, rank: int | None = None) -> np.ndarray:
    X = random_complex(rng, (n, rank or n))
    rho = X @ X.conj().T
    return rho / np.trace(rho).real


def random_projector(rng, n: int) -> np.ndarray:
    v = random_complex(rng, n)
    v /= np.linalg.norm(v)
    return np.outer(v, v.conj())


def small_instance(N=1, n_x=4, cutoff=1.5, mass=0.0, n_max=3, L=2 * math.pi):
    grid = SpatialGrid(1, L, n_x)
    modes = fock.make_mode_grid(1, L, cutoff, mass)
    basis = fock.make_fock_basis(modes.n_modes, n_max)
    return grid, modes, basis


# -- suites -----------------------------------------------------------------------

def suite_ccr(cfg: RunConfig, rng) -> SuiteResult:
    worst = {"ccr_below_top": 0.0, "aa": 0.0, "number": 0.0}
    for M, n_max in ((1, 4), (2, 3), (3, 3)):
        basis = fock.make_fock_basis(M, n_max)
        a = [fock.annihilator(basis, j).toarray() for j in range(M)]
        low = basis.totals <= n_max - 1
        num = sum(x.conj().T @ x for x in a)
        worst["number"] = max(worst["number"], float(np.max(np.abs(
            num - fock.number_operator(basis).toarray()))))
        for i, j in itertools.product(range(M), repeat=2):
            comm = a[i] @ a[j].conj().T - a[j].conj().T @ a[i] - (i == j) * np.eye(basis.dim)
            worst["ccr_below_top"] = max(worst["ccr_below_top"], float(np.max(np.abs(comm[:, low]))))
            worst["aa"] = max(worst["aa"], float(np.max(np.abs(a[i] @ a[j] - a[j] @ a[i]))))
    ok = all(v <= 1e-12 for v in worst.values())
    return SuiteResult("ccr", ok, worst, None if ok else {"sizes": [(1, 4), (2, 3), (3, 3)]})


def suite_displacement(cfg: RunConfig, rng) -> SuiteResult:
    detail = {"oracle_error": 0.0, "max_ratio": 0.0}
    failing = None
    M, n_max = 2, 10
    basis = fock.make_fock_basis(M, n_max)
    for idx in range(cfg.check_samples):
        f = random_complex(rng, M)
        f *= 0.3 * rng.uniform() / np.linalg.norm(f)
        # dense oracle for the truncated exponential
        gen = fock.weyl_generator(basis, f).toarray()
        psi = random_complex(rng, basis.dim) * (basis.totals <= n_max - 2)
        psi /= np.linalg.norm(psi)
        disp = fock.weyl_displace(basis, f, psi)
        oracle_err = float(np.linalg.norm(disp.state - sla.expm(gen) @ psi))
        detail["oracle_error"] = max(detail["oracle_error"], oracle_err)
        # W(-f) a_j W(f) - a_j - f_j on the low sectors
        lhs = 0.0
        for j in range(M):
            aj = fock.annihilator(basis, j)
            back = fock.weyl_displace(basis, -f, aj @ disp.state)
            lhs = max(lhs, float(np.linalg.norm(back.state - aj @ psi - f[j] * psi)))
        budget = disp.norm_defect + back.norm_defect
        ratio = lhs / budget if budget > 0 else (0.0 if lhs < 1e-14 else math.inf)
        detail["max_ratio"] = max(detail["max_ratio"], ratio)
        if oracle_err > 1e-10 or (lhs > 1e-13 and ratio > 10):
            failing = {"seed": cfg.seed, "instance": idx, "f": [str(x) for x in f],
                       "oracle_error": oracle_err, "lhs": lhs, "budget": budget}
            break
    return SuiteResult("displacement", failing is None, detail, failing)


def suite_density_sandwich(cfg: RunConfig, rng) -> SuiteResult:
    worst = 0.0
    for idx in range(cfg.check_samples):
        N = 1 + idx % 2
        grid, modes, basis = small_instance(N=N)
        psi = random_many_body_state(rng, N, grid, basis)
        phi = random_grid_function(rng, grid)
        alpha = 0.5 * random_complex(rng, modes.n_modes)
        rep = ind.lemma1_bounds(psi, phi, alpha)
        bad = rep.violations(1e-9)
        worst = max(worst, rep.trace_10 - rep.upper_10, rep.beta_a - rep.trace_10,
                    rep.trace_01 - rep.bound_01, rep.sobolev_10 - rep.bound_sobolev)
        if bad:
            return SuiteResult("density_sandwich", False, {"max_excess": worst},
                               {"seed": cfg.seed, "instance": idx, "N": N, "violations": bad})
    return SuiteResult("density_sandwich", True, {"max_excess": worst, "samples": cfg.check_samples})


def suite_field_bounds(cfg: RunConfig, rng) -> SuiteResult:
    worst = -math.inf
    for idx in range(cfg.check_samples):
        N = 1 + idx % 2
        grid, modes, basis = small_instance(N=N, mass=1.0)
        system = SKGSystem(grid, modes, cfg.coupling)
        psi = random_many_body_state(rng, N, grid, basis)
        phi = random_grid_function(rng, grid)
        alpha = 0.5 * random_complex(rng, modes.n_modes)
        rep = ind.field_difference_norms(psi, phi, alpha, system)
        worst = max(worst, max(rep.values[k] - rep.bounds[k] for k in rep.values))
        bad = rep.violations(1e-10)
        if bad:
            return SuiteResult("field_bounds", False, {"max_excess": worst},
                               {"seed": cfg.seed, "instance": idx, "N": N, "violations": bad})
    return SuiteResult("field_bounds", True, {"max_excess": worst, "samples": cfg.check_samples})


def derivative_identity(coupling=True, mutation=None, times=(0.1, 0.3, 0.5), h=1e-3,
                        n_max=4, alpha_amp=0.02):
    """Analytic d/dt beta versus Richardson-extrapolated centered differences.

    N=1 on 8 nodes with the two modes k = +-1; the microscopic flow is the dense
    eigendecomposition propagator and the effective flow the DOP853 reference.
    Returns a list of (t, analytic, finite-difference) triples.
    """
    grid, modes, basis = small_instance(N=1, n_x=8, n_max=n_max)
    phi0 = grid.gaussian(2.0, 0.8) * np.exp(0.5j * grid.positions[:, 0])
    phi0 /= grid.norm(phi0)
    alpha0 = alpha_amp * np.exp(1j * np.arange(modes.n_modes))
    psi0 = product_initial_state(phi0, alpha0, 1, grid, basis, tol=1.0)
    op = NelsonOperator(grid, modes, basis, 1, coupling=coupling)
    oracle = dense_oracle(op)
    system = SKGSystem(grid, modes, coupling)
    eff0 = system.state(phi0, alpha0)

    def at(t):
        return oracle.propagate(psi0, t), system.reference(eff0, t)

    def betas(t):
        psi, eff = at(t)
        return np.array([ind.beta_a(psi, eff.phi), ind.beta_b(psi, eff.alpha),
                         ind.beta_c(psi, eff.phi)])

    out = []
    for t in times:
        psi, eff = at(t)
        analytic = np.array(ind.dbeta_dt_analytic(psi, eff, op, mutation=mutation))

        def D(step):
            return (betas(t + step) - betas(t - step)) / (2 * step)

        fd = (4 * D(h / 2) - D(h)) / 3
        out.append((t, analytic, fd))
    return out


def suite_derivative_identity(cfg: RunConfig, rng, mutation=None) -> SuiteResult:
    worst = 0.0
    for t, an, fd in derivative_identity(cfg.coupling, mutation):
        err = np.abs(an - fd)
        rel = err / np.maximum(np.abs(fd), 1e-300)
        ok = np.all(err <= 1e-6 * np.abs(fd) + 1e-12)
        worst = max(worst, float(np.max(np.where(err <= 1e-12, 0.0, rel))))
        if not ok:
            return SuiteResult("derivative_identity", False, {"max_rel_error": worst},
                               {"t": t, "analytic": an.tolist(), "finite_difference": fd.tolist(),
                                "mutation": mutation, "coupling": cfg.coupling})
    return SuiteResult("derivative_identity", True, {"max_rel_error": worst})


def suite_field_trace(cfg: RunConfig, rng) -> SuiteResult:
    worst = 0.0
    for idx in range(cfg.check_samples):
        N = 1 + idx % 2
        grid, modes, basis = small_instance(N=N, n_max=2 + idx % 3)
        psi = random_many_body_state(rng, N, grid, basis)
        mean_n = psi.weight * float(np.sum(basis.totals * np.sum(
            np.abs(psi.coeffs.reshape(-1, basis.dim)) ** 2, axis=0))) / N
        err = abs(ind.gamma_01(psi).trace - mean_n)
        worst = max(worst, err)
        if err > 1e-10:
            return SuiteResult("field_trace", False, {"max_error": worst},
                               {"seed": cfg.seed, "instance": idx, "N": N})
    return SuiteResult("field_trace", True, {"max_error": worst})


def suite_projector_bound(cfg: RunConfig, rng) -> SuiteResult:
    worst = -math.inf
    for idx in range(cfg.check_samples):
        n = 2 + idx % 7
        gamma = random_density_matrix(rng, n, rank=1 + idx % n)
        p = random_projector(rng, n)
        lhs, rhs = ind.projector_bound(gamma, p)
        worst = max(worst, lhs - rhs)
        if lhs > rhs + 1e-10:
            return SuiteResult("projector_bound", False, {"max_excess": worst},
                               {"seed": cfg.seed, "instance": idx, "n": n})
    return SuiteResult("projector_bound", True, {"max_excess": worst})


def suite_conservation(cfg: RunConfig, rng) -> SuiteResult:
    grid = SpatialGrid(1, 2 * math.pi, 64)
    modes = fock.make_mode_grid(1, 2 * math.pi, 2.5, 1.0)
    system = SKGSystem(grid, modes, cfg.coupling)
    alpha = np.zeros(modes.n_modes, complex)
    alpha[3] = 0.4
    state = system.state(grid.gaussian(math.pi, 0.7), alpha)
    dt, steps = 1e-3, 10000
    times, energies = [0.0], [system.energy(state)]
    for n in range(1, steps + 1):
        state = system.step(state, dt)
        if n % 100 == 0:
            times.append(n * dt)
            energies.append(system.energy(state))
    norm_drift = abs(grid.norm(state.phi) - 1)
    slope = abs(float(np.polyfit(times, energies, 1)[0]))

    g2, m2, b2 = small_instance(N=2, n_x=6, n_max=3)
    psi0 = product_initial_state(g2.gaussian(2.0, 0.8), np.zeros(m2.n_modes), 2, g2, b2)
    op = NelsonOperator(g2, m2, b2, 2, coupling=cfg.coupling)
    psi, stats = propagate(op, psi0, 0.05, 20, tol=1e-10, return_stats=True)
    detail = {"effective_norm_drift": norm_drift, "effective_energy_slope": slope,
              "micro_norm_drift": stats.max_norm_drift, "micro_energy_drift": stats.energy_drift}
    ok = (norm_drift <= 1e-10 and slope <= 1e-8 and stats.max_norm_drift <= 1e-8
          and stats.energy_drift <= 1e-7)
    if not cfg.coupling:
        eff = SKGSystem(g2, m2, False).reference(
            SKGSystem(g2, m2, False).state(g2.gaussian(2.0, 0.8), np.zeros(m2.n_modes)), psi.t)
        detail["zero_coupling_beta"] = ind.beta(psi, eff.phi, eff.alpha)
        ok = ok and detail["zero_coupling_beta"] <= 1e-12
    return SuiteResult("conservation", ok, detail, None if ok else dict(detail))


def suite_oracle(cfg: RunConfig, rng) -> SuiteResult:
    worst = 0.0
    for N, n_x, n_max in ((1, 8, 3), (2, 4, 2)):
        grid, modes, basis = small_instance(N=N, n_x=n_x, n_max=n_max)
        phi0 = grid.gaussian(2.0, 0.8)
        alpha0 = np.full(modes.n_modes, 0.05)
        psi0 = product_initial_state(phi0, alpha0, N, grid, basis, tol=1.0)
        op = NelsonOperator(grid, modes, basis, N, coupling=cfg.coupling)
        exact = dense_oracle(op).propagate(psi0, 0.5)
        approx = propagate(op, psi0, 0.01, 50, tol=1e-10)
        err = float(np.linalg.norm(approx.coeffs - exact.coeffs)) * math.sqrt(psi0.weight)
        worst = max(worst, err)
        if err > 1e-8:
            return SuiteResult("oracle", False, {"max_error": worst},
                               {"N": N, "n_x": n_x, "n_max": n_max, "error": err})
    return SuiteResult("oracle", True, {"max_error": worst})


SUITES = {
    "ccr": suite_ccr,
    "displacement": suite_displacement,
    "density_sandwich": suite_density_sandwich,
    "field_bounds": suite_field_bounds,
    "derivative_identity": suite_derivative_identity,
    "field_trace": suite_field_trace,
    "projector_bound": suite_projector_bound,
    "conservation": suite_conservation,
    "oracle": suite_oracle,
}


def run_check(cfg: RunConfig, mutation: str | None = None,
              only: list[str] | None = None) -> CheckReport:
    if mutation is not None and mutation not in ind.MUTATIONS:
        raise ValueError(f"unknown mutation {mutation!r}; known: {ind.MUTATIONS}")
    results = []
    for name, suite in SUITES.items():
        if only is not None and name not in only:
            continue
        rng = np.random.default_rng([cfg.seed, list(SUITES).index(name)])
        if name == "derivative_identity":
            results.append(suite(cfg, rng, mutation))
        else:
            results.append(suite(cfg, rng))
    return CheckReport(cfg.seed, mutation, results)
