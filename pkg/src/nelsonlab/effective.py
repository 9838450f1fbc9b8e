"""Discrete Schroedinger-Klein-Gordon system: the mean-field equations of H_N.

    i d/dt phi     = (-Delta + Phi_cl) phi
    i d/dt alpha_j = omega_j alpha_j + g_j rho_j,   rho_j = dx^d sum_x e^{-i k_j x} |phi(x)|^2
    Phi_cl(x)      = sum_j g_j (e^{i k_j x} alpha_j + c.c.)

The Laplacian and form factors are the same objects used by the microscopic
operator, so the effective flow is the exact mean field of the discrete model.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .fock import ModeGrid
from .manybody import SpatialGrid


@dataclass(frozen=True)
class EffectiveState:
    phi: np.ndarray
    alpha: np.ndarray
    t: float = 0.0


class SKGSystem:
    """Right-hand side, integrator and energy of the discrete SKG equations.

    ``coupling=False`` zeroes every form factor, decoupling the two free flows.
    """

    def __init__(self, grid: SpatialGrid, modes: ModeGrid, coupling: bool = True):
        if grid.dim != modes.dim:
            raise ValueError("mode grid and spatial grid dimensions differ")
        self.grid, self.modes, self.coupling = grid, modes, coupling
        self.phases = modes.phases(grid.positions)  # (G, M)
        self.g = np.array(modes.g) if coupling else np.zeros(modes.n_modes)
        self.theta = np.array(modes.theta) if coupling else np.zeros_like(modes.theta)
        self.omega = np.array(modes.omega)
        self.partner = modes.partner

    def state(self, phi, alpha, t: float = 0.0) -> EffectiveState:
        alpha = np.asarray(alpha, dtype=complex)
        if alpha.shape != (self.modes.n_modes,):
            raise ValueError(f"alpha must have shape ({self.modes.n_modes},)")
        return EffectiveState(np.asarray(phi, dtype=complex), alpha, t)

    # -- fields --------------------------------------------------------------
    def field_parts(self, alpha) -> tuple[np.ndarray, np.ndarray]:
        plus = self.phases @ (self.g * alpha)
        return plus, plus.conj()

    def classical_field(self, alpha) -> np.ndarray:
        return 2 * np.real(self.phases @ (self.g * alpha))

    def field_gradient(self, alpha) -> np.ndarray:
        """Components of grad Phi_cl, shape (dim, G)."""
        return np.stack([-2 * np.imag(self.phases @ (self.theta[:, c] * alpha))
                         for c in range(self.grid.dim)])

    def density_modes(self, phi) -> np.ndarray:
        """rho_j = dx^d sum_x e^{-i k_j x} |phi(x)|^2."""
        return self.grid.cell * (self.phases.conj().T @ np.abs(phi) ** 2)

    # -- dynamics ------------------------------------------------------------
    def rhs(self, state: EffectiveState) -> tuple[np.ndarray, np.ndarray]:
        phi, alpha = state.phi, state.alpha
        dphi = -1j * (self.grid.minus_laplacian(phi) + self.classical_field(alpha) * phi)
        dalpha = -1j * (self.omega * alpha + self.g * self.density_modes(phi))
        return dphi, dalpha

    def _potential_flow(self, phi, alpha, dt):
        # |phi|^2 is frozen under this sub-flow, so alpha solves a driven
        # oscillator with a constant source and phi picks up an exact phase.
        src = self.g * self.density_modes(phi) / self.omega
        rot = np.exp(-1j * self.omega * dt)
        alpha_new = rot * alpha + src * (rot - 1)
        integral = (alpha + src) * (1 - rot) / (1j * self.omega) - src * dt
        phase = 2 * np.real(self.phases @ (self.g * integral))
        return np.exp(-1j * phase) * phi, alpha_new

    def step(self, state: EffectiveState, dt: float) -> EffectiveState:
        """One Strang step: half kinetic, exact potential/field flow, half kinetic."""
        if not dt > 0:
            raise ValueError("dt must be > 0")
        phi = self.grid.kinetic_propagator(state.phi, dt / 2)
        phi, alpha = self._potential_flow(phi, state.alpha, dt)
        phi = self.grid.kinetic_propagator(phi, dt / 2)
        return EffectiveState(phi, alpha, state.t + dt)

    def evolve(self, state: EffectiveState, t_final: float, dt: float,
               every: int | None = None) -> list[EffectiveState]:
        """Integrate to ``t_final``; returns snapshots every ``every`` steps (ends included)."""
        steps = int(round((t_final - state.t) / dt))
        out = [state]
        for n in range(1, steps + 1):
            state = self.step(state, dt)
            if every and n % every == 0 and n != steps:
                out.append(state)
        if steps and (len(out) == 1 or out[-1] is not state):
            out.append(state)
        return out

    def reference(self, state: EffectiveState, t: float, rtol: float = 1e-13) -> EffectiveState:
        """High-order explicit (DOP853) solution of the same equations; an oracle."""
        G = self.grid.n_points

        def f(_, y):
            dphi, dalpha = self.rhs(EffectiveState(y[:G], y[G:]))
            return np.concatenate([dphi, dalpha])

        y0 = np.concatenate([state.phi, state.alpha]).astype(complex)
        if t == 0:
            return replace(state)
        sol = solve_ivp(f, (0.0, t), y0, method="DOP853", rtol=rtol, atol=rtol * 1e-2)
        y = sol.y[:, -1]
        return EffectiveState(y[:G], y[G:], state.t + t)

    def energy(self, state: EffectiveState) -> float:
        phi, alpha = state.phi, state.alpha
        kin = self.grid.inner(phi, self.grid.minus_laplacian(phi)).real
        field = float(np.sum(self.omega * np.abs(alpha) ** 2))
        inter = self.grid.cell * float(np.sum(self.classical_field(alpha) * np.abs(phi) ** 2))
        return float(kin + field + inter)


class ClassicalField(NamedTuple):
    field: np.ndarray     # Phi_cl, real
    plus: np.ndarray      # sum_j g_j e^{i k_j x} alpha_j
    minus: np.ndarray     # conjugate of plus
    gradient: np.ndarray  # (dim, G)


def classical_field(alpha, grid: SpatialGrid, modes: ModeGrid) -> ClassicalField:
    system = SKGSystem(grid, modes)
    alpha = np.asarray(alpha, dtype=complex)
    if alpha.shape != (modes.n_modes,):
        raise ValueError(f"alpha must have shape ({modes.n_modes},)")
    plus, minus = system.field_parts(alpha)
    return ClassicalField(system.classical_field(alpha), plus, minus,
                          system.field_gradient(alpha))


def skg_rhs(state: EffectiveState, grid: SpatialGrid, modes: ModeGrid,
            coupling: bool = True) -> tuple[np.ndarray, np.ndarray]:
    return SKGSystem(grid, modes, coupling).rhs(state)


def skg_step(state: EffectiveState, dt: float, grid: SpatialGrid, modes: ModeGrid,
             coupling: bool = True) -> EffectiveState:
    return SKGSystem(grid, modes, coupling).step(state, dt)


def skg_energy(state: EffectiveState, grid: SpatialGrid, modes: ModeGrid,
               coupling: bool = True) -> float:
    return SKGSystem(grid, modes, coupling).energy(state)


def second_order_residual(trajectory: Sequence[EffectiveState], dt: float,
                          system: SKGSystem) -> float:
    """Maximum relative residual of the mode-wise second-order field equation.

    With u_j = alpha_j + conj(alpha_{-j}) the first-order system implies
    u_j'' + omega_j^2 u_j = -2 omega_j g_j rho_j. The second derivative is taken
    by centered differences over equally spaced snapshots.
    """
    if len(trajectory) < 3:
        raise ValueError("need at least 3 snapshots")
    alpha = np.array([s.alpha for s in trajectory])
    u = alpha + alpha[:, system.partner].conj()
    rho = np.array([system.density_modes(s.phi) for s in trajectory])
    w = system.omega
    d2 = (u[2:] - 2 * u[1:-1] + u[:-2]) / dt**2
    lin = w**2 * u[1:-1]
    src = 2 * w * system.g * rho[1:-1]
    resid = d2 + lin + src
    scale = np.max(np.abs(lin) + np.abs(src))
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(resid)) / scale)
