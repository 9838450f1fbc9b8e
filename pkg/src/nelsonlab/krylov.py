"""Lanczos approximation of exp(-i H dt) v for a Hermitian, matrix-free H."""

from __future__ import annotations

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import ConvergenceError


def _tridiag_expm_first_column(alpha, beta, dt):
    if len(alpha) == 1:
        return np.array([np.exp(-1j * dt * alpha[0])])
    w, u = eigh_tridiagonal(alpha, beta)
    return u @ (np.exp(-1j * dt * w) * u[0].conj())


def lanczos_expm(matvec, v: np.ndarray, dt: float, krylov_dim: int = 24,
                 tol: float = 1e-9) -> tuple[np.ndarray, float, int]:
    """One Krylov step of exp(-i dt H) applied to ``v``.

    Uses full reorthogonalization. The error estimate is the usual a-posteriori
    one, ``beta_m * |[exp(-i dt T_m)]_{m,0}| * ||v||``, checked after every
    iteration so the subspace grows only as far as needed.

    Returns:
        (result, error estimate, Krylov dimension used). The caller decides
        what to do when the estimate exceeds ``tol``.
    """
    vnorm = np.linalg.norm(v)
    if vnorm == 0:
        return v.copy(), 0.0, 0
    V = np.empty((krylov_dim + 1, v.size), dtype=complex)
    V[0] = v.ravel() / vnorm
    alpha = np.zeros(krylov_dim)
    beta = np.zeros(krylov_dim)
    err = np.inf
    for m in range(krylov_dim):
        w = matvec(V[m])
        alpha[m] = np.vdot(V[m], w).real
        w = w - alpha[m] * V[m] - (beta[m - 1] * V[m - 1] if m > 0 else 0)
        # full reorthogonalization, twice is enough
        for _ in range(2):
            w -= V[: m + 1].T @ (V[: m + 1].conj() @ w)
        beta[m] = np.linalg.norm(w)
        c = _tridiag_expm_first_column(alpha[: m + 1], beta[:m], dt)
        if beta[m] < 1e-13 * max(1.0, abs(alpha[m])):
            # happy breakdown: the subspace is invariant, result is exact
            return vnorm * (c @ V[: m + 1]).reshape(v.shape), 0.0, m + 1
        err = beta[m] * abs(c[-1]) * vnorm * dt
        if err <= tol and m >= 3:
            return vnorm * (c @ V[: m + 1]).reshape(v.shape), float(err), m + 1
        V[m + 1] = w / beta[m]
    return vnorm * (c @ V[:krylov_dim]).reshape(v.shape), float(err), krylov_dim


def krylov_step(matvec, v: np.ndarray, dt: float, krylov_dim: int = 24, tol: float = 1e-9,
                max_halvings: int = 8) -> tuple[np.ndarray, float]:
    """exp(-i dt H) v, splitting dt into sub-steps when the subspace is too small."""
    if krylov_dim < 4:
        raise ValueError("krylov_dim must be >= 4")
    pieces = 1
    for _ in range(max_halvings + 1):
        h = dt / pieces
        out, total_err = v, 0.0
        for _ in range(pieces):
            out, err, _ = lanczos_expm(matvec, out, h, krylov_dim, tol / pieces)
            total_err += err
            if err > tol / pieces:
                break
        else:
            return out, total_err
        pieces *= 2
    raise ConvergenceError(
        f"Lanczos residual above tol={tol:g} with krylov_dim={krylov_dim} "
        f"after splitting dt={dt:g} into {pieces // 2} pieces", err)
