"""Exact mean/covariance dynamics for affine drift and additive noise.

In that regime the mild solution is Gaussian, so its marginal laws are
determined by

    m'     = (-Lambda + B(t/eps)) m + b(t/eps)
    Sigma' = A Sigma + Sigma A^T + G(t/eps) Q G(t/eps)^T,   A = -Lambda + B(t/eps)

integrated here with classical RK4 from ``m = 0, Sigma = 0`` at the
burn-in start.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from .coefficients import (
    QuasiPeriodicDiffusion,
    QuasiPeriodicDrift,
    averaged_covariance_closed,
    time_basis,
)
from .hilbert import GalerkinModel
from .metrics import gaussian_w2


@dataclass
class GaussianMoments:
    times: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def to_csv(self, path) -> None:
        d = self.means.shape[1]
        tri = [(i, j) for i in range(d) for j in range(i + 1)]
        with open(path, "w") as fh:
            cols = [f"m_{k + 1}" for k in range(d)] + [f"S_{i + 1}{j + 1}" for i, j in tri]
            fh.write("t," + ",".join(cols) + "\n")
            for t, m, S in zip(self.times, self.means, self.covs):
                vals = list(m) + [S[i, j] for i, j in tri]
                fh.write(f"{float(t)!r}," + ",".join(repr(float(v)) for v in vals) + "\n")


def _fields(model, F, G, eps):
    lam = model.generator_eigenvalues
    q = model.q_eigenvalues
    Bs, bs = F.matrix_stack(), F.vector_stack()
    Cs = G.const_stack()
    if eps == 0:
        A0 = F.base_matrix - np.diag(lam)
        H0 = averaged_covariance_closed(G, model, np.zeros(model.state_dim))
        return lambda t: (A0, F.base_vector, H0)

    def at(t):
        wf = time_basis(F.frequencies, t / eps)[0]
        wg = time_basis(G.frequencies, t / eps)[0]
        A = np.tensordot(wf, Bs, 1) - np.diag(lam)
        Gt = np.tensordot(wg, Cs, 1)
        return A, wf @ bs, (Gt * q) @ Gt.T

    return at


def moment_odes(
    model: GalerkinModel,
    F: QuasiPeriodicDrift,
    G: QuasiPeriodicDiffusion,
    eps: float,
    window,
    fine_step: float,
    burn_in: float = 0.0,
    n_grid: int = 100,
) -> GaussianMoments:
    """Mean and covariance on ``n_grid + 1`` equispaced points of ``window``."""
    if not G.additive:
        raise ValueError("moment equations are exact only for additive diffusion")
    a, b = map(float, window)
    cell = (b - a) / n_grid
    sub = max(1, int(math.ceil(cell / fine_step - 1e-9)))
    dt = cell / sub
    n_burn = int(math.ceil(burn_in / dt - 1e-9))
    t = a - n_burn * dt
    field = _fields(model, F, G, eps)
    d = model.state_dim
    m = np.zeros(d)
    S = np.zeros((d, d))

    def rhs(tt, m, S):
        A, bv, H = field(tt)
        AS = A @ S
        return A @ m + bv, AS + AS.T + H

    means = np.empty((n_grid + 1, d))
    covs = np.empty((n_grid + 1, d, d))
    total = n_burn + n_grid * sub
    for k in range(total + 1):
        s = k - n_burn
        if s >= 0 and s % sub == 0:
            means[s // sub] = m
            covs[s // sub] = 0.5 * (S + S.T)
        if k == total:
            break
        k1m, k1S = rhs(t, m, S)
        k2m, k2S = rhs(t + dt / 2, m + dt / 2 * k1m, S + dt / 2 * k1S)
        k3m, k3S = rhs(t + dt / 2, m + dt / 2 * k2m, S + dt / 2 * k2S)
        k4m, k4S = rhs(t + dt, m + dt * k3m, S + dt * k3S)
        m = m + dt / 6 * (k1m + 2 * k2m + 2 * k3m + k4m)
        S = S + dt / 6 * (k1S + 2 * k2S + 2 * k3S + k4S)
        t = a + (k + 1 - n_burn) * dt
    return GaussianMoments(np.linspace(a, b, n_grid + 1), means, covs)


def stationary_moments(model: GalerkinModel, F: QuasiPeriodicDrift, G: QuasiPeriodicDiffusion):
    """Fixed point of the averaged moment equations: ``A m + b0 = 0``, ``A S + S A^T + H0 = 0``."""
    A = F.base_matrix - np.diag(model.generator_eigenvalues)
    H0 = averaged_covariance_closed(G, model, np.zeros(model.state_dim))
    m = np.linalg.solve(A, -F.base_vector)
    S = solve_continuous_lyapunov(A, -H0)
    return m, 0.5 * (S + S.T)


def marginal_w2_curve(momA: GaussianMoments, momB: GaussianMoments) -> np.ndarray:
    if not np.array_equal(momA.times, momB.times):
        raise ValueError("moment trajectories are on different grids")
    return np.array(
        [gaussian_w2(ma, Sa, mb, Sb) for ma, Sa, mb, Sb in zip(momA.means, momA.covs, momB.means, momB.covs)]
    )
