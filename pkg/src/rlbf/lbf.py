"""Windowed least-squares estimator over a basis expansion.

Each FIR tap trajectory is approximated, inside a sliding window centered at
``t``, by a linear combination of the basis functions; the window data then
determine the expansion coefficients through a single least-squares solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .basis import BasisSet
from .exceptions import IdentifiabilityError

COND_LIMIT = 1e12


@dataclass
class Frame:
    """One analysis window: K outputs and K regression vectors.

    ``y[j + k]`` is the output at time ``t + j``; ``phi[j + k]`` holds the
    corresponding n past input samples, most recent first.
    """

    t: int
    k: int
    y: np.ndarray     # (K,) complex
    phi: np.ndarray   # (K, n) complex

    @property
    def K(self) -> int:
        return 2 * self.k + 1

    @property
    def n(self) -> int:
        return self.phi.shape[1]


@dataclass
class LbfEstimate:
    beta: np.ndarray        # (mn,)
    theta: np.ndarray       # (n,)
    theta_traj: np.ndarray  # (n, K) in-window trajectory
    P: np.ndarray
    p: np.ndarray
    cond_flag: bool


def psi_matrix(phi: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Stack of generalized regression vectors, one row per window offset.

    Row ``j`` is the Kronecker product of the regression vector at offset
    ``j`` with the basis values at offset ``j`` (parameter-major layout).
    """
    K, n = phi.shape
    m = f.shape[0]
    return (phi[:, :, None] * f.T[:, None, :]).reshape(K, n * m)


def regression_vectors(frame: Frame, basis: BasisSet) -> np.ndarray:
    """(K, mn) matrix of generalized regression vectors for the frame."""
    if basis.K != frame.K:
        raise ValueError("basis window width does not match frame")
    return psi_matrix(frame.phi, basis.f)


def omega_to_idx(omega, k: int) -> np.ndarray:
    """Window offsets (in [-k, k]) to array positions."""
    return np.asarray(omega, dtype=int) + k


def normal_equations_from_psi(Psi: np.ndarray, y: np.ndarray, idx: np.ndarray):
    Ps = Psi[idx]
    P = Ps.T @ Ps.conj()
    p = Ps.T @ y[idx].conj()
    return P, p


def normal_equations(frame: Frame, basis: BasisSet, omega):
    """Normal-equation pair accumulated over the retained offsets ``omega``."""
    mn = basis.m * frame.n
    idx = omega_to_idx(omega, frame.k)
    if idx.size < mn:
        raise IdentifiabilityError(
            f"retained {idx.size} samples < {mn} coefficients")
    Psi = regression_vectors(frame, basis)
    return normal_equations_from_psi(Psi, frame.y, idx)


def solve_normal_equations(P: np.ndarray, p: np.ndarray):
    """Solve P beta = p by Cholesky with a cheap conditioning guard.

    Returns (beta, cond_flag).  The condition estimate is the squared ratio
    of extreme Cholesky diagonal entries, a lower bound on the true 2-norm
    condition number; factorization failure also raises the flag.
    """
    try:
        c, low = cho_factor(P, check_finite=False)
    except (LinAlgError, ValueError):
        beta, *_ = np.linalg.lstsq(P, p, rcond=None)
        return beta, True
    d = np.abs(np.diag(c))
    cond_est = (d.max() / d.min()) ** 2 if d.min() > 0 else np.inf
    beta = cho_solve((c, low), p, check_finite=False)
    return beta, bool(cond_est >= COND_LIMIT)


def theta_trajectory(beta: np.ndarray, basis: BasisSet, n: int) -> np.ndarray:
    """In-window tap trajectories implied by the coefficients: (n, K)."""
    B = beta.reshape(n, basis.m)
    return B @ basis.f.conj()


def lbf_estimate(frame: Frame, basis: BasisSet) -> LbfEstimate:
    """Plain (untrimmed) least-squares estimate over the full window."""
    omega = np.arange(-frame.k, frame.k + 1)
    P, p = normal_equations(frame, basis, omega)
    beta, cond_flag = solve_normal_equations(P, p)
    traj = theta_trajectory(beta, basis, frame.n)
    return LbfEstimate(beta=beta, theta=traj[:, frame.k].copy(),
                       theta_traj=traj, P=P, p=p, cond_flag=cond_flag)
