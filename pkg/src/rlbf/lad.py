"""Least absolute deviations baseline via iteratively reweighted least squares.

Minimizes the sum of residual moduli over the window.  Each IRLS pass solves
a weighted least-squares problem with weights 1/max(|residual|, eps); ten
passes from a warm start give an adequate approximation for tracking use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import BasisSet
from .exceptions import NumericalError
from .lbf import Frame, psi_matrix, solve_normal_equations
from . import robust


@dataclass
class LadConfig:
    max_iters: int = 10
    epsilon_reg: float = 1e-6
    warm_start: np.ndarray | None = None


def lad_objective(Psi: np.ndarray, y: np.ndarray, beta: np.ndarray) -> float:
    return float(np.sum(np.abs(y - Psi @ beta.conj())))


def _weighted_solve(Psi, y, w):
    Pw = (Psi * w[:, None]).T @ Psi.conj()
    pw = (Psi * w[:, None]).T @ y.conj()
    return solve_normal_equations(Pw, pw)


def lad_estimate(frame: Frame, basis: BasisSet, config: LadConfig | None = None):
    """IRLS approximation of the minimum absolute deviation coefficients.

    Warm start: ``config.warm_start`` when given (previous-window estimate),
    otherwise the plain least-squares fit.  Returns (beta, theta).
    """
    config = config or LadConfig()
    Psi = psi_matrix(frame.phi, basis.f)
    y = frame.y
    mn = Psi.shape[1]
    if frame.K < mn:
        raise NumericalError(f"window of {frame.K} samples cannot determine "
                             f"{mn} coefficients")
    if config.warm_start is not None:
        beta = config.warm_start
    else:
        beta, _ = solve_normal_equations(Psi.T @ Psi.conj(),
                                         Psi.T @ y.conj())
    eps = config.epsilon_reg
    for _ in range(config.max_iters):
        r = np.abs(y - Psi @ beta.conj())
        w = 1.0 / np.maximum(r, eps)
        new_beta, flag = _weighted_solve(Psi, y, w)
        if flag:
            eps *= 10.0
            w = 1.0 / np.maximum(r, eps)
            new_beta, flag = _weighted_solve(Psi, y, w)
            if flag:
                raise NumericalError("weighted LAD system singular")
        beta = new_beta
    n = frame.n
    theta = beta.reshape(n, basis.m) @ basis.f[:, frame.k].conj()
    return beta, theta


class LadTracker:
    """Streamed LAD tracker with warm starts and adaptive basis count.

    The noise variance feeding the basis-count rule is estimated from the
    LAD residuals after discarding the ``var_trim_mu`` largest ones, so
    outliers do not inflate the threshold.
    """

    def __init__(self, basis_full: BasisSet, n: int, m_policy="adaptive",
                 eta0: float = 0.99, var_trim_mu: float = 0.15,
                 max_iters: int = 10):
        self.basis_full = basis_full
        self.n = n
        self.K = basis_full.K
        self.k = basis_full.k
        self.m_policy = m_policy
        self.eta0 = eta0
        self.var_trim = robust.TrimConfig.from_mu(var_trim_mu, self.K)
        self.max_iters = max_iters
        self.state: robust.AdaptiveState | None = None
        self._beta_prev: np.ndarray | None = None
        self._m_prev: int | None = None
        self._m_next: int | None = None
        self._basis_cache: dict[int, BasisSet] = {}

    def _basis(self, m: int) -> BasisSet:
        b = self._basis_cache.get(m)
        if b is None:
            b = self._basis_cache[m] = self.basis_full.truncate(m)
        return b

    def _m_cap(self) -> int:
        M = max(2, self.var_trim.K_tilde // self.n)
        return max(1, min(self.basis_full.m, M - 1))

    def _policy_m(self) -> int:
        if isinstance(self.m_policy, tuple) and self.m_policy[0] == "fixed":
            return min(self.m_policy[1], self._m_cap())
        if isinstance(self.m_policy, tuple) and self.m_policy[0] == "known":
            _, se, st, trinv = self.m_policy
            M = max(2, self.var_trim.K_tilde // self.n)
            from .basis import select_m_optimal
            return min(select_m_optimal(self.basis_full.lambdas, se, st,
                                        trinv, M), self._m_cap())
        if self.state is None:
            return self._m_cap()
        return min(robust.adaptive_m(self.state, self.basis_full.lambdas,
                                     self.var_trim.K_tilde, self.n),
                   self._m_cap())

    def _adjust_warm_start(self, m: int) -> np.ndarray | None:
        if self._beta_prev is None:
            return None
        if m == self._m_prev:
            return self._beta_prev
        B = self._beta_prev.reshape(self.n, self._m_prev)
        out = np.zeros((self.n, m), dtype=complex)
        c = min(m, self._m_prev)
        out[:, :c] = B[:, :c]
        return out.reshape(-1)

    def step(self, t: int, y_win: np.ndarray,
             phi_win: np.ndarray) -> robust.StepResult:
        m = self._m_next if self._m_next is not None else self._policy_m()
        basis = self._basis(m)
        frame = Frame(t=t, k=self.k, y=y_win, phi=phi_win)
        cfg = LadConfig(max_iters=self.max_iters,
                        warm_start=self._adjust_warm_start(m))
        beta, theta = lad_estimate(frame, basis, cfg)
        self._beta_prev = beta
        self._m_prev = m

        res = y_win - psi_matrix(phi_win, basis.f) @ beta.conj()
        omega, _ = robust.trim_set(res, self.var_trim.delta)
        se = robust.noise_variance(res, omega, self.k)
        st = robust.theta_variance(beta, basis, self.K)
        if self.state is None:
            phi0 = ((phi_win.conj().T @ phi_win) / phi_win.shape[0]).conj()
            self.state = robust.AdaptiveState(
                sigma_e_sq_hat=se, sigma_theta_sq_hat=st,
                phi_hat=phi0, eta0=self.eta0)
        else:
            self.state.sigma_e_sq_hat = se
            self.state.sigma_theta_sq_hat = st
            self.state.phi_hat = robust.phi_update(self.state.phi_hat,
                                                   phi_win[self.k], self.eta0)
        self._m_next = self._policy_m()
        return robust.StepResult(theta=theta, m=m, delta=self.var_trim.delta)
