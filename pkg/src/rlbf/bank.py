"""Parallel multi-level trimming with leave-one-out cross-validation.

A bank of trimmed estimators with increasing rejection counts shares one
error ranking per window, so their rejection sets are nested and the
normal-equation inverses can be obtained by chained low-rank Woodbury
updates from the most-trimmed level.  The best member is selected online by
comparing sums of recent agreed deleted residuals held in circular
registers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .basis import BasisSet
from .exceptions import DegenerateLeverageError, IdentifiabilityError
from .lbf import COND_LIMIT, Frame, psi_matrix
from . import robust

LEVERAGE_LIMIT = 1.0 - 1e-12


@dataclass(frozen=True)
class BankConfig:
    """Trimming levels (strictly increasing) and decision-window length."""

    deltas: tuple
    L: int = 40

    def __post_init__(self):
        d = self.deltas
        if len(d) < 1 or any(b <= a for a, b in zip(d, d[1:])):
            raise ValueError(f"deltas must be strictly increasing, got {d}")
        if self.L < 1:
            raise ValueError(f"L must be >= 1, got {self.L}")

    @property
    def p(self) -> int:
        return len(self.deltas)

    @classmethod
    def from_mus(cls, mus, K: int, L: int = 40) -> "BankConfig":
        deltas = []
        for mu in mus:
            d = int(mu * K)
            if deltas and d <= deltas[-1]:
                d = deltas[-1] + 1
            deltas.append(d)
        return cls(deltas=tuple(deltas), L=L)


def leverage(P_inv: np.ndarray, psi0: np.ndarray) -> float:
    """Self-influence of the center sample on its own fit."""
    return float((psi0.conj() @ P_inv @ psi0).real)


def deleted_residual(eps_tt: complex, c: float) -> complex:
    """Leave-one-out interpolation error from the plain residual and the
    center-sample leverage."""
    if c >= LEVERAGE_LIMIT:
        raise DegenerateLeverageError(f"leverage {c} too close to one")
    return eps_tt / (1.0 - c)


def downdate_chain(P_p_inv: np.ndarray, p_p: np.ndarray, psi_blocks,
                   y_blocks):
    """Inverses and right-hand sides for all trimming levels.

    Starting from the most-trimmed level, each step re-admits the block of
    samples rejected only at the deeper level, updating the inverse with
    the Woodbury identity.  ``psi_blocks[i]`` / ``y_blocks[i]`` hold the
    extra regression vectors (mn x r) and outputs (r,) rejected between
    level i and level i+1 (i = 0 is the step from level p to p-1).
    Returns lists ``P_invs``, ``ps`` ordered from level 1 to level p, and a
    flag marking any fallback to a direct solve.
    """
    P_inv = P_p_inv
    p_vec = p_p
    P_invs = [P_inv]
    ps = [p_vec]
    fallback = False
    for Psi, yb in zip(psi_blocks, y_blocks):
        r = Psi.shape[1]
        PiPsi = P_inv @ Psi
        inner = np.eye(r) + Psi.conj().T @ PiPsi
        try:
            corr = PiPsi @ np.linalg.solve(inner, PiPsi.conj().T)
            P_inv = P_inv - corr
        except np.linalg.LinAlgError:
            fallback = True
            P_direct = np.linalg.inv(P_inv) + Psi @ Psi.conj().T
            P_inv = np.linalg.inv(P_direct)
        p_vec = p_vec + Psi @ yb.conj()
        P_invs.append(P_inv)
        ps.append(p_vec)
    P_invs.reverse()
    ps.reverse()
    return P_invs, ps, fallback


@dataclass
class BankState:
    """Circular registers of agreed deleted residuals and their running
    sums of squared moduli, one per bank member."""

    L: int
    p: int
    registers: np.ndarray = None   # (p, L) complex
    E: np.ndarray = None           # (p,) running sums
    fill: int = 0                  # register position of the oldest entry
    agreed_count: int = 0

    def __post_init__(self):
        if self.registers is None:
            self.registers = np.zeros((self.p, self.L), dtype=complex)
        if self.E is None:
            self.E = np.zeros(self.p)


def cv_update(state: BankState, agreed: bool,
              deleted_residuals=None) -> BankState:
    """One cross-validation step: on agreement, evict the oldest register
    entry and absorb the new deleted residuals for every member at once."""
    if agreed:
        dr = np.asarray(deleted_residuals)
        l = state.fill
        state.E = state.E - np.abs(state.registers[:, l]) ** 2 \
            + np.abs(dr) ** 2
        state.registers[:, l] = dr
        state.fill = (l + 1) % state.L
        state.agreed_count += 1
    return state


def select_index(state: BankState) -> int:
    """Best member: minimum running statistic, ties to the least trimming.
    Before L agreed events have accrued, defaults to the middle member."""
    if state.agreed_count < state.L:
        return state.p // 2
    return int(np.argmin(state.E))


class BankTracker:
    """Adaptive tracker combining p trimmed pipelines via cross-validation.

    One error ranking per window (from the pipeline of the currently
    selected output) makes the rejection sets nested, enabling the Woodbury
    chain.  Set ``shared_ranking=False`` to let each member rank errors
    from its own previous estimate; the chain is then disabled and each
    level is solved directly.
    """

    def __init__(self, basis_full: BasisSet, n: int, config: BankConfig,
                 m_policy="adaptive", eta0: float = 0.99):
        self.basis_full = basis_full
        self.n = n
        self.K = basis_full.K
        self.k = basis_full.k
        self.config = config
        self.m_policy = m_policy
        self.eta0 = eta0
        self.cv = BankState(L=config.L, p=config.p)
        self.adaptive: robust.AdaptiveState | None = None
        self._basis_cache: dict[int, BasisSet] = {}
        self._beta_prev = None          # coefficients of the bank output
    # per-member previous estimates, for own-ranking mode
        self._member_betas = None
        self._m_prev: int | None = None
        self._m_next: int | None = None
        self._theta_prev: np.ndarray | None = None
        self.shared_ranking = True
        self.leverage_skips = 0
        self.woodbury_fallbacks = 0

    def _basis(self, m: int) -> BasisSet:
        b = self._basis_cache.get(m)
        if b is None:
            b = self._basis_cache[m] = self.basis_full.truncate(m)
        return b

    # -- basis-count policy ----------------------------------------------

    def _K_tilde_min(self) -> int:
        return self.K - self.config.deltas[-1]

    def _m_cap(self) -> int:
        M = max(2, self._K_tilde_min() // self.n)
        return max(1, min(self.basis_full.m, M - 1))

    def _policy_m(self) -> int:
        if isinstance(self.m_policy, tuple) and self.m_policy[0] == "fixed":
            return min(self.m_policy[1], self._m_cap())
        if isinstance(self.m_policy, tuple) and self.m_policy[0] == "known":
            from .basis import select_m_optimal
            _, se, st, trinv = self.m_policy
            M = max(2, self._K_tilde_min() // self.n)
            return min(select_m_optimal(self.basis_full.lambdas, se, st,
                                        trinv, M), self._m_cap())
        if self.adaptive is None:
            return self._m_cap()
        return min(robust.adaptive_m(self.adaptive, self.basis_full.lambdas,
                                     self._K_tilde_min(), self.n),
                   self._m_cap())

    def _update_adaptive(self, beta_p, se, basis, phi_center, phi_win=None):
        # variance estimates come from the most-trimmed member, so that
        # surviving outliers cannot inflate the noise floor
        st = robust.theta_variance(beta_p, basis, self.K)
        if self.adaptive is None:
            phi0 = ((phi_win.conj().T @ phi_win) / phi_win.shape[0]).conj() \
                if phi_win is not None else np.outer(phi_center,
                                                     phi_center.conj())
            self.adaptive = robust.AdaptiveState(
                sigma_e_sq_hat=se, sigma_theta_sq_hat=st,
                phi_hat=phi0, eta0=self.eta0)
        else:
            self.adaptive.sigma_e_sq_hat = se
            self.adaptive.sigma_theta_sq_hat = st
            self.adaptive.phi_hat = robust.phi_update(
                self.adaptive.phi_hat, phi_center, self.eta0)

    # -- stream processing ------------------------------------------------

    def _init_window(self, frame: Frame, basis: BasisSet):
        from .lad import LadConfig, lad_estimate
        beta, _ = lad_estimate(frame, basis, LadConfig())
        res = frame.y - psi_matrix(frame.phi, basis.f) @ beta.conj()
        omega_p, _ = robust.trim_set(res, self.config.deltas[-1])
        est = robust.trimmed_estimate(frame, basis, omega_p)
        self._beta_prev = est.beta
        self._member_betas = [est.beta] * self.config.p
        self._m_prev = basis.m
        self._theta_prev = est.theta
        se = robust.noise_variance(est.residuals, est.omega, self.k)
        self._update_adaptive(est.beta, se, basis, frame.phi[self.k],
                              phi_win=frame.phi)
        self._m_next = self._policy_m()
        return robust.StepResult(theta=est.theta, m=basis.m,
                                 delta=self.config.deltas[self.cv.p // 2])

    def step(self, t: int, y_win: np.ndarray,
             phi_win: np.ndarray) -> robust.StepResult:
        frame = Frame(t=t, k=self.k, y=y_win, phi=phi_win)
        if self._beta_prev is None:
            m = self._policy_m()
            out = self._init_window(frame, self._basis(m))
            self._y_prev, self._phi_prev = y_win.copy(), phi_win.copy()
            return out

        m = self._m_next
        basis_prev = self._basis(self._m_prev)
        prev_frame = Frame(t=t - 1, k=self.k, y=self._y_prev,
                           phi=self._phi_prev)
        new_sample = (y_win[-1], phi_win[-1])
        self._y_prev, self._phi_prev = y_win.copy(), phi_win.copy()

        basis = self._basis(m)
        Psi = psi_matrix(phi_win, basis.f)
        psi0 = Psi[self.k]
        deltas = self.config.deltas

        if self.shared_ranking:
            errors = robust.frame_errors(self._beta_prev, prev_frame,
                                         new_sample, basis_prev)
            betas, P_invs, omegas = self._fit_nested(frame, basis, Psi,
                                                     errors, deltas)
        else:
            betas, P_invs, omegas = self._fit_independent(
                frame, basis, basis_prev, prev_frame, new_sample, deltas)
        if betas is None:
            # conditioning failure: hold the previous output
            return robust.StepResult(theta=self._theta_prev.copy(),
                                     m=self._m_prev,
                                     delta=deltas[select_index(self.cv)],
                                     degraded=True)

        agreed = all((omega == 0).any() for omega in omegas)
        if agreed:
            drs = []
            try:
                for beta_i, P_inv_i in zip(betas, P_invs):
                    eps = y_win[self.k] - beta_i.conj() @ psi0
                    drs.append(deleted_residual(eps,
                                                leverage(P_inv_i, psi0)))
                cv_update(self.cv, True, drs)
            except DegenerateLeverageError:
                self.leverage_skips += 1
                cv_update(self.cv, False)
        else:
            cv_update(self.cv, False)

        i_star = select_index(self.cv)
        beta_out = betas[i_star]
        theta = beta_out.reshape(self.n, m) @ basis.f0

        # adaptive-rule statistics from the most-trimmed member
        idx_p = omegas[-1] + self.k
        r_p = y_win[idx_p] - Psi[idx_p] @ betas[-1].conj()
        self._update_adaptive(betas[-1], float(np.mean(np.abs(r_p) ** 2)),
                              basis, phi_win[self.k])
        self._beta_prev = beta_out
        self._member_betas = betas
        self._m_prev = m
        self._theta_prev = theta
        self._m_next = self._policy_m()
        return robust.StepResult(theta=theta, m=m, delta=deltas[i_star])

    def _fit_nested(self, frame, basis, Psi, errors, deltas):
        """All levels from one shared error ranking plus a Woodbury chain."""
        p = len(deltas)
        mn = basis.m * self.n
        K, k = self.K, self.k
        offsets = np.arange(-k, k + 1)
        mod = np.abs(errors)
        order = np.lexsort((offsets, mod))     # shared ranking
        if K - deltas[-1] < mn:
            raise IdentifiabilityError(
                f"deepest trimming leaves {K - deltas[-1]} < {mn} samples")
        keep_p = order[:K - deltas[-1]]
        idx_p = np.sort(keep_p)
        Psi_p = Psi[idx_p]
        Ps = Psi_p.T @ Psi_p.conj()
        pv = Psi_p.T @ frame.y[idx_p].conj()
        try:
            c, low = cho_factor(Ps, check_finite=False)
        except (LinAlgError, ValueError):
            return None, None, None
        d = np.abs(np.diag(c))
        if d.min() <= 0 or (d.max() / d.min()) ** 2 >= COND_LIMIT:
            return None, None, None
        P_p_inv = cho_solve((c, low), np.eye(mn), check_finite=False)
        psi_blocks, y_blocks = [], []
        for i in range(p - 1, 0, -1):
            # samples rejected at level i+1 but kept at level i
            extra = order[K - deltas[i]:K - deltas[i - 1]]
            psi_blocks.append(Psi[extra].T)
            y_blocks.append(frame.y[extra])
        P_invs, ps, fb = downdate_chain(P_p_inv, pv, psi_blocks, y_blocks)
        if fb:
            self.woodbury_fallbacks += 1
        betas = [P_inv @ p_vec for P_inv, p_vec in zip(P_invs, ps)]
        omegas = [np.sort(order[:K - d]) - k for d in deltas]
        return betas, P_invs, omegas

    def _fit_independent(self, frame, basis, basis_prev, prev_frame,
                         new_sample, deltas):
        """Each member ranks errors from its own previous estimate; every
        level is assembled and solved directly."""
        betas, P_invs, omegas = [], [], []
        for i, d in enumerate(deltas):
            errors = robust.frame_errors(self._member_betas[i], prev_frame,
                                         new_sample, basis_prev)
            omega, _ = robust.trim_set(errors, d)
            est = robust.trimmed_estimate(frame, basis, omega)
            if est.cond_flag:
                return None, None, None
            betas.append(est.beta)
            P_invs.append(est.P_inv)
            omegas.append(est.omega)
        return betas, P_invs, omegas
