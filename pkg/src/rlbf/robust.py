"""Sequential trimming, local variance estimation, and adaptive basis count.

The trimmed estimator refits each window after discarding the samples whose
previous-window modeling errors are largest in modulus.  Running estimates of
the noise and parameter-variation variances feed an adaptive version of the
optimal-basis-count rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .basis import BasisSet, select_m_optimal
from .exceptions import IdentifiabilityError
from .lbf import (Frame, normal_equations_from_psi, psi_matrix,
                  solve_normal_equations, theta_trajectory)


@dataclass(frozen=True)
class TrimConfig:
    """Trimming level for a window of width K.

    ``gamma`` is the retained fraction; ``K_tilde = int(gamma * K)`` samples
    are kept and ``delta = K - K_tilde`` rejected.  ``forced_exclusions``
    lists window offsets known a priori to be unusable (missing samples);
    they are removed before the delta largest errors are selected.
    """

    gamma: float
    K: int
    forced_exclusions: tuple = ()

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")

    @property
    def K_tilde(self) -> int:
        return int(self.gamma * self.K)

    @property
    def delta(self) -> int:
        return self.K - self.K_tilde

    @property
    def mu(self) -> float:
        return 1.0 - self.gamma

    @classmethod
    def from_mu(cls, mu: float, K: int, forced_exclusions=()) -> "TrimConfig":
        return cls(gamma=1.0 - mu, K=K, forced_exclusions=forced_exclusions)


@dataclass
class TrimmedEstimate:
    beta: np.ndarray
    theta: np.ndarray
    theta_traj: np.ndarray
    omega: np.ndarray       # retained offsets, ascending
    omega_bar: np.ndarray   # rejected offsets, ascending
    P: np.ndarray
    p: np.ndarray
    P_inv: np.ndarray
    residuals: np.ndarray   # against beta, all K offsets
    cond_flag: bool


@dataclass
class AdaptiveState:
    """Running statistics driving the adaptive basis-count rule."""

    sigma_e_sq_hat: float
    sigma_theta_sq_hat: float
    phi_hat: np.ndarray
    eta0: float = 0.99
    m_hat: int = 1
    phi_singular_events: int = 0


def frame_errors(beta_prev: np.ndarray, prev_frame: Frame, new_sample,
                 basis: BasisSet) -> np.ndarray:
    """Modeling errors for the window centered one step after ``prev_frame``.

    For offsets below the leading edge the error reuses the previous-window
    regression vectors (basis values shifted by one); the newest sample is
    scored with the basis value at the window edge.
    """
    y_new, phi_new = new_sample
    K = prev_frame.K
    phi = np.vstack([prev_frame.phi[1:], np.asarray(phi_new)[None, :]])
    y = np.concatenate([prev_frame.y[1:], [y_new]])
    cols = np.concatenate([np.arange(1, K), [K - 1]])
    Psi = psi_matrix(phi, basis.f[:, cols])
    return y - Psi @ beta_prev.conj()


def trim_set(errors: np.ndarray, delta: int, forced_exclusions=()):
    """Split window offsets into retained and rejected sets.

    Rejects the forced exclusions plus the ``delta`` largest-modulus errors
    among the remaining offsets.  Ties are broken by retaining smaller
    offsets first (stable ordering on (modulus, offset)).
    """
    K = errors.shape[0]
    k = (K - 1) // 2
    offsets = np.arange(-k, k + 1)
    forced = np.asarray(sorted(forced_exclusions), dtype=int)
    cand = offsets[~np.isin(offsets, forced)]
    if delta > cand.size:
        raise IdentifiabilityError(
            f"cannot reject {delta} of {cand.size} candidate samples")
    mod = np.abs(errors[cand + k])
    order = np.lexsort((cand, mod))   # modulus ascending, offset ascending
    keep = cand[order[:cand.size - delta]] if delta > 0 else cand
    omega = np.sort(keep)
    omega_bar = np.sort(np.setdiff1d(offsets, omega))
    return omega, omega_bar


def trimmed_estimate(frame: Frame, basis: BasisSet, omega) -> TrimmedEstimate:
    """Least-squares fit restricted to the retained offsets ``omega``.

    Residuals are recomputed against the new fit for every window offset,
    including the rejected ones.
    """
    mn = basis.m * frame.n
    omega = np.sort(np.asarray(omega, dtype=int))
    if omega.size < mn:
        raise IdentifiabilityError(
            f"retained {omega.size} samples < {mn} coefficients")
    Psi = psi_matrix(frame.phi, basis.f)
    idx = omega + frame.k
    P, p = normal_equations_from_psi(Psi, frame.y, idx)
    beta, cond_flag = solve_normal_equations(P, p)
    P_inv = np.linalg.inv(P) if not cond_flag else np.linalg.pinv(P)
    traj = theta_trajectory(beta, basis, frame.n)
    residuals = frame.y - Psi @ beta.conj()
    offsets = np.arange(-frame.k, frame.k + 1)
    omega_bar = np.sort(np.setdiff1d(offsets, omega))
    return TrimmedEstimate(beta=beta, theta=traj[:, frame.k].copy(),
                           theta_traj=traj, omega=omega, omega_bar=omega_bar,
                           P=P, p=p, P_inv=P_inv, residuals=residuals,
                           cond_flag=cond_flag)


def noise_variance(residuals: np.ndarray, omega, k: int) -> float:
    """Mean squared residual modulus over the retained offsets."""
    idx = np.asarray(omega, dtype=int) + k
    r = residuals[idx]
    return float(np.mean(np.abs(r) ** 2))


def theta_variance(beta: np.ndarray, basis: BasisSet, K: int) -> float:
    """In-window variance of the fitted tap trajectories about their mean,
    computed directly from the expansion coefficients."""
    n = beta.size // basis.m
    B = beta.reshape(n, basis.m)
    bar = B @ basis.g.conj()
    val = float(np.linalg.norm(beta) ** 2) / K - float(np.linalg.norm(bar) ** 2)
    return max(val, 0.0)


def phi_update(phi_hat: np.ndarray, phi_new: np.ndarray,
               eta0: float) -> np.ndarray:
    """Exponentially weighted update of the input covariance estimate."""
    if not 0.0 <= eta0 < 1.0:
        raise ValueError(f"eta0 must be in [0, 1), got {eta0}")
    return eta0 * phi_hat + (1.0 - eta0) * np.outer(phi_new, phi_new.conj())


def tr_phi_inv(phi_hat: np.ndarray) -> tuple[float, bool]:
    """Trace of the inverse input covariance; diagonally loads on failure."""
    n = phi_hat.shape[0]
    try:
        inv = np.linalg.inv(phi_hat)
        val = float(np.trace(inv).real)
        if np.isfinite(val) and val > 0:
            return val, False
    except np.linalg.LinAlgError:
        pass
    inv = np.linalg.inv(phi_hat + 1e-8 * np.eye(n))
    return float(np.trace(inv).real), True


def adaptive_m(state: AdaptiveState, lambdas: np.ndarray, K_tilde: int,
               n: int) -> int:
    """Adaptive basis-count rule driven by the previous window's variance
    estimates, with the identifiability cap lowered to the trimmed width."""
    M = K_tilde // n
    trinv, singular = tr_phi_inv(state.phi_hat)
    if singular:
        state.phi_singular_events += 1
    if state.sigma_theta_sq_hat <= 0.0:
        return 1
    return select_m_optimal(lambdas, state.sigma_e_sq_hat,
                            state.sigma_theta_sq_hat, trinv, M)


def lts_estimate(frame: Frame, basis: BasisSet, keep: int):
    """Exhaustive least-trimmed-squares fit: the subset of ``keep`` offsets
    with minimum sum of squared residuals.  Test oracle for tiny instances
    only; cost grows combinatorially."""
    offsets = np.arange(-frame.k, frame.k + 1)
    best = None
    for subset in combinations(offsets, keep):
        est = trimmed_estimate(frame, basis, np.asarray(subset))
        idx = np.asarray(subset) + frame.k
        ssr = float(np.sum(np.abs(est.residuals[idx]) ** 2))
        if best is None or ssr < best[0]:
            best = (ssr, est)
    return best[1], best[0]


@dataclass
class StepResult:
    """Per-window tracker output."""

    theta: np.ndarray
    m: int
    delta: int
    degraded: bool = False


class TrimmedTracker:
    """Sequentially trimmed tracker over a stream of sliding windows.

    ``m_policy`` is one of:

    * ``("fixed", m)`` -- constant basis count;
    * ``("known", sigma_e_sq, sigma_theta_sq, tr_phi_inv)`` -- basis count
      from the closed-form rule with known variances;
    * ``"adaptive"`` -- basis count from running variance estimates.

    With ``mu = 0`` the tracker reduces exactly to the plain windowed
    least-squares estimator (same solve path, sample for sample).
    """

    def __init__(self, basis_full: BasisSet, n: int, mu: float,
                 m_policy="adaptive", eta0: float = 0.99, init: str = "auto",
                 forced_exclusions=()):
        self.basis_full = basis_full
        self.n = n
        self.K = basis_full.K
        self.k = basis_full.k
        self.trim = TrimConfig.from_mu(mu, self.K,
                                       forced_exclusions=forced_exclusions)
        self.m_policy = m_policy
        self.eta0 = eta0
        if init == "auto":
            init = "lad" if self.trim.delta > 0 else "lbf"
        self.init = init
        self.state: AdaptiveState | None = None
        self._beta_prev: np.ndarray | None = None
        self._m_prev: int | None = None
        self._m_next: int | None = None
        self._theta_prev: np.ndarray | None = None
        self._t = 0
        self._basis_cache: dict[int, BasisSet] = {}

    def _basis(self, m: int) -> BasisSet:
        b = self._basis_cache.get(m)
        if b is None:
            b = self._basis_cache[m] = self.basis_full.truncate(m)
        return b

    # -- policy helpers ---------------------------------------------------

    def _m_cap(self) -> int:
        M = max(2, self.trim.K_tilde // self.n)
        return max(1, min(self.basis_full.m, M - 1))

    def _initial_m(self) -> int:
        if isinstance(self.m_policy, tuple) and self.m_policy[0] == "fixed":
            return min(self.m_policy[1], self._m_cap())
        if isinstance(self.m_policy, tuple) and self.m_policy[0] == "known":
            _, se, st, trinv = self.m_policy
            M = max(2, self.trim.K_tilde // self.n)
            return min(select_m_optimal(self.basis_full.lambdas, se, st,
                                        trinv, M), self._m_cap())
        # adaptive: start at the identifiability cap; the rule is stable
        # when adapting downward from an overfitted model, but an underfitted
        # start inflates the noise estimate and locks the rule at m = 1
        return self._m_cap()

    def _next_m(self) -> int:
        if isinstance(self.m_policy, tuple):
            return self._initial_m()
        return min(adaptive_m(self.state, self.basis_full.lambdas,
                              self.trim.K_tilde, self.n), self._m_cap())

    def _update_state(self, est: TrimmedEstimate, basis: BasisSet,
                      phi_center: np.ndarray, phi_win: np.ndarray | None = None):
        se = noise_variance(est.residuals, est.omega, self.k)
        st = theta_variance(est.beta, basis, self.K)
        if self.state is None:
            # seed the covariance from the whole first window so the
            # estimate starts full rank
            phi0 = (phi_win.conj().T @ phi_win) / phi_win.shape[0] \
                if phi_win is not None else np.outer(phi_center,
                                                     phi_center.conj())
            self.state = AdaptiveState(sigma_e_sq_hat=se,
                                       sigma_theta_sq_hat=st,
                                       phi_hat=phi0.conj(),
                                       eta0=self.eta0)
        else:
            self.state.sigma_e_sq_hat = se
            self.state.sigma_theta_sq_hat = st
            self.state.phi_hat = phi_update(self.state.phi_hat, phi_center,
                                            self.eta0)

    # -- stream processing ------------------------------------------------

    def _init_fit(self, frame: Frame, basis: BasisSet) -> TrimmedEstimate:
        from .lad import LadConfig, lad_estimate
        full = np.arange(-self.k, self.k + 1)
        if self.init == "lad":
            beta, _ = lad_estimate(frame, basis, LadConfig())
            res = frame.y - psi_matrix(frame.phi, basis.f) @ beta.conj()
            omega, _ = trim_set(res, self.trim.delta,
                                self.trim.forced_exclusions)
            return trimmed_estimate(frame, basis, omega)
        if self.init == "iterated-trim":
            est = trimmed_estimate(frame, basis, full)
            for _ in range(5):
                omega, _ = trim_set(est.residuals, self.trim.delta,
                                    self.trim.forced_exclusions)
                est = trimmed_estimate(frame, basis, omega)
            return est
        # plain least-squares start (used when delta == 0)
        omega, _ = trim_set(np.zeros(self.K), self.trim.delta,
                            self.trim.forced_exclusions)
        return trimmed_estimate(frame, basis, omega)

    def step(self, t: int, y_win: np.ndarray, phi_win: np.ndarray) -> StepResult:
        frame = Frame(t=t, k=self.k, y=y_win, phi=phi_win)
        if self._beta_prev is None:
            m = self._initial_m()
            basis = self._basis(m)
            est = self._init_fit(frame, basis)
        else:
            m = self._m_next
            basis_prev = self._basis(self._m_prev)
            errors = frame_errors(self._beta_prev,
                                  Frame(t=t - 1, k=self.k,
                                        y=self._y_prev, phi=self._phi_prev),
                                  (y_win[-1], phi_win[-1]), basis_prev)
            omega, _ = trim_set(errors, self.trim.delta,
                                self.trim.forced_exclusions)
            basis = self._basis(m)
            est = trimmed_estimate(frame, basis, omega)

        self._y_prev = y_win.copy()
        self._phi_prev = phi_win.copy()
        if est.cond_flag and self._theta_prev is not None:
            # hold the previous estimate; keep generating errors from it
            return StepResult(theta=self._theta_prev.copy(), m=self._m_prev,
                              delta=self.trim.delta, degraded=True)
        self._beta_prev = est.beta
        self._m_prev = m
        self._theta_prev = est.theta
        self._update_state(est, basis, phi_win[self.k], phi_win=phi_win)
        self._m_next = self._next_m()
        self.state.m_hat = self._m_next
        return StepResult(theta=est.theta, m=m, delta=self.trim.delta)
