"""Parameter-variation hypermodels and the eigenbasis built from them.

The basis functions are the dominant eigenvectors of the K x K correlation
matrix of the parameter process (a Karhunen-Loeve construction).  Closed-form
bias/variance expressions for the windowed least-squares tracker, and the
resulting optimal-basis-count rule, live here as well.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.linalg import toeplitz
from scipy.special import j0

from .exceptions import EigensolverError


class HypermodelKind(Enum):
    JAKES = "jakes"
    FLAT_DOPPLER = "flat-doppler"


@dataclass(frozen=True)
class ParameterModel:
    """Stationary model of parameter variation.

    ``rate`` is the Doppler rate in radians per sample (maximum Doppler
    frequency for the Jakes model, spectrum edge for the flat model).
    ``sigma_theta_sq`` is the total parameter power summed over taps.
    """

    kind: HypermodelKind
    rate: float
    sigma_theta_sq: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.rate <= np.pi:
            raise ValueError(f"rate must be in (0, pi], got {self.rate}")
        if self.sigma_theta_sq <= 0.0:
            raise ValueError("sigma_theta_sq must be positive")


def rho(model: ParameterModel, tau) -> np.ndarray | float:
    """Normalized autocorrelation of the parameter process at lag ``tau``.

    Jakes model: zero-order Bessel function of ``rate * tau``.
    Flat Doppler model: unnormalized sinc of ``rate * tau``.
    Values are clipped to [-1, 1] to guard against numerical overshoot.
    """
    x = np.asarray(tau, dtype=float) * model.rate
    if model.kind is HypermodelKind.JAKES:
        val = j0(x)
    else:
        # np.sinc is sin(pi x)/(pi x); rescale to sin(x)/x
        val = np.sinc(x / np.pi)
    out = np.clip(val, -1.0, 1.0)
    return out if out.ndim else float(out)


def correlation_matrix(model: ParameterModel, K: int) -> np.ndarray:
    """K x K Toeplitz correlation matrix with entries rho(j - i)."""
    if K < 1 or K % 2 == 0:
        raise ValueError(f"K must be odd and positive, got {K}")
    col = np.asarray(rho(model, np.arange(K)), dtype=float).reshape(K)
    return toeplitz(col)


@dataclass(frozen=True)
class BasisSet:
    """Orthonormal basis sequences over a centered window of width K = 2k+1.

    ``f`` has shape (m, K); row ``i``, column ``j + k`` holds the value of
    basis function ``i`` at window offset ``j``.  All rows are conjugate
    symmetric about the center, so ``f0`` (the center values) is real.
    ``h`` is the equivalent smoothing kernel, ``g`` the window average of
    each basis function.
    """

    K: int
    m: int
    f: np.ndarray          # (m, K) complex
    lambdas: np.ndarray    # (m,) non-increasing positive
    f0: np.ndarray         # (m,) real
    h: np.ndarray          # (K,) complex
    g: np.ndarray          # (m,) complex

    @property
    def k(self) -> int:
        return (self.K - 1) // 2

    def truncate(self, m: int) -> "BasisSet":
        """Basis containing only the first ``m`` functions."""
        if not 1 <= m <= self.m:
            raise ValueError(f"m must be in [1, {self.m}], got {m}")
        if m == self.m:
            return self
        f = self.f[:m]
        f0 = self.f0[:m]
        h = f0 @ f
        return BasisSet(K=self.K, m=m, f=f, lambdas=self.lambdas[:m],
                        f0=f0, h=h, g=self.g[:m])

    # Projection matrices, materialized on demand for a given FIR order n.
    # Coefficient layout is parameter-major: block i holds the m expansion
    # coefficients of tap i.

    def F0(self, n: int) -> np.ndarray:
        return np.kron(np.eye(n), self.f[:, self.k].conj()[None, :])

    def Fj(self, j: int, n: int) -> np.ndarray:
        return np.kron(np.eye(n), self.f[:, j + self.k].conj()[None, :])

    def G(self, n: int) -> np.ndarray:
        return np.kron(np.eye(n), self.g.conj()[None, :])


def _symmetrize_group(vecs: np.ndarray) -> np.ndarray:
    """Rotate an eigenspace basis into index-reversal symmetric and
    antisymmetric vectors; antisymmetric ones are multiplied by 1j so that
    every returned column is conjugate symmetric about the center."""
    K, g = vecs.shape
    flipped = vecs[::-1]
    sym = 0.5 * (vecs + flipped)
    asym = 0.5 * (vecs - flipped)
    cols = []
    for part, phase in ((sym, 1.0), (asym, 1j)):
        u, s, _ = np.linalg.svd(part, full_matrices=False)
        keep = s > 1e-6
        for col in (u[:, keep] * phase).T:
            cols.append(col)
    if len(cols) != g:
        # fall back to the raw eigenvectors; symmetry cannot be enforced
        return vecs.astype(complex)
    return np.column_stack(cols)


def _fix_sign(row: np.ndarray, k: int) -> np.ndarray:
    """Flip sign so the center value is positive; when it vanishes, make
    the first nonzero entry positive (real part first, then imaginary)."""
    c = row[k].real
    if abs(c) > 1e-12:
        return -row if c < 0 else row
    nz = np.flatnonzero(np.abs(row) > 1e-12)
    if nz.size == 0:
        return row
    lead = row[nz[0]]
    pivot = lead.real if abs(lead.real) > 1e-12 else lead.imag
    return -row if pivot < 0 else row


def eigenbasis(R: np.ndarray, m_max: int) -> BasisSet:
    """Basis of the ``m_max`` dominant eigenvectors of a correlation matrix.

    Eigenvalues come out non-increasing.  Each eigenvector is phase-fixed to
    be conjugate symmetric about the window center with a real, nonnegative
    center value, which makes the result reproducible across eigensolvers.
    """
    R = np.asarray(R)
    K = R.shape[0]
    if not 1 <= m_max <= K:
        raise ValueError(f"m_max must be in [1, {K}], got {m_max}")
    try:
        w, V = np.linalg.eigh(R)
    except np.linalg.LinAlgError as exc:
        raise EigensolverError(f"eigendecomposition failed: {exc}") from exc
    order = np.argsort(w)[::-1]
    w = w[order]
    V = V[:, order]

    # Resolve degenerate eigenvalue groups so each vector has definite
    # reversal symmetry (the matrix is persymmetric).
    tol = 1e-9 * max(1.0, abs(w[0]))
    Vc = np.empty((K, K), dtype=complex)
    start = 0
    while start < K:
        stop = start + 1
        while stop < K and abs(w[stop] - w[start]) <= tol:
            stop += 1
        Vc[:, start:stop] = _symmetrize_group(V[:, start:stop])
        start = stop

    k = (K - 1) // 2
    # Window-offset layout: the eigenvector runs from offset +k down to -k.
    f = np.empty((m_max, K), dtype=complex)
    for i in range(m_max):
        f[i] = _fix_sign(Vc[::-1, i], k)

    # Safety net: re-orthonormalize if any pairwise inner product drifted.
    gram = f @ f.conj().T
    if np.max(np.abs(gram - np.eye(m_max))) > 1e-12:
        for i in range(m_max):
            for l in range(i):
                f[i] -= (f[l].conj() @ f[i]) * f[l]
            f[i] /= np.linalg.norm(f[i])
            f[i] = _fix_sign(f[i], k)

    f0 = f[:, k].real.copy()
    h = f0 @ f
    g = f.sum(axis=1) / K
    return BasisSet(K=K, m=m_max, f=f, lambdas=w[:m_max].copy(),
                    f0=f0, h=h, g=g)


def predicted_mse(basis: BasisSet, m: int, sigma_e_sq: float,
                  sigma_theta_sq: float, tr_phi_inv: float):
    """Closed-form (bias, variance, total) of the tracking MSE at basis
    count ``m``.  Bias is clamped at zero against roundoff."""
    if not 1 <= m <= basis.m:
        raise ValueError(f"m must be in [1, {basis.m}], got {m}")
    s = float(basis.lambdas[:m] @ basis.f0[:m] ** 2)
    B = sigma_theta_sq * (1.0 - s)
    if B < 0.0:
        B = 0.0
    V = sigma_e_sq * tr_phi_inv * float(basis.f0[:m] @ basis.f0[:m])
    return B, V, B + V


def select_m_optimal(lambdas: np.ndarray, sigma_e_sq: float,
                     sigma_theta_sq: float, tr_phi_inv: float,
                     M: int) -> int:
    """Largest m < M whose eigenvalue exceeds the noise-to-signal threshold.

    Returns 1 when no eigenvalue passes (minimal identifiable model).
    """
    lambdas = np.asarray(lambdas, dtype=float)
    if sigma_theta_sq <= 0.0:
        return 1
    threshold = sigma_e_sq * tr_phi_inv / sigma_theta_sq
    m_cap = min(M - 1, lambdas.size)
    m = 1
    for i in range(m_cap):
        if lambdas[i] > threshold:
            m = i + 1
    return m
