"""Signal generators and the Monte-Carlo experiment harness.

Reproduces the simulation protocol at desk scale: a multipath FIR channel
with lowpass-filtered Gaussian tap trajectories and exponentially decaying
power profile, white QPSK input, and impulsive measurement noise (Gaussian
mixture or symmetric alpha-stable).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve, firwin

from . import robust
from .bank import BankConfig, BankTracker
from .basis import (BasisSet, HypermodelKind, ParameterModel,
                    correlation_matrix, eigenbasis)
from .exceptions import ConfigError, NumericalError, RlbfError
from .lad import LadTracker
from .robust import TrimmedTracker


@dataclass(frozen=True)
class ChannelConfig:
    n: int = 10
    decay: float = 0.69
    bandwidth: float = 0.003     # lowpass cutoff, cycles per sample
    filter_order: int = 2001

    @property
    def tap_variances(self) -> np.ndarray:
        return self.decay ** np.arange(self.n)

    @property
    def sigma_theta_sq(self) -> float:
        return float(self.tap_variances.sum())


@dataclass(frozen=True)
class ContaminatedNoise:
    """Gaussian mixture: variance sigma2_sq with probability eps."""

    sigma1_sq: float
    sigma2_sq: float
    eps: float

    kind = "contaminated"

    @property
    def nominal_variance(self) -> float:
        return self.sigma1_sq

    @property
    def param(self) -> float:
        return self.eps


@dataclass(frozen=True)
class AlphaStableNoise:
    """Independent symmetric alpha-stable real and imaginary parts."""

    alpha: float
    sigma: float

    kind = "alpha-stable"

    @property
    def nominal_variance(self) -> float:
        # alpha = 2 reduces to Gaussian with per-component variance
        # 2 sigma^2; used as the "known" noise level
        return 2.0 * self.sigma ** 2

    @property
    def param(self) -> float:
        return self.alpha


def gen_qpsk(T: int, seed) -> np.ndarray:
    """White unit-power QPSK symbol stream."""
    rng = np.random.default_rng(seed)
    re = rng.integers(0, 2, size=T) * 2 - 1
    im = rng.integers(0, 2, size=T) * 2 - 1
    return (re + 1j * im) / np.sqrt(2.0)


def gen_channel(config: ChannelConfig, T: int, seed) -> np.ndarray:
    """(T, n) tap trajectories: lowpass-filtered circular Gaussian noise,
    rescaled per tap to the exponentially decaying variance profile."""
    rng = np.random.default_rng(seed)
    taps = firwin(config.filter_order, config.bandwidth, fs=1.0)
    pad = config.filter_order - 1
    out = np.empty((T, config.n), dtype=complex)
    for i, target in enumerate(config.tap_variances):
        w = (rng.standard_normal(T + pad)
             + 1j * rng.standard_normal(T + pad)) / np.sqrt(2.0)
        x = fftconvolve(w, taps, mode="valid")
        x *= np.sqrt(target / np.mean(np.abs(x) ** 2))
        out[:, i] = x
    return out


def _sas(alpha: float, size: int, rng) -> np.ndarray:
    """Standard symmetric alpha-stable draws (Chambers-Mallows-Stuck)."""
    U = rng.uniform(-np.pi / 2, np.pi / 2, size)
    W = rng.exponential(1.0, size)
    if abs(alpha - 1.0) < 1e-12:
        return np.tan(U)
    return (np.sin(alpha * U) / np.cos(U) ** (1.0 / alpha)
            * (np.cos(U - alpha * U) / W) ** ((1.0 - alpha) / alpha))


def gen_noise(config, T: int, seed) -> np.ndarray:
    """Complex measurement noise per the configured contamination model."""
    rng = np.random.default_rng(seed)
    if isinstance(config, ContaminatedNoise):
        base = (rng.standard_normal(T) + 1j * rng.standard_normal(T)) \
            / np.sqrt(2.0)
        scale = np.where(rng.random(T) < config.eps,
                         np.sqrt(config.sigma2_sq),
                         np.sqrt(config.sigma1_sq))
        return base * scale
    if isinstance(config, AlphaStableNoise):
        re = _sas(config.alpha, T, rng)
        im = _sas(config.alpha, T, rng)
        return config.sigma * (re + 1j * im)
    raise TypeError(f"unknown noise config {type(config)!r}")


def build_phi(u: np.ndarray, n: int) -> np.ndarray:
    """(T, n) regression vectors of past inputs, most recent first."""
    u_pad = np.concatenate([np.zeros(n - 1, dtype=u.dtype), u]) \
        if n > 1 else u
    win = np.lib.stride_tricks.sliding_window_view(u_pad, n)
    return win[:, ::-1].copy()


@dataclass
class Scenario:
    """One experiment: a channel/noise realization and a set of algorithms
    run on that identical realization."""

    K: int
    T: int
    seed: int
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    noise: object = field(
        default_factory=lambda: ContaminatedNoise(0.032, 32.0, 0.1))
    algorithms: tuple = ("lbf", "adaptive-bank")
    m_policy: str = "adaptive"
    bank_mus: tuple = (0.005, 0.05, 0.15)
    bank_L: int = 40
    eta0: float = 0.99
    collect_traces: bool = False

    def validate(self):
        if self.K < 3 or self.K % 2 == 0:
            raise ConfigError("K", f"must be odd and >= 3, got {self.K}")
        if self.T < 3 * self.K:
            raise ConfigError("T", f"must be >= 3K = {3 * self.K}")
        n = self.channel.n
        K_tilde = self.K - int(max(self.bank_mus) * self.K)
        if K_tilde < 2 * n:
            raise ConfigError("bank_mus",
                              f"deepest trimming leaves {K_tilde} samples, "
                              f"need >= {2 * n} for identifiability")


@dataclass
class AlgoResult:
    mse: float
    mean_m: float
    mean_delta: float
    wall_time_ms: float
    n_windows: int
    theta_trace: np.ndarray | None = None


@dataclass
class RunResult:
    scenario: Scenario
    per_algorithm: dict


def _resolve_m_policy(spec: str, scenario: Scenario):
    if spec == "adaptive":
        return "adaptive"
    if spec == "known":
        return ("known", scenario.noise.nominal_variance,
                scenario.channel.sigma_theta_sq, float(scenario.channel.n))
    if spec.startswith("fixed:"):
        return ("fixed", int(spec.split(":", 1)[1]))
    raise ConfigError("m_policy", f"unknown policy {spec!r}")


def make_basis(K: int, bandwidth: float, n: int,
               m_extra: int = 0) -> BasisSet:
    """Eigenbasis of the flat-Doppler hypermodel matched to the channel's
    lowpass bandwidth (edge frequency 2*pi*bandwidth rad/sample)."""
    model = ParameterModel(HypermodelKind.FLAT_DOPPLER,
                           rate=2.0 * np.pi * bandwidth)
    m_max = max(1, min(K, K // n + m_extra)) if n > 1 else min(K, 16)
    R = correlation_matrix(model, K)
    return eigenbasis(R, m_max)


def _make_tracker(name: str, basis: BasisSet, scenario: Scenario, policy):
    n = scenario.channel.n
    if name == "lbf":
        return TrimmedTracker(basis, n, mu=0.0, m_policy=policy,
                              eta0=scenario.eta0)
    if name.startswith("trimmed:"):
        mu = float(name.split(":", 1)[1])
        return TrimmedTracker(basis, n, mu=mu, m_policy=policy,
                              eta0=scenario.eta0)
    if name == "adaptive-bank":
        cfg = BankConfig.from_mus(scenario.bank_mus, scenario.K,
                                  L=scenario.bank_L)
        return BankTracker(basis, n, cfg, m_policy=policy,
                           eta0=scenario.eta0)
    if name == "lad":
        return LadTracker(basis, n, m_policy=policy, eta0=scenario.eta0)
    raise ConfigError("algorithms", f"unknown algorithm {name!r}")


def run_experiment(scenario: Scenario) -> RunResult:
    """Run every requested algorithm on one shared realization.

    The reported MSE is the time average of the squared parameter error,
    excluding window-less edges and a burn-in of 2K steps.  Fully
    deterministic for a fixed seed.
    """
    scenario.validate()
    K, T, n = scenario.K, scenario.T, scenario.channel.n
    k = (K - 1) // 2
    ss = np.random.SeedSequence(scenario.seed)
    seed_u, seed_ch, seed_e = ss.spawn(3)

    u = gen_qpsk(T, seed_u)
    theta = gen_channel(scenario.channel, T, seed_ch)
    e = gen_noise(scenario.noise, T, seed_e)
    phi = build_phi(u, n)
    y = np.einsum("ti,ti->t", theta.conj(), phi) + e

    basis = make_basis(K, scenario.channel.bandwidth, n)
    t_start, t_stop = k, T - k - 1
    burn = t_start + 2 * K

    results = {}
    for name in scenario.algorithms:
        policy = _resolve_m_policy(scenario.m_policy, scenario)
        tracker = _make_tracker(name, basis, scenario, policy)
        n_win = t_stop - t_start + 1
        est = np.empty((n_win, n), dtype=complex)
        ms = np.empty(n_win)
        ds = np.empty(n_win)
        tic = time.perf_counter()
        for w, t in enumerate(range(t_start, t_stop + 1)):
            try:
                out = tracker.step(t, y[t - k:t + k + 1],
                                   phi[t - k:t + k + 1])
            except RlbfError:
                raise
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"solver failure: {exc}",
                                     window_index=t) from exc
            est[w] = out.theta
            ms[w] = out.m
            ds[w] = out.delta
        wall = (time.perf_counter() - tic) * 1e3
        valid = slice(burn - t_start, n_win)
        err = est[valid] - theta[burn:t_stop + 1]
        mse = float(np.mean(np.sum(np.abs(err) ** 2, axis=1)))
        results[name] = AlgoResult(
            mse=mse, mean_m=float(ms[valid].mean()),
            mean_delta=float(ds[valid].mean()), wall_time_ms=wall,
            n_windows=n_win,
            theta_trace=est if scenario.collect_traces else None)
    return RunResult(scenario=scenario, per_algorithm=results)
