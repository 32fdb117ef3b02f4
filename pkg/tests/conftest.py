"""Shared helpers for the test suite."""

import numpy as np
import pytest

from rlbf.basis import (BasisSet, HypermodelKind, ParameterModel,
                        correlation_matrix, eigenbasis)
from rlbf.lbf import Frame, psi_matrix


def flat_model(rate, sigma_theta_sq=1.0):
    return ParameterModel(HypermodelKind.FLAT_DOPPLER, rate=rate,
                          sigma_theta_sq=sigma_theta_sq)


def jakes_model(rate, sigma_theta_sq=1.0):
    return ParameterModel(HypermodelKind.JAKES, rate=rate,
                          sigma_theta_sq=sigma_theta_sq)


def make_basis(K, m, kind="flat", rate=0.3):
    model = flat_model(rate) if kind == "flat" else jakes_model(rate)
    return eigenbasis(correlation_matrix(model, K), m)


def constant_basis(K):
    """Single constant basis function f1 = 1/sqrt(K) (order-0 smoother)."""
    f = np.full((1, K), 1.0 / np.sqrt(K), dtype=complex)
    f0 = f[:, (K - 1) // 2].real.copy()
    return BasisSet(K=K, m=1, f=f, lambdas=np.array([1.0]), f0=f0,
                    h=f0 @ f, g=f.sum(axis=1) / K)


def random_frame(rng, K, n, scale=1.0, t=0):
    """Frame with random circular Gaussian inputs and outputs."""
    phi = (rng.standard_normal((K, n))
           + 1j * rng.standard_normal((K, n))) / np.sqrt(2.0)
    y = scale * (rng.standard_normal(K) + 1j * rng.standard_normal(K)) \
        / np.sqrt(2.0)
    return Frame(t=t, k=(K - 1) // 2, y=y, phi=phi)


def inspan_frame(rng, K, n, basis, noise=0.0, t=0):
    """Frame whose outputs follow a trajectory lying exactly in the basis
    span; returns (frame, beta_true)."""
    mn = n * basis.m
    beta = (rng.standard_normal(mn) + 1j * rng.standard_normal(mn)) \
        / np.sqrt(2.0)
    phi = (rng.standard_normal((K, n))
           + 1j * rng.standard_normal((K, n))) / np.sqrt(2.0)
    y = psi_matrix(phi, basis.f) @ beta.conj()
    if noise > 0.0:
        y = y + noise * (rng.standard_normal(K)
                         + 1j * rng.standard_normal(K)) / np.sqrt(2.0)
    return Frame(t=t, k=(K - 1) // 2, y=y, phi=phi), beta


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
