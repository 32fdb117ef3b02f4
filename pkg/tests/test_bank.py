"""Multi-level trimming bank: leverage, deleted residuals, Woodbury chain,
and the cross-validation registers."""

import numpy as np
import pytest

from rlbf.bank import (BankConfig, BankState, BankTracker, cv_update,
                       deleted_residual, downdate_chain, leverage,
                       select_index)
from rlbf.exceptions import DegenerateLeverageError
from rlbf.lbf import psi_matrix
from rlbf.robust import trim_set, trimmed_estimate

from conftest import make_basis, random_frame


# ---------------------------------------------------------------------------
# leverage and deleted residuals

def test_leverage_zero_vector():
    assert leverage(np.eye(3, dtype=complex), np.zeros(3)) == 0.0


def test_leverage_dense_solve_oracle(rng):
    K, n = 21, 2
    basis = make_basis(K, 2)
    frame = random_frame(rng, K, n)
    est = trimmed_estimate(frame, basis,
                           np.arange(-frame.k, frame.k + 1))
    psi0 = psi_matrix(frame.phi, basis.f)[frame.k]
    c = leverage(est.P_inv, psi0)
    oracle = (psi0.conj() @ np.linalg.solve(est.P, psi0)).real
    assert c == pytest.approx(float(oracle), abs=1e-10)
    assert 0.0 <= c < 1.0


def test_single_sample_self_leverage_degenerate(rng):
    # a window fitted on its center sample alone carries the whole fit
    frame = random_frame(rng, 1, 1)
    basis = make_basis(1, 1)
    est = trimmed_estimate(frame, basis, [0])
    psi0 = psi_matrix(frame.phi, basis.f)[0]
    c = leverage(est.P_inv, psi0)
    assert c == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(DegenerateLeverageError):
        deleted_residual(1.0 + 0j, c)


def test_deleted_residual_arithmetic():
    assert deleted_residual(1 + 1j, 0.0) == 1 + 1j
    assert deleted_residual(1 + 1j, 0.5) == pytest.approx(2 + 2j)


def holey_refit_oracle(frame, basis, omega):
    """Literal leave-one-out prediction error at the window center."""
    omega = np.asarray(omega)
    est0 = trimmed_estimate(frame, basis, omega[omega != 0])
    psi0 = psi_matrix(frame.phi, basis.f)[frame.k]
    return frame.y[frame.k] - est0.beta.conj() @ psi0


@pytest.mark.parametrize("n,m", [(1, 1), (2, 2), (2, 4), (10, 3)])
def test_deleted_residual_vs_holey_refit(rng, n, m):
    K = 101 if n == 10 else 21
    basis = make_basis(K, m)
    for _ in range(10):
        frame = random_frame(rng, K, n)
        omega = np.arange(-frame.k, frame.k + 1)
        est = trimmed_estimate(frame, basis, omega)
        psi0 = psi_matrix(frame.phi, basis.f)[frame.k]
        dr = deleted_residual(est.residuals[frame.k],
                              leverage(est.P_inv, psi0))
        oracle = holey_refit_oracle(frame, basis, omega)
        assert abs(dr - oracle) <= 1e-8 * max(1.0, abs(oracle))


# ---------------------------------------------------------------------------
# Woodbury downdate chain

def test_downdate_chain_single_level_noop(rng):
    P_inv = np.eye(3, dtype=complex)
    p = np.ones(3, dtype=complex)
    P_invs, ps, fb = downdate_chain(P_inv, p, [], [])
    assert len(P_invs) == 1 and np.array_equal(P_invs[0], P_inv)
    assert np.array_equal(ps[0], p) and not fb


def test_downdate_chain_rank_one_sherman_morrison(rng):
    mn = 6
    A = rng.standard_normal((mn, 2 * mn)) \
        + 1j * rng.standard_normal((mn, 2 * mn))
    P = A @ A.conj().T
    P_inv = np.linalg.inv(P)
    psi = rng.standard_normal(mn) + 1j * rng.standard_normal(mn)
    yb = np.array([1.0 + 0.5j])
    P_invs, ps, fb = downdate_chain(P_inv, np.ones(mn, dtype=complex),
                                    [psi[:, None]], [yb])
    Pp = P_inv @ psi
    sm = P_inv - np.outer(Pp, Pp.conj()) / (1.0 + (psi.conj() @ Pp).real)
    assert np.max(np.abs(P_invs[0] - sm)) < 1e-10
    assert not fb


def test_downdate_chain_dense_oracle(rng):
    K, n, m = 301, 10, 3
    mn = n * m
    deltas = (1, 15, 45)
    basis = make_basis(K, m, rate=2 * np.pi * 0.003)
    for _ in range(5):
        frame = random_frame(rng, K, n)
        Psi = psi_matrix(frame.phi, basis.f)
        order = rng.permutation(K)      # arbitrary shared ranking
        keep_p = order[:K - deltas[-1]]
        idx_p = np.sort(keep_p)
        P = Psi[idx_p].T @ Psi[idx_p].conj()
        pv = Psi[idx_p].T @ frame.y[idx_p].conj()
        psi_blocks, y_blocks = [], []
        for i in range(len(deltas) - 1, 0, -1):
            extra = order[K - deltas[i]:K - deltas[i - 1]]
            psi_blocks.append(Psi[extra].T)
            y_blocks.append(frame.y[extra])
        P_invs, ps, _ = downdate_chain(np.linalg.inv(P), pv, psi_blocks,
                                       y_blocks)
        for lvl, d in enumerate(deltas):
            idx = np.sort(order[:K - d])
            P_direct = Psi[idx].T @ Psi[idx].conj()
            p_direct = Psi[idx].T @ frame.y[idx].conj()
            rel = np.linalg.norm(P_invs[lvl] - np.linalg.inv(P_direct)) \
                / np.linalg.norm(np.linalg.inv(P_direct))
            assert rel < 1e-8
            assert np.max(np.abs(ps[lvl] - p_direct)) < 1e-8


# ---------------------------------------------------------------------------
# cross-validation registers

def test_cv_update_steady_state():
    state = BankState(L=2, p=3)
    for _ in range(6):
        cv_update(state, True, np.ones(3))
    assert np.allclose(state.E, 2.0)


def test_cv_update_frozen_without_agreement():
    state = BankState(L=4, p=2)
    cv_update(state, True, np.array([1.0, 2.0]))
    E = state.E.copy()
    for _ in range(10):
        cv_update(state, False)
    assert np.array_equal(state.E, E)


def test_cv_update_replay_oracle(rng):
    L, p = 7, 3
    state = BankState(L=L, p=p)
    agreed_history = []
    for _ in range(500):
        if rng.random() < 0.7:
            dr = rng.standard_normal(p) + 1j * rng.standard_normal(p)
            cv_update(state, True, dr)
            agreed_history.append(dr)
        else:
            cv_update(state, False)
    recent = np.array(agreed_history[-L:])
    assert np.max(np.abs(state.E - np.sum(np.abs(recent) ** 2, axis=0))) \
        < 1e-9


def test_register_eviction_after_L_events():
    L = 3
    state = BankState(L=L, p=1)
    vals = [1.0, 2.0, 3.0]
    for v in vals:
        cv_update(state, True, [v])
    assert np.allclose(np.sort(state.registers[0].real), vals)
    assert np.allclose(state.registers[0].imag, 0.0)


def test_select_index_rules():
    state = BankState(L=2, p=3)
    state.E = np.array([5.0, 3.0, 7.0])
    assert select_index(state) == 1          # warm-up: middle member
    state.agreed_count = 2
    assert select_index(state) == 1          # argmin
    state.E = np.array([4.0, 4.0, 4.0])
    assert select_index(state) == 0          # ties to least trimming


# ---------------------------------------------------------------------------
# bank configuration and tracker

def test_bank_config_validation():
    with pytest.raises(ValueError):
        BankConfig(deltas=(5, 5, 7))
    with pytest.raises(ValueError):
        BankConfig(deltas=(1, 2), L=0)
    cfg = BankConfig.from_mus((0.005, 0.05, 0.15), 151)
    assert cfg.deltas == (0, 7, 22)


def test_bank_config_from_mus_deduplicates():
    cfg = BankConfig.from_mus((0.001, 0.002, 0.1), 101)
    assert cfg.deltas == (0, 1, 10)


def test_fit_nested_rejection_sets_are_nested(rng):
    K, n, m = 31, 2, 2
    basis = make_basis(K, m)
    cfg = BankConfig(deltas=(1, 4, 9), L=5)
    tracker = BankTracker(basis, n, cfg, m_policy=("fixed", m))
    frame = random_frame(rng, K, n)
    Psi = psi_matrix(frame.phi, basis.f)
    errors = rng.standard_normal(K) + 1j * rng.standard_normal(K)
    betas, P_invs, omegas = tracker._fit_nested(frame, basis, Psi, errors,
                                                cfg.deltas)
    sets = [set(om.tolist()) for om in omegas]
    assert sets[2] <= sets[1] <= sets[0]
    for om, d in zip(omegas, cfg.deltas):
        assert om.size == K - d


def test_bank_tracker_follows_constant_channel(rng):
    K, n = 31, 1
    k = (K - 1) // 2
    T = 500
    basis = make_basis(K, 3, rate=0.05)
    phi = (rng.standard_normal((T, n))
           + 1j * rng.standard_normal((T, n))) / np.sqrt(2)
    y = phi[:, 0] + 0.05 * (rng.standard_normal(T)
                            + 1j * rng.standard_normal(T))
    outliers = rng.random(T) < 0.05
    y[outliers] += 15.0
    cfg = BankConfig.from_mus((0.005, 0.05, 0.15), K, L=10)
    tracker = BankTracker(basis, n, cfg, m_policy=("fixed", 1))
    errs = []
    for t in range(k, T - k):
        out = tracker.step(t, y[t - k:t + k + 1], phi[t - k:t + k + 1])
        assert out.delta in cfg.deltas
        errs.append(abs(out.theta[0] - 1.0) ** 2)
    assert np.mean(errs[60:]) < 0.05


def test_bank_shared_and_independent_modes_both_run(rng):
    K, n = 21, 1
    k = (K - 1) // 2
    T = 200
    basis = make_basis(K, 2, rate=0.05)
    phi = (rng.standard_normal((T, n))
           + 1j * rng.standard_normal((T, n))) / np.sqrt(2)
    y = phi[:, 0] + 0.05 * rng.standard_normal(T)
    cfg = BankConfig(deltas=(1, 3, 6), L=5)
    for shared in (True, False):
        tracker = BankTracker(basis, n, cfg, m_policy=("fixed", 1))
        tracker.shared_ranking = shared
        for t in range(k, T - k):
            out = tracker.step(t, y[t - k:t + k + 1],
                               phi[t - k:t + k + 1])
            assert np.all(np.isfinite(out.theta))
