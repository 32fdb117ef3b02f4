"""Robust identification of time-varying FIR systems with local basis
functions, sequential data trimming, and cross-validated trimming-level
selection."""

from .basis import (BasisSet, HypermodelKind, ParameterModel,
                    correlation_matrix, eigenbasis, predicted_mse, rho,
                    select_m_optimal)
from .bank import BankConfig, BankTracker, deleted_residual, downdate_chain, \
    leverage
from .lad import LadConfig, LadTracker, lad_estimate
from .lbf import Frame, LbfEstimate, lbf_estimate, normal_equations, \
    regression_vectors
from .robust import (AdaptiveState, TrimConfig, TrimmedEstimate,
                     TrimmedTracker, adaptive_m, frame_errors,
                     noise_variance, phi_update, theta_variance, trim_set,
                     trimmed_estimate)
from .sim import (AlphaStableNoise, ChannelConfig, ContaminatedNoise,
                  Scenario, gen_channel, gen_noise, gen_qpsk,
                  run_experiment)

__version__ = "0.1.0"
