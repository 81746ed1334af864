"""Simulation and analysis of Pauli-blockade lifting in a double quantum dot."""
from .qmodel import (
    MU_B_OVER_H_GHZ_PER_T, S02, S11, T0, ChannelKind, DensityMatrix, NoiseChannel, SystemParams,
    ZeemanInputs, build_hamiltonian, build_jump_operator, zeeman_split,
)
from .lindblad import PropagationConfig, TimeTrace, propagate, steady_state
from .ratefit import DecayFit, RateDataPoint, calibrate_noise_time, extract_rate, fit_decay_curve
from .swtheory import classify_regime, gamma_analytic, max_tunnel_for_parity
from .paritytomo import compile_setting, reconstruct, simulate_probs

__version__ = "0.1.0"

__all__ = [
    "MU_B_OVER_H_GHZ_PER_T", "S02", "S11", "T0", "ChannelKind", "DensityMatrix", "NoiseChannel",
    "SystemParams", "ZeemanInputs", "build_hamiltonian", "build_jump_operator", "zeeman_split",
    "PropagationConfig", "TimeTrace", "propagate", "steady_state",
    "DecayFit", "RateDataPoint", "calibrate_noise_time", "extract_rate", "fit_decay_curve",
    "classify_regime", "gamma_analytic", "max_tunnel_for_parity",
    "compile_setting", "reconstruct", "simulate_probs",
]
