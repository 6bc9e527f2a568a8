"""SINR, offloading rate, local computing rate, and objective evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelSet, effective_channels
from .model import StarRisState, SystemConfig, total_objective

_LN2 = np.log(2.0)


@dataclass(frozen=True)
class RateBreakdown:
    sinr: np.ndarray
    offload_bps: np.ndarray
    local_bps: np.ndarray
    cpu_freq_hz: np.ndarray

    @property
    def objective(self) -> float:
        return total_objective(self.offload_bps, self.local_bps)


def beam_gains(v: np.ndarray, g: np.ndarray) -> np.ndarray:
    """|v_k^H g_j|^2 for all user pairs; rows index the decoded user."""
    return np.abs(v.conj() @ g.T) ** 2


def sinr_all(v: np.ndarray, g: np.ndarray, powers: np.ndarray, noise_w: float) -> np.ndarray:
    """Uplink SINR of every user for beamformer rows v and channel rows g."""
    norms = np.linalg.norm(v, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero beamforming vector")
    gains = beam_gains(v, g)  # (K, K)
    weighted = gains * powers[None, :]
    signal = np.diag(weighted)
    interference = weighted.sum(axis=1) - signal
    return signal / (interference + noise_w * norms ** 2)


def sinr(k: int, beamformers, channels: ChannelSet, ris: StarRisState,
         a, cfg: SystemConfig) -> float:
    """SINR of user k under the full current solution."""
    v = np.asarray(getattr(beamformers, "v", beamformers), dtype=complex)
    a = np.asarray(a, dtype=float)
    g = effective_channels(channels, ris)
    powers = a * cfg.e_tilde
    return float(sinr_all(v, g, powers, cfg.noise_power_w)[k])


def offload_rate(sinr_k: float, bandwidth_hz: float) -> float:
    """B * log2(1 + sinr); log1p keeps precision at low SINR."""
    if sinr_k < 0:
        raise ValueError("SINR must be nonnegative")
    return bandwidth_hz * np.log1p(sinr_k) / _LN2


def offload_rates(sinrs: np.ndarray, bandwidth_hz: float) -> np.ndarray:
    return bandwidth_hz * np.log1p(np.asarray(sinrs, dtype=float)) / _LN2


def cpu_frequency(a_k: float, e_k: float, v_s: float, kappa_k: float) -> float:
    """CPU frequency that spends the local energy share over the compute window."""
    if not (0.0 <= a_k <= 1.0):
        raise ValueError(f"energy fraction must lie in [0, 1], got {a_k}")
    return ((1.0 - a_k) * e_k / (v_s * kappa_k)) ** (1.0 / 3.0)


def local_rate(a_k: float, e_k: float, v_s: float, kappa_k: float, c_k: float) -> float:
    """Local computing rate f_k / C_k (bits/s)."""
    return cpu_frequency(a_k, e_k, v_s, kappa_k) / c_k


def local_rates(a, cfg: SystemConfig) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if np.any(a < 0) or np.any(a > 1):
        raise ValueError("energy fractions must lie in [0, 1]")
    e = np.asarray(cfg.energy_budgets_j)
    kappa = np.asarray(cfg.capacitance_coeff)
    c = np.asarray(cfg.cycles_per_bit)
    freq = ((1.0 - a) * e / (cfg.compute_duration_s * kappa)) ** (1.0 / 3.0)
    return freq / c


def rate_breakdown(beamformers, channels: ChannelSet, ris: StarRisState,
                   a, cfg: SystemConfig) -> RateBreakdown:
    """Evaluate every rate component of a candidate solution."""
    v = np.asarray(getattr(beamformers, "v", beamformers), dtype=complex)
    a = np.asarray(a, dtype=float)
    g = effective_channels(channels, ris)
    powers = a * cfg.e_tilde
    gamma = sinr_all(v, g, powers, cfg.noise_power_w)
    e = np.asarray(cfg.energy_budgets_j)
    kappa = np.asarray(cfg.capacitance_coeff)
    freq = ((1.0 - a) * e / (cfg.compute_duration_s * kappa)) ** (1.0 / 3.0)
    return RateBreakdown(
        sinr=gamma,
        offload_bps=offload_rates(gamma, cfg.bandwidth_hz),
        local_bps=freq / np.asarray(cfg.cycles_per_bit),
        cpu_freq_hz=freq,
    )
