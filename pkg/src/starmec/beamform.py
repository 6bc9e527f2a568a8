"""Receive beamforming block: per-user generalized Rayleigh quotient maximization.

Each user's quotient numerator matrix is rank one, so the principal
generalized eigenvector has the closed form B^{-1} g (up to scale); a
Cholesky solve replaces a general eigensolver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .channel import ChannelSet, effective_channels
from .model import BeamformerSet, StarRisState, SystemConfig


@dataclass(frozen=True)
class QuadraticPair:
    """Numerator/denominator matrices of one user's SINR quotient.

    a_mat = p_k g_k g_k^H (Hermitian PSD, rank <= 1);
    b_mat = sum_{i != k} p_i g_i g_i^H + sigma^2 I (Hermitian positive definite).
    """

    a_mat: np.ndarray
    b_mat: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a_mat, dtype=complex)
        b = np.asarray(self.b_mat, dtype=complex)
        if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("a_mat and b_mat must be square matrices of equal size")
        object.__setattr__(self, "a_mat", a)
        object.__setattr__(self, "b_mat", b)


def _rank_one_direction(a_mat: np.ndarray) -> np.ndarray:
    """Recover the generating vector direction of a rank-one PSD matrix."""
    diag = np.abs(np.diagonal(a_mat))
    j = int(np.argmax(diag))
    if diag[j] <= 0:
        raise ValueError("numerator matrix is zero; no preferred direction")
    col = a_mat[:, j]
    return col / np.linalg.norm(col)


def solve_beamformer(pair: QuadraticPair) -> np.ndarray:
    """Unit-norm maximizer of v^H A v / v^H B v for rank-one A."""
    g_dir = _rank_one_direction(pair.a_mat)
    try:
        cb = cho_factor(pair.b_mat)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - sigma^2 > 0 prevents this
        raise ValueError("denominator matrix is not positive definite") from exc
    v = cho_solve(cb, g_dir)
    return v / np.linalg.norm(v)


def mmse_beamformers(g: np.ndarray, powers: np.ndarray, noise_w: float) -> np.ndarray:
    """Per-user optimal receive vectors B_k^{-1} g_k, unit norm, as (K, N) rows.

    Users with zero power get the same formula; the direction is independent
    of the user's own power, which keeps the zero-allocation case deterministic.
    """
    k_users, n = g.shape
    total = (g.conj().T * powers) @ g  # sum_j p_j g_j g_j^H
    v = np.empty((k_users, n), dtype=complex)
    eye = np.eye(n)
    for k in range(k_users):
        b = total - powers[k] * np.outer(g[k].conj(), g[k]) + noise_w * eye
        cb = cho_factor(b)
        w = cho_solve(cb, g[k].conj())
        v[k] = w.conj() / np.linalg.norm(w)
    return v


def solve_all_beamformers(channels: ChannelSet, ris: StarRisState, a,
                          cfg: SystemConfig) -> BeamformerSet:
    """Beamforming block: solve every user's quotient with current powers."""
    a = np.asarray(a, dtype=float)
    g = effective_channels(channels, ris)
    powers = a * cfg.e_tilde
    return BeamformerSet(v=mmse_beamformers(g, powers, cfg.noise_power_w))


def achieved_sinr(g: np.ndarray, powers: np.ndarray, noise_w: float) -> np.ndarray:
    """Optimal per-user SINR p_k g_k^H B_k^{-1} g_k without forming eigenvectors."""
    k_users, n = g.shape
    total = (g.conj().T * powers) @ g
    out = np.empty(k_users)
    eye = np.eye(n)
    for k in range(k_users):
        b = total - powers[k] * np.outer(g[k].conj(), g[k]) + noise_w * eye
        cb = cho_factor(b)
        w = cho_solve(cb, g[k].conj())
        out[k] = powers[k] * np.real(g[k] @ w)
    return out
