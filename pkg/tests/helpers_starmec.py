"""Shared fixtures-in-spirit: small instances, random solution tuples, and the
native tiny-instance grid oracle used by the acceptance gate."""

from __future__ import annotations

import numpy as np

from starmec import SystemConfig, sample_channels
from starmec.beamform import mmse_beamformers
from starmec.channel import ChannelSet
from starmec.metrics import local_rates
from starmec.model import Protocol, StarRisState


def small_cfg(**kw) -> SystemConfig:
    base = dict(n_antennas=4, n_elements=6, t_users=2, r_users=2,
                dc_max_iters=6, bcd_max_iters=10)
    base.update(kw)
    return SystemConfig(**base)


def tiny_cfg(**kw) -> SystemConfig:
    base = dict(n_antennas=2, n_elements=2, t_users=1, r_users=1,
                dc_max_iters=6, bcd_max_iters=12)
    base.update(kw)
    return SystemConfig(**base)


def random_state(rng: np.random.Generator, m: int,
                 protocol: Protocol = Protocol.ES) -> StarRisState:
    amp_t = rng.uniform(0.0, 1.0, m)
    if protocol == Protocol.MS:
        amp_t = np.round(amp_t)
    return StarRisState(rng.uniform(0, 2 * np.pi, m), rng.uniform(0, 2 * np.pi, m),
                        amp_t, 1.0 - amp_t, protocol)


def random_solution(seed: int, cfg: SystemConfig | None = None):
    """Channels plus a random-but-valid (state, beamformers, partition)."""
    cfg = cfg or small_cfg()
    rng = np.random.default_rng(seed)
    channels = sample_channels(cfg, seed)
    state = random_state(rng, cfg.n_elements, cfg.protocol)
    a = rng.uniform(0.05, 0.95, cfg.n_users)
    from starmec.channel import effective_channels
    g = effective_channels(channels, state)
    v = mmse_beamformers(g, a * cfg.e_tilde, cfg.noise_power_w)
    return cfg, channels, state, v, a


# -- tiny-instance exhaustive grid oracle ---------------------------------
#
# Global reference for M <= 2, K <= 2, N <= 2: phases on a pi/8 mesh,
# transmit-side energy fractions on a 0.1 mesh (reflect side complementary),
# partitions on a 0.1 mesh, receive vectors in closed form per grid point.


def _best_sinrs_two_users(g1, g2, p1, p2, noise_w):
    """Optimal per-user SINR via Sherman-Morrison for K = 2."""
    n11 = np.vdot(g1, g1).real
    n22 = np.vdot(g2, g2).real
    cross = abs(np.vdot(g2, g1)) ** 2
    s1 = (p1 / noise_w) * (n11 - p2 * cross / (noise_w + p2 * n22))
    s2 = (p2 / noise_w) * (n22 - p1 * cross / (noise_w + p1 * n11))
    return max(s1, 0.0), max(s2, 0.0)


def brute_force_tiny(cfg: SystemConfig, channels: ChannelSet,
                     binary_only: bool = False):
    """Grid optimum of the full joint problem on a tiny instance.

    Vectorized over the per-side phase meshes; the outer loops run over the
    coupled energy-split combinations and the partition mesh."""
    from itertools import product

    if cfg.n_elements > 2 or cfg.n_users > 2 or cfg.n_antennas > 2:
        raise ValueError("grid oracle accepts at most M=2, K=2, N=2")
    if not (cfg.t_users == 1 and cfg.r_users == 1):
        raise ValueError("grid oracle expects one user per side")
    m = cfg.n_elements
    ln2 = np.log(2.0)
    phase_mesh = np.arange(16) * (np.pi / 8.0)
    rho_mesh = np.array([0.0, 1.0]) if binary_only else np.round(np.arange(11) * 0.1, 10)
    a_mesh = np.round(np.arange(11) * 0.1, 10)
    e_tilde = cfg.e_tilde
    noise_w = cfg.noise_power_w
    b_hz = cfg.bandwidth_hz

    h_d, h_s, g_mat = channels.h_d, channels.h_s, channels.g_mat
    casc = np.einsum("jm,mn->jmn", h_s, g_mat.conj())  # (K, M, N)

    theta_combos = np.array(list(product(phase_mesh, repeat=m)))      # (T, M)
    steer = np.exp(1j * theta_combos)                                 # (T, M)
    rho_combos = np.array(list(product(rho_mesh, repeat=m)))          # (R, M)
    local_sum = np.array([[local_rates(np.array([a1, a2]), cfg).sum()
                           for a2 in a_mesh] for a1 in a_mesh])

    best = -np.inf
    best_point = None
    for rho_t in rho_combos:
        g1 = h_d[0] + (np.sqrt(rho_t) * steer) @ casc[0]              # (T, N)
        g2 = h_d[1] + (np.sqrt(1.0 - rho_t) * steer) @ casc[1]        # (T, N)
        n1 = np.sum(np.abs(g1) ** 2, axis=1)                          # (T,)
        n2 = np.sum(np.abs(g2) ** 2, axis=1)
        cross = np.abs(g2.conj() @ g1.T) ** 2                         # (T2, T1)
        for i1, a1 in enumerate(a_mesh):
            p1 = a1 * e_tilde[0]
            for i2, a2 in enumerate(a_mesh):
                p2 = a2 * e_tilde[1]
                s1 = (p1 / noise_w) * (n1[None, :]
                                       - p2 * cross / (noise_w + p2 * n2[:, None]))
                s2 = (p2 / noise_w) * (n2[:, None]
                                       - p1 * cross / (noise_w + p1 * n1[None, :]))
                obj = (b_hz / ln2) * (np.log1p(np.maximum(s1, 0.0))
                                      + np.log1p(np.maximum(s2, 0.0)))
                top = float(obj.max()) + local_sum[i1, i2]
                if top > best:
                    best = top
                    best_point = (rho_t.copy(), a1, a2)
    return best, best_point
