"""Channel synthesis for one realization: geometry, path loss, Rician fading.

Link classes follow the simulation setup: the AP-surface link is near

line-of-sight (exponent 2, 30 dB Rician factor), AP-user links are Rayleigh
with exponent 3.67, and surface-user links use exponent 2.5 with Rician
factor 3. Reference path loss is -30 dB at 1 m.

RNG discipline: every entity draws from its own child stream keyed by
(kind, group, index), so adding users to either group never perturbs the
channels of existing users or of the surface-AP link.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .model import Geometry, StarRisState, SystemConfig

T0_DB = -30.0
ALPHA_AP_RIS = 2.0
ALPHA_AP_USER = 3.67
ALPHA_RIS_USER = 2.5
KAPPA_AP_RIS = 1e3  # 30 dB
KAPPA_AP_USER = 0.0
KAPPA_RIS_USER = 3.0

# The -30 dB reference constant applies once per end-to-end path: the two
# hops of the cascaded surface path each carry half of it (in dB), exactly
# like the direct link carries the full constant once.
T0_DB_SURFACE_HOP = T0_DB / 2.0

_KEY_SURFACE_AP = 0
_KEY_USER = 1


@dataclass(frozen=True)
class ChannelSet:
    """Channels of one realization.

    h_d: (K, N) user-to-AP direct channels.
    h_s: (K, M) user-to-surface channels.
    g_mat: (M, N) surface-to-AP channel.
    t_users: size of the transmission-side group (users 0..t_users-1).
    """

    h_d: np.ndarray
    h_s: np.ndarray
    g_mat: np.ndarray
    t_users: int

    def __post_init__(self):
        for name in ("h_d", "h_s", "g_mat"):
            arr = np.asarray(getattr(self, name), dtype=complex)
            if not np.all(np.isfinite(arr.view(float))):
                raise ValueError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, arr)
        k, n = self.h_d.shape
        k2, m = self.h_s.shape
        if k2 != k or self.g_mat.shape != (m, n):
            raise ValueError("channel dimensions are inconsistent")
        if not (0 <= self.t_users <= k):
            raise ValueError("t_users out of range")

    @property
    def n_users(self) -> int:
        return self.h_d.shape[0]

    @property
    def n_antennas(self) -> int:
        return self.h_d.shape[1]

    @property
    def n_elements(self) -> int:
        return self.h_s.shape[1]

    def spaces(self) -> np.ndarray:
        return (np.arange(self.n_users) >= self.t_users).astype(int)


def path_loss(d: float, alpha: float, t0_db: float = T0_DB) -> float:
    """Distance-dependent power gain T0 * (d / 1 m)^-alpha."""
    if d < 1.0:
        raise ValueError(f"distance below the 1 m reference ({d} m)")
    if alpha <= 0:
        raise ValueError("path-loss exponent must be positive")
    return 10.0 ** (t0_db / 10.0) * d ** (-alpha)


def steering_vector(n: int, spatial_freq: float) -> np.ndarray:
    """Half-wavelength ULA steering vector e^{j pi f i}, i = 0..n-1."""
    if n < 1:
        raise ValueError("array length must be >= 1")
    return np.exp(1j * np.pi * spatial_freq * np.arange(n))


def gen_rician(shape, kappa: float, los: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Unit-average-power Rician fading: LoS/NLoS mixed by the power ratio kappa."""
    if kappa < 0:
        raise ValueError("Rician factor must be nonnegative")
    nlos = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    los = np.broadcast_to(np.asarray(los, dtype=complex), shape)
    return np.sqrt(kappa / (1.0 + kappa)) * los + np.sqrt(1.0 / (1.0 + kappa)) * nlos


def _axis_cosine(src, dst) -> float:
    """Direction cosine along the array axis (y) of the src->dst direction."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    d = np.linalg.norm(dst - src)
    return float((dst[1] - src[1]) / d)


def _child_rng(seed, spawn_key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=spawn_key))


def sample_channels(cfg: SystemConfig, seed: int) -> ChannelSet:
    """Draw one realization: user positions plus all fading channels.

    Deterministic given (cfg, seed). Stream keys: the surface-AP matrix uses
    (0,), user i of group g uses (1, g, i); per user the draw order is
    position, direct channel, surface channel.
    """
    geo: Geometry = cfg.geometry
    n, m = cfg.n_antennas, cfg.n_elements
    ap = np.asarray(geo.ap_pos, dtype=float)
    ris = np.asarray(geo.ris_pos, dtype=float)

    # Surface -> AP matrix: rank-one LoS from the two array responses.
    rng_g = _child_rng(seed, (_KEY_SURFACE_AP,))
    d_as = np.linalg.norm(ris - ap)
    a_ris = steering_vector(m, _axis_cosine(ris, ap))
    a_ap = steering_vector(n, _axis_cosine(ap, ris))
    g_los = np.outer(a_ris, a_ap.conj())
    g_mat = np.sqrt(path_loss(d_as, ALPHA_AP_RIS, T0_DB_SURFACE_HOP)) * gen_rician(
        (m, n), KAPPA_AP_RIS, g_los, rng_g)

    h_d = np.empty((cfg.n_users, n), dtype=complex)
    h_s = np.empty((cfg.n_users, m), dtype=complex)
    half = geo.region_side_m / 2.0
    centers = (np.asarray(geo.t_center, dtype=float), np.asarray(geo.r_center, dtype=float))
    k = 0
    for group, count in ((0, cfg.t_users), (1, cfg.r_users)):
        center = centers[group]
        for idx in range(count):
            rng_u = _child_rng(seed, (_KEY_USER, group, idx))
            offset = rng_u.uniform(-half, half, size=2)
            pos = np.array([center[0] + offset[0], center[1] + offset[1], center[2]])
            d_au = np.linalg.norm(pos - ap)
            d_su = np.linalg.norm(pos - ris)
            los_d = steering_vector(n, _axis_cosine(ap, pos))
            h_d[k] = np.sqrt(path_loss(d_au, ALPHA_AP_USER)) * gen_rician(
                (n,), KAPPA_AP_USER, los_d, rng_u)
            los_s = steering_vector(m, _axis_cosine(ris, pos))
            h_s[k] = np.sqrt(path_loss(d_su, ALPHA_RIS_USER, T0_DB_SURFACE_HOP)) * gen_rician(
                (m,), KAPPA_RIS_USER, los_s, rng_u)
            k += 1
    return ChannelSet(h_d=h_d, h_s=h_s, g_mat=g_mat, t_users=cfg.t_users)


def effective_channel(cs: ChannelSet, ris: StarRisState, k: int) -> np.ndarray:
    """Direct-plus-surface channel of user k, using that user's side of the surface."""
    if not (0 <= k < cs.n_users):
        raise IndexError(f"user index {k} out of range")
    side = 0 if k < cs.t_users else 1
    coeffs = ris.coeffs(side)
    return cs.h_d[k] + (coeffs * cs.h_s[k]) @ cs.g_mat.conj()


def effective_channels(cs: ChannelSet, ris: StarRisState) -> np.ndarray:
    """All users' effective channels as a (K, N) array."""
    g = np.array(cs.h_d)
    t = cs.t_users
    if t > 0:
        g[:t] += (ris.coeffs(0)[None, :] * cs.h_s[:t]) @ cs.g_mat.conj()
    if t < cs.n_users:
        g[t:] += (ris.coeffs(1)[None, :] * cs.h_s[t:]) @ cs.g_mat.conj()
    return g


# -- channel dump (consumed by the external validation harness) ---------


def _complex_to_pairs(arr: np.ndarray):
    return np.stack([arr.real, arr.imag], axis=-1).tolist()


def _pairs_to_complex(data) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]


def dump_channels(cs: ChannelSet, path) -> None:
    doc = {
        "schema": "channels_v1",
        "t_users": cs.t_users,
        "h_d": _complex_to_pairs(cs.h_d),
        "h_s": _complex_to_pairs(cs.h_s),
        "g_mat": _complex_to_pairs(cs.g_mat),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_channels(path) -> ChannelSet:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema") != "channels_v1":
        raise ValueError(f"unexpected channel dump schema: {doc.get('schema')!r}")
    return ChannelSet(
        h_d=_pairs_to_complex(doc["h_d"]),
        h_s=_pairs_to_complex(doc["h_s"]),
        g_mat=_pairs_to_complex(doc["g_mat"]),
        t_users=int(doc["t_users"]),
    )
