"""Domain types, system configuration, and the sum-rate objective.

Everything here is an immutable value after construction; instances are safe
to share across threads and across Monte-Carlo workers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

# Per-element transmission/reflection amplitudes must sum to one; states that
# drift beyond this are rejected at construction.
AMP_SUM_TOL = 1e-8


class Protocol(str, Enum):
    """Surface operating protocol."""

    ES = "es"  # energy splitting: amplitudes continuous in [0, 1]
    MS = "ms"  # mode switching: amplitudes binary per element


@dataclass(frozen=True)
class Geometry:
    """Node placement: access point, surface, and the two user-region centers.

    Users of the transmission group are drawn uniformly from a square of side
    ``region_side_m`` centered at ``t_center`` (reflection group analogously).
    """

    ap_pos: tuple[float, float, float] = (0.0, 0.0, 15.0)
    ris_pos: tuple[float, float, float] = (75.0, 0.0, 15.0)
    t_center: tuple[float, float, float] = (45.0, 0.0, 0.0)
    r_center: tuple[float, float, float] = (95.0, 0.0, 0.0)
    region_side_m: float = 50.0

    def __post_init__(self):
        if not self.region_side_m > 0:
            raise ValueError("region_side_m must be positive")


def _as_user_list(value, k: int, name: str) -> list[float]:
    if value is None:
        raise ValueError(f"{name} must be provided")
    if np.isscalar(value):
        return [float(value)] * k
    out = [float(x) for x in value]
    if len(out) != k:
        raise ValueError(f"{name} must have one entry per user (expected {k}, got {len(out)})")
    return out


@dataclass
class SystemConfig:
    """All physical and algorithmic parameters of one problem instance.

    Per-user lists (``energy_budgets_j``, ``cycles_per_bit``,
    ``capacitance_coeff``) may be given as scalars and are broadcast to all
    ``K = t_users + r_users`` users.
    """

    n_antennas: int = 10
    n_elements: int = 30
    t_users: int = 4
    r_users: int = 4
    bandwidth_hz: float = 1e6
    noise_power_w: float = 1e-12  # -90 dBm
    energy_budgets_j: list[float] | float = 10.0
    cycles_per_bit: list[float] | float = 200.0
    capacitance_coeff: list[float] | float = 1e-25
    slot_length_s: float = 1.0
    compute_duration_s: float = 1.0
    protocol: Protocol = Protocol.ES
    rank_tol: float | None = None  # None -> 1e-4 * (n_elements + 1), capped at 1e-2
    binary_tol: float = 1e-3
    bcd_max_iters: int = 30
    dc_max_iters: int = 12
    bcd_obj_tol: float = 1e-4
    geometry: Geometry = field(default_factory=Geometry)

    def __post_init__(self):
        for name in ("n_antennas", "n_elements", "t_users", "r_users",
                     "bcd_max_iters", "dc_max_iters"):
            v = getattr(self, name)
            if not (isinstance(v, (int, np.integer)) and v >= 1):
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
            setattr(self, name, int(v))
        for name in ("bandwidth_hz", "noise_power_w", "slot_length_s",
                     "compute_duration_s", "binary_tol", "bcd_obj_tol"):
            v = float(getattr(self, name))
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive real, got {v!r}")
            setattr(self, name, v)
        if isinstance(self.protocol, str):
            self.protocol = Protocol(self.protocol)
        if self.rank_tol is not None:
            self.rank_tol = float(self.rank_tol)
            if not (0 < self.rank_tol <= 1e-2):
                raise ValueError("rank_tol must lie in (0, 1e-2]")
        if not (0 < self.binary_tol <= 1e-2):
            raise ValueError("binary_tol must lie in (0, 1e-2]")
        k = self.t_users + self.r_users
        self.energy_budgets_j = _as_user_list(self.energy_budgets_j, k, "energy_budgets_j")
        self.cycles_per_bit = _as_user_list(self.cycles_per_bit, k, "cycles_per_bit")
        self.capacitance_coeff = _as_user_list(self.capacitance_coeff, k, "capacitance_coeff")
        for name in ("energy_budgets_j", "cycles_per_bit", "capacitance_coeff"):
            if any(not (math.isfinite(x) and x > 0) for x in getattr(self, name)):
                raise ValueError(f"all entries of {name} must be positive reals")
        if isinstance(self.geometry, dict):
            self.geometry = Geometry(**{k: tuple(v) if isinstance(v, list) else v
                                        for k, v in self.geometry.items()})

    @property
    def n_users(self) -> int:
        return self.t_users + self.r_users

    @property
    def eps_rank(self) -> float:
        """Rank-one surrogate cap; scales with the lifted matrix trace."""
        if self.rank_tol is not None:
            return self.rank_tol
        return min(1e-2, 1e-4 * (self.n_elements + 1))

    @property
    def e_tilde(self) -> np.ndarray:
        """Per-user energy budget normalized by slot length (W)."""
        return np.asarray(self.energy_budgets_j) / self.slot_length_s

    def spaces(self) -> np.ndarray:
        """Per-user side indicator: 0 = transmission group, 1 = reflection group."""
        return np.asarray([0] * self.t_users + [1] * self.r_users)

    # -- JSON round trip ------------------------------------------------

    def to_json_dict(self) -> dict:
        d = {
            "n_antennas": self.n_antennas,
            "n_elements": self.n_elements,
            "t_users": self.t_users,
            "r_users": self.r_users,
            "bandwidth_hz": self.bandwidth_hz,
            "noise_power_w": self.noise_power_w,
            "energy_budgets_j": list(self.energy_budgets_j),
            "cycles_per_bit": list(self.cycles_per_bit),
            "capacitance_coeff": list(self.capacitance_coeff),
            "slot_length_s": self.slot_length_s,
            "compute_duration_s": self.compute_duration_s,
            "protocol": self.protocol.value,
            "rank_tol": self.rank_tol,
            "binary_tol": self.binary_tol,
            "bcd_max_iters": self.bcd_max_iters,
            "dc_max_iters": self.dc_max_iters,
            "bcd_obj_tol": self.bcd_obj_tol,
            "geometry": {
                "ap_pos": list(self.geometry.ap_pos),
                "ris_pos": list(self.geometry.ris_pos),
                "t_center": list(self.geometry.t_center),
                "r_center": list(self.geometry.r_center),
                "region_side_m": self.geometry.region_side_m,
            },
        }
        return d

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_json_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_json_dict(cls, d: dict) -> "SystemConfig":
        return cls(**d)

    @classmethod
    def from_json(cls, source) -> "SystemConfig":
        if hasattr(source, "read"):
            return cls.from_json_dict(json.load(source))
        text = str(source)
        if text.lstrip().startswith("{"):
            return cls.from_json_dict(json.loads(text))
        with open(text) as fh:
            return cls.from_json_dict(json.load(fh))

    def with_(self, **kwargs) -> "SystemConfig":
        return replace(self, **kwargs)


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class StarRisState:
    """Per-element phases and transmission/reflection splitting coefficients.

    ``amp_t[m]`` is the fraction of element m's incident energy sent into the
    transmission space (``amp_r[m]`` into the reflection space); the two sum
    to one per element under both protocols, and a state violating this
    beyond ``AMP_SUM_TOL`` is rejected. The element's complex coefficient is
    ``sqrt(amp) * exp(j*theta)``, so the surface conserves energy.
    """

    phases_t: np.ndarray
    phases_r: np.ndarray
    amp_t: np.ndarray
    amp_r: np.ndarray
    protocol: Protocol = Protocol.ES

    def __post_init__(self):
        two_pi = 2 * np.pi
        phases_t = np.mod(np.asarray(self.phases_t, dtype=float), two_pi)
        phases_r = np.mod(np.asarray(self.phases_r, dtype=float), two_pi)
        amp_t = np.asarray(self.amp_t, dtype=float)
        amp_r = np.asarray(self.amp_r, dtype=float)
        m = amp_t.shape[0]
        if not (phases_t.shape == phases_r.shape == amp_t.shape == amp_r.shape == (m,)):
            raise ValueError("phase/amplitude vectors must share one length")
        if np.any(amp_t < -1e-12) or np.any(amp_t > 1 + 1e-12) \
                or np.any(amp_r < -1e-12) or np.any(amp_r > 1 + 1e-12):
            raise ValueError("amplitudes must lie in [0, 1]")
        drift = np.abs(amp_t + amp_r - 1.0)
        if np.any(drift > AMP_SUM_TOL):
            raise ValueError(
                f"amp_t + amp_r must equal 1 per element (max drift {drift.max():.3e})")
        amp_t = np.clip(amp_t, 0.0, 1.0)
        amp_r = np.clip(amp_r, 0.0, 1.0)
        object.__setattr__(self, "phases_t", _frozen_array(phases_t))
        object.__setattr__(self, "phases_r", _frozen_array(phases_r))
        object.__setattr__(self, "amp_t", _frozen_array(amp_t))
        object.__setattr__(self, "amp_r", _frozen_array(amp_r))
        if isinstance(self.protocol, str):
            object.__setattr__(self, "protocol", Protocol(self.protocol))

    @property
    def n_elements(self) -> int:
        return self.amp_t.shape[0]

    def coeffs(self, side: int) -> np.ndarray:
        """Complex surface coefficients of one side (0 = transmit, 1 = reflect)."""
        if side == 0:
            return np.sqrt(self.amp_t) * np.exp(1j * self.phases_t)
        return np.sqrt(self.amp_r) * np.exp(1j * self.phases_r)

    def binary_residual(self) -> float:
        """max_m min(amp_t, 1 - amp_t): zero iff every element is on/off."""
        return float(np.max(np.minimum(self.amp_t, 1.0 - self.amp_t), initial=0.0))

    def is_binary_valid(self, binary_tol: float) -> bool:
        return self.binary_residual() <= binary_tol

    @classmethod
    def uniform_split(cls, m: int, protocol: Protocol = Protocol.ES) -> "StarRisState":
        """Even energy split, zero phases."""
        half = np.full(m, 0.5)
        return cls(np.zeros(m), np.zeros(m), half, 1.0 - half, protocol)

    @classmethod
    def alternating_binary(cls, m: int, protocol: Protocol = Protocol.MS) -> "StarRisState":
        """Elements alternating transmit/reflect, zero phases."""
        amp_t = (np.arange(m) % 2 == 0).astype(float)
        return cls(np.zeros(m), np.zeros(m), amp_t, 1.0 - amp_t, protocol)

    @classmethod
    def from_pattern(cls, amp_t: np.ndarray, protocol: Protocol = Protocol.ES,
                     phases_t=None, phases_r=None) -> "StarRisState":
        amp_t = np.asarray(amp_t, dtype=float)
        m = amp_t.shape[0]
        pt = np.zeros(m) if phases_t is None else phases_t
        pr = np.zeros(m) if phases_r is None else phases_r
        return cls(pt, pr, amp_t, 1.0 - amp_t, protocol)


@dataclass(frozen=True)
class EnergyPartition:
    """Per-user fraction of the energy budget spent on offloading."""

    a: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        if np.any(a < 0) or np.any(a > 1):
            raise ValueError("energy partition entries must lie in [0, 1]")
        object.__setattr__(self, "a", _frozen_array(a))


@dataclass(frozen=True)
class BeamformerSet:
    """Receive beamforming vectors, one row per user (stored unnormalized is
    fine: the SINR is invariant to per-user scaling)."""

    v: np.ndarray  # (K, N) complex

    def __post_init__(self):
        v = np.asarray(self.v, dtype=complex)
        if v.ndim != 2:
            raise ValueError("beamformers must form a (K, N) array")
        norms = np.linalg.norm(v, axis=1)
        if np.any(norms == 0):
            raise ValueError("beamforming vectors must be nonzero")
        arr = np.array(v)
        arr.flags.writeable = False
        object.__setattr__(self, "v", arr)


@dataclass
class SolveReport:
    """Outcome of one full solve: objective trace and final per-user rates."""

    scheme: str
    objective_trace: list[float]
    per_user_offload_rate: np.ndarray
    per_user_local_rate: np.ndarray
    rank_residual: float
    binary_residual: float
    wall_time_s: float
    iterations: int
    beamformers: BeamformerSet | None = None
    ris_state: StarRisState | None = None
    energy: EnergyPartition | None = None
    flags: list[str] = field(default_factory=list)
    details: dict = field(default_factory=dict)

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


# -- objective assembly ------------------------------------------------


def transmit_power(a_k: float, e_k: float, slot_s: float) -> float:
    """Offload transmit power: the slot-normalized share of the energy budget."""
    if not (0.0 <= a_k <= 1.0):
        raise ValueError(f"energy fraction must lie in [0, 1], got {a_k}")
    if e_k <= 0 or slot_s <= 0:
        raise ValueError("energy budget and slot length must be positive")
    return a_k * e_k / slot_s


def total_objective(rates_offload, rates_local) -> float:
    """Sum computation rate over users (offloaded plus local, bits/s)."""
    ro = np.asarray(rates_offload, dtype=float)
    rl = np.asarray(rates_local, dtype=float)
    if ro.shape != rl.shape:
        raise ValueError(f"rate vectors must match in length ({ro.shape} vs {rl.shape})")
    return float(np.sum(ro) + np.sum(rl))
