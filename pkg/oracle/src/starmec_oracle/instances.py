"""Parsing and validation of the exported subproblem / channel JSON files.

The harness deliberately never imports the primary package: everything it
needs arrives through the documented JSON and CSV interfaces.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

RIS_SCHEMA = "ris_subproblem_v1"
ENERGY_SCHEMA = "energy_subproblem_v1"
CHANNELS_SCHEMA = "channels_v1"

HERMITIAN_TOL = 1e-10


def pairs_to_complex(data) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]


@dataclass(frozen=True)
class RisInstance:
    m_elements: int
    n_users: int
    protocol: str
    spaces: np.ndarray
    powers: np.ndarray
    noise_terms: np.ndarray
    d: np.ndarray
    q: np.ndarray
    eps_rank: float
    eps_binary: float
    anchor_psi_t: np.ndarray
    anchor_psi_r: np.ndarray
    primary_objective: float | None
    primary_psi_t: np.ndarray | None
    primary_psi_r: np.ndarray | None


@dataclass(frozen=True)
class EnergyInstance:
    n_users: int
    rate_bandwidth_hz: float
    gains: np.ndarray
    noise_terms: np.ndarray
    e_tilde: np.ndarray
    local_scale: np.ndarray
    a_max: float
    anchor_a: np.ndarray
    primary_objective: float | None
    primary_a: np.ndarray | None


def _load(path_or_doc) -> dict:
    if isinstance(path_or_doc, dict):
        return path_or_doc
    with open(path_or_doc) as fh:
        return json.load(fh)


def load_ris_instance(path_or_doc) -> RisInstance:
    doc = _load(path_or_doc)
    if doc.get("schema") != RIS_SCHEMA:
        raise ValueError(f"schema mismatch: {doc.get('schema')!r} != {RIS_SCHEMA!r}")
    q = pairs_to_complex(doc["q"])
    herm_err = np.max(np.abs(q - np.conj(np.transpose(q, (0, 1, 3, 2)))))
    if herm_err > HERMITIAN_TOL:
        raise ValueError(f"Q matrices are not Hermitian (error {herm_err:.2e})")
    primary = doc.get("primary") or {}
    return RisInstance(
        m_elements=int(doc["m_elements"]),
        n_users=int(doc["n_users"]),
        protocol=doc["protocol"],
        spaces=np.asarray(doc["spaces"], dtype=int),
        powers=np.asarray(doc["powers"], dtype=float),
        noise_terms=np.asarray(doc["noise_terms"], dtype=float),
        d=pairs_to_complex(doc["d"]),
        q=q,
        eps_rank=float(doc["eps_rank"]),
        eps_binary=float(doc["eps_binary"]),
        anchor_psi_t=pairs_to_complex(doc["anchor_psi_t"]),
        anchor_psi_r=pairs_to_complex(doc["anchor_psi_r"]),
        primary_objective=primary.get("objective"),
        primary_psi_t=pairs_to_complex(primary["psi_t"]) if "psi_t" in primary else None,
        primary_psi_r=pairs_to_complex(primary["psi_r"]) if "psi_r" in primary else None,
    )


def load_energy_instance(path_or_doc) -> EnergyInstance:
    doc = _load(path_or_doc)
    if doc.get("schema") != ENERGY_SCHEMA:
        raise ValueError(f"schema mismatch: {doc.get('schema')!r} != {ENERGY_SCHEMA!r}")
    primary = doc.get("primary") or {}
    return EnergyInstance(
        n_users=int(doc["n_users"]),
        rate_bandwidth_hz=float(doc["rate_bandwidth_hz"]),
        gains=np.asarray(doc["gains"], dtype=float),
        noise_terms=np.asarray(doc["noise_terms"], dtype=float),
        e_tilde=np.asarray(doc["e_tilde"], dtype=float),
        local_scale=np.asarray(doc["local_scale"], dtype=float),
        a_max=float(doc["a_max"]),
        anchor_a=np.asarray(doc["anchor_a"], dtype=float),
        primary_objective=primary.get("objective"),
        primary_a=np.asarray(primary["a"], dtype=float) if "a" in primary else None,
    )


@dataclass(frozen=True)
class ChannelDump:
    h_d: np.ndarray
    h_s: np.ndarray
    g_mat: np.ndarray
    t_users: int


def load_channels(path_or_doc) -> ChannelDump:
    doc = _load(path_or_doc)
    if doc.get("schema") != CHANNELS_SCHEMA:
        raise ValueError(f"schema mismatch: {doc.get('schema')!r} != {CHANNELS_SCHEMA!r}")
    return ChannelDump(
        h_d=pairs_to_complex(doc["h_d"]),
        h_s=pairs_to_complex(doc["h_s"]),
        g_mat=pairs_to_complex(doc["g_mat"]),
        t_users=int(doc["t_users"]),
    )
