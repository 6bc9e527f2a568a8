"""Energy-partition block: DC programming over the box of offload fractions.

The offload rate splits into a difference of two terms that are concave in
the partition vector; each DC iteration replaces the subtracted term by its
tangent plane and maximizes the resulting concave surrogate (offload
surrogate plus the exactly concave local-computing term) with projected
gradient ascent on the box.

The upper end of the box is clamped at 1 - 1e-9: the local-rate derivative
diverges at a = 1, and the clamp keeps gradients finite at a rate cost far
below solver precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelSet, effective_channels
from .metrics import beam_gains
from .model import StarRisState, SystemConfig

_LN2 = np.log(2.0)

A_CLAMP = 1e-9
KKT_TOL = 1e-7
DC_REL_TOL = 1e-6
MAX_PG_ITERS = 400


@dataclass(frozen=True)
class EnergyObjective:
    """Problem data for the partition block, with rates normalized by the
    (possibly scaled) bandwidth so gradients are O(1)."""

    gains: np.ndarray        # (K, K) |v_k^H g_j|^2
    noise: np.ndarray        # (K,) sigma^2 ||v_k||^2
    e_tilde: np.ndarray      # (K,) effective per-user budget power
    rate_bw: np.ndarray | float  # bandwidth times any slot-share factor
    local_scale: np.ndarray  # (K,) c_k with local rate c_k (1 - a)^(1/3)
    a_max: float = 1.0 - A_CLAMP

    @property
    def n_users(self) -> int:
        return self.gains.shape[0]

    def weighted_gains(self) -> np.ndarray:
        return self.gains * self.e_tilde[None, :]

    # True objective pieces -------------------------------------------

    def r1_r2(self, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        w = self.weighted_gains()
        x = w @ a + self.noise
        y = x - np.diagonal(w) * a
        return self.rate_bw * np.log2(x), self.rate_bw * np.log2(y)

    def offload(self, a: np.ndarray) -> np.ndarray:
        r1, r2 = self.r1_r2(a)
        return r1 - r2

    def local(self, a: np.ndarray) -> np.ndarray:
        return self.local_scale * np.cbrt(1.0 - a)

    def total(self, a: np.ndarray) -> float:
        return float(np.sum(self.offload(a)) + np.sum(self.local(a)))

    def r2_gradient(self, anchor: np.ndarray) -> np.ndarray:
        """D[k, i] = dR_{k,2}/da_i at the anchor (zero on the diagonal)."""
        w = self.weighted_gains()
        x = w @ anchor + self.noise
        y = x - np.diagonal(w) * anchor
        d = (self.rate_bw / _LN2) * w / y[:, None]
        np.fill_diagonal(d, 0.0)
        return d


def build_energy_objective(beamformers, channels: ChannelSet, ris: StarRisState,
                           cfg: SystemConfig, *, e_tilde=None, rate_factor: float = 1.0,
                           active=None) -> EnergyObjective:
    v = np.asarray(getattr(beamformers, "v", beamformers), dtype=complex)
    g = effective_channels(channels, ris)
    e_tilde = cfg.e_tilde if e_tilde is None else np.asarray(e_tilde, dtype=float)
    e = np.asarray(cfg.energy_budgets_j)
    kappa = np.asarray(cfg.capacitance_coeff)
    cyc = np.asarray(cfg.cycles_per_bit)
    local_scale = (e / (cfg.compute_duration_s * kappa)) ** (1.0 / 3.0) / cyc
    if active is not None:
        active = np.asarray(active, dtype=int)
        v, g = v[active], g[active]
        e_tilde, local_scale = e_tilde[active], local_scale[active]
    norms = np.linalg.norm(v, axis=1)
    return EnergyObjective(
        gains=beam_gains(v, g),
        noise=cfg.noise_power_w * norms ** 2,
        e_tilde=e_tilde,
        rate_bw=rate_factor * cfg.bandwidth_hz,
        local_scale=local_scale,
    )


def split_rate_terms(a, beamformers, channels: ChannelSet, ris: StarRisState,
                     cfg: SystemConfig) -> tuple[np.ndarray, np.ndarray]:
    """The two concave terms whose difference is each user's offload rate."""
    obj = build_energy_objective(beamformers, channels, ris, cfg)
    return obj.r1_r2(np.asarray(a, dtype=float))


def linearize_r2(anchor_a, obj: EnergyObjective):
    """Tangent-plane upper bound of the subtracted rate term at the anchor.

    Returns (evaluate, gradient) where evaluate(a) gives the per-user bound.
    """
    anchor = np.asarray(anchor_a, dtype=float)
    _, r2_anchor = obj.r1_r2(anchor)
    grad = obj.r2_gradient(anchor)

    def evaluate(a) -> np.ndarray:
        return r2_anchor + grad @ (np.asarray(a, dtype=float) - anchor)

    return evaluate, grad


def surrogate_objective(a, obj: EnergyObjective, anchor_a) -> float:
    """Absolute-unit value of the concave program anchored at ``anchor_a``."""
    a = np.asarray(a, dtype=float)
    r1, _ = obj.r1_r2(a)
    evaluate, _ = linearize_r2(anchor_a, obj)
    return float(np.sum(r1) - np.sum(evaluate(a)) + np.sum(obj.local(a)))


@dataclass
class EnergyDcState:
    """Running record of the partition DC loop."""

    a_current: np.ndarray
    r2_gradient: np.ndarray
    obj_trace: list[float] = field(default_factory=list)
    converged: bool = False
    kkt_residual: float = np.inf


def _surrogate_value_and_grad(a: np.ndarray, obj: EnergyObjective,
                              grad_r2_cols: np.ndarray):
    """Surrogate objective (bandwidth-normalized) and its gradient."""
    w = obj.weighted_gains()
    x = w @ a + obj.noise
    if np.any(x <= 0):
        return -np.inf, None
    scale = float(np.asarray(obj.rate_bw))
    local = obj.local_scale * np.cbrt(1.0 - a)
    value = float(np.sum(np.log2(x)) + np.sum(local) / scale) \
        - float(grad_r2_cols @ a) / scale
    grad = (w.T @ (1.0 / x)) / _LN2 \
        - grad_r2_cols / scale \
        - obj.local_scale / (3.0 * scale * np.cbrt(1.0 - a) ** 2)
    return value, grad


def solve_energy_subproblem(anchor_a, obj: EnergyObjective, *,
                            max_iters: int = MAX_PG_ITERS,
                            kkt_tol: float = KKT_TOL) -> tuple[np.ndarray, float]:
    """Maximize the concave surrogate on the box by projected gradient ascent
    with backtracking; returns (solution, projected-gradient residual)."""
    anchor = np.clip(np.asarray(anchor_a, dtype=float), 0.0, obj.a_max)
    grad_r2_cols = obj.r2_gradient(anchor).sum(axis=0)
    a = anchor.copy()
    value, grad = _surrogate_value_and_grad(a, obj, grad_r2_cols)
    step = 1.0
    residual = np.inf
    for _ in range(max_iters):
        residual = float(np.max(np.abs(np.clip(a + grad, 0.0, obj.a_max) - a)))
        if residual <= kkt_tol:
            break
        moved = False
        while step > 1e-16:
            cand = np.clip(a + step * grad, 0.0, obj.a_max)
            cand_value, cand_grad = _surrogate_value_and_grad(cand, obj, grad_r2_cols)
            if cand_value >= value - 1e-15 * (1.0 + abs(value)):
                moved = True
                break
            step *= 0.5
        if not moved:
            break
        a, value, grad = cand, cand_value, cand_grad
        step = min(step * 1.3, 1e6)
    return a, residual


def dc_energy_loop(init_a, obj: EnergyObjective, *, max_iters: int = 60,
                   rel_tol: float = DC_REL_TOL) -> EnergyDcState:
    """Linearize/maximize until the true objective gain falls below tolerance."""
    a = np.clip(np.asarray(init_a, dtype=float), 0.0, obj.a_max)
    state = EnergyDcState(a_current=a, r2_gradient=obj.r2_gradient(a),
                          obj_trace=[obj.total(a)])
    for _ in range(max_iters):
        cand, residual = solve_energy_subproblem(a, obj)
        state.kkt_residual = residual
        cand_total = obj.total(cand)
        if cand_total < state.obj_trace[-1] - 1e-10:
            state.converged = True
            break
        a = cand
        state.a_current = a
        state.obj_trace.append(cand_total)
        gain = state.obj_trace[-1] - state.obj_trace[-2]
        if gain < rel_tol * max(1.0, abs(state.obj_trace[-2])):
            state.converged = True
            break
    state.r2_gradient = obj.r2_gradient(state.a_current)
    return state


def dc_energy_loop_for_solution(beamformers, channels: ChannelSet, ris: StarRisState,
                                cfg: SystemConfig, init_a=None) -> EnergyDcState:
    """Convenience wrapper building the block data from a full solution tuple."""
    obj = build_energy_objective(beamformers, channels, ris, cfg)
    if init_a is None:
        init_a = np.full(obj.n_users, 0.5)
    return dc_energy_loop(init_a, obj)
