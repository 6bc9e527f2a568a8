"""Surface-coefficient block: SDR lifting plus DC programming.

The per-user rate is rewritten over lifted PSD matrices (one per surface
side) whose diagonals carry the element amplitudes. Each DC iteration
linearizes the non-concave rate part and the rank-one / binary surrogates at
the current anchor and solves the resulting convex program with a penalized
projected-gradient method:

* PSD cone handled by eigenvalue clipping,
* coupled diagonal/box (and, in mode switching, the anchored binary caps)
  handled by an exact per-element projection,
* the rank-one surrogate cap handled by a quadratic hinge penalty with
  geometric growth, followed by an exact blend back toward the feasible
  anchor, which restores every cap without giving up ascent.

Monotonicity: the solver never returns a point whose surrogate objective is
below the anchor's, so the true lifted objective is non-decreasing across DC
iterations (standard MM argument).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelSet
from .model import Protocol, StarRisState, SystemConfig

_LN2 = np.log(2.0)

DC_REL_TOL = 1e-5
ASCENT_SLACK = 1e-8
PSD_EIG_TOL = 1e-9
DIAG_TOL = 1e-8


class ExtractionError(ValueError):
    """Lifted matrix has no usable reference entry for eigenvector scaling."""


# -- lifted problem data -------------------------------------------------


@dataclass(frozen=True)
class LiftedCoefficients:
    """Quadratic-form data of the lifted rate expressions.

    q[k, j] is the bordered (M+1)x(M+1) Hermitian matrix reproducing
    |v_k^H g_j|^2 as Tr(q[k, j] Psi) + |d[k, j]|^2 with Psi the lifted matrix
    of user j's side.
    """

    q: np.ndarray            # (K, K, M+1, M+1) complex Hermitian
    d: np.ndarray            # (K, K) complex, v_k^H h_{d,j}
    noise_terms: np.ndarray  # (K,) sigma^2 ||v_k||^2
    powers: np.ndarray       # (K,) transmit powers p_j
    spaces: np.ndarray       # (K,) 0 = transmission side, 1 = reflection side

    @property
    def n_users(self) -> int:
        return self.q.shape[0]

    @property
    def n_elements(self) -> int:
        return self.q.shape[2] - 1


@dataclass(frozen=True)
class LiftedRisVariable:
    """The pair of lifted PSD matrices; diagonals carry the amplitude vectors."""

    psi_t: np.ndarray
    psi_r: np.ndarray

    @property
    def n_elements(self) -> int:
        return self.psi_t.shape[0] - 1

    @property
    def rho_t(self) -> np.ndarray:
        return np.real(np.diagonal(self.psi_t))[:-1]

    @property
    def rho_r(self) -> np.ndarray:
        return np.real(np.diagonal(self.psi_r))[:-1]

    def stacked(self) -> np.ndarray:
        return np.stack([self.psi_t, self.psi_r])

    def rank_residuals(self) -> tuple[float, float]:
        """Trace minus spectral norm per side; zero iff exactly rank one."""
        out = []
        for psi in (self.psi_t, self.psi_r):
            evals = np.linalg.eigvalsh(psi)
            out.append(float(np.real(np.trace(psi)) - evals[-1]))
        return out[0], out[1]

    def validate(self, *, eig_tol: float = PSD_EIG_TOL, diag_tol: float = DIAG_TOL) -> None:
        for name, psi in (("psi_t", self.psi_t), ("psi_r", self.psi_r)):
            herm_err = np.max(np.abs(psi - psi.conj().T))
            if herm_err > 1e-8:
                raise ValueError(f"{name} is not Hermitian (error {herm_err:.2e})")
            min_eig = np.linalg.eigvalsh(psi)[0]
            if min_eig < -eig_tol:
                raise ValueError(f"{name} has negative eigenvalue {min_eig:.2e}")
            corner = np.real(psi[-1, -1])
            if abs(corner - 1.0) > diag_tol:
                raise ValueError(f"{name} corner entry {corner} deviates from 1")
        rho_t, rho_r = self.rho_t, self.rho_r
        if np.any(rho_t < -diag_tol) or np.any(rho_t > 1 + diag_tol) \
                or np.any(rho_r < -diag_tol) or np.any(rho_r > 1 + diag_tol):
            raise ValueError("diagonal amplitude entries leave [0, 1]")
        drift = np.max(np.abs(rho_t + rho_r - 1.0), initial=0.0)
        if drift > diag_tol:
            raise ValueError(f"diagonal coupling violated (max drift {drift:.2e})")


def _rank_one(vec: np.ndarray) -> np.ndarray:
    u = np.append(np.asarray(vec, dtype=complex), 1.0)
    return np.outer(u, u.conj())


def lift_state(state: StarRisState) -> LiftedRisVariable:
    """Exact rank-one lift of a physical surface state."""
    return LiftedRisVariable(psi_t=_rank_one(state.coeffs(0)),
                             psi_r=_rank_one(state.coeffs(1)))


def lifted_from_diag(rho_t, phases_t, rho_r, phases_r) -> LiftedRisVariable:
    """Rank-one lifted pair with prescribed diagonals (coupling-feasible)."""
    rho_t = np.asarray(rho_t, dtype=float)
    rho_r = np.asarray(rho_r, dtype=float)
    ut = np.sqrt(rho_t) * np.exp(1j * np.asarray(phases_t, dtype=float))
    ur = np.sqrt(rho_r) * np.exp(1j * np.asarray(phases_r, dtype=float))
    return LiftedRisVariable(psi_t=_rank_one(ut), psi_r=_rank_one(ur))


def initial_lifted(m: int, protocol: Protocol,
                   fixed_diag_t: np.ndarray | None = None,
                   pattern_t: np.ndarray | None = None) -> LiftedRisVariable:
    """Feasible zero-residual starting point for the DC loop."""
    zeros = np.zeros(m)
    if fixed_diag_t is not None:
        diag_t = np.asarray(fixed_diag_t, dtype=float)
    elif protocol == Protocol.MS:
        diag_t = (np.arange(m) % 2 == 0).astype(float) if pattern_t is None \
            else np.asarray(pattern_t, dtype=float)
    else:
        diag_t = np.full(m, 0.5)
    return lifted_from_diag(diag_t, zeros, 1.0 - diag_t, zeros)


def build_lifted(channels: ChannelSet, beamformers, a, cfg: SystemConfig, *,
                 e_tilde=None, active=None) -> LiftedCoefficients:
    """Assemble the bordered Q matrices and scalars for the current solution."""
    v = np.asarray(getattr(beamformers, "v", beamformers), dtype=complex)
    a = np.asarray(a, dtype=float)
    e_tilde = cfg.e_tilde if e_tilde is None else np.asarray(e_tilde, dtype=float)
    spaces = channels.spaces()
    h_d, h_s, g_mat = channels.h_d, channels.h_s, channels.g_mat
    if active is not None:
        active = np.asarray(active, dtype=int)
        v, a, e_tilde = v[active], a[active], e_tilde[active]
        h_d, h_s, spaces = h_d[active], h_s[active], spaces[active]
    k_users = v.shape[0]
    m = h_s.shape[1]

    w = (v @ g_mat.T).conj()                              # (K, M): v_k^H G^H
    rows = np.einsum("km,jm->kjm", w, h_s)                # h_{s,k,j} row vectors
    d = v.conj() @ h_d.T                                  # (K, K)
    q = np.zeros((k_users, k_users, m + 1, m + 1), dtype=complex)
    q[:, :, :m, :m] = np.einsum("kjm,kjn->kjmn", rows.conj(), rows)
    q[:, :, :m, m] = rows.conj() * d[:, :, None]
    q[:, :, m, :m] = rows * d.conj()[:, :, None]
    return LiftedCoefficients(q=q, d=d, noise_terms=cfg.noise_power_w * np.ones(k_users),
                              powers=a * e_tilde, spaces=spaces)


# -- lifted rate terms and their DC surrogates ---------------------------


def _pair_traces(lc: LiftedCoefficients, stacked: np.ndarray) -> np.ndarray:
    psi_per_j = stacked[lc.spaces]
    return np.real(np.einsum("kjab,jba->kj", lc.q, psi_per_j))


def rate_terms(lc: LiftedCoefficients, lifted: LiftedRisVariable) -> tuple[np.ndarray, np.ndarray]:
    """Concave pair (F1, F2) whose difference is log2(1 + SINR) per user."""
    terms = lc.powers[None, :] * (_pair_traces(lc, lifted.stacked()) + np.abs(lc.d) ** 2)
    x = terms.sum(axis=1) + lc.noise_terms
    y = x - np.diagonal(terms)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("nonpositive log argument in lifted rate terms")
    return np.log2(x), np.log2(y)


def lifted_objective(lc: LiftedCoefficients, lifted: LiftedRisVariable) -> float:
    f1, f2 = rate_terms(lc, lifted)
    return float(np.sum(f1 - f2))


@dataclass(frozen=True)
class F2Linearization:
    """First-order upper bound of each F2 term around an anchor pair."""

    values_at_anchor: np.ndarray   # (K,)
    grads: np.ndarray              # (K, 2, M+1, M+1) Hermitian
    anchor_stacked: np.ndarray     # (2, M+1, M+1)

    def evaluate(self, lifted: LiftedRisVariable) -> np.ndarray:
        delta = lifted.stacked() - self.anchor_stacked
        inner = np.real(np.einsum("kxab,xba->k", self.grads, delta))
        return self.values_at_anchor + inner

    def total_gradient(self) -> np.ndarray:
        return self.grads.sum(axis=0)


def make_f2_linearization(lc: LiftedCoefficients, anchor: LiftedRisVariable) -> F2Linearization:
    _, f2 = rate_terms(lc, anchor)
    k_users = lc.n_users
    terms = lc.powers[None, :] * (_pair_traces(lc, anchor.stacked()) + np.abs(lc.d) ** 2)
    x = terms.sum(axis=1) + lc.noise_terms
    y = x - np.diagonal(terms)
    pq = lc.powers[None, :, None, None] * lc.q
    idx = np.arange(k_users)
    pq = pq.copy()
    pq[idx, idx] = 0.0
    onehot = np.eye(2)[lc.spaces]                      # (K, 2)
    grads = np.einsum("kiab,ix->kxab", pq, onehot)
    grads /= (_LN2 * y)[:, None, None, None]
    return F2Linearization(values_at_anchor=f2, grads=grads,
                           anchor_stacked=anchor.stacked())


def linearize_f2(lc: LiftedCoefficients, lifted: LiftedRisVariable,
                 anchor: LiftedRisVariable) -> np.ndarray:
    """Per-user linear upper bound of F2 at ``lifted``, anchored at ``anchor``."""
    return make_f2_linearization(lc, anchor).evaluate(lifted)


def principal_eigvec(psi: np.ndarray) -> np.ndarray:
    _, vecs = np.linalg.eigh(psi)
    return vecs[:, -1]


def rank_one_surrogate(psi: np.ndarray, psi_anchor: np.ndarray) -> float:
    """Trace minus the linearized spectral norm; upper-bounds the rank residual."""
    z = principal_eigvec(psi_anchor)
    quad = np.real(z.conj() @ psi @ z)
    return float(np.real(np.trace(psi)) - quad)


def binary_surrogate(rho, rho_anchor) -> np.ndarray:
    """Per-element rho minus the linearized rho^2; upper-bounds rho - rho^2."""
    rho = np.asarray(rho, dtype=float)
    anchor = np.asarray(rho_anchor, dtype=float)
    if np.any(rho < -1e-12) or np.any(rho > 1 + 1e-12):
        raise ValueError("amplitude entries must lie in [0, 1]")
    return rho - (anchor ** 2 + 2.0 * anchor * (rho - anchor))


# -- convex approximation solver -----------------------------------------


@dataclass
class RisSolveOptions:
    max_inner_iters: int = 150
    grad_tol: float = 1e-6
    stall_tol: float = 1e-8          # stop when the relative gain stagnates
    penalty_init: float | None = None   # None -> 2 K / eps_rank
    penalty_growth: float = 10.0
    penalty_rounds: int = 3
    step_init: float = 1.0
    step_growth: float = 1.25
    step_max: float = 64.0
    # Exploration stage of the surface block: the rank cap confines each
    # anchored subproblem to a narrow cone around the anchor's principal
    # direction, so the block first runs a few uncapped MM iterations and
    # consolidates to a rank-one anchor before the strictly capped loop.
    explore_iters: int = 5
    explore_rel_tol: float = 1e-4
    explore_inner_iters: int = 80
    explore_grad_tol: float = 1e-4


@dataclass
class SubproblemInfo:
    objective: float = np.nan
    anchor_objective: float = np.nan
    iterations: int = 0
    first_order_residual: float = np.inf
    penalty_rounds: int = 0
    blend_theta: float = 1.0
    reverted_to_anchor: bool = False
    revert_was_failure: bool = False


@dataclass
class DcOutcome:
    lifted: LiftedRisVariable
    objective_trace: list[float] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    rank_residual_trace: list[float] = field(default_factory=list)


def _element_bounds(anchor_t: np.ndarray, anchor_r: np.ndarray, eps_b: float,
                    m: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-element interval for the transmit diagonal implied by the anchored
    binary caps of both sides (mode switching only)."""
    lo = np.zeros(m)
    hi = np.ones(m)

    def apply(anchor, as_reflect):
        nonlocal lo, hi
        coef = 1.0 - 2.0 * anchor
        bound = eps_b - anchor ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            limit = bound / coef
        pos = coef > 1e-12
        neg = coef < -1e-12
        mid = ~(pos | neg)
        if np.any(mid) and eps_b < 0.25 - 1e-12:
            raise ValueError("anchor infeasible for the binary caps (amplitude at 0.5)")
        if as_reflect:
            # cap acts on r = 1 - t
            hi = np.where(neg, np.minimum(hi, 1.0 - limit), hi)
            lo = np.where(pos, np.maximum(lo, 1.0 - limit), lo)
        else:
            hi = np.where(pos, np.minimum(hi, limit), hi)
            lo = np.where(neg, np.maximum(lo, limit), lo)

    apply(anchor_t, as_reflect=False)
    apply(anchor_r, as_reflect=True)
    if np.any(lo > hi + 1e-10):
        raise ValueError("anchor infeasible: empty binary-cap interval")
    return lo, np.maximum(hi, lo)


class _Subproblem:
    """One convex approximation instance around a fixed anchor.

    ``eps_rank=inf`` disables the rank cap (exploration stage); the diagonal
    coupling/box constraints and any binary caps stay exact either way.
    """

    def __init__(self, lc: LiftedCoefficients, cfg: SystemConfig,
                 anchor: LiftedRisVariable, *, fixed_diag_t=None,
                 options: RisSolveOptions | None = None,
                 eps_rank: float | None = None):
        self.lc = lc
        self.cfg = cfg
        self.opts = options or RisSolveOptions()
        self.m = lc.n_elements
        self.eps_rank = cfg.eps_rank if eps_rank is None else eps_rank
        self.capped = np.isfinite(self.eps_rank)
        self.fixed_diag_t = None if fixed_diag_t is None \
            else np.asarray(fixed_diag_t, dtype=float)
        self.anchor = anchor.stacked()
        drift = np.max(np.abs(np.real(np.diagonal(anchor.psi_t))[:-1]
                              + np.real(np.diagonal(anchor.psi_r))[:-1] - 1.0),
                       initial=0.0)
        corner_err = max(abs(np.real(anchor.psi_t[-1, -1]) - 1.0),
                         abs(np.real(anchor.psi_r[-1, -1]) - 1.0))
        if drift > 1e-6 or corner_err > 1e-6:
            raise ValueError(
                f"anchor violates the diagonal constraints (drift {drift:.2e})")

        onehot = np.eye(2)[lc.spaces]
        pq = lc.powers[None, :, None, None] * lc.q
        self.s1 = np.einsum("kiab,ix->kxab", pq, onehot)          # (K,2,n,n)
        dabs2 = np.abs(lc.d) ** 2
        self.c1 = (lc.powers[None, :] * dabs2).sum(axis=1) + lc.noise_terms

        # F2 linearization at the anchor.
        lin = make_f2_linearization(lc, anchor)
        self.lin_values = lin.values_at_anchor
        self.lin_grad = lin.total_gradient()                       # (2,n,n)
        self.lin_const = float(np.sum(self.lin_values)) \
            - float(np.real(np.einsum("xab,xba->", self.lin_grad, self.anchor)))

        # Rank-cap subgradient directions from the anchor.
        self.z = np.stack([principal_eigvec(anchor.psi_t),
                           principal_eigvec(anchor.psi_r)]) if self.capped \
            else np.zeros((2, self.m + 1), dtype=complex)

        # Binary caps apply in the strictly capped stage only; the uncapped
        # exploration stage relaxes mode switching to its continuous hull and
        # the consolidation rounds the diagonal back to on/off.
        self.ms_caps = (cfg.protocol == Protocol.MS and self.fixed_diag_t is None
                        and self.capped)
        a_t = np.real(np.diagonal(anchor.psi_t))[:-1]
        a_r = np.real(np.diagonal(anchor.psi_r))[:-1]
        if self.ms_caps:
            res_t = binary_surrogate(np.clip(a_t, 0, 1), a_t)
            res_r = binary_surrogate(np.clip(a_r, 0, 1), a_r)
            if max(res_t.max(initial=0), res_r.max(initial=0)) > cfg.binary_tol + 1e-9:
                raise ValueError("anchor infeasible for the binary caps")
            self.lo, self.hi = _element_bounds(a_t, a_r, cfg.binary_tol, self.m)
        else:
            self.lo, self.hi = np.zeros(self.m), np.ones(self.m)

        if self.capped:
            anchor_viol = self._rank_violation(self.anchor)
            if np.any(anchor_viol > 1e-9):
                raise ValueError("anchor infeasible for the rank caps "
                                 f"(violation {anchor_viol.max():.2e})")

    # objective ---------------------------------------------------------

    def _x(self, psis: np.ndarray) -> np.ndarray:
        return np.real(np.einsum("kxab,xba->k", self.s1, psis)) + self.c1

    def surrogate_objective(self, psis: np.ndarray) -> float:
        x = self._x(psis)
        if np.any(x <= 0):
            return -np.inf
        lin = np.real(np.einsum("xab,xba->", self.lin_grad, psis)) + self.lin_const
        return float(np.sum(np.log2(x)) - lin)

    def _rank_violation(self, psis: np.ndarray) -> np.ndarray:
        traces = np.real(np.trace(psis, axis1=1, axis2=2))
        quads = np.real(np.einsum("xa,xab,xb->x", self.z.conj(), psis, self.z))
        return traces - quads - self.eps_rank

    def penalized(self, psis: np.ndarray, mu: float) -> float:
        base = self.surrogate_objective(psis)
        if not self.capped or not np.isfinite(base):
            return base
        viol = np.maximum(self._rank_violation(psis), 0.0)
        return base - mu * float(np.sum(viol ** 2))

    def penalized_grad(self, psis: np.ndarray, mu: float) -> np.ndarray:
        x = self._x(psis)
        grad = np.einsum("k,kxab->xab", 1.0 / (_LN2 * x), self.s1) - self.lin_grad
        if self.capped:
            viol = np.maximum(self._rank_violation(psis), 0.0)
            for side in range(2):
                if viol[side] > 0:
                    zz = np.outer(self.z[side], self.z[side].conj())
                    grad[side] -= 2.0 * mu * viol[side] * (np.eye(self.m + 1) - zz)
        return grad

    # feasibility -------------------------------------------------------

    def project(self, psis: np.ndarray, rounds: int = 8, tol: float = 1e-7) -> np.ndarray:
        """Land (numerically) inside PSD intersect diagonal set by alternating
        the two exact projections. The Weyl bound caps the PSD violation by the
        size of the last diagonal overwrite, so no extra eigensolve is needed
        for the stopping test. Line-search candidates use a loose tolerance;
        accepted/final points are re-tightened by ``polish``."""
        n = self.m + 1
        for _ in range(rounds):
            psis = 0.5 * (psis + np.conj(np.transpose(psis, (0, 2, 1))))
            evals, vecs = np.linalg.eigh(psis)
            np.maximum(evals, 0.0, out=evals)
            psis = (vecs * evals[:, None, :]) @ np.conj(np.transpose(vecs, (0, 2, 1)))
            delta = self._project_diag(psis, n)
            if delta <= tol:
                break
        return psis

    def _project_diag(self, psis: np.ndarray, n: int) -> float:
        """Overwrite diagonals with their projection onto the coupled box
        (plus any binary caps / frozen pattern); returns the largest move.

        Also clips every entry to |psi_ij| <= sqrt(d_i d_j), a necessary
        condition for a PSD matrix with diagonal d. Clipping into this
        superset costs nothing and makes the PSD/diagonal alternation
        converge fast when diagonals are pinned near zero."""
        m = self.m
        diag_t = psis[0].reshape(-1)[:: n + 1]
        diag_r = psis[1].reshape(-1)[:: n + 1]
        d_t = diag_t.real[:m]
        d_r = diag_r.real[:m]
        if self.fixed_diag_t is not None:
            t = self.fixed_diag_t
        else:
            t = np.clip(0.5 * (d_t - d_r + 1.0), self.lo, self.hi)
        delta = max(float(np.max(np.abs(d_t - t))) if m else 0.0,
                    float(np.max(np.abs(d_r - (1.0 - t)))) if m else 0.0,
                    abs(diag_t[m].real - 1.0), abs(diag_r[m].real - 1.0))
        diag_t[:m] = t
        diag_r[:m] = 1.0 - t
        diag_t[m] = 1.0
        diag_r[m] = 1.0
        root_t = np.sqrt(np.concatenate([t, [1.0]]))
        root_r = np.sqrt(np.concatenate([1.0 - t, [1.0]]))
        caps = np.stack([np.outer(root_t, root_t), np.outer(root_r, root_r)])
        mags = np.abs(psis)
        np.maximum(mags, 1e-300, out=mags)
        np.multiply(psis, np.minimum(1.0, caps / mags), out=psis)
        return delta

    def polish(self, psis: np.ndarray, rounds: int = 40) -> np.ndarray:
        """Tighten an almost-feasible iterate into the intersection to well
        below the type tolerances."""
        for _ in range(rounds):
            min_eig = np.linalg.eigvalsh(psis)[:, 0].min()
            if min_eig >= -1e-10:
                return psis
            psis = self.project(psis, rounds=1, tol=0.0)
        return psis

    def blend_to_anchor(self, psis: np.ndarray) -> tuple[np.ndarray, float]:
        """Shrink toward the anchor just enough to satisfy the rank caps
        exactly; all other constraints are preserved by convexity."""
        if not self.capped:
            return psis, 1.0
        viol_new = self._rank_violation(psis)
        if np.all(viol_new <= 0):
            return psis, 1.0
        viol_anchor = self._rank_violation(self.anchor)
        theta = 1.0
        for side in range(2):
            if viol_new[side] > 0:
                denom = viol_new[side] - viol_anchor[side]
                if denom <= 0:
                    theta = 0.0
                else:
                    theta = min(theta, -viol_anchor[side] / denom)
        theta = max(theta, 0.0)
        return theta * psis + (1.0 - theta) * self.anchor, theta

    # solver ------------------------------------------------------------

    def solve(self) -> tuple[LiftedRisVariable, SubproblemInfo]:
        opts = self.opts
        info = SubproblemInfo()
        info.anchor_objective = self.surrogate_objective(self.anchor)
        if self.capped:
            mu = opts.penalty_init if opts.penalty_init is not None \
                else 2.0 * self.lc.n_users / max(self.eps_rank, 1e-8)
            max_inner, grad_tol = opts.max_inner_iters, opts.grad_tol
        else:
            mu = 0.0
            max_inner, grad_tol = opts.explore_inner_iters, opts.explore_grad_tol
        psis = self.anchor.copy()
        step = opts.step_init
        for round_no in range(opts.penalty_rounds):
            info.penalty_rounds = round_no + 1
            p_cur = self.penalized(psis, mu)
            stalled = 0
            for _ in range(max_inner):
                info.iterations += 1
                grad = self.penalized_grad(psis, mu)
                moved = False
                while step > 1e-14:
                    cand = self.project(psis + step * grad)
                    p_new = self.penalized(cand, mu)
                    if p_new >= p_cur - 1e-12 * (1.0 + abs(p_cur)):
                        moved = True
                        break
                    step *= 0.5
                if not moved:
                    break
                scale = step * max(1.0, float(np.linalg.norm(psis)))
                info.first_order_residual = float(np.linalg.norm(cand - psis)) / scale
                gain = p_new - p_cur
                psis, p_cur = cand, p_new
                step = min(step * opts.step_growth, opts.step_max)
                stalled = stalled + 1 if gain < opts.stall_tol * (1.0 + abs(p_cur)) else 0
                if info.first_order_residual <= grad_tol or stalled >= 2:
                    break
            if not self.capped:
                break
            viol = np.maximum(self._rank_violation(psis), 0.0)
            if np.all(viol <= 0.02 * self.eps_rank):
                break
            mu *= opts.penalty_growth

        psis = self.polish(psis)
        psis, info.blend_theta = self.blend_to_anchor(psis)
        psis = self.polish(psis)
        obj = self.surrogate_objective(psis)
        infeasible = (not np.isfinite(obj)
                      or (self.capped and np.any(self._rank_violation(psis) > 1e-9))
                      or np.linalg.eigvalsh(psis)[:, 0].min() < -PSD_EIG_TOL)
        if infeasible or obj < info.anchor_objective - ASCENT_SLACK:
            psis = self.anchor.copy()
            obj = info.anchor_objective
            info.reverted_to_anchor = True
            info.revert_was_failure = infeasible
        info.objective = obj
        return LiftedRisVariable(psi_t=psis[0], psi_r=psis[1]), info


def solve_ris_subproblem(lc: LiftedCoefficients, cfg: SystemConfig,
                         anchor: LiftedRisVariable, *, fixed_diag_t=None,
                         options: RisSolveOptions | None = None) -> LiftedRisVariable:
    """Solve the convex approximation around ``anchor``.

    Raises ValueError on an infeasible anchor; warns (never silently) if the
    inner method stalls and the anchor is returned unchanged.
    """
    sub = _Subproblem(lc, cfg, anchor, fixed_diag_t=fixed_diag_t, options=options)
    lifted, info = sub.solve()
    if info.revert_was_failure:
        warnings.warn(
            "surface subproblem did not converge to a feasible improvement: "
            f"returning anchor (first-order residual {info.first_order_residual:.2e}, "
            f"penalty rounds {info.penalty_rounds})",
            RuntimeWarning, stacklevel=2)
    return lifted


def surrogate_objective(lc: LiftedCoefficients, cfg: SystemConfig,
                        anchor: LiftedRisVariable, lifted: LiftedRisVariable, *,
                        fixed_diag_t=None) -> float:
    """Objective of the convex program anchored at ``anchor``, at ``lifted``."""
    sub = _Subproblem(lc, cfg, anchor, fixed_diag_t=fixed_diag_t)
    return sub.surrogate_objective(lifted.stacked())


def dc_outer_loop(lc: LiftedCoefficients, cfg: SystemConfig,
                  init: LiftedRisVariable, *, fixed_diag_t=None,
                  options: RisSolveOptions | None = None,
                  eps_rank: float | None = None,
                  max_iters: int | None = None,
                  rel_tol: float = DC_REL_TOL) -> DcOutcome:
    """Iterate linearize-at-current / solve until the gain falls below tolerance."""
    current = init
    trace = [lifted_objective(lc, current)]
    res = current.rank_residuals()
    outcome = DcOutcome(lifted=current, objective_trace=trace,
                        rank_residual_trace=[max(res)])
    if max_iters is None:
        max_iters = cfg.dc_max_iters
    for it in range(max_iters):
        sub = _Subproblem(lc, cfg, current, fixed_diag_t=fixed_diag_t,
                          options=options, eps_rank=eps_rank)
        lifted, info = sub.solve()
        obj = lifted_objective(lc, lifted)
        outcome.iterations = it + 1
        if info.reverted_to_anchor or obj < trace[-1] - ASCENT_SLACK:
            outcome.converged = True
            break
        current = lifted
        trace.append(obj)
        outcome.lifted = current
        outcome.rank_residual_trace.append(max(current.rank_residuals()))
        if trace[-1] - trace[-2] < rel_tol * max(1.0, abs(trace[-2])):
            outcome.converged = True
            break
    return outcome


def rank_one_projection(lifted: LiftedRisVariable, protocol: Protocol, *,
                        fixed_diag_t=None) -> LiftedRisVariable:
    """Nearest coupling-feasible rank-one anchor: principal component per side,
    diagonals renormalized (mode switching: rounded on/off)."""
    m = lifted.n_elements
    phases = []
    rhos = []
    for psi in (lifted.psi_t, lifted.psi_r):
        evals, vecs = np.linalg.eigh(psi)
        u = vecs[:, -1] * np.sqrt(max(evals[-1], 0.0))
        ref = u[m]
        u = u / ref if np.abs(ref) > 1e-12 else np.zeros(m + 1, dtype=complex)
        phases.append(np.angle(u[:m]))
        rhos.append(np.clip(np.abs(u[:m]) ** 2, 0.0, 1.0))
    rho_t, rho_r = rhos
    if fixed_diag_t is not None:
        rho_t = np.asarray(fixed_diag_t, dtype=float)
    else:
        total = rho_t + rho_r
        rho_t = np.where(total > 1e-12, rho_t / np.where(total > 1e-12, total, 1.0), 0.5)
        if protocol == Protocol.MS:
            rho_t = (rho_t >= 0.5).astype(float)
    return lifted_from_diag(rho_t, phases[0], 1.0 - rho_t, phases[1])


def optimize_surface_block(lc: LiftedCoefficients, cfg: SystemConfig,
                           init: LiftedRisVariable, *, fixed_diag_t=None,
                           options: RisSolveOptions | None = None,
                           explore: bool = True) -> DcOutcome:
    """Full surface update: uncapped MM exploration, rank-one consolidation,
    then the strictly capped DC loop whose output honors every cap."""
    opts = options or RisSolveOptions()
    anchor = init
    if explore and opts.explore_iters > 0:
        explored = dc_outer_loop(lc, cfg, init, fixed_diag_t=fixed_diag_t,
                                 options=opts, eps_rank=np.inf,
                                 max_iters=opts.explore_iters,
                                 rel_tol=opts.explore_rel_tol)
        candidate = rank_one_projection(explored.lifted, cfg.protocol,
                                        fixed_diag_t=fixed_diag_t)
        if lifted_objective(lc, candidate) >= lifted_objective(lc, anchor):
            anchor = candidate
    return dc_outer_loop(lc, cfg, anchor, fixed_diag_t=fixed_diag_t, options=opts)


def refine_state(channels: ChannelSet, beamformers, powers, noise_w: float,
                 state: StarRisState, *, fixed_amp_t=None,
                 max_steps: int = 60) -> StarRisState:
    """Ascent on the true sum rate directly over the physical coefficients.

    The lifted relaxation couples the two sides through the matrix diagonals,
    which overstates interior amplitude splits relative to the physical
    amplitude coupling; this pass repairs that bias locally. Amplitudes move
    only under the continuous protocol (mode switching and frozen patterns
    keep them fixed and refine phases alone). Never returns a worse state.
    """
    v = np.asarray(getattr(beamformers, "v", beamformers), dtype=complex)
    powers = np.asarray(powers, dtype=float)
    h_s, g_mat = channels.h_s, channels.g_mat
    spaces = channels.spaces()
    w = (v @ g_mat.T).conj()
    rows = np.einsum("km,jm->kjm", w, h_s)          # (K, K, M)
    d = v.conj() @ channels.h_d.T
    noise = noise_w * np.linalg.norm(v, axis=1) ** 2
    m = channels.n_elements
    side_of = spaces  # alias: X(j) per transmitting user j

    amps_free = fixed_amp_t is None and state.protocol != Protocol.MS
    # Parameterize the energy split by an angle: coefficient magnitudes
    # (sin xi, cos xi) conserve energy with bounded derivatives everywhere,
    # including the on/off corners.
    xi = np.arcsin(np.sqrt(np.clip(np.array(state.amp_t), 0.0, 1.0)))
    phi = np.array(state.phases_t)
    psi = np.array(state.phases_r)
    half_pi = 0.5 * np.pi

    def value_and_grads(xi, phi, psi):
        u_t = np.sin(xi)
        u_r = np.cos(xi)
        c = np.stack([u_t * np.exp(1j * phi), u_r * np.exp(1j * psi)])
        e = d + np.einsum("kjm,jm->kj", rows, c[side_of])
        x = (powers[None, :] * np.abs(e) ** 2).sum(axis=1) + noise
        y = x - powers * np.abs(np.diagonal(e)) ** 2
        if np.any(x <= 0) or np.any(y <= 0):
            return -np.inf, None, None, None, None
        val = float(np.sum(np.log(x) - np.log(y)))
        # d f / d conj(e_kj), then chain through the linear map onto c.
        s = powers[None, :] * e / x[:, None]
        off = powers[None, :] * e / y[:, None]
        np.fill_diagonal(off, 0.0)
        de = s - off
        g_c = np.zeros((2, m), dtype=complex)
        for side in range(2):
            cols = side_of == side
            g_c[side] = np.einsum("kj,kjm->m", de[:, cols], rows[:, cols, :].conj())
        proj_t = np.real(g_c[0] * np.exp(-1j * phi))
        proj_r = np.real(g_c[1] * np.exp(-1j * psi))
        g_xi = 2.0 * (proj_t * u_r - proj_r * u_t)
        g_phi = 2.0 * u_t * np.imag(g_c[0] * np.exp(-1j * phi))
        g_psi = 2.0 * u_r * np.imag(g_c[1] * np.exp(-1j * psi))
        return val, g_xi, g_phi, g_psi, g_c

    def realign_dead(xi, phi, psi, g_c):
        # A side at zero amplitude has no phase gradient, so a plain ascent
        # can never discover that reactivating the element pays off once its
        # phase is aligned. Pointing dead phases along the complex gradient
        # costs nothing and exposes the true amplitude gradient.
        if not amps_free:
            return phi, psi
        dead_t = np.sin(xi) < 1e-3
        dead_r = np.cos(xi) < 1e-3
        if np.any(dead_t):
            phi = np.where(dead_t, np.angle(g_c[0]), phi)
        if np.any(dead_r):
            psi = np.where(dead_r, np.angle(g_c[1]), psi)
        return phi, psi

    val, g_xi, g_phi, g_psi, g_c = value_and_grads(xi, phi, psi)
    if g_xi is None:
        return state
    phi, psi = realign_dead(xi, phi, psi, g_c)
    val, g_xi, g_phi, g_psi, g_c = value_and_grads(xi, phi, psi)
    step = 0.5
    for _ in range(max_steps):
        moved = False
        while step > 1e-12:
            xi_new = np.clip(xi + step * g_xi, 0.0, half_pi) if amps_free else xi
            phi_new = phi + step * g_phi
            psi_new = psi + step * g_psi
            cand = value_and_grads(xi_new, phi_new, psi_new)
            if cand[0] >= val:
                moved = True
                break
            step *= 0.5
        if not moved:
            break
        gain = cand[0] - val
        xi, phi, psi = xi_new, phi_new, psi_new
        val, g_xi, g_phi, g_psi, g_c = cand
        phi2, psi2 = realign_dead(xi, phi, psi, g_c)
        realigned = value_and_grads(xi, phi2, psi2)
        if realigned[0] >= val:
            phi, psi = phi2, psi2
            val, g_xi, g_phi, g_psi, g_c = realigned
        step = min(step * 1.3, 16.0)
        if gain < 1e-9 * (1.0 + abs(val)):
            break
    amp_t = np.asarray(fixed_amp_t, dtype=float) if fixed_amp_t is not None \
        else np.clip(np.sin(xi) ** 2, 0.0, 1.0)
    return StarRisState(phases_t=phi, phases_r=psi, amp_t=amp_t,
                        amp_r=1.0 - amp_t, protocol=state.protocol)


# -- state extraction -----------------------------------------------------


def extract_state(lifted: LiftedRisVariable, protocol: Protocol = Protocol.ES, *,
                  fixed_amp_t: np.ndarray | None = None) -> StarRisState:
    """Recover a physical surface state from a (near) rank-one lifted pair.

    The principal eigenvector of each side is rotated/scaled so its reference
    entry equals one; squared entry magnitudes become the energy splits,
    renormalized so the two sides sum to one per element. Mode switching
    rounds to on/off.
    """
    m = lifted.n_elements
    phases = []
    amps = []
    for psi in (lifted.psi_t, lifted.psi_r):
        u = principal_eigvec(psi)
        ref = u[m]
        if np.abs(ref) < 1e-6:
            raise ExtractionError("reference entry of the principal eigenvector is ~0")
        u = u / ref
        phases.append(np.mod(np.angle(u[:m]), 2 * np.pi))
        amps.append(np.minimum(np.abs(u[:m]) ** 2, 1.0))
    amp_t, amp_r = amps
    total = amp_t + amp_r
    drift = np.abs(total - 1.0)
    if np.any(drift > 1e-8):
        safe = np.where(total > 1e-12, total, 1.0)
        amp_t = np.where(total > 1e-12, amp_t / safe, 0.5)
        amp_r = np.where(total > 1e-12, amp_r / safe, 0.5)
    if fixed_amp_t is not None:
        amp_t = np.asarray(fixed_amp_t, dtype=float)
        amp_r = 1.0 - amp_t
    elif protocol == Protocol.MS:
        on = amp_t >= amp_r
        amp_t = on.astype(float)
        amp_r = 1.0 - amp_t
    return StarRisState(phases_t=phases[0], phases_r=phases[1],
                        amp_t=amp_t, amp_r=amp_r, protocol=protocol)


# -- instance export (consumed by the external validation harness) --------


def _cplx(arr: np.ndarray):
    arr = np.asarray(arr, dtype=complex)
    return np.stack([arr.real, arr.imag], axis=-1).tolist()


def export_instance_doc(lc: LiftedCoefficients, cfg: SystemConfig,
                        anchor: LiftedRisVariable,
                        solution: LiftedRisVariable | None = None,
                        objective: float | None = None) -> dict:
    """JSON-serializable dump of one convex surface subproblem."""
    doc = {
        "schema": "ris_subproblem_v1",
        "m_elements": lc.n_elements,
        "n_users": lc.n_users,
        "protocol": cfg.protocol.value,
        "spaces": lc.spaces.tolist(),
        "powers": lc.powers.tolist(),
        "noise_terms": lc.noise_terms.tolist(),
        "d": _cplx(lc.d),
        "q": _cplx(lc.q),
        "eps_rank": cfg.eps_rank,
        "eps_binary": cfg.binary_tol,
        "anchor_psi_t": _cplx(anchor.psi_t),
        "anchor_psi_r": _cplx(anchor.psi_r),
    }
    if solution is not None:
        doc["primary"] = {
            "objective": float(objective) if objective is not None else None,
            "psi_t": _cplx(solution.psi_t),
            "psi_r": _cplx(solution.psi_r),
        }
    return doc


def write_instance(doc: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh)
