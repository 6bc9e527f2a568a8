"""Re-solve the exported convex programs with a general-purpose conic solver."""

from __future__ import annotations

from dataclasses import dataclass

import cvxpy as cp
import numpy as np

from .instances import EnergyInstance, RisInstance

LN2 = np.log(2.0)


@dataclass
class OracleResult:
    objective: float
    status: str
    primary_objective: float | None
    rel_gap: float | None
    primary_exceeds_by: float | None
    constraint_violation: float

    def agrees(self, rel_tol: float = 1e-3, exceed_tol: float = 1e-5) -> bool:
        if self.primary_objective is None or not np.isfinite(self.objective):
            return False
        scale = max(abs(self.objective), 1e-9)
        return (abs(self.primary_objective - self.objective) <= rel_tol * scale
                and self.primary_objective <= self.objective + exceed_tol * scale)


def _principal_eigvec(mat: np.ndarray) -> np.ndarray:
    _, vecs = np.linalg.eigh(mat)
    return vecs[:, -1]


def solve_ris_oracle(inst: RisInstance, solver: str = "SCS") -> OracleResult:
    """Solve the anchored surface subproblem exactly as exported."""
    n = inst.m_elements + 1
    m = inst.m_elements
    psis = [cp.Variable((n, n), hermitian=True) for _ in range(2)]
    anchors = [inst.anchor_psi_t, inst.anchor_psi_r]

    # Anchored data: interference denominators and their gradients.
    dabs2 = np.abs(inst.d) ** 2
    anchor_terms = np.empty((inst.n_users, inst.n_users))
    for k in range(inst.n_users):
        for j in range(inst.n_users):
            psi_a = anchors[inst.spaces[j]]
            anchor_terms[k, j] = inst.powers[j] * (
                np.real(np.trace(inst.q[k, j] @ psi_a)) + dabs2[k, j])
    y_anchor = anchor_terms.sum(axis=1) - np.diagonal(anchor_terms) \
        + inst.noise_terms

    objective = 0
    for k in range(inst.n_users):
        x_k = inst.noise_terms[k]
        f2_lin = np.log2(y_anchor[k])
        for j in range(inst.n_users):
            side = inst.spaces[j]
            term = inst.powers[j] * (
                cp.real(cp.trace(inst.q[k, j] @ psis[side])) + dabs2[k, j])
            x_k = x_k + term
            if j != k:
                anchor_val = anchor_terms[k, j]
                f2_lin = f2_lin + (term - anchor_val) / (LN2 * y_anchor[k])
        objective = objective + cp.log(x_k) / LN2 - f2_lin

    cons = []
    diag_t = cp.real(cp.diag(psis[0]))
    diag_r = cp.real(cp.diag(psis[1]))
    cons += [psis[0] >> 0, psis[1] >> 0]
    cons += [diag_t[m] == 1, diag_r[m] == 1]
    cons += [diag_t[:m] + diag_r[:m] == 1]
    cons += [diag_t[:m] >= 0, diag_t[:m] <= 1, diag_r[:m] >= 0, diag_r[:m] <= 1]
    for side in range(2):
        z = _principal_eigvec(anchors[side])
        a_mat = np.eye(n) - np.outer(z, z.conj())
        cons.append(cp.real(cp.trace(a_mat @ psis[side])) <= inst.eps_rank)
    if inst.protocol == "ms":
        for side, diag in ((0, diag_t), (1, diag_r)):
            rho_a = np.real(np.diagonal(anchors[side]))[:m]
            cons.append(cp.multiply(1.0 - 2.0 * rho_a, diag[:m])
                        + rho_a ** 2 <= inst.eps_binary)

    problem = cp.Problem(cp.Maximize(objective), cons)
    problem.solve(solver=solver, verbose=False)
    value = float(problem.value) if problem.value is not None else np.nan

    violation = 0.0
    if psis[0].value is not None:
        for side in range(2):
            sol = psis[side].value
            violation = max(violation, -float(np.linalg.eigvalsh(sol)[0]))
            violation = max(violation, float(np.max(np.abs(
                np.real(np.diagonal(sol))[:m]
                + np.real(np.diagonal(psis[1 - side].value))[:m] - 1.0))) if side == 0 else 0.0)

    rel = None
    exceeds = None
    if inst.primary_objective is not None and np.isfinite(value):
        scale = max(abs(value), 1e-9)
        rel = abs(inst.primary_objective - value) / scale
        exceeds = (inst.primary_objective - value) / scale
    return OracleResult(objective=value, status=problem.status,
                        primary_objective=inst.primary_objective,
                        rel_gap=rel, primary_exceeds_by=exceeds,
                        constraint_violation=violation)


def solve_energy_oracle(inst: EnergyInstance, solver: str = "ECOS") -> OracleResult:
    """Solve the anchored partition subproblem exactly as exported."""
    k_users = inst.n_users
    a = cp.Variable(k_users)
    w = inst.gains * inst.e_tilde[None, :]
    den_anchor = w @ inst.anchor_a + inst.noise_terms \
        - np.diagonal(w) * inst.anchor_a
    bw = inst.rate_bandwidth_hz

    objective = 0
    for k in range(k_users):
        x_k = inst.noise_terms[k] + w[k] @ a
        r2_lin = bw * np.log2(den_anchor[k])
        for i in range(k_users):
            if i != k:
                r2_lin = r2_lin + (bw / LN2) * w[k, i] * (a[i] - inst.anchor_a[i]) \
                    / den_anchor[k]
        objective = objective + bw * cp.log(x_k) / LN2 - r2_lin \
            + inst.local_scale[k] * cp.power(1.0 - a[k], 1.0 / 3.0)
    cons = [a >= 0, a <= inst.a_max]
    problem = cp.Problem(cp.Maximize(objective), cons)
    try:
        problem.solve(solver=solver, verbose=False)
    except cp.error.SolverError:
        problem.solve(solver="SCS", verbose=False)
    value = float(problem.value) if problem.value is not None else np.nan

    violation = 0.0
    if a.value is not None:
        violation = max(float(np.max(-a.value, initial=0.0)),
                        float(np.max(a.value - inst.a_max, initial=0.0)))
    rel = None
    exceeds = None
    if inst.primary_objective is not None and np.isfinite(value):
        scale = max(abs(value), 1e-9)
        rel = abs(inst.primary_objective - value) / scale
        exceeds = (inst.primary_objective - value) / scale
    return OracleResult(objective=value, status=problem.status,
                        primary_objective=inst.primary_objective,
                        rel_gap=rel, primary_exceeds_by=exceeds,
                        constraint_violation=violation)
