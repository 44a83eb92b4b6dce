"""Dense convex QP solver (primal active set) with KKT diagnostics.

Solves  min 1/2 z'Qz + q'z  s.t.  Gz <= h  for the small, strictly convex
programs assembled by the controller (a handful of variables, at most a
dozen rows). A phase-1 LP finds a feasible start; infeasibility is reported
with the minimized worst constraint violation as certificate.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linprog

DEFAULT_TOL = 1e-9
INFEASIBILITY_TOL = 1e-7
REGULARIZATION = 1e-10


class QPInputError(ValueError):
    """Raised for malformed problems (asymmetry, indefiniteness, bad shapes)."""


@dataclass(frozen=True)
class QPProblem:
    """Inequality-constrained quadratic program  min 1/2 z'Qz + q'z,  Gz <= h.

    trusted=True marks problems assembled by in-package code with a known
    symmetric positive-definite cost, skipping input validation and the
    solver's definiteness probe (a hot-loop cost).
    """

    Q: np.ndarray
    q: np.ndarray
    G: np.ndarray
    h: np.ndarray
    trusted: bool = False

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        q = np.asarray(self.q, dtype=float).ravel()
        G = np.asarray(self.G, dtype=float).reshape(-1, Q.shape[1]) if np.size(self.G) else np.zeros((0, Q.shape[1]))
        h = np.asarray(self.h, dtype=float).ravel()
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)
        if self.trusted:
            return
        if Q.shape[0] != Q.shape[1]:
            raise QPInputError(f"Q must be square, got {Q.shape}")
        if not np.allclose(Q, Q.T, atol=1e-12, rtol=0.0):
            raise QPInputError("Q must be symmetric (within 1e-12)")
        if q.shape[0] != Q.shape[0]:
            raise QPInputError(f"q length {q.shape[0]} does not match Q dimension {Q.shape[0]}")
        if G.shape[0] != h.shape[0]:
            raise QPInputError(f"G has {G.shape[0]} rows but h has {h.shape[0]} entries")

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def n_constraints(self) -> int:
        return self.G.shape[0]


@dataclass
class QPSolution:
    """Solver output: optimizer, multipliers, status and worst KKT residual.

    For status "infeasible", z_star holds the phase-1 point of minimum worst
    violation and kkt_residual that violation.
    """

    z_star: np.ndarray
    multipliers: np.ndarray
    status: str  # "optimal" | "infeasible"
    kkt_residual: float
    regularized: bool = False
    diagnostics: dict = field(default_factory=dict)


def _kkt_residual(problem: QPProblem, z: np.ndarray, mu: np.ndarray) -> float:
    stationarity = problem.Q @ z + problem.q
    if problem.n_constraints:
        stationarity = stationarity + problem.G.T @ mu
        slack = problem.G @ z - problem.h
        primal = max(0.0, float(np.max(slack)))
        dual = max(0.0, float(np.max(-mu))) if mu.size else 0.0
        comp = float(np.max(np.abs(mu * slack))) if mu.size else 0.0
    else:
        primal = dual = comp = 0.0
    return max(float(np.max(np.abs(stationarity))) if stationarity.size else 0.0, primal, dual, comp)


def _phase1_point(G: np.ndarray, h: np.ndarray):
    """Minimize the worst violation s over (z, s) with Gz - h <= s, s >= 0.

    Returns (z, s_min). s_min <= INFEASIBILITY_TOL means a feasible point.
    """
    m, n = G.shape
    if m == 0:
        return np.zeros(n), 0.0
    c = np.zeros(n + 1)
    c[-1] = 1.0
    A_ub = np.hstack([G, -np.ones((m, 1))])
    bounds = [(None, None)] * n + [(0.0, None)]
    res = linprog(c, A_ub=A_ub, b_ub=h, bounds=bounds, method="highs")
    if not res.success:
        raise QPInputError(f"phase-1 subproblem failed: {res.message}")
    return res.x[:n], float(res.x[-1])


def _solve_working_set(Q, q, G, h, active: list[int]):
    """KKT solve of the equality-constrained subproblem on the working set."""
    n = Q.shape[0]
    k = len(active)
    if k == 0:
        return np.linalg.solve(Q, -q), np.zeros(0)
    Ga = G[active]
    KKT = np.zeros((n + k, n + k))
    KKT[:n, :n] = Q
    KKT[:n, n:] = Ga.T
    KKT[n:, :n] = Ga
    rhs = np.concatenate([-q, h[active]])
    try:
        sol = np.linalg.solve(KKT, rhs)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(KKT, rhs, rcond=None)
    if not np.all(np.isfinite(sol)):
        sol, *_ = np.linalg.lstsq(KKT, rhs, rcond=None)
    return sol[:n], sol[n:]


def solve(problem: QPProblem, tol: float = DEFAULT_TOL, x0: Optional[np.ndarray] = None) -> QPSolution:
    """Solve the QP by the primal active-set method.

    Requires Q positive semidefinite; semidefinite Q is regularized by
    1e-10*I (flagged in the result). Deterministic: blocking-constraint
    ties break to the lowest index. A feasible x0, when supplied, skips the
    phase-1 subproblem (it does not change the optimum).
    """
    Q, q, G, h = problem.Q, problem.q, problem.G, problem.h
    n, m = problem.n, problem.n_constraints

    if problem.trusted:
        regularized = False
    else:
        eigmin = float(np.min(np.linalg.eigvalsh(Q))) if n else 0.0
        if eigmin < -1e-10:
            raise QPInputError(f"Q is indefinite (min eigenvalue {eigmin:.3e})")
        regularized = eigmin < 1e-12
        if regularized:
            Q = Q + REGULARIZATION * np.eye(n)

    if x0 is not None and (m == 0 or float(np.max(G @ x0 - h)) <= 0.0):
        z, worst = np.asarray(x0, dtype=float).copy(), 0.0
    else:
        z, worst = _phase1_point(G, h)
    if worst > INFEASIBILITY_TOL:
        return QPSolution(
            z_star=z,
            multipliers=np.zeros(m),
            status="infeasible",
            kkt_residual=worst,
            regularized=regularized,
            diagnostics={"min_violation": worst},
        )

    if m == 0:
        z = np.linalg.solve(Q, -q)
        mu = np.zeros(0)
        return QPSolution(z, mu, "optimal", _kkt_residual(problem, z, mu), regularized)

    # Primal active set (Nocedal & Wright 16.5). The working set holds
    # indices of constraints treated as equalities.
    feas_tol = max(tol, 1e-10)
    active: list[int] = []
    for i in range(m):
        if h[i] - G[i] @ z <= feas_tol and len(active) < n:
            active.append(i)

    mu_full = np.zeros(m)
    for _ in range(50 * (m + n) + 20):
        z_eq, mu_act = _solve_working_set(Q, q, G, h, active)
        p = z_eq - z
        if float(np.max(np.abs(p))) <= 1e-12:
            z = z_eq
            mu_full[:] = 0.0
            mu_full[active] = mu_act
            if not active or float(np.min(mu_act)) >= -feas_tol:
                mu_full = np.maximum(mu_full, 0.0)
                return QPSolution(z, mu_full, "optimal", _kkt_residual(problem, z, mu_full), regularized)
            # Drop the most negative multiplier, lowest index on ties.
            worst_val = np.min(mu_act)
            drop_pos = int(np.min([j for j, v in enumerate(mu_act) if v <= worst_val + 1e-15]))
            active.pop(drop_pos)
            continue
        # Step toward z_eq, stopping at the first blocking constraint.
        alpha = 1.0
        block = -1
        for i in range(m):
            if i in active:
                continue
            gi_p = G[i] @ p
            if gi_p > 1e-14:
                a_i = (h[i] - G[i] @ z) / gi_p
                if a_i < alpha - 1e-14:
                    alpha = max(a_i, 0.0)
                    block = i
        z = z + alpha * p
        if block >= 0:
            active.append(block)
            active.sort()
    raise QPInputError("active-set iteration limit exceeded")


def check_strict_complementarity(solution: QPSolution, problem: QPProblem, tol: float = 1e-8) -> bool:
    """True iff every constraint is strictly active (mu > tol) xor strictly
    inactive (slack > tol). Weakly active rows (both near zero) fail."""
    if solution.status != "optimal":
        raise QPInputError("strict complementarity is defined for optimal solutions only")
    slack = problem.h - problem.G @ solution.z_star if problem.n_constraints else np.zeros(0)
    for mu_i, s_i in zip(solution.multipliers, slack):
        if (mu_i > tol) == (s_i > tol):
            return False
    return True


def solve_by_enumeration(problem: QPProblem, tol: float = 1e-9) -> QPSolution:
    """Exhaustive active-set enumeration oracle.

    Solves the equality-constrained KKT system for every subset of
    constraints and keeps the feasible KKT point. Exponential in the row
    count; intended for cross-checking `solve` on problems with <= ~10 rows.
    """
    from itertools import combinations

    Q, q, G, h = problem.Q, problem.q, problem.G, problem.h
    n, m = problem.n, problem.n_constraints
    eigmin = float(np.min(np.linalg.eigvalsh(Q))) if n else 0.0
    if eigmin < 1e-12:
        Q = Q + REGULARIZATION * np.eye(n)

    best = None
    for k in range(0, min(n, m) + 1):
        for subset in combinations(range(m), k):
            active = list(subset)
            try:
                z, mu_act = _solve_working_set(Q, q, G, h, active)
            except np.linalg.LinAlgError:
                continue
            if not np.all(np.isfinite(z)):
                continue
            if m and float(np.max(G @ z - h)) > tol:
                continue
            if active and float(np.min(mu_act)) < -tol:
                continue
            mu = np.zeros(m)
            mu[active] = np.maximum(mu_act, 0.0)
            obj = 0.5 * z @ Q @ z + q @ z
            if best is None or obj < best[0] - 1e-15:
                best = (obj, z, mu)
    if best is None:
        z, worst = _phase1_point(G, h)
        return QPSolution(z, np.zeros(m), "infeasible", worst, diagnostics={"min_violation": worst})
    _, z, mu = best
    return QPSolution(z, mu, "optimal", _kkt_residual(problem, z, mu))
