"""Solve a few small QPs with the active-set solver and inspect the KKT
diagnostics, cross-checking against exhaustive active-set enumeration."""

import numpy as np

from cbfguard.qp import QPProblem, check_strict_complementarity, solve, solve_by_enumeration

# min 1/2 v^2  subject to  v >= 1  (active constraint, multiplier 1)
prob = QPProblem(Q=[[1.0]], q=[0.0], G=[[-1.0]], h=[-1.0])
sol = solve(prob)
print("v >= 1:", sol.z_star, "mu =", sol.multipliers, "KKT residual =", sol.kkt_residual)
print("strict complementarity:", check_strict_complementarity(sol, prob))

# a random strictly convex problem vs. the enumeration oracle
rng = np.random.default_rng(7)
A = rng.normal(size=(4, 4))
prob = QPProblem(Q=A.T @ A + 0.5 * np.eye(4), q=rng.normal(size=4),
                 G=rng.normal(size=(6, 4)), h=rng.normal(size=4) @ rng.normal(size=(4, 6)) + 3.0)
sol, oracle = solve(prob), solve_by_enumeration(prob)
print("solver vs oracle gap:", np.max(np.abs(sol.z_star - oracle.z_star)))

# infeasible problems report the minimized worst violation
prob = QPProblem(Q=[[1.0]], q=[0.0], G=[[1.0], [-1.0]], h=[-1.0, -1.0])
sol = solve(prob)
print("infeasible certificate:", sol.status, "min worst violation =", sol.diagnostics["min_violation"])
