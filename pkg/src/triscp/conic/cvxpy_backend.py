"""Optional cvxpy translation of the conic program (install the `cvxpy` extra).

Kept behind the same ConicProgram/ConicSolution contract as the reference
solver so the two can be swapped or cross-checked in tests.
"""

from __future__ import annotations

import numpy as np

from .program import ConicProgram, ConicSolution, check_feasibility


def solve_cvxpy(program: ConicProgram, tolerances) -> ConicSolution:
    try:
        import cvxpy as cp
    except ImportError as exc:  # pragma: no cover - exercised only without the extra
        raise RuntimeError("cvxpy backend requested but cvxpy is not installed") from exc

    x = cp.Variable(program.n)
    constraints = []
    if program.A.shape[0]:
        constraints.append(program.A @ x == program.b)
    if program.G.shape[0]:
        constraints.append(program.G @ x <= program.h)
    fin = np.isfinite(program.lb)
    if fin.any():
        constraints.append(x[fin] >= program.lb[fin])
    fin = np.isfinite(program.ub)
    if fin.any():
        constraints.append(x[fin] <= program.ub[fin])
    for blk in program.cones:
        constraints.append(cp.SOC(blk.c @ x + blk.d, blk.A @ x + blk.b))
    objective = cp.Minimize(cp.quad_form(x, cp.psd_wrap(program.Q)) + program.c @ x)

    problem = cp.Problem(objective, constraints)
    solved = False
    for solver in ("CLARABEL", "ECOS", "SCS"):
        if solver not in cp.installed_solvers():
            continue
        try:
            problem.solve(solver=solver)
            solved = True
            break
        except cp.SolverError:
            continue
    if not solved:
        problem.solve()

    if problem.status in ("optimal", "optimal_inaccurate") and x.value is not None:
        xv = np.asarray(x.value, dtype=float)
        report = check_feasibility(program, xv)
        return ConicSolution(
            "optimal",
            xv,
            program.objective_value(xv),
            report.max_violation,
            None,
            None,
            0,
            f"cvxpy status {problem.status}",
        )
    status = "infeasible" if "infeasible" in str(problem.status) else "numerical_failure"
    return ConicSolution(status, None, None, np.inf, None, None, 0, f"cvxpy status {problem.status}")
