"""Conic subproblem layer: program container, reference IPM, optional cvxpy backend."""

from __future__ import annotations

from dataclasses import dataclass

from .program import (
    ConicProgram,
    ConicSolution,
    FeasibilityReport,
    ProgramBuilder,
    ProgramError,
    SocBlock,
    check_feasibility,
    dump,
    validate_program,
)


@dataclass(frozen=True)
class SolverTolerances:
    feas: float = 1e-8
    gap: float = 1e-8
    max_iter: int = 100


class SolverError(RuntimeError):
    """Raised when a backend cannot be used or fails unexpectedly."""


def _solve_reference(program: ConicProgram, tols: SolverTolerances) -> ConicSolution:
    from .ipm import solve_ipm

    return solve_ipm(program, tol_feas=tols.feas, tol_gap=tols.gap, max_iter=tols.max_iter)


def _solve_cvxpy(program: ConicProgram, tols: SolverTolerances) -> ConicSolution:
    from .cvxpy_backend import solve_cvxpy

    return solve_cvxpy(program, tols)


BACKENDS = {
    "reference": _solve_reference,
    "cvxpy": _solve_cvxpy,
}


def solve(
    program: ConicProgram,
    backend: str = "reference",
    tolerances: SolverTolerances | None = None,
) -> ConicSolution:
    """Solve a conic program with the named backend."""
    if backend not in BACKENDS:
        raise SolverError(f"unknown backend {backend!r}; available: {sorted(BACKENDS)}")
    tols = tolerances or SolverTolerances()
    return BACKENDS[backend](program, tols)


__all__ = [
    "BACKENDS",
    "ConicProgram",
    "ConicSolution",
    "FeasibilityReport",
    "ProgramBuilder",
    "ProgramError",
    "SocBlock",
    "SolverError",
    "SolverTolerances",
    "check_feasibility",
    "dump",
    "solve",
    "validate_program",
]
