"""Outer solve loop: subproblem, radius adaptation, convergence detection.

Each iteration assembles the convex subproblem around the current iterate,
solves it, measures the voltage step Δv = max(|ΔV^R| + |ΔV^I|), adapts the
squared trust radius (contract by alpha when Δv < tau, expand by beta
otherwise, clamped to [delta2_min, delta2_max]), and re-linearises at the
subproblem solution.  Convergence is declared when both Δv and the radius
used for the accepted iterate fall below their thresholds.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import conic
from .convex import (
    LinearisationPoint,
    McCormickBounds,
    bilinear_products,
    build_subproblem,
    default_bounds,
    extract_currents,
    extract_generation,
    extract_m,
    extract_voltages,
)
from .netmodel import (
    BusPhaseIndex,
    Network,
    YBus,
    assemble_ybus,
    build_index,
    reference_voltages,
    slack_voltages,
)


class ScpError(RuntimeError):
    """Unrecoverable failure of the outer loop (subproblem infeasible, solver breakdown)."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


@dataclass(frozen=True)
class TrustRegionConfig:
    """Radius controller parameters.

    alpha/tau defaults are tuned so the contraction cascade lands below the
    stopping threshold within a ten-iteration budget and the controller does
    not oscillate on the first (largest) voltage step; both are configurable.
    """

    delta2_init: float = 1e-1
    delta2_min: float = 1e-10
    delta2_max: float = 1.0
    alpha: float = 0.1
    beta: float = 2.0
    tau: float = 2e-2

    def validate(self) -> None:
        if not (0.0 < self.delta2_min <= self.delta2_init <= self.delta2_max):
            raise ValueError("need 0 < delta2_min <= delta2_init <= delta2_max")
        if not (0.0 < self.alpha < 1.0 <= self.beta):
            raise ValueError("need 0 < alpha < 1 <= beta")
        if not self.tau > 0.0:
            raise ValueError("need tau > 0")


@dataclass(frozen=True)
class IterationRecord:
    k: int
    objective: float
    dv: float
    delta2: float  # squared radius the subproblem was solved with
    max_bilinear_residual: float
    status: str
    solve_time_s: float


@dataclass
class ScpState:
    k: int
    lin_point: LinearisationPoint
    delta2: float
    dv: float
    history: list[IterationRecord]


@dataclass(frozen=True)
class Solution:
    """Final iterate plus everything needed to verify it independently."""

    V: np.ndarray
    I: np.ndarray
    pg: np.ndarray
    qg: np.ndarray
    m: np.ndarray  # (4, n_ph) auxiliaries: rows m^RR, m^RI, m^IR, m^II
    objective: float
    converged: bool
    iterations: int
    delta2_final: float
    dv_final: float
    max_bilinear_residual: float
    lin_point: LinearisationPoint  # point the final iterate was linearised around
    history: tuple[IterationRecord, ...]


def flat_start(network: Network, index: BusPhaseIndex | None = None, ybus: YBus | None = None) -> LinearisationPoint:
    """Nominal phasors everywhere (slack pinned to its record), I = Y V."""
    index = index if index is not None else build_index(network)
    ybus = ybus if ybus is not None else assemble_ybus(network, index)
    V = reference_voltages(network, index)
    V[ybus.slack] = slack_voltages(network, index)
    return LinearisationPoint(V=V, I=ybus.matrix @ V)


def voltage_deviation(V_k: np.ndarray, V_km1: np.ndarray) -> float:
    """max over nodes of |ΔV^R| + |ΔV^I|."""
    if V_k.shape != V_km1.shape:
        raise ValueError(f"voltage iterates have different shapes {V_k.shape} vs {V_km1.shape}")
    if V_k.size == 0:
        return 0.0
    return float(np.max(np.abs(V_k.real - V_km1.real) + np.abs(V_k.imag - V_km1.imag)))


def update_radius(delta2: float, dv: float, config: TrustRegionConfig) -> float:
    """Contract when the step was small, expand otherwise; clamp either way."""
    if dv < config.tau:
        return max(config.delta2_min, config.alpha * delta2)
    return min(config.delta2_max, config.beta * delta2)


def injections_from_solution(solution: Solution) -> np.ndarray:
    """Net complex nodal injections implied by the auxiliaries (the enforced balance)."""
    mrr, mri, mir, mii = solution.m
    return (mrr + mii) + 1j * (mir - mri)


def solve_opf(
    network: Network,
    config: TrustRegionConfig | None = None,
    *,
    dv_tol: float = 1e-3,
    delta2_tol: float = 1e-6,
    max_iter: int = 50,
    backend: str = "reference",
    bounds: McCormickBounds | None = None,
    global_cone: bool = False,
    solver_tolerances: conic.SolverTolerances | None = None,
    on_iteration=None,
) -> Solution:
    """Run the full loop from flat start; returns a Solution (flagged if not converged)."""
    config = config if config is not None else TrustRegionConfig()
    config.validate()
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if backend not in conic.BACKENDS:
        raise ValueError(f"unknown conic backend {backend!r}; available: {sorted(conic.BACKENDS)}")
    index = build_index(network)
    ybus = assemble_ybus(network, index)
    if bounds is None:
        bounds = default_bounds(network, index)
    vslack = slack_voltages(network, index)

    state = ScpState(k=0, lin_point=flat_start(network, index, ybus), delta2=config.delta2_init, dv=np.inf, history=[])
    converged = False
    last = None  # (V, I, m, pg, qg, objective, delta2_used, dv, resid, prev_lin)

    for k in range(1, max_iter + 1):
        d2_try = state.delta2
        csol = None
        for attempt in (0, 1):
            program, vmap = build_subproblem(
                network, ybus, state.lin_point, bounds, d2_try, index=index, global_cone=global_cone
            )
            t0 = time.perf_counter()
            csol = conic.solve(program, backend=backend, tolerances=solver_tolerances)
            dt = time.perf_counter() - t0
            if csol.status == "optimal":
                break
            if attempt == 0:
                # one feasibility-restoration retry with an expanded radius
                d2_try = min(config.delta2_max, config.beta * d2_try)
        if csol is None or csol.status != "optimal" or csol.x is None:
            raise ScpError(
                f"subproblem not solved at iteration {k}: {csol.status}: {csol.message}",
                iteration=k,
            )

        V = extract_voltages(csol.x, vmap)
        I = extract_currents(csol.x, vmap)
        m = extract_m(csol.x, vmap)
        pg, qg = extract_generation(csol.x, vmap)
        dv = voltage_deviation(V, state.lin_point.V)
        resid = float(np.max(np.linalg.norm(m - bilinear_products(V, I), axis=0)))
        record = IterationRecord(
            k=k,
            objective=float(csol.objective),
            dv=dv,
            delta2=d2_try,
            max_bilinear_residual=resid,
            status=csol.status,
            solve_time_s=dt,
        )
        state.history.append(record)
        if on_iteration is not None:
            on_iteration(record)

        prev_lin = state.lin_point
        last = (V, I, m, pg, qg, float(csol.objective), d2_try, dv, resid, prev_lin)
        v_next = V.copy()
        v_next[ybus.slack] = vslack  # keep the pinned values exact across iterations
        state.k = k
        state.dv = dv
        state.lin_point = LinearisationPoint(V=v_next, I=I.copy())
        if dv < dv_tol and d2_try < delta2_tol:
            converged = True
            break
        state.delta2 = update_radius(d2_try, dv, config)

    V, I, m, pg, qg, objective, d2_used, dv, resid, prev_lin = last
    return Solution(
        V=V,
        I=I,
        pg=pg,
        qg=qg,
        m=m,
        objective=objective,
        converged=converged,
        iterations=state.k,
        delta2_final=d2_used,
        dv_final=dv,
        max_bilinear_residual=resid,
        lin_point=prev_lin,
        history=tuple(state.history),
    )
