"""Independent three-phase power-flow oracle (fixed-point current injection).

Solves I = Y V together with S = V conj(I) for the non-slack nodes by
iterating V_L <- Y_LL^{-1} (conj(S_L / V_L) - Y_LS V_S).  Used to verify
optimizer output; it shares no code path with the convex subproblem machinery
beyond the Y-bus itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import splu

from .netmodel import (
    BusPhaseIndex,
    Network,
    YBus,
    assemble_ybus,
    build_index,
    reference_voltages,
    slack_voltages,
)


class PowerFlowError(RuntimeError):
    """Singular system, zero-voltage division, or divergence."""


@dataclass(frozen=True)
class OracleResult:
    converged: bool
    V: np.ndarray  # complex, all bus-phase nodes
    I: np.ndarray
    iterations: int
    residual: float  # max power-balance mismatch over non-slack nodes, p.u.


def load_injections(network: Network, index: BusPhaseIndex) -> np.ndarray:
    """Per-node complex injection from loads alone: -S^D (zero where no load)."""
    s = np.zeros(index.n_ph, dtype=complex)
    for load in network.loads:
        s[index.node(load.bus, load.phase)] -= load.s
    return s


def _flat_profile(network: Network, index: BusPhaseIndex) -> np.ndarray:
    v = reference_voltages(network, index)
    nodes = list(index.nodes_of(network.slack_bus))
    v[nodes] = slack_voltages(network, index)
    return v


def solve_power_flow(
    network: Network,
    injections: np.ndarray | None = None,
    V_init: np.ndarray | None = None,
    tol: float = 1e-10,
    max_iter: int = 200,
    *,
    index: BusPhaseIndex | None = None,
    ybus: YBus | None = None,
) -> OracleResult:
    """Run the fixed-point iteration to the given voltage-update tolerance.

    ``injections`` is the specified net complex power S = S^G - S^D per node
    (slack entries are ignored); defaults to the network's loads.  Divergence
    is declared when the update norm grows for 5 consecutive iterations.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if index is None:
        index = build_index(network)
    if ybus is None:
        ybus = assemble_ybus(network, index)
    Y = ybus.matrix
    L, S_nodes = ybus.nonslack, ybus.slack
    s_spec = load_injections(network, index) if injections is None else np.asarray(injections, dtype=complex)

    V = _flat_profile(network, index) if V_init is None else np.array(V_init, dtype=complex)
    Y_LL = Y[np.ix_(L, L)].tocsc()
    Y_LS = Y[np.ix_(L, S_nodes)].tocsc()
    try:
        lu = splu(Y_LL)
    except RuntimeError as exc:
        raise PowerFlowError(f"singular non-slack admittance block: {exc}") from exc
    b_slack = Y_LS @ V[S_nodes]

    converged = False
    iterations = 0
    prev_step = np.inf
    growth = 0
    for iterations in range(1, max_iter + 1):
        if np.any(V[L] == 0):
            raise PowerFlowError("zero voltage encountered in fixed-point division")
        V_new = lu.solve(np.conj(s_spec[L] / V[L]) - b_slack)
        step = float(np.max(np.abs(V_new - V[L]))) if len(L) else 0.0
        if not np.isfinite(step):
            raise PowerFlowError(f"divergence: non-finite iterate at iteration {iterations}")
        V[L] = V_new
        if step < tol:
            converged = True
            break
        growth = growth + 1 if step > prev_step else 0
        if growth >= 5:
            raise PowerFlowError(
                f"divergence: update norm grew for 5 consecutive iterations "
                f"(iteration {iterations}, step {step:.3e})"
            )
        prev_step = step

    I = Y @ V
    mismatch = s_spec - V * np.conj(I)
    residual = float(np.max(np.abs(mismatch[L]))) if len(L) else 0.0
    return OracleResult(converged, V, I, iterations, residual)


def power_balance_residual(
    network: Network,
    V: np.ndarray,
    injections: np.ndarray | None = None,
    *,
    index: BusPhaseIndex | None = None,
    ybus: YBus | None = None,
) -> np.ndarray:
    """Per-node complex residual S^spec - V conj((Y V)).

    ``injections`` defaults to the load-only view -S^D (zero at the slack);
    pass the solved S^G - S^D to check an optimizer's operating point.
    """
    if index is None:
        index = build_index(network)
    if ybus is None:
        ybus = assemble_ybus(network, index)
    s_spec = load_injections(network, index) if injections is None else np.asarray(injections, dtype=complex)
    V = np.asarray(V, dtype=complex)
    return s_spec - V * np.conj(ybus.matrix @ V)
