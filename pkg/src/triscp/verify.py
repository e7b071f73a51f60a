"""Independent checks on solver output.

Three layers: (1) physics — feed the solution's enforced injections to the
fixed-point oracle and compare voltages; (2) algebra — the bilinear-residual
chain ||m - VI|| <= delta + ||(V - V^(k))(I - I^(k))|| node by node, with the
exact identity X - VI = -(V - V^(k))(I - I^(k)) checked to machine precision;
(3) optimality — brute-force reference optimum on tiny instances (dense grid
candidates, Newton-refined power-flow roots, or SLSQP polish when dispatchable
injections make the feasible set continuous).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .convex import bilinear_products, surrogate_values
from .netmodel import Network, assemble_ybus, build_index, reference_voltages, slack_voltages
from .pfcore import PowerFlowError, solve_power_flow, power_balance_residual
from .scp import Solution, injections_from_solution


class ReferenceTooLarge(ValueError):
    """Instance exceeds what the brute-force reference can certify."""


class ReferenceInfeasible(ValueError):
    """Exhaustive search found no operating point satisfying the limits."""


@dataclass(frozen=True)
class VerificationReport:
    """Machine-checked summary; serialized field names are a stable contract."""

    converged: bool
    delta_final: float
    power_balance_residual_max: float
    power_balance_residual_mean: float
    voltage_bound_violation_max: float
    ohm_residual_max: float
    bilinear_residual_max: float
    surrogate_gap_max: float
    triangle_slack_min: float
    identity_error_max: float
    oracle_converged: bool
    oracle_iterations: int
    voltage_error_max: float
    voltage_error_mean: float
    optimality_gap_pct: float | None

    def to_json_dict(self) -> dict:
        out = {}
        for key, value in asdict(self).items():
            if isinstance(value, (bool, int)) or value is None:
                out[key] = value
            else:
                out[key] = float(value)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)


def optimality_gap(scp_objective: float, reference_objective: float) -> float:
    """Percent gap 100 |scp - ref| / max(|ref|, 1e-12)."""
    return 100.0 * abs(scp_objective - reference_objective) / max(abs(reference_objective), 1e-12)


def verify_solution(
    network: Network,
    solution: Solution,
    oracle_tol: float = 1e-10,
    reference_objective: float | None = None,
) -> VerificationReport:
    """Recompute everything the solver claims, from the network data alone."""
    index = build_index(network)
    ybus = assemble_ybus(network, index)
    n = index.n_ph
    if solution.V.shape != (n,) or solution.I.shape != (n,) or solution.m.shape != (4, n):
        raise ValueError(
            f"solution dimensions {solution.V.shape}/{solution.I.shape}/{solution.m.shape} "
            f"do not match the network ({n} nodes)"
        )
    V = solution.V
    I = solution.I
    delta_final = math.sqrt(solution.delta2_final)

    ohm_residual = float(np.max(np.abs(I - ybus.matrix @ V))) if n else 0.0

    injections = injections_from_solution(solution)
    balance = power_balance_residual(network, V, injections, index=index, ybus=ybus)
    balance_ns = np.abs(balance[ybus.nonslack])
    balance_max = float(balance_ns.max()) if balance_ns.size else 0.0
    balance_mean = float(balance_ns.mean()) if balance_ns.size else 0.0

    bound_violation = 0.0
    for node in ybus.nonslack.tolist():
        bus = network.bus(index.pairs[node][0])
        mag = abs(V[node])
        bound_violation = max(bound_violation, bus.vmin - mag, mag - bus.vmax)
    bound_violation = max(bound_violation, 0.0)

    products = bilinear_products(V, I)
    bilinear = np.linalg.norm(solution.m - products, axis=0)
    X = surrogate_values(solution.lin_point, V, I)
    surrogate_gap = np.linalg.norm(solution.m - X, axis=0)
    dV = V - solution.lin_point.V
    dI = I - solution.lin_point.I
    cross = bilinear_products(dV, dI)
    identity_error = float(np.max(np.abs((X - products) + cross)))
    triangle_rhs = delta_final + np.linalg.norm(cross, axis=0)
    triangle_slack = triangle_rhs - bilinear

    oracle_converged = False
    oracle_iterations = 0
    verror_max = math.inf
    verror_mean = math.inf
    try:
        oracle = solve_power_flow(network, injections=injections, tol=oracle_tol, index=index, ybus=ybus)
        oracle_converged = oracle.converged
        oracle_iterations = oracle.iterations
        if oracle.converged:
            errs = np.abs(oracle.V - V)
            verror_max = float(errs.max()) if n else 0.0
            verror_mean = float(errs.mean()) if n else 0.0
    except PowerFlowError:
        pass

    gap = None
    if reference_objective is not None:
        gap = optimality_gap(solution.objective, reference_objective)

    return VerificationReport(
        converged=solution.converged,
        delta_final=delta_final,
        power_balance_residual_max=balance_max,
        power_balance_residual_mean=balance_mean,
        voltage_bound_violation_max=bound_violation,
        ohm_residual_max=ohm_residual,
        bilinear_residual_max=float(bilinear.max()) if n else 0.0,
        surrogate_gap_max=float(surrogate_gap.max()) if n else 0.0,
        triangle_slack_min=float(triangle_slack.min()) if n else 0.0,
        identity_error_max=identity_error,
        oracle_converged=oracle_converged,
        oracle_iterations=oracle_iterations,
        voltage_error_max=verror_max,
        voltage_error_mean=verror_mean,
        optimality_gap_pct=gap,
    )


# --- brute-force reference for tiny instances -------------------------------


def _grid_axes(vmax: float, k: int, fine_step: float) -> np.ndarray:
    """1-D axis for each rectangular component; resolution backs off with dimension."""
    step = {1: fine_step, 2: 0.05, 3: 0.15}[k]
    m = int(math.floor(vmax / step))
    return np.arange(-m, m + 1, dtype=float) * step


def _residual_chunk(u: np.ndarray, y_rows, v_slack_term: np.ndarray, s_spec: np.ndarray, k: int) -> np.ndarray:
    """|F| for a chunk of candidate points u of shape (chunk, 2k)."""
    V = u[:, :k] + 1j * u[:, k:]
    W = V @ y_rows.T + v_slack_term
    F = s_spec - V * np.conj(W)
    return np.linalg.norm(F, axis=1)


def _pf_jacobian(V_free: np.ndarray, W_free: np.ndarray, y_free: np.ndarray) -> np.ndarray:
    """Real Jacobian of [Re F; Im F] w.r.t. [vr; vi] for F = S - V conj(Y V)."""
    k = len(V_free)
    J = np.empty((2 * k, 2 * k))
    for j in range(k):
        col_a = -np.conj(y_free[:, j]) * V_free
        col_a[j] -= np.conj(W_free[j])
        col_b = 1j * np.conj(y_free[:, j]) * V_free
        col_b[j] -= 1j * np.conj(W_free[j])
        J[:k, j] = col_a.real
        J[k:, j] = col_a.imag
        J[:k, k + j] = col_b.real
        J[k:, k + j] = col_b.imag
    return J


def power_flow_roots(
    network: Network,
    *,
    grid_step: float = 1e-3,
    top_candidates: int = 400,
    newton_tol: float = 1e-12,
    max_free_nodes: int = 3,
    include_oracle_seed: bool = True,
) -> list[np.ndarray]:
    """All distinct power-flow solutions of a tiny load-only instance.

    Dense rectangular grid locates basins, Newton iteration with the analytic
    Jacobian polishes each candidate, duplicates are merged.  Returns full
    voltage vectors (slack entries pinned).  ``include_oracle_seed=False``
    restricts seeding to the grid, for cross-validating the fixed-point
    oracle against an independent search.
    """
    index = build_index(network)
    ybus = assemble_ybus(network, index)
    ns = ybus.nonslack.tolist()
    k = len(ns)
    v_full = np.zeros(index.n_ph, dtype=complex)
    v_full[ybus.slack] = slack_voltages(network, index)
    if k == 0:
        return [v_full]
    if k > max_free_nodes:
        raise ReferenceTooLarge(f"{k} non-slack nodes exceed the brute-force limit {max_free_nodes}")

    y = ybus.matrix.toarray()
    y_rows = y[np.ix_(ns, ns)]
    v_slack_term = y[ns, :] @ v_full  # contribution of the fixed slack voltages
    s_spec = np.zeros(k, dtype=complex)
    for load in network.loads:
        node = index.node(load.bus, load.phase)
        if node in ns:
            s_spec[ns.index(node)] -= load.s

    vmax = max(network.bus(index.pairs[i][0]).vmax for i in ns)
    axis = _grid_axes(vmax, k, grid_step)
    sizes = (len(axis),) * (2 * k)
    total = len(axis) ** (2 * k)

    # evaluate |F| over the grid in chunks, keep the most promising points
    chunk = 200_000
    best_vals = np.full(top_candidates, np.inf)
    best_pts = np.zeros((top_candidates, 2 * k))
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        coords = np.unravel_index(idx, sizes)
        block = np.column_stack([axis[c] for c in coords])
        vals = _residual_chunk(block, y_rows, v_slack_term, s_spec, k)
        merged_vals = np.concatenate([best_vals, vals])
        merged_pts = np.vstack([best_pts, block])
        order = np.argpartition(merged_vals, top_candidates - 1)[:top_candidates]
        best_vals = merged_vals[order]
        best_pts = merged_pts[order]

    # seed Newton with grid candidates plus the fixed-point oracle solution
    seeds = [best_pts[i] for i in np.argsort(best_vals)]
    if include_oracle_seed:
        try:
            pf = solve_power_flow(network, index=index, ybus=ybus)
            if pf.converged:
                seeds.insert(0, np.concatenate([pf.V[ns].real, pf.V[ns].imag]))
        except PowerFlowError:
            pass

    roots: list[np.ndarray] = []
    seen: set[tuple] = set()
    for seed in seeds:
        u = seed.copy()
        for _ in range(60):
            V_free = u[:k] + 1j * u[k:]
            W_free = y_rows @ V_free + v_slack_term
            F = s_spec - V_free * np.conj(W_free)
            err = np.concatenate([F.real, F.imag])
            if np.max(np.abs(err)) < newton_tol:
                break
            J = _pf_jacobian(V_free, W_free, y_rows)
            try:
                step = np.linalg.solve(J, err)
            except np.linalg.LinAlgError:
                break
            u = u - step
            if not np.isfinite(u).all() or np.max(np.abs(u)) > 10.0:
                break
        else:
            continue
        if not (np.isfinite(u).all() and np.isfinite(err).all() and np.max(np.abs(err)) < newton_tol):
            continue
        key = tuple(np.round(u, 6))
        if key in seen:
            continue
        seen.add(key)
        full = v_full.copy()
        full[ns] = u[:k] + 1j * u[k:]
        roots.append(full)
    return roots


def _reference_with_generators(network: Network, grid_step: float) -> tuple[float, np.ndarray]:
    """Single free node with dispatchable injection: 2-D grid + SLSQP polish."""
    from scipy.optimize import minimize

    index = build_index(network)
    ybus = assemble_ybus(network, index)
    ns = ybus.nonslack.tolist()
    if len(ns) != 1:
        raise ReferenceTooLarge("generator instances supported only with one non-slack node")
    node = ns[0]
    gens = [g for g in network.generators if index.node(g.bus, g.phase) == node]
    if len(gens) != 1:
        raise ReferenceTooLarge("expected exactly one generator on the free node")
    gen = gens[0]
    bus = network.bus(index.pairs[node][0])
    p_d = sum(l.p for l in network.loads if index.node(l.bus, l.phase) == node)
    q_d = sum(l.q for l in network.loads if index.node(l.bus, l.phase) == node)

    y = ybus.matrix.toarray()
    v_full = np.zeros(index.n_ph, dtype=complex)
    v_full[ybus.slack] = slack_voltages(network, index)
    vhat = reference_voltages(network, index)[node]

    def implied_generation(a: float, b: float) -> tuple[float, float]:
        v = v_full.copy()
        v[node] = a + 1j * b
        s = v[node] * np.conj(y[node, :] @ v)
        return s.real + p_d, s.imag + q_d

    axis = _grid_axes(bus.vmax, 1, grid_step)
    A, B = np.meshgrid(axis, axis, indexing="ij")
    Vg = A + 1j * B
    W = y[node, node] * Vg + y[node, :] @ v_full  # v_full is zero at the free node
    S = Vg * np.conj(W)
    Pg = S.real + p_d
    Qg = S.imag + q_d
    mag = np.abs(Vg)
    feas = (
        (Pg >= gen.pmin) & (Pg <= gen.pmax) & (Qg >= gen.qmin) & (Qg <= gen.qmax)
        & (mag >= bus.vmin) & (mag <= bus.vmax)
    )
    if not feas.any():
        raise ReferenceInfeasible("no feasible grid point for the generator instance")
    obj = np.abs(Vg - vhat) ** 2
    obj[~feas] = np.inf
    i0, j0 = np.unravel_index(np.argmin(obj), obj.shape)
    x0 = np.array([A[i0, j0], B[i0, j0]])

    res = minimize(
        lambda u: (u[0] - vhat.real) ** 2 + (u[1] - vhat.imag) ** 2,
        x0,
        method="SLSQP",
        constraints=[
            {"type": "ineq", "fun": lambda u: implied_generation(*u)[0] - gen.pmin},
            {"type": "ineq", "fun": lambda u: gen.pmax - implied_generation(*u)[0]},
            {"type": "ineq", "fun": lambda u: implied_generation(*u)[1] - gen.qmin},
            {"type": "ineq", "fun": lambda u: gen.qmax - implied_generation(*u)[1]},
            {"type": "ineq", "fun": lambda u: u[0] ** 2 + u[1] ** 2 - bus.vmin**2},
            {"type": "ineq", "fun": lambda u: bus.vmax**2 - u[0] ** 2 - u[1] ** 2},
        ],
        options={"ftol": 1e-14, "maxiter": 200},
    )
    u = res.x if res.success else x0
    best = float((u[0] - vhat.real) ** 2 + (u[1] - vhat.imag) ** 2)
    grid_best = float(obj[i0, j0])
    if grid_best < best:  # polish must never lose to its own seed
        u, best = x0, grid_best
    out = v_full.copy()
    out[node] = u[0] + 1j * u[1]
    return best, out


def reference_optimum_tiny(network: Network, grid_step: float = 1e-3) -> tuple[float, np.ndarray]:
    """Certified brute-force optimum for instances with at most 3 non-slack nodes.

    Load-only instances have a finite solution set (power-flow roots); the
    feasible root with the smallest objective is the optimum.  A dispatchable
    injection makes the feasible set continuous; that case is handled on a
    single free node by dense 2-D search plus local polish.
    """
    index = build_index(network)
    free_gens = [
        g for g in network.generators if network.slack_bus != g.bus
    ]
    if free_gens:
        return _reference_with_generators(network, grid_step)

    ybus = assemble_ybus(network, index)
    ns = ybus.nonslack.tolist()
    roots = power_flow_roots(network, grid_step=grid_step)
    if not roots:
        raise ReferenceInfeasible("no power-flow solution found by exhaustive search")
    vhat = reference_voltages(network, index)
    best_obj = math.inf
    best_v: np.ndarray | None = None
    for V in roots:
        feasible = all(
            network.bus(index.pairs[i][0]).vmin - 1e-9 <= abs(V[i]) <= network.bus(index.pairs[i][0]).vmax + 1e-9
            for i in ns
        )
        if not feasible:
            continue
        obj = float(np.sum(np.abs(V[ns] - vhat[ns]) ** 2))
        if obj < best_obj:
            best_obj = obj
            best_v = V
    if best_v is None:
        raise ReferenceInfeasible("power-flow solutions exist but all violate the voltage limits")
    return best_obj, best_v
