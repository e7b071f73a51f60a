"""Self-contained primal-dual interior-point solver for QP + second-order cones.

Works on the standard conic form obtained by stacking the program's linear
inequalities, variable bounds, and cone blocks into  G x + s = h,  s in K,
where K is a product of a nonnegative orthant and second-order cones:

    minimize    0.5 x' P x + q' x
    subject to  A x = b,   G x + s = h,   s in K

Infeasible-start Mehrotra predictor-corrector with Nesterov-Todd scaling.
Each iteration computes the scaling point W (W z = W^{-1} s = lambda), then
factorises the reduced KKT matrix

    [ P + G' W^{-2} G   A' ]
    [ A                 0  ]

once with sparse LU and reuses it for the predictor and corrector solves.
Adequate for a few hundred bus-phase nodes; no presolve, no iterative
refinement beyond a static regularization retry.
"""

from __future__ import annotations

import sys

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .program import ConicProgram, ConicSolution, SocBlock, check_feasibility

_STEP_FRACTION = 0.99
_MIN_STEP = 1e-10


def _stack_inequalities(program: ConicProgram):
    """Canonical (G, h, p_orth, soc_dims): orthant rows first, then cone blocks."""
    n = program.n
    parts_g: list[sp.spmatrix] = []
    parts_h: list[np.ndarray] = []
    if program.G.shape[0]:
        parts_g.append(program.G)
        parts_h.append(program.h)
    fin_ub = np.where(np.isfinite(program.ub))[0]
    if fin_ub.size:
        parts_g.append(sp.csr_matrix((np.ones(fin_ub.size), (range(fin_ub.size), fin_ub)), shape=(fin_ub.size, n)))
        parts_h.append(program.ub[fin_ub])
    fin_lb = np.where(np.isfinite(program.lb))[0]
    if fin_lb.size:
        parts_g.append(sp.csr_matrix((-np.ones(fin_lb.size), (range(fin_lb.size), fin_lb)), shape=(fin_lb.size, n)))
        parts_h.append(-program.lb[fin_lb])
    p_orth = sum(g.shape[0] for g in parts_g)
    soc_dims = []
    for blk in program.cones:
        m = blk.A.shape[0]
        block = sp.vstack([-sp.csr_matrix(blk.c), -blk.A])
        parts_g.append(block)
        parts_h.append(np.concatenate(([blk.d], blk.b)))
        soc_dims.append(m + 1)
    if parts_g:
        G = sp.vstack(parts_g).tocsr()
        h = np.concatenate(parts_h)
    else:
        G = sp.csr_matrix((0, n))
        h = np.zeros(0)
    return G, h, p_orth, soc_dims


def _soc_inv_apply(v: np.ndarray, r: np.ndarray) -> np.ndarray:
    """w = arw(v)^{-1} r for a strictly interior cone point v."""
    alpha = v[0] ** 2 - v[1:] @ v[1:]
    dot = v[1:] @ r[1:]
    w = np.empty_like(r)
    w[0] = (v[0] * r[0] - dot) / alpha
    w[1:] = (-v[1:] * r[0] + (alpha * r[1:] + dot * v[1:]) / v[0]) / alpha
    return w


def _soc_prod(s: np.ndarray, z: np.ndarray) -> np.ndarray:
    out = np.empty_like(s)
    out[0] = s @ z
    out[1:] = s[0] * z[1:] + z[0] * s[1:]
    return out


def _orthant_max_step(s: np.ndarray, ds: np.ndarray) -> float:
    neg = ds < 0
    return float(np.min(-s[neg] / ds[neg])) if neg.any() else np.inf


def _soc_max_step(s: np.ndarray, ds: np.ndarray) -> float:
    """Largest t with s + t*ds still in the cone (s strictly interior)."""
    a2 = ds[0] ** 2 - ds[1:] @ ds[1:]
    a1 = 2.0 * (s[0] * ds[0] - s[1:] @ ds[1:])
    a0 = max(s[0] ** 2 - s[1:] @ s[1:], 0.0)
    if abs(a2) < 1e-16:
        return -a0 / a1 if a1 < 0 else np.inf
    disc = a1 * a1 - 4.0 * a2 * a0
    if disc < 0.0:
        return np.inf
    root = np.sqrt(disc)
    cands = [t for t in ((-a1 - root) / (2 * a2), (-a1 + root) / (2 * a2)) if t > 1e-14]
    return min(cands) if cands else np.inf


class _ConeOps:
    """Vector operations over the composite cone R^p x Q^{m_1} x ... x Q^{m_k}."""

    def __init__(self, p_orth: int, soc_dims: list[int]):
        self.p = p_orth
        slices = []
        start = p_orth
        for m in soc_dims:
            slices.append(slice(start, start + m))
            start += m
        self.slices = slices
        self.dim = start
        self.nu = p_orth + len(soc_dims)

    def identity(self) -> np.ndarray:
        e = np.zeros(self.dim)
        e[: self.p] = 1.0
        for sl in self.slices:
            e[sl.start] = 1.0
        return e

    def prod(self, s: np.ndarray, z: np.ndarray) -> np.ndarray:
        out = np.empty(self.dim)
        out[: self.p] = s[: self.p] * z[: self.p]
        for sl in self.slices:
            out[sl] = _soc_prod(s[sl], z[sl])
        return out

    def min_eig(self, s: np.ndarray) -> float:
        vals = [np.min(s[: self.p])] if self.p else []
        for sl in self.slices:
            blk = s[sl]
            vals.append(blk[0] - np.linalg.norm(blk[1:]))
        return float(min(vals)) if vals else np.inf

    def max_step(self, s: np.ndarray, ds: np.ndarray) -> float:
        step = _orthant_max_step(s[: self.p], ds[: self.p]) if self.p else np.inf
        for sl in self.slices:
            step = min(step, _soc_max_step(s[sl], ds[sl]))
        return step


class _NTScaling:
    """Nesterov-Todd scaling point: W z = W^{-1} s = lambda, blockwise."""

    def __init__(self, cone: _ConeOps, s: np.ndarray, z: np.ndarray):
        self.cone = cone
        p = cone.p
        self.w = np.sqrt(s[:p] / z[:p])
        self.lam = np.empty(cone.dim)
        self.lam[:p] = np.sqrt(s[:p] * z[:p])
        self.soc_w: list[np.ndarray] = []
        self.soc_winv: list[np.ndarray] = []
        for sl in cone.slices:
            sb, zb = s[sl], z[sl]
            js = sb[0] ** 2 - sb[1:] @ sb[1:]
            jz = zb[0] ** 2 - zb[1:] @ zb[1:]
            if js <= 0.0 or jz <= 0.0:
                raise FloatingPointError("scaling point left the cone interior")
            sbar = sb / np.sqrt(js)
            zbar = zb / np.sqrt(jz)
            gamma = np.sqrt((1.0 + sbar @ zbar) / 2.0)
            wbar = np.empty_like(sbar)
            wbar[0] = (sbar[0] + zbar[0]) / (2.0 * gamma)
            wbar[1:] = (sbar[1:] - zbar[1:]) / (2.0 * gamma)
            eta = (js / jz) ** 0.25
            w0, w1 = wbar[0], wbar[1:]
            d = np.eye(len(w1)) + np.outer(w1, w1) / (1.0 + w0)
            top = np.concatenate(([w0], w1))
            mat = np.vstack([top, np.column_stack([w1, d])])
            mat_inv = np.vstack([np.concatenate(([w0], -w1)), np.column_stack([-w1, d])])
            self.soc_w.append(eta * mat)
            self.soc_winv.append(mat_inv / eta)
            self.lam[sl] = self.soc_w[-1] @ zb

    def apply_w(self, v: np.ndarray) -> np.ndarray:
        out = np.empty_like(v)
        out[: self.cone.p] = self.w * v[: self.cone.p]
        for mat, sl in zip(self.soc_w, self.cone.slices, strict=True):
            out[sl] = mat @ v[sl]
        return out

    def apply_winv(self, v: np.ndarray) -> np.ndarray:
        out = np.empty_like(v)
        out[: self.cone.p] = v[: self.cone.p] / self.w
        for mat, sl in zip(self.soc_winv, self.cone.slices, strict=True):
            out[sl] = mat @ v[sl]
        return out

    def inv_arw_lam(self, v: np.ndarray) -> np.ndarray:
        out = np.empty_like(v)
        out[: self.cone.p] = v[: self.cone.p] / self.lam[: self.cone.p]
        for sl in self.cone.slices:
            out[sl] = _soc_inv_apply(self.lam[sl], v[sl])
        return out

    def wm2_matrix(self) -> sp.spmatrix:
        """Block-diagonal W^{-2} (symmetric positive definite)."""
        blocks: list[sp.spmatrix] = []
        if self.cone.p:
            blocks.append(sp.diags(1.0 / (self.w * self.w)))
        for mat in self.soc_winv:
            blocks.append(sp.csr_matrix(mat @ mat))
        return sp.block_diag(blocks, format="csr")


def _solve_equality_qp(program: ConicProgram, P, q, A, b) -> ConicSolution:
    n = program.n
    m = A.shape[0]
    if m:
        K = sp.bmat([[P, A.T], [A, None]], format="csc")
        rhs = np.concatenate([-q, b])
    else:
        K = P.tocsc()
        rhs = -q
    try:
        sol = splu(K.tocsc()).solve(rhs)
    except RuntimeError:
        try:
            sol = np.linalg.lstsq(K.toarray(), rhs, rcond=None)[0]
        except np.linalg.LinAlgError:
            return ConicSolution("numerical_failure", None, None, np.inf, None, None, 0, "singular KKT system")
    x = sol[:n]
    report = check_feasibility(program, x)
    return ConicSolution("optimal", x, program.objective_value(x), report.max_violation, 0.0, 0.0, 1, "")


def _phase1_program(program: ConicProgram) -> ConicProgram:
    """min t subject to the program's constraints relaxed by t (equalities kept)."""
    n = program.n
    G, h, p_orth, _ = _stack_inequalities(program)
    G1 = sp.hstack([G[:p_orth], -np.ones((p_orth, 1))], format="csc") if p_orth else sp.csc_matrix((0, n + 1))
    cones = []
    for blk in program.cones:
        c1 = np.concatenate([blk.c, [1.0]])
        A1 = sp.hstack([blk.A, sp.csr_matrix((blk.A.shape[0], 1))], format="csr")
        cones.append(SocBlock(A1, blk.b, c1, blk.d, blk.label))
    lb = np.full(n + 1, -np.inf)
    ub = np.full(n + 1, np.inf)
    lb[n] = -1.0
    c = np.zeros(n + 1)
    c[n] = 1.0
    return ConicProgram(
        n=n + 1,
        Q=sp.csc_matrix((n + 1, n + 1)),
        c=c,
        A=sp.hstack([program.A, sp.csc_matrix((program.A.shape[0], 1))], format="csc")
        if program.A.shape[0]
        else sp.csc_matrix((0, n + 1)),
        b=program.b,
        G=G1.tocsc(),
        h=h[:p_orth],
        cones=tuple(cones),
        lb=lb,
        ub=ub,
    )


def _factor_kkt(M: sp.spmatrix, A: sp.spmatrix, n: int, m_eq: int):
    if m_eq:
        K = sp.bmat([[M, A.T], [A, None]], format="csc")
    else:
        K = M.tocsc()
    for reg in (0.0, 1e-12, 1e-9):
        try:
            if reg:
                bump = sp.diags(np.concatenate([np.full(n, reg), np.full(m_eq, -reg)]))
                return splu((K + bump).tocsc())
            return splu(K)
        except RuntimeError:
            continue
    return None


def solve_ipm(
    program: ConicProgram,
    tol_feas: float = 1e-8,
    tol_gap: float = 1e-8,
    max_iter: int = 100,
    trace: bool = False,
    _diagnose_infeasibility: bool = True,
) -> ConicSolution:
    n = program.n
    P = (2.0 * program.Q).tocsc()
    q = program.c
    A = program.A.tocsc()
    b = program.b
    G, h, p_orth, soc_dims = _stack_inequalities(program)
    m_eq = A.shape[0]
    m_con = G.shape[0]
    if m_con == 0:
        return _solve_equality_qp(program, P, q, A, b)

    cone = _ConeOps(p_orth, soc_dims)
    e = cone.identity()
    nu = cone.nu
    Gt = G.T.tocsr()
    At = A.T.tocsr()

    # cold start: W = I KKT solve, slacks nudged into the cone interior
    lu0 = _factor_kkt((P + Gt @ G).tocsc(), A, n, m_eq)
    if lu0 is None:
        return ConicSolution("numerical_failure", None, None, np.inf, None, None, 0, "singular initial KKT")
    rhs0 = np.concatenate([-q + Gt @ h, b]) if m_eq else (-q + Gt @ h)
    sol0 = lu0.solve(rhs0)
    x = sol0[:n]
    y = sol0[n:] if m_eq else np.zeros(0)
    zt = G @ x - h
    s = -zt.copy()
    me = cone.min_eig(s)
    if me <= 0.0:
        s += (1.0 - me) * e
    z = zt.copy()
    me = cone.min_eig(z)
    if me <= 0.0:
        z += (1.0 - me) * e

    b_norm = 1.0 + (np.max(np.abs(b)) if m_eq else 0.0)
    h_norm = 1.0 + np.max(np.abs(h))
    q_norm = 1.0 + (np.max(np.abs(q)) if n else 0.0)

    status = "iteration_limit"
    iterations = 0
    pres = dres = mu = np.inf
    best = None  # most accurate iterate seen, for relaxed acceptance on stall

    for iterations in range(1, max_iter + 1):
        r_d = P @ x + q + Gt @ z + (At @ y if m_eq else 0.0)
        r_p = A @ x - b if m_eq else np.zeros(0)
        r_g = G @ x + s - h
        mu = float(s @ z) / nu
        pobj = 0.5 * float(x @ (P @ x)) + float(q @ x)
        pres = max(
            (np.max(np.abs(r_p)) / b_norm) if m_eq else 0.0,
            np.max(np.abs(r_g)) / h_norm,
        )
        dres = float(np.max(np.abs(r_d))) / q_norm
        merit = max(pres, dres, mu / max(1.0, abs(pobj)))
        if np.isfinite(merit) and (best is None or merit < best[0]):
            best = (merit, x.copy(), pres, dres, mu, pobj)
        if pres <= tol_feas and dres <= tol_feas and mu <= tol_gap * max(1.0, abs(pobj)):
            status = "optimal"
            break
        if not (np.isfinite(pres) and np.isfinite(dres) and np.isfinite(mu)):
            status = "numerical_failure"
            break

        try:
            scaling = _NTScaling(cone, s, z)
        except FloatingPointError:
            status = "numerical_failure"
            break
        wm2 = scaling.wm2_matrix()
        lu = _factor_kkt((P + Gt @ wm2 @ G).tocsc(), A, n, m_eq)
        if lu is None:
            status = "numerical_failure"
            break

        def newton(d_c: np.ndarray):
            t = scaling.apply_w(scaling.inv_arw_lam(d_c))
            rhs_x = -r_d - Gt @ (wm2 @ (r_g - t))
            rhs = np.concatenate([rhs_x, -r_p]) if m_eq else rhs_x
            sol = lu.solve(rhs)
            dx = sol[:n]
            dy = sol[n:] if m_eq else np.zeros(0)
            dz = wm2 @ (G @ dx + r_g - t)
            ds = -r_g - G @ dx
            return dx, dy, ds, dz

        lam2 = cone.prod(scaling.lam, scaling.lam)
        dx_a, dy_a, ds_a, dz_a = newton(lam2)
        alpha_aff = min(1.0, cone.max_step(s, ds_a), cone.max_step(z, dz_a))
        mu_aff = float((s + alpha_aff * ds_a) @ (z + alpha_aff * dz_a)) / nu
        sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3

        d_c = lam2 + cone.prod(scaling.apply_winv(ds_a), scaling.apply_w(dz_a)) - sigma * mu * e
        dx, dy, ds, dz = newton(d_c)
        alpha = _STEP_FRACTION * min(1.0, cone.max_step(s, ds), cone.max_step(z, dz))
        if trace:
            print(
                f"  ipm k={iterations:3d} pres={pres:.2e} dres={dres:.2e} mu={mu:.2e} "
                f"sigma={sigma:.2e} alpha={alpha:.2e}",
                file=sys.stderr,
            )
        if alpha < _MIN_STEP:
            status = "numerical_failure"
            break
        x += alpha * dx
        y += alpha * dy
        s += alpha * ds
        z += alpha * dz

    if status == "optimal":
        report = check_feasibility(program, x)
        return ConicSolution(
            "optimal",
            x,
            program.objective_value(x),
            report.max_violation,
            dres,
            mu,
            iterations,
            "",
        )

    if best is not None and status in ("iteration_limit", "numerical_failure"):
        # Terminal dithering near the KKT rounding floor: accept the most
        # accurate iterate if it meets a modestly relaxed tolerance.
        _, xb, presb, dresb, mub, pobjb = best
        relaxed = 1000.0
        if (
            presb <= relaxed * tol_feas
            and dresb <= relaxed * tol_feas
            and mub <= relaxed * tol_gap * max(1.0, abs(pobjb))
        ):
            report = check_feasibility(program, xb)
            return ConicSolution(
                "optimal",
                xb,
                program.objective_value(xb),
                report.max_violation,
                dresb,
                mub,
                iterations,
                f"reduced accuracy: stalled at pres {presb:.2e}, "
                f"dres {dresb:.2e}, mu {mub:.2e}",
            )

    if _diagnose_infeasibility and status in ("iteration_limit", "numerical_failure"):
        ph1 = solve_ipm(
            _phase1_program(program),
            tol_feas=max(tol_feas, 1e-9),
            tol_gap=max(tol_gap, 1e-9),
            max_iter=max_iter,
            _diagnose_infeasibility=False,
        )
        if ph1.status == "optimal" and ph1.x is not None:
            t_star = float(ph1.x[program.n])
            if t_star > 100.0 * max(tol_feas, 1e-9):
                witness = check_feasibility(program, ph1.x[: program.n]).worst()
                return ConicSolution(
                    "infeasible",
                    None,
                    None,
                    t_star,
                    None,
                    None,
                    iterations,
                    f"infeasible (phase-I slack {t_star:.3e}); most violated: {witness}",
                )
    report = check_feasibility(program, x)
    return ConicSolution(
        status,
        x,
        program.objective_value(x),
        report.max_violation,
        dres,
        mu,
        iterations,
        f"stopped with status {status} (pres {pres:.2e}, dres {dres:.2e}, mu {mu:.2e})",
    )
