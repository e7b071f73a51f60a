"""Per-iteration convex OPF subproblem assembly.

Variables per bus-phase node: rectangular voltage (V^R, V^I), rectangular
injected current (I^R, I^I), and four auxiliaries standing in for the
voltage-current products, m^RR ~ V^R I^R, m^RI ~ V^R I^I, m^IR ~ V^I I^R,
m^II ~ V^I I^I.  Dispatchable injections add (P^G, Q^G) per generator record.

The program ties the pieces together with:

- the four McCormick facets per product over fixed global boxes,
- first-order affine surrogates X of the products about the current iterate,
- one second-order trust cone per node, ||m - X||_2 <= delta,
- Ohm's law I = Y V, power balance, voltage limits, generator boxes.

Nodal power is reconstructed linearly from the auxiliaries:
P = m^RR + m^II and Q = m^IR - m^RI.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .conic import ConicProgram, ProgramBuilder, SocBlock
from .netmodel import BusPhaseIndex, Network, YBus, build_index, reference_voltages, slack_voltages


class SubproblemError(ValueError):
    """Inconsistent inputs to subproblem assembly."""


class InvalidLinearisationPoint(SubproblemError):
    """Linearisation point unusable (non-finite, zero voltage, slack mismatch)."""


_SLACK_ATOL = 1e-6  # tolerated drift between lin_point slack entries and the fixed value


@dataclass(frozen=True)
class LinearisationPoint:
    """Iterate (V^(k), I^(k)) the surrogates are expanded around."""

    V: np.ndarray
    I: np.ndarray

    @property
    def vr(self) -> np.ndarray:
        return self.V.real

    @property
    def vi(self) -> np.ndarray:
        return self.V.imag

    @property
    def ir(self) -> np.ndarray:
        return self.I.real

    @property
    def ii(self) -> np.ndarray:
        return self.I.imag


@dataclass(frozen=True)
class VariableMap:
    """Index layout: 8 node blocks of length n_ph, then (P^G, Q^G) pairs."""

    n_ph: int
    n_var: int
    gen_nodes: tuple[int, ...]  # node index per generator, in network.generators order

    def vr(self, node: int) -> int:
        return node

    def vi(self, node: int) -> int:
        return self.n_ph + node

    def ir(self, node: int) -> int:
        return 2 * self.n_ph + node

    def ii(self, node: int) -> int:
        return 3 * self.n_ph + node

    def mrr(self, node: int) -> int:
        return 4 * self.n_ph + node

    def mri(self, node: int) -> int:
        return 5 * self.n_ph + node

    def mir(self, node: int) -> int:
        return 6 * self.n_ph + node

    def mii(self, node: int) -> int:
        return 7 * self.n_ph + node

    def pg(self, gen: int) -> int:
        return 8 * self.n_ph + 2 * gen

    def qg(self, gen: int) -> int:
        return 8 * self.n_ph + 2 * gen + 1


@dataclass(frozen=True)
class McCormickBounds:
    """Global per-node boxes for voltage and current components."""

    vr_lo: np.ndarray
    vr_hi: np.ndarray
    vi_lo: np.ndarray
    vi_hi: np.ndarray
    ir_lo: np.ndarray
    ir_hi: np.ndarray
    ii_lo: np.ndarray
    ii_hi: np.ndarray

    def validate(self) -> None:
        for lo, hi, name in (
            (self.vr_lo, self.vr_hi, "vr"),
            (self.vi_lo, self.vi_hi, "vi"),
            (self.ir_lo, self.ir_hi, "ir"),
            (self.ii_lo, self.ii_hi, "ii"),
        ):
            if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
                raise SubproblemError(f"non-finite {name} bounds")
            if not (lo < hi).all():
                raise SubproblemError(f"empty or degenerate {name} bounds")


@dataclass(frozen=True)
class LinRow:
    """Sparse linear row: sum(coeffs * x[indices]) (<=|==) rhs."""

    indices: tuple[int, ...]
    coeffs: tuple[float, ...]
    rhs: float
    equality: bool = False

    def evaluate(self, x: np.ndarray) -> float:
        return float(sum(c * x[i] for i, c in zip(self.indices, self.coeffs, strict=True)))


@dataclass(frozen=True)
class AffineExpr:
    """Sparse affine expression sum(coeffs * x[indices]) + const."""

    indices: tuple[int, ...]
    coeffs: tuple[float, ...]
    const: float

    def value(self, x: np.ndarray) -> float:
        return float(sum(c * x[i] for c, i in zip(self.coeffs, self.indices, strict=True)) + self.const)


def default_bounds(network: Network, index: BusPhaseIndex | None = None, kappa: float = 2.0) -> McCormickBounds:
    """Fixed global boxes: |V components| <= bus vmax, |I components| <= kappa * S_total / vmin."""
    index = index if index is not None else build_index(network)
    n = index.n_ph
    vmax = np.empty(n)
    for (bus_id, _), pos in index.position.items():
        vmax[pos] = network.bus(bus_id).vmax
    s_total = sum(abs(load.s) for load in network.loads)
    s_total += sum(
        math.hypot(max(abs(g.pmin), abs(g.pmax)), max(abs(g.qmin), abs(g.qmax)))
        for g in network.generators
    )
    s_total = max(s_total, 1e-3)
    vmin = min((b.vmin for b in network.buses if b.id != network.slack_bus), default=0.9)
    i_max = kappa * s_total / vmin
    i_lo = np.full(n, -i_max)
    i_hi = np.full(n, i_max)
    return McCormickBounds(-vmax, vmax.copy(), -vmax, vmax.copy(), i_lo, i_hi, i_lo.copy(), i_hi.copy())


def mccormick_envelope(
    x_idx: int, y_idx: int, z_idx: int, bounds: tuple[float, float, float, float]
) -> list[LinRow]:
    """The four facets of the convex hull of {(x, y, xy)} over [xlo,xhi] x [ylo,yhi].

    Degenerate boxes (a pinned factor) collapse to the exact linear relation.
    """
    xlo, xhi, ylo, yhi = (float(v) for v in bounds)
    if xlo > xhi or ylo > yhi or not all(map(math.isfinite, (xlo, xhi, ylo, yhi))):
        raise SubproblemError(f"invalid product bounds {bounds}")
    if xlo == xhi and ylo == yhi:
        return [LinRow((z_idx,), (1.0,), xlo * ylo, equality=True)]
    if xlo == xhi:
        return [LinRow((z_idx, y_idx), (1.0, -xlo), 0.0, equality=True)]
    if ylo == yhi:
        return [LinRow((z_idx, x_idx), (1.0, -ylo), 0.0, equality=True)]
    return [
        # z >= xlo*y + ylo*x - xlo*ylo
        LinRow((z_idx, y_idx, x_idx), (-1.0, xlo, ylo), xlo * ylo),
        # z >= xhi*y + yhi*x - xhi*yhi
        LinRow((z_idx, y_idx, x_idx), (-1.0, xhi, yhi), xhi * yhi),
        # z <= xhi*y + ylo*x - xhi*ylo
        LinRow((z_idx, y_idx, x_idx), (1.0, -xhi, -ylo), -xhi * ylo),
        # z <= xlo*y + yhi*x - xlo*yhi
        LinRow((z_idx, y_idx, x_idx), (1.0, -xlo, -yhi), -xlo * yhi),
    ]


def surrogate(
    lin_point: LinearisationPoint, node: int, vmap: VariableMap
) -> tuple[AffineExpr, AffineExpr, AffineExpr, AffineExpr]:
    """First-order expansions (X^RR, X^RI, X^IR, X^II) of the products at one node."""
    vr0 = float(lin_point.vr[node])
    vi0 = float(lin_point.vi[node])
    ir0 = float(lin_point.ir[node])
    ii0 = float(lin_point.ii[node])
    return (
        AffineExpr((vmap.ir(node), vmap.vr(node)), (vr0, ir0), -vr0 * ir0),
        AffineExpr((vmap.ii(node), vmap.vr(node)), (vr0, ii0), -vr0 * ii0),
        AffineExpr((vmap.ir(node), vmap.vi(node)), (vi0, ir0), -vi0 * ir0),
        AffineExpr((vmap.ii(node), vmap.vi(node)), (vi0, ii0), -vi0 * ii0),
    )


def bilinear_products(V: np.ndarray, I: np.ndarray) -> np.ndarray:
    """Stack (V^R I^R, V^R I^I, V^I I^R, V^I I^I), shape (4, n)."""
    return np.stack([V.real * I.real, V.real * I.imag, V.imag * I.real, V.imag * I.imag])


def surrogate_values(lin_point: LinearisationPoint, V: np.ndarray, I: np.ndarray) -> np.ndarray:
    """Evaluate the four surrogates at a numeric point, shape (4, n)."""
    vr0, vi0, ir0, ii0 = lin_point.vr, lin_point.vi, lin_point.ir, lin_point.ii
    return np.stack(
        [
            vr0 * I.real + V.real * ir0 - vr0 * ir0,
            vr0 * I.imag + V.real * ii0 - vr0 * ii0,
            vi0 * I.real + V.imag * ir0 - vi0 * ir0,
            vi0 * I.imag + V.imag * ii0 - vi0 * ii0,
        ]
    )


def _check_lin_point(
    lin_point: LinearisationPoint, network: Network, index: BusPhaseIndex, ybus: YBus
) -> None:
    n = index.n_ph
    if lin_point.V.shape != (n,) or lin_point.I.shape != (n,):
        raise InvalidLinearisationPoint("linearisation point has wrong length")
    if not (np.isfinite(lin_point.V).all() and np.isfinite(lin_point.I).all()):
        raise InvalidLinearisationPoint("non-finite linearisation point")
    vslack = slack_voltages(network, index)
    if not np.allclose(lin_point.V[ybus.slack], vslack, atol=_SLACK_ATOL, rtol=0.0):
        raise InvalidLinearisationPoint("slack entries of linearisation point do not match the fixed slack voltage")


def build_subproblem(
    network: Network,
    ybus: YBus,
    lin_point: LinearisationPoint,
    bounds: McCormickBounds,
    delta2: float,
    *,
    index: BusPhaseIndex | None = None,
    global_cone: bool = False,
    validate: bool = True,
) -> tuple[ConicProgram, VariableMap]:
    """Assemble the convex subproblem at the given iterate and squared radius."""
    if not (delta2 > 0.0 and math.isfinite(delta2)):
        raise SubproblemError(f"delta2 must be positive and finite, got {delta2}")
    index = index if index is not None else build_index(network)
    n = index.n_ph
    bounds.validate()
    _check_lin_point(lin_point, network, index, ybus)
    delta = math.sqrt(delta2)

    nonslack = set(ybus.nonslack.tolist())
    vmap = VariableMap(
        n_ph=n,
        n_var=8 * n + 2 * len(network.generators),
        gen_nodes=tuple(index.node(g.bus, g.phase) for g in network.generators),
    )
    b = ProgramBuilder(vmap.n_var)
    vhat = reference_voltages(network, index)
    vslack = slack_voltages(network, index)

    # objective: sum over non-slack nodes of (V^R - Vhat^R)^2 + (V^I - Vhat^I)^2
    for node in sorted(nonslack):
        for idx, ref in ((vmap.vr(node), vhat.real[node]), (vmap.vi(node), vhat.imag[node])):
            b.obj_quad(idx, 1.0)
            b.obj_linear(idx, -2.0 * ref)
            b.obj_const(ref * ref)

    # Ohm's law I = Y V, split into real and imaginary rows at every node
    y_csr = ybus.matrix.tocsr()
    for node in range(n):
        lo, hi = y_csr.indptr[node], y_csr.indptr[node + 1]
        cols = y_csr.indices[lo:hi]
        g = y_csr.data[lo:hi].real
        bsus = y_csr.data[lo:hi].imag
        idx_re = [vmap.ir(node)] + [vmap.vr(j) for j in cols] + [vmap.vi(j) for j in cols]
        val_re = [1.0] + list(-g) + list(bsus)
        b.eq(idx_re, val_re, 0.0, label=f"ohm_re[{node}]")
        idx_im = [vmap.ii(node)] + [vmap.vr(j) for j in cols] + [vmap.vi(j) for j in cols]
        val_im = [1.0] + list(-bsus) + list(-g)
        b.eq(idx_im, val_im, 0.0, label=f"ohm_im[{node}]")

    # component boxes (the McCormick facets are only valid inside them)
    for node in range(n):
        b.bound(vmap.vr(node), bounds.vr_lo[node], bounds.vr_hi[node])
        b.bound(vmap.vi(node), bounds.vi_lo[node], bounds.vi_hi[node])
        b.bound(vmap.ir(node), bounds.ir_lo[node], bounds.ir_hi[node])
        b.bound(vmap.ii(node), bounds.ii_lo[node], bounds.ii_hi[node])

    # slack: voltage pinned, products exact (degenerate box), no balance rows
    for k, node in enumerate(ybus.slack.tolist()):
        vre, vim = float(vslack[k].real), float(vslack[k].imag)
        if not (bounds.vr_lo[node] <= vre <= bounds.vr_hi[node] and bounds.vi_lo[node] <= vim <= bounds.vi_hi[node]):
            raise SubproblemError(f"slack voltage at node {node} violates the voltage box")
        b.eq([vmap.vr(node)], [1.0], vre, label=f"slack_vr[{node}]")
        b.eq([vmap.vi(node)], [1.0], vim, label=f"slack_vi[{node}]")
        for m_idx, cur_idx, coeff in (
            (vmap.mrr(node), vmap.ir(node), vre),
            (vmap.mri(node), vmap.ii(node), vre),
            (vmap.mir(node), vmap.ir(node), vim),
            (vmap.mii(node), vmap.ii(node), vim),
        ):
            b.eq([m_idx, cur_idx], [1.0, -coeff], 0.0, label=f"slack_m[{node}]")

    # McCormick facets: 4 products x 4 facets per non-slack node
    for node in sorted(nonslack):
        products = (
            (vmap.vr(node), vmap.ir(node), vmap.mrr(node), (bounds.vr_lo[node], bounds.vr_hi[node], bounds.ir_lo[node], bounds.ir_hi[node])),
            (vmap.vr(node), vmap.ii(node), vmap.mri(node), (bounds.vr_lo[node], bounds.vr_hi[node], bounds.ii_lo[node], bounds.ii_hi[node])),
            (vmap.vi(node), vmap.ir(node), vmap.mir(node), (bounds.vi_lo[node], bounds.vi_hi[node], bounds.ir_lo[node], bounds.ir_hi[node])),
            (vmap.vi(node), vmap.ii(node), vmap.mii(node), (bounds.vi_lo[node], bounds.vi_hi[node], bounds.ii_lo[node], bounds.ii_hi[node])),
        )
        for x_idx, y_idx, z_idx, box in products:
            for row in mccormick_envelope(x_idx, y_idx, z_idx, box):
                if row.equality:
                    b.eq(list(row.indices), list(row.coeffs), row.rhs, label=f"mccormick_eq[{node}]")
                else:
                    b.ineq(list(row.indices), list(row.coeffs), row.rhs, label=f"mccormick[{node}]")

    # power balance at non-slack nodes: P = m^RR + m^II = P^G - P^D, Q = m^IR - m^RI = Q^G - Q^D
    p_load = np.zeros(n)
    q_load = np.zeros(n)
    for load in network.loads:
        node = index.node(load.bus, load.phase)
        p_load[node] += load.p
        q_load[node] += load.q
    gens_at: dict[int, int] = {node: g for g, node in enumerate(vmap.gen_nodes)}
    for node in sorted(nonslack):
        p_idx = [vmap.mrr(node), vmap.mii(node)]
        p_val = [1.0, 1.0]
        q_idx = [vmap.mir(node), vmap.mri(node)]
        q_val = [1.0, -1.0]
        if node in gens_at:
            p_idx.append(vmap.pg(gens_at[node]))
            p_val.append(-1.0)
            q_idx.append(vmap.qg(gens_at[node]))
            q_val.append(-1.0)
        b.eq(p_idx, p_val, -p_load[node], label=f"balance_p[{node}]")
        b.eq(q_idx, q_val, -q_load[node], label=f"balance_q[{node}]")

    # generator capability boxes
    for g, gen in enumerate(network.generators):
        b.bound(vmap.pg(g), gen.pmin, gen.pmax)
        b.bound(vmap.qg(g), gen.qmin, gen.qmax)

    # voltage limits at non-slack nodes: magnitude cone up, supporting half-plane down
    for node in sorted(nonslack):
        bus = network.bus(index.pairs[node][0])
        b.cone(SocBlock.ball([vmap.vr(node), vmap.vi(node)], bus.vmax, vmap.n_var, label=f"vmax[{node}]"))
        v0 = complex(lin_point.V[node])
        norm0 = abs(v0)
        if norm0 == 0.0:
            raise InvalidLinearisationPoint(f"zero voltage at node {node}: lower-bound hyperplane undefined")
        b.ineq(
            [vmap.vr(node), vmap.vi(node)],
            [-v0.real, -v0.imag],
            -bus.vmin * norm0,
            label=f"vmin[{node}]",
        )

    # trust cones ||m - X||_2 <= delta (per node, or one stacked cone)
    rows_i: list[int] = []
    rows_j: list[int] = []
    rows_v: list[float] = []
    rows_b: list[float] = []

    def _cone_rows(node: int, row0: int) -> None:
        exprs = surrogate(lin_point, node, vmap)
        m_indices = (vmap.mrr(node), vmap.mri(node), vmap.mir(node), vmap.mii(node))
        for r, (m_idx, expr) in enumerate(zip(m_indices, exprs, strict=True)):
            rows_i.append(row0 + r)
            rows_j.append(m_idx)
            rows_v.append(1.0)
            for idx, coef in zip(expr.indices, expr.coeffs, strict=True):
                rows_i.append(row0 + r)
                rows_j.append(idx)
                rows_v.append(-coef)
            rows_b.append(-expr.const)

    if global_cone:
        for node in range(n):
            _cone_rows(node, 4 * node)
        a_mat = sp.coo_matrix((rows_v, (rows_i, rows_j)), shape=(4 * n, vmap.n_var)).tocsr()
        b.cone(SocBlock(a_mat, np.array(rows_b), np.zeros(vmap.n_var), delta, label="trust[global]"))
    else:
        for node in range(n):
            rows_i.clear()
            rows_j.clear()
            rows_v.clear()
            rows_b.clear()
            _cone_rows(node, 0)
            a_mat = sp.coo_matrix((rows_v, (rows_i, rows_j)), shape=(4, vmap.n_var)).tocsr()
            b.cone(SocBlock(a_mat, np.array(rows_b), np.zeros(vmap.n_var), delta, label=f"trust[{node}]"))

    return b.build(validate=validate), vmap


def extract_voltages(x: np.ndarray, vmap: VariableMap) -> np.ndarray:
    n = vmap.n_ph
    return x[:n] + 1j * x[n : 2 * n]


def extract_currents(x: np.ndarray, vmap: VariableMap) -> np.ndarray:
    n = vmap.n_ph
    return x[2 * n : 3 * n] + 1j * x[3 * n : 4 * n]


def extract_m(x: np.ndarray, vmap: VariableMap) -> np.ndarray:
    """Auxiliary products, shape (4, n): rows m^RR, m^RI, m^IR, m^II."""
    n = vmap.n_ph
    return x[4 * n : 8 * n].reshape(4, n)


def extract_generation(x: np.ndarray, vmap: VariableMap) -> tuple[np.ndarray, np.ndarray]:
    """(P^G, Q^G) aligned with network.generators order."""
    base = 8 * vmap.n_ph
    pg = x[base::2][: len(vmap.gen_nodes)].copy()
    qg = x[base + 1 :: 2][: len(vmap.gen_nodes)].copy()
    return pg, qg
