"""Generic convex subproblem: quadratic objective, linear constraints, SOC blocks.

A program is

    minimize    x' Q x + c' x + const
    subject to  A x = b
                G x <= h
                lb <= x <= ub
                || A_k x + b_k ||_2 <= c_k' x + d_k      for each cone block k

with Q symmetric positive semidefinite.  Cone blocks are stored in affine
form; the index-tuple conveniences (``SocBlock.from_indices`` for
"norm of some variables bounded by another variable", ``SocBlock.ball`` for a
constant radius) cover the common cases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class ProgramError(ValueError):
    """Malformed conic program (bad indices, non-PSD objective, shape mismatch)."""


@dataclass(frozen=True)
class SocBlock:
    """Affine second-order cone constraint ||A x + b||_2 <= c' x + d."""

    A: sp.csr_matrix
    b: np.ndarray
    c: np.ndarray
    d: float
    label: str = ""

    @classmethod
    def from_indices(cls, t: int, members: list[int], n: int, label: str = "") -> SocBlock:
        """||x[members]||_2 <= x[t]."""
        m = len(members)
        A = sp.csr_matrix((np.ones(m), (range(m), members)), shape=(m, n))
        c = np.zeros(n)
        c[t] = 1.0
        return cls(A, np.zeros(m), c, 0.0, label)

    @classmethod
    def ball(cls, members: list[int], radius: float, n: int, label: str = "") -> SocBlock:
        """||x[members]||_2 <= radius."""
        m = len(members)
        A = sp.csr_matrix((np.ones(m), (range(m), members)), shape=(m, n))
        return cls(A, np.zeros(m), np.zeros(n), float(radius), label)

    def violation(self, x: np.ndarray) -> float:
        return float(np.linalg.norm(self.A @ x + self.b) - (self.c @ x + self.d))


@dataclass(frozen=True)
class ConicProgram:
    n: int
    Q: sp.csc_matrix
    c: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    G: sp.csc_matrix
    h: np.ndarray
    cones: tuple[SocBlock, ...]
    lb: np.ndarray
    ub: np.ndarray
    obj_const: float = 0.0
    eq_labels: tuple[str, ...] = ()
    ineq_labels: tuple[str, ...] = ()

    def objective_value(self, x: np.ndarray) -> float:
        return float(x @ (self.Q @ x) + self.c @ x + self.obj_const)


@dataclass(frozen=True)
class ConicSolution:
    status: str  # optimal | infeasible | iteration_limit | numerical_failure
    x: np.ndarray | None
    objective: float | None
    primal_residual: float
    dual_residual: float | None
    gap: float | None
    iterations: int
    message: str = ""


@dataclass
class FeasibilityReport:
    """Exact violation magnitudes for every constraint group."""

    equality: np.ndarray
    inequality: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    cones: np.ndarray
    eq_labels: tuple[str, ...] = ()
    ineq_labels: tuple[str, ...] = ()
    cone_labels: tuple[str, ...] = ()

    @property
    def max_violation(self) -> float:
        parts = [self.equality, self.inequality, self.lower, self.upper, self.cones]
        return max((float(p.max()) for p in parts if p.size), default=0.0)

    def ok(self, tol: float) -> bool:
        return self.max_violation <= tol

    def worst(self) -> str:
        """Human-readable description of the most violated constraint."""
        best = ("none", -1, 0.0, "")
        groups = (
            ("equality", self.equality, self.eq_labels),
            ("inequality", self.inequality, self.ineq_labels),
            ("lower bound", self.lower, ()),
            ("upper bound", self.upper, ()),
            ("cone", self.cones, self.cone_labels),
        )
        for name, arr, labels in groups:
            if arr.size and arr.max() > best[2]:
                k = int(arr.argmax())
                best = (name, k, float(arr.max()), labels[k] if k < len(labels) else "")
        name, k, mag, label = best
        tag = f" [{label}]" if label else ""
        return f"{name} #{k}{tag}: violation {mag:.6e}"


def check_feasibility(program: ConicProgram, x: np.ndarray, tol: float = 1e-8) -> FeasibilityReport:
    x = np.asarray(x, dtype=float)
    if x.shape != (program.n,):
        raise ProgramError(f"x has shape {x.shape}, expected ({program.n},)")
    eq = np.abs(program.A @ x - program.b) if program.A.shape[0] else np.zeros(0)
    ineq = np.maximum(program.G @ x - program.h, 0.0) if program.G.shape[0] else np.zeros(0)
    lower = np.maximum(program.lb - x, 0.0)
    lower[~np.isfinite(program.lb)] = 0.0
    upper = np.maximum(x - program.ub, 0.0)
    upper[~np.isfinite(program.ub)] = 0.0
    cones = np.array([max(blk.violation(x), 0.0) for blk in program.cones])
    return FeasibilityReport(
        eq,
        ineq,
        lower,
        upper,
        cones,
        program.eq_labels,
        program.ineq_labels,
        tuple(blk.label for blk in program.cones),
    )


def validate_program(program: ConicProgram, dense_limit: int = 400) -> None:
    """Structural checks; PSD verified by eigenvalues on desk-scale problems."""
    n = program.n
    for mat, name in ((program.Q, "Q"),):
        if mat.shape != (n, n):
            raise ProgramError(f"{name} has shape {mat.shape}, expected ({n}, {n})")
    if program.A.shape[1] != n or program.G.shape[1] != n:
        raise ProgramError("constraint matrix column count does not match n")
    if program.A.shape[0] != len(program.b) or program.G.shape[0] != len(program.h):
        raise ProgramError("constraint right-hand side length mismatch")
    for blk in program.cones:
        if blk.A.shape[1] != n or len(blk.c) != n or blk.A.shape[0] != len(blk.b):
            raise ProgramError(f"cone block {blk.label!r} has inconsistent shapes")
    asym = abs(program.Q - program.Q.T)
    if asym.nnz and asym.max() > 1e-12:
        raise ProgramError("Q is not symmetric")
    if n <= dense_limit:
        w = np.linalg.eigvalsh(program.Q.toarray())
        if w.min() < -1e-9 * max(1.0, w.max()):
            raise ProgramError(f"Q is not positive semidefinite (min eigenvalue {w.min():.3e})")
    else:
        diag = program.Q.diagonal()
        off = np.asarray(abs(program.Q).sum(axis=1)).ravel() - np.abs(diag)
        if np.any(diag < -1e-12) or np.any(diag + 1e-12 < off - 1e-9):
            raise ProgramError("Q failed the diagonal-dominance PSD screen")


class ProgramBuilder:
    """Accumulates objective/constraint pieces and freezes them into a ConicProgram."""

    def __init__(self, n: int):
        self.n = n
        self._q_rows: list[int] = []
        self._q_cols: list[int] = []
        self._q_vals: list[float] = []
        self._c = np.zeros(n)
        self._const = 0.0
        self._eq: list[tuple[list[int], list[float], float]] = []
        self._eq_labels: list[str] = []
        self._ineq: list[tuple[list[int], list[float], float]] = []
        self._ineq_labels: list[str] = []
        self._cones: list[SocBlock] = []
        self._lb = np.full(n, -np.inf)
        self._ub = np.full(n, np.inf)

    def _check(self, idx: int) -> int:
        if not 0 <= idx < self.n:
            raise ProgramError(f"variable index {idx} out of range [0, {self.n})")
        return idx

    def obj_quad(self, i: int, coeff: float) -> None:
        self._q_rows.append(self._check(i))
        self._q_cols.append(i)
        self._q_vals.append(float(coeff))

    def obj_linear(self, i: int, coeff: float) -> None:
        self._c[self._check(i)] += coeff

    def obj_const(self, value: float) -> None:
        self._const += value

    def eq(self, indices: list[int], values: list[float], rhs: float, label: str = "") -> None:
        self._eq.append(([self._check(i) for i in indices], [float(v) for v in values], float(rhs)))
        self._eq_labels.append(label)

    def ineq(self, indices: list[int], values: list[float], rhs: float, label: str = "") -> None:
        """Sum_i values[i] * x[indices[i]] <= rhs."""
        self._ineq.append(([self._check(i) for i in indices], [float(v) for v in values], float(rhs)))
        self._ineq_labels.append(label)

    def cone(self, block: SocBlock) -> None:
        self._cones.append(block)

    def bound(self, i: int, lo: float | None = None, hi: float | None = None) -> None:
        i = self._check(i)
        if lo is not None:
            self._lb[i] = max(self._lb[i], lo)
        if hi is not None:
            self._ub[i] = min(self._ub[i], hi)

    @staticmethod
    def _rows_to_csc(rows, n: int) -> tuple[sp.csc_matrix, np.ndarray]:
        r, c, v, rhs = [], [], [], []
        for k, (indices, values, b) in enumerate(rows):
            r.extend([k] * len(indices))
            c.extend(indices)
            v.extend(values)
            rhs.append(b)
        mat = sp.coo_matrix((v, (r, c)), shape=(len(rows), n)).tocsc()
        return mat, np.array(rhs)

    def build(self, validate: bool = True) -> ConicProgram:
        Q = sp.coo_matrix((self._q_vals, (self._q_rows, self._q_cols)), shape=(self.n, self.n)).tocsc()
        Q = ((Q + Q.T) * 0.5).tocsc()
        A, b = self._rows_to_csc(self._eq, self.n)
        G, h = self._rows_to_csc(self._ineq, self.n)
        program = ConicProgram(
            n=self.n,
            Q=Q,
            c=self._c.copy(),
            A=A,
            b=b,
            G=G,
            h=h,
            cones=tuple(self._cones),
            lb=self._lb.copy(),
            ub=self._ub.copy(),
            obj_const=self._const,
            eq_labels=tuple(self._eq_labels),
            ineq_labels=tuple(self._ineq_labels),
        )
        if validate:
            validate_program(program)
        return program


def dump(program: ConicProgram) -> str:
    """Textual sparse-triplet dump: one line per nonzero, `section row col value`.

    Sections: n (dimension), const, Q, c, A, b, G, h, lb, ub, and per cone k
    the lines `soc<k> A row col value`, `soc<k> b row 0 value`,
    `soc<k> c 0 col value`, `soc<k> d 0 0 value`.
    """
    lines = [f"n 0 0 {program.n}", f"const 0 0 {program.obj_const!r}"]

    def emit(section: str, mat) -> None:
        coo = mat.tocoo()
        for r, c, v in zip(coo.row, coo.col, coo.data):
            lines.append(f"{section} {r} {c} {v!r}")

    def emit_vec(section: str, vec, skip=0.0) -> None:
        for i, v in enumerate(vec):
            if v != skip and np.isfinite(v):
                lines.append(f"{section} {i} 0 {v!r}")

    emit("Q", program.Q)
    emit_vec("c", program.c)
    emit("A", program.A)
    emit_vec("b", program.b)
    emit("G", program.G)
    emit_vec("h", program.h)
    emit_vec("lb", program.lb, skip=-np.inf)
    emit_vec("ub", program.ub, skip=np.inf)
    for k, blk in enumerate(program.cones):
        emit(f"soc{k}_A", blk.A)
        emit_vec(f"soc{k}_b", blk.b)
        emit_vec(f"soc{k}_c", blk.c)
        lines.append(f"soc{k}_d 0 0 {blk.d!r}")
    return "\n".join(lines) + "\n"
