"""Nitsche system assembly, boundary conditions, solvers and error norms."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import GeometryMap
from .spline import TensorSplineSpace, eval_basis
from .stabilization import StabilizationPlan, physical_gradients
from .trimming import SIDES, BoundaryRule, Label, TrimmedMesh

Field = Callable[[np.ndarray], np.ndarray]
BC_KINDS = ("weak", "strong", "neumann")


class SolverError(RuntimeError):
    """Numerical failure: singular systems, degenerate pencils."""


def _zero(x: np.ndarray) -> np.ndarray:
    return np.zeros(len(x))


@dataclass
class ProblemData:
    """Poisson data and the boundary condition on every boundary part.

    ``sides`` maps patch sides to a kind in ``BC_KINDS``; missing sides are
    natural (homogeneous Neumann unless ``g_N`` says otherwise). The trim
    curve gets ``trim``.
    """

    f: Field = _zero
    g_D: Field = _zero
    g_N: Field = _zero
    beta: float = 1.0
    trim: str = "weak"
    sides: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.beta <= 0:
            raise ValueError("penalty beta must be positive")
        for kind in [self.trim, *self.sides.values()]:
            if kind not in BC_KINDS:
                raise ValueError(f"unknown boundary condition {kind!r}")
        for side in self.sides:
            if side not in SIDES:
                raise ValueError(f"unknown side {side!r}")


def boundary_rule(tm: TrimmedMesh, data: ProblemData, kind: str) -> BoundaryRule:
    """All frames on boundary parts carrying condition ``kind``."""
    rules = [tm.trim_rule()] if data.trim == kind else []
    rules += [tm.side_rule(s) for s, k in sorted(data.sides.items()) if k == kind]
    return BoundaryRule.concat(rules)


def weak_rule(tm: TrimmedMesh, data: ProblemData | None = None) -> BoundaryRule:
    return boundary_rule(tm, data or ProblemData(), "weak")


@dataclass
class LinearSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    active: np.ndarray
    constrained: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def free(self) -> np.ndarray:
        mask = self.active.copy()
        mask[self.constrained] = False
        return mask


# ---------------------------------------------------------------------------
# element loops


class _Triplets:
    def __init__(self) -> None:
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.vals: list[np.ndarray] = []

    def add(self, rdofs: np.ndarray, cdofs: np.ndarray, block: np.ndarray) -> None:
        self.rows.append(np.repeat(rdofs, len(cdofs)))
        self.cols.append(np.tile(cdofs, len(rdofs)))
        self.vals.append(block.ravel())

    def add_batch(self, dofs: np.ndarray, blocks: np.ndarray) -> None:
        n = dofs.shape[1]
        self.rows.append(np.repeat(dofs, n, axis=1).ravel())
        self.cols.append(np.tile(dofs, (1, n)).ravel())
        self.vals.append(blocks.ravel())

    def matrix(self, n: int) -> sp.csr_matrix:
        if not self.rows:
            return sp.csr_matrix((n, n))
        r, c, v = (np.concatenate(a) for a in (self.rows, self.cols, self.vals))
        return sp.coo_matrix((v, (r, c)), shape=(n, n)).tocsr()


def _volume_terms(space, gmap, tm, f: Field | None):
    """Stiffness triplets and load vector over the kept domain."""
    trip = _Triplets()
    load = np.zeros(space.dim)
    interior = tm.interior_cells
    if len(interior):
        pts, w = space.tensor_rule(tm.order)
        pts, w = pts[interior], w[interior]
        nc, nq, _ = pts.shape
        flat = pts.reshape(-1, 2)
        hint = np.repeat(tm.centers[interior], nq, axis=0)
        cells = np.repeat(interior, nq)
        val, pg = space.eval_basis(flat, cells)
        ev = gmap.evaluate(flat, hint=hint)
        inv_t = np.linalg.inv(ev.jac).transpose(0, 2, 1)
        grad = np.einsum("nab,nmb->nma", inv_t, pg).reshape(nc, nq, space.nloc, 2)
        wq = w * np.abs(ev.det).reshape(nc, nq)
        trip.add_batch(space.cell_dofs[interior], np.einsum("cqad,cqbd,cq->cab", grad, grad, wq))
        if f is not None:
            fv = f(ev.x).reshape(nc, nq)
            loc = np.einsum("cqa,cq->ca", val.reshape(nc, nq, -1), wq * fv)
            np.add.at(load, space.cell_dofs[interior], loc)
    for c in tm.cut_cells:
        pts, w = tm.cell_rule(c)
        val, pg = space.eval_basis(pts, c)
        hint = np.broadcast_to(tm.centers[c], pts.shape)
        grad = physical_gradients(gmap, pts, pg, hint)
        dofs = space.cell_dofs[c]
        trip.add(dofs, dofs, np.einsum("qad,qbd,q->ab", grad, grad, w))
        if f is not None:
            x = gmap.evaluate(pts, hint=hint).x
            np.add.at(load, dofs, val.T @ (w * f(x)))
    return trip, load


def _boundary_groups(rule: BoundaryRule):
    for c in np.unique(rule.cell):
        sel = rule.cell == c
        yield int(c), rule.select(sel)


def _nitsche_terms(space, tm, plan: StabilizationPlan | None, rule: BoundaryRule, beta: float, g_D: Field | None,
                   trip: _Triplets, load: np.ndarray, consistency: bool = True) -> None:
    for c, fr in _boundary_groups(rule):
        dofs = space.cell_dofs[c]
        N, _ = space.eval_basis(fr.xhat, c)
        W = fr.weight
        pen = beta / tm.h[c]
        trip.add(dofs, dofs, pen * np.einsum("qa,qb,q->ab", N, N, W))
        if consistency:
            R, rdofs = plan.flux(c, fr.xhat, fr.x, fr.normal)
            NR = np.einsum("qa,qb,q->ab", N, R, W)
            trip.add(dofs, rdofs, -NR)
            trip.add(rdofs, dofs, -NR.T)
        if g_D is not None:
            g = g_D(fr.x) * W
            np.add.at(load, dofs, pen * (N.T @ g))
            if consistency:
                np.add.at(load, rdofs, -(R.T @ g))


def deactivate_dofs(space: TensorSplineSpace, tm: TrimmedMesh, tol: float = 1e-14) -> np.ndarray:
    """Mask of DOFs whose support keeps at least ``tol`` of its parametric measure."""
    kept = tm.ratio * tm.areas
    num = np.zeros(space.dim)
    den = np.zeros(space.dim)
    np.add.at(num, space.cell_dofs, np.repeat(kept[:, None], space.nloc, axis=1))
    np.add.at(den, space.cell_dofs, np.repeat(tm.areas[:, None], space.nloc, axis=1))
    return num >= tol * den


def _with_identity(A: sp.csr_matrix, active: np.ndarray) -> sp.csr_matrix:
    keep = sp.diags(active.astype(float))
    return (keep @ A @ keep + sp.diags((~active).astype(float))).tocsr()


def assemble_operator(space, tm, gmap, plan: StabilizationPlan, data: ProblemData) -> tuple[sp.csr_matrix, np.ndarray]:
    """Raw Nitsche matrix and load vector, before deactivation and constraints."""
    trip, load = _volume_terms(space, gmap, tm, data.f)
    weak = boundary_rule(tm, data, "weak")
    _nitsche_terms(space, tm, plan, weak, data.beta, data.g_D, trip, load)
    neu = boundary_rule(tm, data, "neumann")
    for c, fr in _boundary_groups(neu):
        N, _ = space.eval_basis(fr.xhat, c)
        np.add.at(load, space.cell_dofs[c], N.T @ (fr.weight * data.g_N(fr.x)))
    return trip.matrix(space.dim), load


def assemble(space, tm, gmap, plan: StabilizationPlan, data: ProblemData, tol: float = 1e-14) -> LinearSystem:
    A, b = assemble_operator(space, tm, gmap, plan, data)
    active = deactivate_dofs(space, tm, tol)
    b = np.where(active, b, 0.0)
    system = LinearSystem(_with_identity(A, active), b, active)
    strong = [s for s, k in sorted(data.sides.items()) if k == "strong"]
    if strong:
        system = apply_strong_bc(system, space, gmap, data.g_D, strong, tm)
    return system


def gram_1h(space, tm, gmap, weak: BoundaryRule) -> sp.csr_matrix:
    """Matrix of ``int grad u . grad v + int_{Gamma_D} u v / h``."""
    trip, _ = _volume_terms(space, gmap, tm, None)
    _nitsche_terms(space, tm, None, weak, 1.0, None, trip, np.zeros(space.dim), consistency=False)
    return trip.matrix(space.dim)


# ---------------------------------------------------------------------------
# strong boundary conditions


def side_dofs(space: TensorSplineSpace, side: str) -> tuple[np.ndarray, int]:
    """Global indices of the DOFs on a side (ordered along it) and the running direction."""
    n1, n2 = space.shape
    axis, value, _ = SIDES[side]
    if axis == 1:
        j = 0 if value == 0.0 else n2 - 1
        return np.arange(n1) + n1 * j, 0
    i = 0 if value == 0.0 else n1 - 1
    return i + n1 * np.arange(n2), 1


def edge_interpolant(space: TensorSplineSpace, gmap: GeometryMap, g_D: Field, side: str) -> np.ndarray:
    """Coefficients of the edge spline collocating ``g_D o F`` at the Greville points."""
    axis, value, _ = SIDES[side]
    _, run = side_dofs(space, side)
    kv = space.kvs[run]
    gr = kv.greville
    B = np.zeros((kv.n, kv.n))
    for k, x in enumerate(gr):
        vals, first = eval_basis(kv, float(x), 0)
        B[k, first : first + kv.degree + 1] = vals[0]
    pts = np.empty((kv.n, 2))
    pts[:, axis] = value
    pts[:, run] = gr
    return np.linalg.solve(B, g_D(gmap.evaluate(pts).x))


def apply_strong_bc(system: LinearSystem, space, gmap, g_D: Field, sides: list[str], tm: TrimmedMesh) -> LinearSystem:
    """Constrain DOFs of fitted sides to the Greville interpolant of ``g_D``.

    Only DOFs whose support on the side meets its kept part are fixed.
    """
    fixed: dict[int, float] = {int(i): float(v) for i, v in zip(system.constrained, system.values)}
    for side in sides:
        dofs, run = side_dofs(space, side)
        kv = space.kvs[run]
        coef = edge_interpolant(space, gmap, g_D, side)
        intervals = tm.side_intervals(side)
        for k, dof in enumerate(dofs):
            lo, hi = kv.support(k)
            if any(min(hi, b) - max(lo, a) > 0 for a, b in intervals) and system.active[dof]:
                fixed[int(dof)] = float(coef[k])
    con = np.array(sorted(fixed), dtype=int)
    return replace(system, constrained=con, values=np.array([fixed[i] for i in con]))


# ---------------------------------------------------------------------------
# solvers and spectra


def solve(system: LinearSystem) -> np.ndarray:
    """Solve with symmetric elimination of constrained DOFs; inactive DOFs are zero.

    The free block is rescaled by its diagonal before the LU factorization:
    basis functions barely touching the domain otherwise produce entries
    many orders of magnitude below the rest.
    """
    u = np.zeros(len(system.rhs))
    u[system.constrained] = system.values
    free = system.free
    A = system.matrix
    b = system.rhs[free] - A[free][:, system.constrained] @ system.values
    Aff = A[free][:, free]
    d = np.abs(Aff.diagonal())
    s = 1.0 / np.sqrt(np.where(d > 0, d, 1.0))
    S = sp.diags(s)
    try:
        lu = spla.splu((S @ Aff @ S).tocsc())
    except RuntimeError as exc:
        raise SolverError(f"factorization failed: {exc}") from exc
    x = s * lu.solve(s * b)
    if not np.all(np.isfinite(x)):
        raise SolverError("non-finite solution")
    u[free] = x
    return u


def _dense(M, mask: np.ndarray | None) -> np.ndarray:
    M = M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)
    if mask is not None:
        M = M[np.ix_(mask, mask)]
    return 0.5 * (M + M.T)


def gen_eig_extremes(A, B, mask: np.ndarray | None = None, deflate: float = 1e-12) -> tuple[float, float]:
    """Extreme eigenvalues of ``A x = lambda B x`` on the B-nondegenerate subspace.

    The pencil is first rescaled by ``diag(B)^(-1/2)`` on both sides (this
    leaves the eigenvalues unchanged) so the deflation threshold acts on a
    well-scaled ``B``.
    """
    A = _dense(A, mask)
    B = _dense(B, mask)
    d = np.diag(B).copy()
    if np.all(d <= 0):
        raise SolverError("B is numerically zero")
    s = np.where(d > 0, 1.0 / np.sqrt(np.where(d > 0, d, 1.0)), 0.0)
    A = A * s[:, None] * s[None, :]
    B = B * s[:, None] * s[None, :]
    lam, vec = np.linalg.eigh(B)
    keep = lam > deflate * lam.max()
    T = vec[:, keep] / np.sqrt(lam[keep])
    ev = np.linalg.eigvalsh(T.T @ A @ T)
    return float(ev[0]), float(ev[-1])


def condition_number(A, mask: np.ndarray | None = None, jacobi: bool = False) -> float:
    """Spectral condition number ``|lambda|_max / |lambda|_min`` of the masked matrix.

    With ``jacobi`` the matrix is first scaled to ``D^-1/2 A D^-1/2`` with
    ``D = |diag A|``; unstabilized Nitsche matrices can have negative
    diagonal entries for basis functions that barely touch the domain.
    """
    M = _dense(A, mask)
    if jacobi:
        d = np.abs(np.diag(M))
        if np.any(d == 0):
            raise SolverError("zero diagonal entry in Jacobi scaling")
        s = 1.0 / np.sqrt(d)
        M = M * s[:, None] * s[None, :]
    ev = np.abs(sla.eigvalsh(M))
    if ev.min() == 0:
        return float("inf")
    return float(ev.max() / ev.min())


# ---------------------------------------------------------------------------
# errors


def error_norms(space, tm, gmap, coeffs: np.ndarray, u: Field, grad_u: Field, weak: BoundaryRule,
                singular: np.ndarray | None = None) -> tuple[float, float]:
    """``(|u - u_h|_{1,h}, ||u - u_h||_{L2})`` on the kept domain.

    ``singular`` is a parametric point where ``u`` is not smooth; cells
    touching it are integrated with a graded composite rule.
    """
    coeffs = np.asarray(coeffs)
    e_grad = e_l2 = 0.0
    boxes = space.cell_boxes
    for c in tm.active_cells:
        b = boxes[c]
        if singular is not None and b[0] <= singular[0] <= b[1] and b[2] <= singular[1] <= b[3]:
            pts, w = tm.graded_rule(c, singular)
        else:
            pts, w = tm.cell_rule(c)
        val, pg = space.eval_basis(pts, c)
        hint = np.broadcast_to(tm.centers[c], pts.shape)
        grad = physical_gradients(gmap, pts, pg, hint)
        x = gmap.evaluate(pts, hint=hint).x
        loc = coeffs[space.cell_dofs[c]]
        du = u(x) - val @ loc
        dg = grad_u(x) - np.einsum("qad,a->qd", grad, loc)
        e_grad += float(np.sum(w * np.sum(dg**2, axis=1)))
        e_l2 += float(np.sum(w * du**2))
    e_bnd = 0.0
    for c, fr in _boundary_groups(weak):
        N, _ = space.eval_basis(fr.xhat, c)
        du = u(fr.x) - N @ coeffs[space.cell_dofs[c]]
        e_bnd += float(np.sum(fr.weight * du**2)) / tm.h[c]
    return float(np.sqrt(e_grad + e_bnd)), float(np.sqrt(e_l2))


def cell_labels_summary(tm: TrimmedMesh) -> dict[str, int]:
    return {lab.name.lower(): int(np.sum(tm.labels == lab)) for lab in Label}
