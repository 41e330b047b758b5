"""Flux operators replacing the normal derivative on cut cells.

On a cut cell ``K`` the Nitsche terms use ``R(v)`` in place of ``dv/dn``.
Good cells keep the plain normal derivative. A bad cell borrows the
polynomial of a good neighbour ``K'`` and evaluates its continuation on
``K``: either the parametric polynomial of the spline on ``K'`` (exact
Bezier extension) or the L2 projection of the spline onto physical
polynomials of coordinate degree ``p`` on ``K'``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .geometry import GeometryMap
from .spline import TensorSplineSpace, bernstein_tensor, gauss_legendre
from .trimming import BoundaryRule, Label, TrimmedMesh

MODES = ("none", "parametric", "physical")


class StabilizationError(ValueError):
    pass


def physical_gradients(gmap: GeometryMap, xhat: np.ndarray, pgrad: np.ndarray, hint: np.ndarray) -> np.ndarray:
    """Push parametric gradients ``(N, m, 2)`` to physical ones via ``J^-T``."""
    jac = gmap.evaluate(xhat, hint=hint).jac
    inv_t = np.linalg.inv(jac).transpose(0, 2, 1)
    return np.einsum("nab,nmb->nma", inv_t, pgrad)


def _legendre_1d(p: int, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    vals = np.polynomial.legendre.legvander(s, p)
    ders = np.empty_like(vals)
    for k in range(p + 1):
        ders[:, k] = np.polynomial.legendre.legval(s, np.polynomial.legendre.legder(np.eye(p + 1)[k]))
    return vals, ders


@dataclass(frozen=True)
class PhysicalBasis:
    """Orthonormal basis of physical ``Q_p`` on a cell.

    Tensor Legendre polynomials on the bounding box ``lo``-``hi``, made
    orthonormal in ``L2(K')`` by ``coef = L @ inv(R)``.
    """

    p: int
    lo: np.ndarray
    hi: np.ndarray
    rinv: np.ndarray

    def raw(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        scale = 2.0 / (self.hi - self.lo)
        s = (x - self.lo) * scale - 1.0
        vx, dx = _legendre_1d(self.p, s[:, 0])
        vy, dy = _legendre_1d(self.p, s[:, 1])
        n = len(x)
        val = (vy[:, :, None] * vx[:, None, :]).reshape(n, -1)
        gx = (vy[:, :, None] * dx[:, None, :]).reshape(n, -1) * scale[0]
        gy = (dy[:, :, None] * vx[:, None, :]).reshape(n, -1) * scale[1]
        return val, np.stack([gx, gy], axis=-1)

    def __call__(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        val, grad = self.raw(np.atleast_2d(x))
        return val @ self.rinv, np.einsum("nmd,mk->nkd", grad, self.rinv)


class StabilizationPlan:
    """Per-cut-cell flux evaluator.

    ``source[K]`` is the cell whose polynomial supplies ``R`` on ``K``;
    it equals ``K`` for good cells and for ``mode == "none"``.
    """

    def __init__(self, space: TensorSplineSpace, gmap: GeometryMap, tm: TrimmedMesh, mode: str = "parametric",
                 quad_order: int | None = None):
        if mode not in MODES:
            raise StabilizationError(f"unknown stabilization mode {mode!r}")
        self.space = space
        self.gmap = gmap
        self.tm = tm
        self.mode = mode
        self.quad_order = quad_order or space.degree + 2
        self.source: dict[int, int] = {}
        for c in tm.cut_cells:
            c = int(c)
            bad = tm.labels[c] == Label.CUT_BAD
            self.source[c] = tm.neighbor[c] if (bad and mode != "none") else c
        self._projections: dict[int, tuple[PhysicalBasis, np.ndarray]] = {}

    def covers(self, cell: int) -> bool:
        return cell in self.source

    def source_of(self, cell: int) -> int:
        return self.source.get(int(cell), int(cell))

    # -- the three realizations ----------------------------------------------
    def plain_flux(self, cell: int, xhat: np.ndarray, normal: np.ndarray) -> np.ndarray:
        _, pg = self.space.eval_basis(xhat, cell)
        hint = np.broadcast_to(self.tm.centers[cell], xhat.shape)
        grad = physical_gradients(self.gmap, xhat, pg, hint)
        return np.einsum("nmd,nd->nm", grad, normal)

    def parametric_flux(self, cell: int, src: int, xhat: np.ndarray, normal: np.ndarray) -> np.ndarray:
        """Gradient of the Bezier polynomial of ``src`` continued to points of ``cell``."""
        x0, x1, y0, y1 = self.space.cell_boxes[src]
        size = np.array([x1 - x0, y1 - y0])
        t = (xhat - np.array([x0, y0])) / size
        _, bg = bernstein_tensor(self.space.degree, t)
        bg = bg / size
        pg = np.einsum("nkd,kj->njd", bg, self.space.extraction[src])
        hint = np.broadcast_to(self.tm.centers[cell], xhat.shape)
        grad = physical_gradients(self.gmap, xhat, pg, hint)
        return np.einsum("nmd,nd->nm", grad, normal)

    def projection(self, src: int) -> tuple[PhysicalBasis, np.ndarray]:
        """Orthonormal basis on ``F(Q')`` and the matrix taking local spline
        coefficients to its expansion coefficients."""
        if src not in self._projections:
            space, p = self.space, self.space.degree
            x0, x1, y0, y1 = space.cell_boxes[src]
            g, w = gauss_legendre(self.quad_order)
            X, Y = np.meshgrid(x0 + (x1 - x0) * g, y0 + (y1 - y0) * g)
            pts = np.column_stack([X.ravel(), Y.ravel()])
            wts = np.outer(w, w).ravel() * (x1 - x0) * (y1 - y0)
            ev = self.gmap.evaluate(pts, hint=np.broadcast_to(self.tm.centers[src], pts.shape))
            wts = wts * np.abs(ev.det)
            lo, hi = ev.x.min(axis=0), ev.x.max(axis=0)
            corners = self.gmap.evaluate(
                np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]]),
                hint=np.broadcast_to(self.tm.centers[src], (4, 2)),
            ).x
            lo, hi = np.minimum(lo, corners.min(axis=0)), np.maximum(hi, corners.max(axis=0))
            basis = PhysicalBasis(p, lo, hi, np.eye((p + 1) ** 2))
            L, _ = basis.raw(ev.x)
            sw = np.sqrt(wts)[:, None]
            _, R = np.linalg.qr(sw * L)
            rinv = sla.solve_triangular(R, np.eye(R.shape[0]))
            basis = PhysicalBasis(p, lo, hi, rinv)
            psi, _ = basis(ev.x)
            phi, _ = space.eval_basis(pts, src)
            coef = psi.T @ (wts[:, None] * phi)
            self._projections[src] = (basis, coef)
        return self._projections[src]

    def physical_flux(self, src: int, x: np.ndarray, normal: np.ndarray) -> np.ndarray:
        basis, coef = self.projection(src)
        _, grad = basis(x)
        return np.einsum("nkd,nd->nk", grad, normal) @ coef

    # -- public entry --------------------------------------------------------
    def flux(self, cell: int, xhat: np.ndarray, x: np.ndarray, normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Rows mapping local coefficients of the source cell to ``R(v)`` at the frames.

        Returns ``(rows, dofs)`` with ``rows`` of shape ``(N, nloc)``.
        """
        cell = int(cell)
        src = self.source_of(cell)
        dofs = self.space.cell_dofs[src]
        if src == cell:
            return self.plain_flux(cell, xhat, normal), dofs
        if self.mode == "parametric":
            return self.parametric_flux(cell, src, xhat, normal), dofs
        return self.physical_flux(src, x, normal), dofs


def parametric_flux_operator(plan: StabilizationPlan, k_bad: int, k_good: int):
    """Callable ``(xhat, normal) -> rows`` for the Bezier extension from ``k_good``."""
    return lambda xhat, normal: plan.parametric_flux(k_bad, k_good, np.atleast_2d(xhat), np.atleast_2d(normal))


def physical_flux_operator(plan: StabilizationPlan, k_good: int):
    """Callable ``(x, normal) -> rows`` for the physical L2 projection on ``k_good``."""
    return lambda x, normal: plan.physical_flux(k_good, np.atleast_2d(x), np.atleast_2d(normal))


def eval_Rh(plan: StabilizationPlan, coeffs: np.ndarray, frames: BoundaryRule) -> np.ndarray:
    """Flux values ``R(v_h)`` at every frame."""
    out = np.empty(len(frames))
    for c in np.unique(frames.cell):
        sel = frames.cell == c
        if plan.tm.labels[c] in (Label.CUT_GOOD, Label.CUT_BAD) and not plan.covers(int(c)):
            raise StabilizationError(f"cell {c} missing from the plan")
        rows, dofs = plan.flux(int(c), frames.xhat[sel], frames.x[sel], frames.normal[sel])
        out[sel] = rows @ np.asarray(coeffs)[dofs]
    return out


def local_stiffness(space: TensorSplineSpace, gmap: GeometryMap, tm: TrimmedMesh, cell: int) -> np.ndarray:
    """Stiffness of the local basis of ``cell`` on the kept part of the cell."""
    pts, w = tm.cell_rule(cell)
    if len(w) == 0:
        return np.zeros((space.nloc, space.nloc))
    _, pg = space.eval_basis(pts, cell)
    grad = physical_gradients(gmap, pts, pg, np.broadcast_to(tm.centers[cell], pts.shape))
    return np.einsum("qad,qbd,q->ab", grad, grad, w)


def stability_ratio(plan: StabilizationPlan, cell: int, frames: BoundaryRule | None = None) -> float:
    """Largest ``h_K ||R v||^2_{Gamma_K} / ||grad v||^2_{Omega cap K'}`` over local ``v``.

    ``frames`` defaults to the trim-curve rule of ``cell``. Local constants,
    the null space of the denominator, are deflated.
    """
    tm = plan.tm
    if frames is None:
        rule = tm.trim_rule()
        frames = rule.select(rule.cell == cell)
    src = plan.source_of(cell)
    rows, _ = plan.flux(cell, frames.xhat, frames.x, frames.normal)
    num = tm.h[cell] * np.einsum("qa,qb,q->ab", rows, rows, frames.weight)
    den = local_stiffness(plan.space, plan.gmap, tm, src)
    lam, vec = np.linalg.eigh(den)
    keep = lam > 1e-12 * lam.max()
    if not np.any(keep):
        raise StabilizationError("zero gradient form")
    T = vec[:, keep] / np.sqrt(lam[keep])
    return float(np.linalg.eigvalsh(T.T @ num @ T).max())
