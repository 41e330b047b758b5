"""Univariate and tensor-product B-spline spaces on the unit interval/square.

Evaluation follows the Cox-de Boor recursion with the usual right-continuous
convention at breakpoints (the last span is closed at x = 1). Coefficients of
tensor-product splines are ordered lexicographically with the first direction
running fastest: ``index = i1 + n1 * i2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from math import comb
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

KNOT_TOL = 1e-14


class SplineError(ValueError):
    """Invalid knot data or an out-of-range spline request."""


@dataclass(frozen=True, eq=False)
class KnotVector:
    """A p-open knot vector on [0, 1]."""

    knots: np.ndarray
    degree: int

    def __post_init__(self) -> None:
        knots = np.array(self.knots, dtype=float)
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        p = self.degree
        if p < 1:
            raise SplineError("degree must be >= 1")
        if knots.ndim != 1 or knots.size < 2 * p + 2:
            raise SplineError("knot vector too short for the degree")
        if np.any(np.diff(knots) < 0):
            raise SplineError("knots must be nondecreasing")
        if np.any(knots[: p + 1] != 0.0) or np.any(knots[-p - 1 :] != 1.0):
            raise SplineError("knot vector must be p-open on [0, 1]")
        if np.any(self.multiplicities[1:-1] > p):
            raise SplineError("internal knot multiplicity exceeds the degree")

    @property
    def n(self) -> int:
        """Number of basis functions."""
        return self.knots.size - self.degree - 1

    @cached_property
    def breakpoints(self) -> np.ndarray:
        return np.unique(self.knots)

    @cached_property
    def multiplicities(self) -> np.ndarray:
        _, counts = np.unique(self.knots, return_counts=True)
        return counts

    @cached_property
    def spans(self) -> np.ndarray:
        """Knot-span index of every nonempty element, left to right."""
        idx = np.nonzero(np.diff(self.knots) > 0)[0]
        return idx

    @property
    def num_elements(self) -> int:
        return self.spans.size

    @cached_property
    def element_bounds(self) -> np.ndarray:
        s = self.spans
        return np.column_stack([self.knots[s], self.knots[s + 1]])

    @cached_property
    def greville(self) -> np.ndarray:
        p = self.degree
        t = self.knots
        return np.array([t[i + 1 : i + p + 1].mean() for i in range(self.n)])

    def find_span(self, x: np.ndarray | float) -> np.ndarray:
        """Span index of ``x`` (right-continuous, last span closed at 1)."""
        x = np.asarray(x, dtype=float)
        s = np.searchsorted(self.knots, x, side="right") - 1
        return np.clip(s, self.degree, self.n - 1)

    def find_element(self, x: np.ndarray | float) -> np.ndarray:
        """Element index containing ``x`` (same convention as :meth:`find_span`)."""
        return np.searchsorted(self.spans, self.find_span(x))

    def basis_ders(self, x: np.ndarray, span: np.ndarray, nder: int = 1) -> np.ndarray:
        """Nonzero basis functions of ``span`` and their derivatives at ``x``.

        The span is not re-derived from ``x``: evaluating at a point outside
        the span returns the polynomial continuation of the span's pieces.

        Returns an array of shape ``(len(x), nder + 1, p + 1)``.
        """
        return _basis_funs_ders(self.knots, self.degree, np.atleast_1d(x), np.atleast_1d(span), nder)

    def support(self, i: int) -> tuple[float, float]:
        return float(self.knots[i]), float(self.knots[i + self.degree + 1])


def _basis_funs_ders(U: np.ndarray, p: int, x: np.ndarray, span: np.ndarray, nder: int) -> np.ndarray:
    # Vectorised Piegl & Tiller A2.3.
    x = np.asarray(x, dtype=float)
    span = np.broadcast_to(np.asarray(span, dtype=int), x.shape)
    npts = x.size
    ndu = np.zeros((p + 1, p + 1, npts))
    ndu[0, 0] = 1.0
    left = np.zeros((p + 1, npts))
    right = np.zeros((p + 1, npts))
    for j in range(1, p + 1):
        left[j] = x - U[span + 1 - j]
        right[j] = U[span + j] - x
        saved = np.zeros(npts)
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved

    ders = np.zeros((nder + 1, p + 1, npts))
    ders[0] = ndu[:, p]
    a = np.zeros((2, p + 1, npts))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, nder + 1):
            d = np.zeros(npts)
            rk, pk = r - k, p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d = d + a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d = d + a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1
    fac = p
    for k in range(1, nder + 1):
        ders[k] *= fac
        fac *= p - k
    return np.moveaxis(ders, 2, 0)


def make_open_knot_vector(
    breakpoints: Sequence[float],
    degree: int,
    continuity: int | Sequence[int],
) -> KnotVector:
    """Open knot vector with internal multiplicity ``degree - continuity``.

    ``continuity`` may be a single integer or one integer per internal
    breakpoint.
    """
    b = np.asarray(breakpoints, dtype=float)
    if b.ndim != 1 or b.size < 2:
        raise SplineError("need at least two breakpoints")
    if b[0] != 0.0 or b[-1] != 1.0:
        raise SplineError("breakpoints must start at 0 and end at 1")
    if np.any(np.diff(b) <= 0):
        raise SplineError("breakpoints must be strictly increasing")
    inner = b[1:-1]
    k = np.broadcast_to(np.asarray(continuity, dtype=int), inner.shape)
    if np.any(k < 0) or np.any(k > degree - 1):
        raise SplineError("continuity must lie in [0, degree - 1]")
    knots = [0.0] * (degree + 1)
    for xb, kb in zip(inner, k):
        knots.extend([float(xb)] * (degree - int(kb)))
    knots.extend([1.0] * (degree + 1))
    return KnotVector(np.array(knots), degree)


def uniform_knot_vector(num_elements: int, degree: int, continuity: int | None = None) -> KnotVector:
    k = degree - 1 if continuity is None else continuity
    return make_open_knot_vector(np.linspace(0.0, 1.0, num_elements + 1), degree, k)


def eval_basis(kv: KnotVector, x: float, max_order: int = 0) -> tuple[np.ndarray, int]:
    """Nonzero basis values and derivatives at a single point.

    Returns ``(table, first)`` where ``table[k, j]`` is the ``k``-th
    derivative of basis function ``first + j``.
    """
    if not 0.0 <= x <= 1.0:
        raise SplineError(f"x={x} outside [0, 1]")
    span = int(kv.find_span(x))
    table = kv.basis_ders(np.array([x]), np.array([span]), max_order)[0]
    return table, span - kv.degree


def eval_spline(kv: KnotVector, coeffs: np.ndarray, x: np.ndarray, nder: int = 0) -> np.ndarray:
    """Evaluate a 1D spline (or its ``nder``-th derivative) at points ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    coeffs = np.asarray(coeffs, dtype=float)
    span = kv.find_span(x)
    ders = kv.basis_ders(x, span, nder)[:, nder, :]
    idx = span[:, None] - kv.degree + np.arange(kv.degree + 1)
    return np.einsum("nj,nj...->n...", ders, coeffs[idx])


def insert_knot(kv: KnotVector, coeffs: np.ndarray, xbar: float) -> tuple[KnotVector, np.ndarray]:
    """Insert ``xbar`` once (Boehm). ``coeffs`` may carry trailing axes."""
    if not 0.0 < xbar < 1.0:
        raise SplineError("inserted knot must lie strictly inside (0, 1)")
    U, p = kv.knots, kv.degree
    P = np.asarray(coeffs, dtype=float)
    if P.shape[0] != kv.n:
        raise SplineError("coefficient count does not match the knot vector")
    s = int(np.sum(U == xbar))
    if s + 1 > p:
        raise SplineError("knot multiplicity would exceed the degree")
    k = int(np.searchsorted(U, xbar, side="right") - 1)
    Q = np.empty((P.shape[0] + 1,) + P.shape[1:])
    Q[: k - p + 1] = P[: k - p + 1]
    Q[k - s + 1 :] = P[k - s :]
    for i in range(k - p + 1, k - s + 1):
        alpha = (xbar - U[i]) / (U[i + p] - U[i])
        Q[i] = alpha * P[i] + (1.0 - alpha) * P[i - 1]
    return KnotVector(np.insert(U, k + 1, xbar), p), Q


def bezier_extraction_1d(kv: KnotVector) -> np.ndarray:
    """Per-element extraction operators, shape ``(num_elements, p+1, p+1)``.

    ``C[e] @ c[span-p : span+1]`` gives the Bernstein coefficients of the
    spline on element ``e``.
    """
    p = kv.degree
    cur = kv
    P = np.eye(kv.n)
    for xb, m in zip(kv.breakpoints[1:-1], kv.multiplicities[1:-1]):
        for _ in range(p - m):
            cur, P = insert_knot(cur, P, float(xb))
    ops = np.empty((kv.num_elements, p + 1, p + 1))
    for e, span in enumerate(kv.spans):
        ops[e] = P[e * p : e * p + p + 1, span - p : span + 1]
    return ops


def bernstein_ders(p: int, t: np.ndarray, nder: int = 1) -> np.ndarray:
    """Bernstein polynomials of degree ``p`` and derivatives at any real ``t``.

    Shape ``(len(t), nder + 1, p + 1)``; no restriction to [0, 1] so the
    result doubles as the polynomial continuation outside the element.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.zeros((t.size, nder + 1, p + 1))
    for k in range(nder + 1):
        q = p - k
        if q < 0:
            break
        base = np.stack([comb(q, i) * t**i * (1.0 - t) ** (q - i) for i in range(q + 1)], axis=-1)
        # k-th derivative: p!/(p-k)! * sum_j (-1)^(k-j) C(k,j) B^{p-k}_{i-j}
        scale = float(np.prod(np.arange(p, p - k, -1))) if k else 1.0
        for i in range(p + 1):
            acc = np.zeros(t.size)
            for j in range(k + 1):
                m = i - j
                if 0 <= m <= q:
                    acc += (-1) ** (k - j) * comb(k, j) * base[:, m]
            out[:, k, i] = scale * acc
    return out


def gauss_legendre(n: int, a: float = 0.0, b: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return a + (b - a) * (x + 1.0) / 2.0, w * (b - a) / 2.0


class TensorSplineSpace:
    """Tensor product of two open knot vectors with a common degree."""

    def __init__(self, kv1: KnotVector, kv2: KnotVector):
        if kv1.degree != kv2.degree:
            raise SplineError("both directions must share the degree")
        self.kv1 = kv1
        self.kv2 = kv2
        self.degree = kv1.degree

    @property
    def kvs(self) -> tuple[KnotVector, KnotVector]:
        return self.kv1, self.kv2

    @property
    def shape(self) -> tuple[int, int]:
        return self.kv1.n, self.kv2.n

    @property
    def dim(self) -> int:
        return self.kv1.n * self.kv2.n

    @property
    def nloc(self) -> int:
        return (self.degree + 1) ** 2

    @property
    def cell_shape(self) -> tuple[int, int]:
        return self.kv1.num_elements, self.kv2.num_elements

    @property
    def num_cells(self) -> int:
        return self.kv1.num_elements * self.kv2.num_elements

    def cell_index(self, e1: int, e2: int) -> int:
        return e1 + self.kv1.num_elements * e2

    def cell_ij(self, c: np.ndarray | int) -> tuple[np.ndarray, np.ndarray]:
        ne1 = self.kv1.num_elements
        return np.asarray(c) % ne1, np.asarray(c) // ne1

    @cached_property
    def cell_boxes(self) -> np.ndarray:
        """``(num_cells, 4)`` array of ``(x0, x1, y0, y1)``."""
        b1, b2 = self.kv1.element_bounds, self.kv2.element_bounds
        e1, e2 = self.cell_ij(np.arange(self.num_cells))
        return np.column_stack([b1[e1, 0], b1[e1, 1], b2[e2, 0], b2[e2, 1]])

    @cached_property
    def cell_dofs(self) -> np.ndarray:
        """``(num_cells, nloc)`` global indices of the nonzero basis functions."""
        p = self.degree
        e1, e2 = self.cell_ij(np.arange(self.num_cells))
        s1 = self.kv1.spans[e1] - p
        s2 = self.kv2.spans[e2] - p
        loc = np.arange(p + 1)
        i1 = s1[:, None, None] + loc[None, None, :]
        i2 = s2[:, None, None] + loc[None, :, None]
        return (i1 + self.kv1.n * i2).reshape(self.num_cells, -1)

    def find_cell(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return self.cell_index(self.kv1.find_element(pts[:, 0]), self.kv2.find_element(pts[:, 1]))

    def eval_basis(self, pts: np.ndarray, cells: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Values ``(N, nloc)`` and parametric gradients ``(N, nloc, 2)``.

        The local basis is that of ``cells`` (one per point); points outside
        their cell get the polynomial continuation of the cell's pieces.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        cells = np.broadcast_to(np.asarray(cells), (pts.shape[0],))
        e1, e2 = self.cell_ij(cells)
        d1 = self.kv1.basis_ders(pts[:, 0], self.kv1.spans[e1], 1)
        d2 = self.kv2.basis_ders(pts[:, 1], self.kv2.spans[e2], 1)
        val = (d2[:, 0, :, None] * d1[:, 0, None, :]).reshape(pts.shape[0], -1)
        gx = (d2[:, 0, :, None] * d1[:, 1, None, :]).reshape(pts.shape[0], -1)
        gy = (d2[:, 1, :, None] * d1[:, 0, None, :]).reshape(pts.shape[0], -1)
        return val, np.stack([gx, gy], axis=-1)

    def evaluate(self, coeffs: np.ndarray, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        cells = self.find_cell(pts)
        val, _ = self.eval_basis(pts, cells)
        return np.einsum("na,na->n", val, np.asarray(coeffs)[self.cell_dofs[cells]])

    def tensor_rule(self, order: int) -> tuple[np.ndarray, np.ndarray]:
        """Gauss points ``(num_cells, order**2, 2)`` and weights per cell."""
        g, w = gauss_legendre(order)
        boxes = self.cell_boxes
        hx = boxes[:, 1] - boxes[:, 0]
        hy = boxes[:, 3] - boxes[:, 2]
        X = boxes[:, 0, None] + hx[:, None] * g[None, :]
        Y = boxes[:, 2, None] + hy[:, None] * g[None, :]
        pts = np.stack(
            [np.broadcast_to(X[:, None, :], (len(boxes), order, order)),
             np.broadcast_to(Y[:, :, None], (len(boxes), order, order))],
            axis=-1,
        ).reshape(len(boxes), -1, 2)
        wts = (hx * hy)[:, None] * np.outer(w, w).ravel()[None, :]
        return pts, wts

    @cached_property
    def extraction(self) -> np.ndarray:
        """Tensor Bezier extraction, shape ``(num_cells, nloc, nloc)``."""
        c1 = bezier_extraction_1d(self.kv1)
        c2 = bezier_extraction_1d(self.kv2)
        e1, e2 = self.cell_ij(np.arange(self.num_cells))
        return np.einsum("cij,ckl->cikjl", c2[e2], c1[e1]).reshape(self.num_cells, self.nloc, self.nloc)


def bezier_extract(space: TensorSplineSpace) -> np.ndarray:
    """Per-cell maps from local spline coefficients to tensor Bernstein coefficients."""
    return space.extraction


def bernstein_tensor(p: int, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Bernstein values ``(N, (p+1)^2)`` and reference gradients ``(N, ., 2)``."""
    t = np.atleast_2d(t)
    b1 = bernstein_ders(p, t[:, 0], 1)
    b2 = bernstein_ders(p, t[:, 1], 1)
    val = (b2[:, 0, :, None] * b1[:, 0, None, :]).reshape(len(t), -1)
    gx = (b2[:, 0, :, None] * b1[:, 1, None, :]).reshape(len(t), -1)
    gy = (b2[:, 1, :, None] * b1[:, 0, None, :]).reshape(len(t), -1)
    return val, np.stack([gx, gy], axis=-1)


def l2_project_global(
    space: TensorSplineSpace,
    f: Callable[[np.ndarray], np.ndarray],
    quad_order: int | None = None,
) -> np.ndarray:
    """Global L2 projection of ``f`` onto the untrimmed space on [0, 1]^2."""
    order = quad_order or space.degree + 2
    pts, wts = space.tensor_rule(order)
    nc, nq, _ = pts.shape
    cells = np.repeat(np.arange(nc), nq)
    val, _ = space.eval_basis(pts.reshape(-1, 2), cells)
    val = val.reshape(nc, nq, -1)
    fv = np.asarray(f(pts.reshape(-1, 2)), dtype=float).reshape(nc, nq)
    loc_m = np.einsum("cqa,cqb,cq->cab", val, val, wts)
    loc_b = np.einsum("cqa,cq,cq->ca", val, fv, wts)
    dofs = space.cell_dofs
    rows = np.repeat(dofs, space.nloc, axis=1).ravel()
    cols = np.tile(dofs, (1, space.nloc)).ravel()
    M = sp.coo_matrix((loc_m.ravel(), (rows, cols)), shape=(space.dim, space.dim)).tocsc()
    b = np.bincount(dofs.ravel(), weights=loc_b.ravel(), minlength=space.dim)
    return spla.spsolve(M, b)
