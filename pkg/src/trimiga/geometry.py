"""Parametric-to-physical maps on the unit square."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .spline import KnotVector, insert_knot, make_open_knot_vector


class GeometryError(ValueError):
    """Non-invertible or otherwise invalid geometry."""


class MapEval(NamedTuple):
    x: np.ndarray  # (N, 2)
    jac: np.ndarray  # (N, 2, 2), jac[:, a, b] = d x_a / d xhat_b
    det: np.ndarray  # (N,)


class BoundaryFrame(NamedTuple):
    """Physical boundary quadrature data (arrays, one row per point)."""

    x: np.ndarray
    weight: np.ndarray
    normal: np.ndarray


@dataclass(frozen=True, eq=False)
class GeometryMap:
    """Identity, axis-aligned affine, or rational (NURBS) map of [0, 1]^2.

    NURBS control nets are stored in homogeneous form ``(w*x, w*y, w)`` with
    shape ``(n1, n2, 3)``.
    """

    kind: str
    offset: np.ndarray = field(default_factory=lambda: np.zeros(2))
    scale: np.ndarray = field(default_factory=lambda: np.ones(2))
    kvs: tuple[KnotVector, KnotVector] | None = None
    control: np.ndarray | None = None
    name: str = ""

    def __post_init__(self) -> None:
        if self.kind not in ("identity", "affine", "nurbs"):
            raise GeometryError(f"unknown map kind {self.kind!r}")
        if self.kind == "nurbs":
            if self.kvs is None or self.control is None:
                raise GeometryError("NURBS map needs knot vectors and control net")
            shape = (self.kvs[0].n, self.kvs[1].n, 3)
            if self.control.shape != shape:
                raise GeometryError(f"control net shape {self.control.shape} != {shape}")
            if np.any(self.control[..., 2] <= 0):
                raise GeometryError("NURBS weights must be positive")
        if self.kind == "affine" and np.any(np.asarray(self.scale) <= 0):
            raise GeometryError("affine scale must be positive")

    @cached_property
    def orientation(self) -> float:
        """+1 for orientation-preserving maps, -1 for reversing ones."""
        det = self.evaluate(np.array([[0.5, 0.5]]), check=False).det[0]
        return 1.0 if det > 0 else -1.0

    @property
    def is_affine(self) -> bool:
        return self.kind != "nurbs"

    def breakpoints(self) -> list[np.ndarray]:
        """Parametric knot lines of the map (empty interior for affine maps)."""
        if self.kind != "nurbs":
            return [np.array([0.0, 1.0]), np.array([0.0, 1.0])]
        return [kv.breakpoints for kv in self.kvs]

    def reduced_continuity(self) -> list[tuple[int, float, int]]:
        """``(direction, knot, continuity)`` for internal knots of the map."""
        out = []
        if self.kind == "nurbs":
            for d, kv in enumerate(self.kvs):
                for xb, m in zip(kv.breakpoints[1:-1], kv.multiplicities[1:-1]):
                    out.append((d, float(xb), kv.degree - int(m)))
        return out

    def evaluate(self, xhat: np.ndarray, hint: np.ndarray | None = None, check: bool = True) -> MapEval:
        """Map points, Jacobians and signed determinants.

        ``hint`` (same shape as ``xhat``) selects the knot span used for each
        point; pass cell centres so points on a knot line use their own cell.
        """
        xhat = np.atleast_2d(np.asarray(xhat, dtype=float))
        n = xhat.shape[0]
        if self.kind == "identity":
            return MapEval(xhat.copy(), np.broadcast_to(np.eye(2), (n, 2, 2)).copy(), np.ones(n))
        if self.kind == "affine":
            s = np.asarray(self.scale, dtype=float)
            jac = np.broadcast_to(np.diag(s), (n, 2, 2)).copy()
            return MapEval(np.asarray(self.offset) + xhat * s, jac, np.full(n, s[0] * s[1]))

        kv1, kv2 = self.kvs
        ref = xhat if hint is None else np.atleast_2d(hint)
        s1 = kv1.find_span(ref[:, 0])
        s2 = kv2.find_span(ref[:, 1])
        d1 = kv1.basis_ders(xhat[:, 0], s1, 1)
        d2 = kv2.basis_ders(xhat[:, 1], s2, 1)
        p1, p2 = kv1.degree, kv2.degree
        i1 = s1[:, None] - p1 + np.arange(p1 + 1)
        i2 = s2[:, None] - p2 + np.arange(p2 + 1)
        P = self.control[i1[:, :, None], i2[:, None, :]]  # (N, p1+1, p2+1, 3)
        Aw = np.einsum("ni,nj,nijc->nc", d1[:, 0], d2[:, 0], P)
        A1 = np.einsum("ni,nj,nijc->nc", d1[:, 1], d2[:, 0], P)
        A2 = np.einsum("ni,nj,nijc->nc", d1[:, 0], d2[:, 1], P)
        w = Aw[:, 2:3]
        x = Aw[:, :2] / w
        dx1 = (A1[:, :2] - x * A1[:, 2:3]) / w
        dx2 = (A2[:, :2] - x * A2[:, 2:3]) / w
        jac = np.stack([dx1, dx2], axis=-1)
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        if check and np.any(det * self.orientation <= 0):
            raise GeometryError("Jacobian determinant changes sign or vanishes")
        return MapEval(x, jac, det)


def map_eval(gmap: GeometryMap, xhat: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Single-point convenience wrapper: ``(x, J, det J)``."""
    if np.any(np.asarray(xhat) < 0) or np.any(np.asarray(xhat) > 1):
        raise GeometryError("point outside the unit square")
    ev = gmap.evaluate(np.asarray(xhat, dtype=float)[None, :])
    return ev.x[0], ev.jac[0], float(ev.det[0])


def identity_map() -> GeometryMap:
    return GeometryMap("identity", name="identity")


def affine_map(lower: tuple[float, float], upper: tuple[float, float]) -> GeometryMap:
    """Axis-aligned map of [0, 1]^2 onto the box ``lower``-``upper``."""
    lo = np.asarray(lower, dtype=float)
    return GeometryMap("affine", offset=lo, scale=np.asarray(upper, dtype=float) - lo, name="affine")


INNER_RADIUS = 1.0
OUTER_RADIUS = 2.0


def quarter_annulus(r_in: float = INNER_RADIUS, r_out: float = OUTER_RADIUS) -> GeometryMap:
    """Biquadratic NURBS quarter annulus; direction 1 angular, direction 2 radial."""
    kv = make_open_knot_vector([0.0, 1.0], 2, 0)
    s = np.sqrt(0.5)
    dirs = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    w = np.array([1.0, s, 1.0])
    radii = np.array([r_in, 0.5 * (r_in + r_out), r_out])
    ctrl = np.empty((3, 3, 3))
    for i in range(3):
        for j in range(3):
            ctrl[i, j, :2] = w[i] * radii[j] * dirs[i]
            ctrl[i, j, 2] = w[i]
    return GeometryMap("nurbs", kvs=(kv, kv), control=ctrl, name="quarter_annulus")


def c0_quarter_annulus(knot: float = 0.75, value: float = 1.0) -> GeometryMap:
    """Quarter annulus with a C0 kink along the angular knot line ``knot``.

    The knot is inserted twice in the angular direction; the interpolatory
    control point of that column in the middle radial row then gets its
    homogeneous second coordinate set to ``value`` (default 1.0; with
    radii 1 and 2 a value of 0.5 folds the map).
    """
    base = quarter_annulus()
    kv1, kv2 = base.kvs
    ctrl = base.control
    for _ in range(kv1.degree):
        kv1, ctrl = insert_knot(kv1, ctrl, knot)
    col = int(np.searchsorted(kv1.knots, knot, side="left")) - 1
    ctrl = ctrl.copy()
    ctrl[col, 1, 1] = value
    gmap = GeometryMap("nurbs", kvs=(kv1, kv2), control=ctrl, name="c0_quarter_annulus")
    g = np.linspace(0.0, 1.0, 101)
    pts = np.array([(a, b) for a in np.concatenate([g, [knot - 1e-6, knot + 1e-6]]) for b in g])
    gmap.evaluate(pts)  # raises GeometryError if the modification folds the map
    return gmap


def boundary_pushforward(
    gmap: GeometryMap,
    xhat: np.ndarray,
    tangent: np.ndarray,
    weights: np.ndarray | None = None,
    outward_left: bool = False,
    hint: np.ndarray | None = None,
) -> BoundaryFrame:
    """Push parametric curve points and tangents to physical frames.

    ``weights`` are parametric quadrature weights of the curve parameter; the
    physical weight is ``weights * |J t|``. The normal is the unit vector
    orthogonal to ``J t`` on the right (or left if ``outward_left``), with
    the sides taken in the parametric orientation (flipped for reversing maps).
    """
    xhat = np.atleast_2d(xhat)
    tangent = np.atleast_2d(np.asarray(tangent, dtype=float))
    if np.any(np.linalg.norm(tangent, axis=1) == 0):
        raise GeometryError("degenerate boundary tangent")
    ev = gmap.evaluate(xhat, hint=hint)
    t = np.einsum("nab,nb->na", ev.jac, tangent)
    length = np.linalg.norm(t, axis=1)
    normal = np.column_stack([t[:, 1], -t[:, 0]]) / length[:, None]
    if outward_left:
        normal = -normal
    normal = normal * gmap.orientation
    w = length if weights is None else np.asarray(weights) * length
    return BoundaryFrame(ev.x, w, normal)


GEOMETRIES = {
    "identity": identity_map,
    "quarter_annulus": quarter_annulus,
    "c0_quarter_annulus": c0_quarter_annulus,
}
