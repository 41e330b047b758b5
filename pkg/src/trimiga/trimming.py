"""Trim regions, cut-cell quadrature and the trimmed Bezier mesh.

All trimming happens in the parametric square. The kept part of a cut cell
is described by a closed loop of boundary pieces (segments and circular
arcs) oriented with the kept region on the left; quadrature comes from
axis-aligned boxes where possible and otherwise from curved sectors swept
from a star centre of the loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable

import numpy as np

from .geometry import GeometryMap, boundary_pushforward
from .spline import TensorSplineSpace, gauss_legendre

GEOM_TOL = 1e-13


class TrimmingError(ValueError):
    """Unsupported cut configuration or a violated mesh assumption."""


class Label(IntEnum):
    INTERIOR = 0
    EXTERIOR = 1
    CUT_GOOD = 2
    CUT_BAD = 3


# ---------------------------------------------------------------------------
# boundary pieces


@dataclass(frozen=True, eq=False)
class Segment:
    a: np.ndarray
    b: np.ndarray
    trim: bool = False

    def points(self, s: np.ndarray) -> np.ndarray:
        return self.a + np.asarray(s)[:, None] * (self.b - self.a)

    def tangents(self, s: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.b - self.a, (len(s), 2))

    @property
    def length(self) -> float:
        return float(np.hypot(*(self.b - self.a)))

    curved = False


@dataclass(frozen=True, eq=False)
class Arc:
    center: np.ndarray
    radius: float
    phi0: float
    phi1: float
    trim: bool = True

    def points(self, s: np.ndarray) -> np.ndarray:
        phi = self.phi0 + np.asarray(s) * (self.phi1 - self.phi0)
        return self.center + self.radius * np.column_stack([np.cos(phi), np.sin(phi)])

    def tangents(self, s: np.ndarray) -> np.ndarray:
        phi = self.phi0 + np.asarray(s) * (self.phi1 - self.phi0)
        return self.radius * (self.phi1 - self.phi0) * np.column_stack([-np.sin(phi), np.cos(phi)])

    @property
    def length(self) -> float:
        return abs(self.phi1 - self.phi0) * self.radius

    @property
    def a(self) -> np.ndarray:
        return self.points(np.array([0.0]))[0]

    @property
    def b(self) -> np.ndarray:
        return self.points(np.array([1.0]))[0]

    curved = True


def _cross(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def box_rule(box: Iterable[float], order: int) -> tuple[np.ndarray, np.ndarray]:
    x0, x1, y0, y1 = box
    gx, wx = gauss_legendre(order, x0, x1)
    gy, wy = gauss_legendre(order, y0, y1)
    X, Y = np.meshgrid(gx, gy)
    return np.column_stack([X.ravel(), Y.ravel()]), np.outer(wy, wx).ravel()


def sector_rule(center: np.ndarray, piece, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature on the region swept from ``center`` to a boundary piece."""
    ns = order + 2 if piece.curved else order
    s, ws = gauss_legendre(ns)
    t, wt = gauss_legendre(order + 1)
    c = piece.points(s)
    dc = piece.tangents(s)
    rel = c - center
    det = _cross(rel, dc)
    pts = center + t[:, None, None] * rel[None, :, :]
    wts = (wt * t)[:, None] * (ws * det)[None, :]
    return pts.reshape(-1, 2), wts.ravel()


def _sector_dets(center: np.ndarray, piece, samples: int = 9) -> np.ndarray:
    s = np.linspace(0.0, 1.0, samples)
    return _cross(piece.points(s) - center, piece.tangents(s))


def star_center(pieces: list) -> np.ndarray | None:
    """A point from which every boundary piece is seen with positive orientation."""
    verts = [p.a for p in pieces] + [p.points(np.array([0.5]))[0] for p in pieces if p.curved]
    candidates = [np.mean(np.array(verts), axis=0)] + verts
    scale = max(p.length for p in pieces) ** 2
    best, best_score = None, -np.inf
    for v in candidates:
        score = np.inf
        ok = True
        for piece in pieces:
            d = _sector_dets(v, piece)
            if np.all(np.abs(d) <= GEOM_TOL * scale) and not piece.curved:
                continue  # centre on the line of this segment: zero-area sector
            if np.any(d <= GEOM_TOL * scale * (-1.0)) or np.all(d <= 0):
                ok = False
                break
            score = min(score, float(d.min()) / scale)
        if ok and score > best_score:
            best, best_score = v, score
    return best


def star_rule(pieces: list, order: int) -> tuple[np.ndarray, np.ndarray] | None:
    v = star_center(pieces)
    if v is None:
        return None
    pts, wts = [], []
    for piece in pieces:
        if not piece.curved and np.all(np.abs(_sector_dets(v, piece, 3)) <= GEOM_TOL * piece.length**2):
            continue
        p, w = sector_rule(v, piece, order)
        pts.append(p)
        wts.append(w)
    return np.concatenate(pts), np.concatenate(wts)


def _box_corners(box) -> np.ndarray:
    x0, x1, y0, y1 = box
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)


def _polygon_area(poly: np.ndarray) -> float:
    return 0.5 * float(np.sum(_cross(poly, np.roll(poly, -1, axis=0))))


@dataclass
class CutResult:
    """Kept part of one cell: quadrature (parametric measure) and trim pieces."""

    points: np.ndarray
    weights: np.ndarray
    trim: list = field(default_factory=list)

    @property
    def area(self) -> float:
        return float(self.weights.sum())


# ---------------------------------------------------------------------------
# regions


class TrimRegion:
    """Base class: the kept parametric region ``Omega_hat`` inside [0, 1]^2."""

    space = "parametric"

    def inside(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def classify_box(self, box) -> int:
        """+1 if the box is kept entirely, 0 if removed entirely, -1 if cut."""
        raise NotImplementedError

    def cut_box(self, box, order: int) -> CutResult:
        raise NotImplementedError

    def segment_params(self, a: np.ndarray, b: np.ndarray) -> list[float]:
        """Parameters in (0, 1) where segment ``a``-``b`` crosses the trim curve."""
        raise NotImplementedError

    def clip_segment(self, a, b) -> list[tuple[np.ndarray, np.ndarray]]:
        """Sub-segments of ``a``-``b`` lying in the kept region."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        ts = sorted({0.0, 1.0, *[t for t in self.segment_params(a, b) if GEOM_TOL < t < 1 - GEOM_TOL]})
        out: list[list[float]] = []
        for t0, t1 in zip(ts[:-1], ts[1:]):
            mid = a + 0.5 * (t0 + t1) * (b - a)
            if self.inside(mid[None, :])[0]:
                if out and abs(out[-1][1] - t0) < GEOM_TOL:
                    out[-1][1] = t1
                else:
                    out.append([t0, t1])
        return [(a + t0 * (b - a), a + t1 * (b - a)) for t0, t1 in out]

    def _oriented(self, a: np.ndarray, b: np.ndarray) -> Segment:
        """Trim segment oriented with the kept region on its left."""
        d = b - a
        mid = 0.5 * (a + b)
        probe = mid + 1e-7 * np.array([-d[1], d[0]]) / np.hypot(*d)
        if self.inside(probe[None, :])[0]:
            return Segment(a, b, trim=True)
        return Segment(b, a, trim=True)


def _line_crossings(a, b, axis, value) -> list[float]:
    da = b[axis] - a[axis]
    if da == 0:
        return []
    return [(value - a[axis]) / da]


class HalfPlane(TrimRegion):
    """Keep ``x[axis] < threshold`` (or ``>`` when ``keep_below`` is false)."""

    def __init__(self, axis: int, threshold: float, keep_below: bool = True):
        self.axis = int(axis)
        self.threshold = float(threshold)
        self.keep_below = bool(keep_below)

    def inside(self, pts):
        v = np.atleast_2d(pts)[:, self.axis]
        return v < self.threshold if self.keep_below else v > self.threshold

    def classify_box(self, box) -> int:
        lo, hi = (box[0], box[1]) if self.axis == 0 else (box[2], box[3])
        thr = self.threshold
        if hi <= thr:
            return 1 if self.keep_below else 0
        if lo >= thr:
            return 0 if self.keep_below else 1
        return -1

    def cut_box(self, box, order):
        b = list(box)
        k = 2 * self.axis
        if self.keep_below:
            b[k + 1] = self.threshold
        else:
            b[k] = self.threshold
        pts, wts = box_rule(b, order)
        if self.axis == 0:
            a, e = np.array([self.threshold, box[2]]), np.array([self.threshold, box[3]])
        else:
            a, e = np.array([box[0], self.threshold]), np.array([box[1], self.threshold])
        return CutResult(pts, wts, [self._oriented(a, e)])

    def segment_params(self, a, b):
        return _line_crossings(a, b, self.axis, self.threshold)


class Disk(TrimRegion):
    """Disk of given centre and radius; the outside is kept by default."""

    def __init__(self, center, radius: float, keep_outside: bool = True):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.keep_outside = bool(keep_outside)

    def inside(self, pts):
        d = np.linalg.norm(np.atleast_2d(pts) - self.center, axis=1)
        return d > self.radius if self.keep_outside else d < self.radius

    def classify_box(self, box) -> int:
        c = self.center
        nearest = np.array([np.clip(c[0], box[0], box[1]), np.clip(c[1], box[2], box[3])])
        dmin = np.linalg.norm(nearest - c)
        dmax = np.max(np.linalg.norm(_box_corners(box) - c, axis=1))
        r = self.radius
        if dmin >= r:
            return 1 if self.keep_outside else 0
        if dmax <= r:
            return 0 if self.keep_outside else 1
        return -1

    def segment_params(self, a, b):
        d = b - a
        f = a - self.center
        A = d @ d
        B = 2 * f @ d
        C = f @ f - self.radius**2
        disc = B * B - 4 * A * C
        if disc <= 0:
            return []
        sq = np.sqrt(disc)
        return sorted([(-B - sq) / (2 * A), (-B + sq) / (2 * A)])

    def _angle(self, pt) -> float:
        d = pt - self.center
        return float(np.arctan2(d[1], d[0]))

    def _loops(self, box) -> list[list]:
        corners = _box_corners(box)
        nodes, is_cross = [], []
        for k in range(4):
            a, b = corners[k], corners[(k + 1) % 4]
            nodes.append(a)
            # a corner on the circle acts as a crossing
            is_cross.append(abs(np.linalg.norm(a - self.center) - self.radius) <= 1e-12 * max(1.0, self.radius))
            for t in self.segment_params(a, b):
                if GEOM_TOL < t < 1 - GEOM_TOL:
                    nodes.append(a + t * (b - a))
                    is_cross.append(True)
        m = len(nodes)
        kept = [bool(self.inside((0.5 * (nodes[i] + nodes[(i + 1) % m]))[None, :])[0]) for i in range(m)]
        entries = [i for i in range(m) if is_cross[i] and kept[i] and not kept[i - 1]]
        exits = [i for i in range(m) if is_cross[i] and not kept[i] and kept[i - 1]]
        if not entries:
            if all(kept):
                return [[Segment(nodes[i], nodes[(i + 1) % m]) for i in range(m)]]
            if not any(kept):
                return []
            raise TrimmingError("inconsistent disk cut")
        sign = -1.0 if self.keep_outside else 1.0  # travel direction along the circle

        def partner(i_exit: int) -> int:
            phi = self._angle(nodes[i_exit])
            best, best_d = None, np.inf
            for j in entries:
                d = (sign * (self._angle(nodes[j]) - phi)) % (2 * np.pi)
                if 0 < d < best_d:
                    best, best_d = j, d
            return best

        loops, used = [], set()
        for start in entries:
            if start in used:
                continue
            loop, i = [], start
            for _ in range(4 * m):
                used.add(i)
                while kept[i]:
                    loop.append(Segment(nodes[i], nodes[(i + 1) % m]))
                    i = (i + 1) % m
                if i not in exits:
                    raise TrimmingError("disk cut walk lost its way")
                j = partner(i)
                phi0 = self._angle(nodes[i])
                dphi = (sign * (self._angle(nodes[j]) - phi0)) % (2 * np.pi)
                loop.append(Arc(self.center, self.radius, phi0, phi0 + sign * dphi))
                i = j
                if i == start:
                    break
            else:
                raise TrimmingError("disk cut loop did not close")
            loops.append(loop)
        return loops

    def cut_box(self, box, order, depth: int = 0):
        loops = self._loops(box)
        pts, wts, trim = [], [], []
        for loop in loops:
            rule = star_rule(loop, order)
            if rule is None:
                break
            pts.append(rule[0])
            wts.append(rule[1])
            trim.extend(p for p in loop if p.trim)
        else:
            if not pts:
                return CutResult(np.zeros((0, 2)), np.zeros(0), [])
            return CutResult(np.concatenate(pts), np.concatenate(wts), trim)
        if depth >= 4:
            raise TrimmingError("could not tile the cut cell")
        # not star-shaped: split the box and tile the quarters. Tangencies with
        # box edges sit at the centre's coordinates, so split there if possible.
        x0, x1, y0, y1 = box
        cx, cy = self.center
        xm = cx if x0 + GEOM_TOL < cx < x1 - GEOM_TOL else 0.5 * (x0 + x1)
        ym = cy if y0 + GEOM_TOL < cy < y1 - GEOM_TOL else 0.5 * (y0 + y1)
        pts, wts, trim = [], [], []
        for sub in ((x0, xm, y0, ym), (xm, x1, y0, ym), (x0, xm, ym, y1), (xm, x1, ym, y1)):
            kind = self.classify_box(sub)
            if kind == 1:
                p, w = box_rule(sub, order)
                pts.append(p)
                wts.append(w)
            elif kind == -1:
                res = self.cut_box(sub, order, depth + 1)
                pts.append(res.points)
                wts.append(res.weights)
                trim.extend(res.trim)
        return CutResult(np.concatenate(pts), np.concatenate(wts), trim)


class RectRemove(TrimRegion):
    """Remove the closed axis-aligned rectangle ``lo``-``hi``."""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)

    def inside(self, pts):
        p = np.atleast_2d(pts)
        inr = np.all((p >= self.lo) & (p <= self.hi), axis=1)
        return ~inr

    def classify_box(self, box) -> int:
        (rx0, ry0), (rx1, ry1) = self.lo, self.hi
        x0, x1, y0, y1 = box
        if min(x1, rx1) - max(x0, rx0) <= 0 or min(y1, ry1) - max(y0, ry0) <= 0:
            return 1
        if rx0 <= x0 and x1 <= rx1 and ry0 <= y0 and y1 <= ry1:
            return 0
        return -1

    def _edges(self) -> list[tuple[np.ndarray, np.ndarray]]:
        (rx0, ry0), (rx1, ry1) = self.lo, self.hi
        c = [np.array(v) for v in ((rx0, ry0), (rx1, ry0), (rx1, ry1), (rx0, ry1))]
        out = []
        for k in range(4):
            a, b = c[k], c[(k + 1) % 4]
            axis = 0 if a[0] == b[0] else 1  # fixed coordinate of the edge
            if a[axis] in (0.0, 1.0):
                continue  # lies on the patch boundary, not a trim curve
            out.append((a, b))
        return out

    def cut_box(self, box, order):
        (rx0, ry0), (rx1, ry1) = self.lo, self.hi
        x0, x1, y0, y1 = box
        boxes = []
        if x0 < rx0:
            boxes.append((x0, min(x1, rx0), y0, y1))
        if rx1 < x1:
            boxes.append((max(x0, rx1), x1, y0, y1))
        xm0, xm1 = max(x0, rx0), min(x1, rx1)
        if xm0 < xm1:
            if y0 < ry0:
                boxes.append((xm0, xm1, y0, min(y1, ry0)))
            if ry1 < y1:
                boxes.append((xm0, xm1, max(y0, ry1), y1))
        rules = [box_rule(b, order) for b in boxes]
        trim = []
        for a, b in self._edges():
            fixed = 0 if a[0] == b[0] else 1
            free = 1 - fixed
            lo, hi = (box[0], box[1]) if fixed == 0 else (box[2], box[3])
            if not lo <= a[fixed] < hi:
                continue
            flo, fhi = (box[0], box[1]) if free == 0 else (box[2], box[3])
            s0 = max(min(a[free], b[free]), flo)
            s1 = min(max(a[free], b[free]), fhi)
            if s1 - s0 <= 0:
                continue
            p, q = a.copy(), a.copy()
            p[free], q[free] = s0, s1
            trim.append(self._oriented(p, q))
        return CutResult(np.concatenate([r[0] for r in rules]), np.concatenate([r[1] for r in rules]), trim)

    def segment_params(self, a, b):
        ts = []
        for axis, vals in ((0, (self.lo[0], self.hi[0])), (1, (self.lo[1], self.hi[1]))):
            for v in vals:
                ts.extend(_line_crossings(a, b, axis, v))
        return ts


class RotatedRect(TrimRegion):
    """Keep the open rectangle of given centre and half-widths rotated by ``angle``."""

    def __init__(self, center, half_widths, angle: float = 0.0, space: str = "parametric"):
        self.center = np.asarray(center, dtype=float)
        self.half_widths = np.asarray(half_widths, dtype=float)
        self.angle = float(angle)
        self.space = space
        c, s = np.cos(self.angle), np.sin(self.angle)
        u, v = np.array([c, s]), np.array([-s, c])
        # half-planes n . (x - centre) <= h
        self.normals = np.array([u, v, -u, -v])
        self.offsets = np.array([self.half_widths[0], self.half_widths[1], self.half_widths[0], self.half_widths[1]])

    def inside(self, pts):
        d = (np.atleast_2d(pts) - self.center) @ self.normals.T
        return np.all(d < self.offsets, axis=1)

    def corners(self) -> np.ndarray:
        u, v = self.normals[0], self.normals[1]
        hw = self.half_widths
        return np.array([self.center + sx * hw[0] * u + sy * hw[1] * v for sx, sy in ((-1, -1), (1, -1), (1, 1), (-1, 1))])

    def _clip(self, box) -> np.ndarray:
        poly = _box_corners(box)
        for n, h in zip(self.normals, self.offsets):
            if len(poly) == 0:
                break
            d = (poly - self.center) @ n - h
            out = []
            for k in range(len(poly)):
                p, q = poly[k], poly[(k + 1) % len(poly)]
                dp, dq = d[k], d[(k + 1) % len(poly)]
                if dp <= 0:
                    out.append(p)
                if (dp < 0 < dq) or (dq < 0 < dp):
                    out.append(p + dp / (dp - dq) * (q - p))
            poly = np.array(out) if out else np.zeros((0, 2))
        return poly

    def classify_box(self, box) -> int:
        if np.all(self.inside(_box_corners(box))):
            return 1
        poly = self._clip(box)
        cell_area = (box[1] - box[0]) * (box[3] - box[2])
        if len(poly) < 3 or _polygon_area(poly) <= GEOM_TOL * cell_area:
            return 0
        return -1

    def cut_box(self, box, order):
        poly = self._clip(box)
        pieces = []
        for k in range(len(poly)):
            a, b = poly[k], poly[(k + 1) % len(poly)]
            if np.hypot(*(b - a)) <= GEOM_TOL:
                continue
            on = np.abs((np.array([a, b]) - self.center) @ self.normals.T - self.offsets) <= 1e-12
            pieces.append(Segment(a, b, trim=bool(np.any(on[0] & on[1]))))
        pts, wts = star_rule(pieces, order)
        return CutResult(pts, wts, [p for p in pieces if p.trim])

    def segment_params(self, a, b):
        ts = []
        for n, h in zip(self.normals, self.offsets):
            da = (a - self.center) @ n - h
            db = (b - self.center) @ n - h
            if da != db:
                ts.append(da / (da - db))
        return ts


def half_plane_param(axis: int, threshold: float, keep_below: bool = True) -> HalfPlane:
    return HalfPlane(axis, threshold, keep_below)


def disk_param(center, radius: float, keep_outside: bool = True) -> Disk:
    return Disk(center, radius, keep_outside)


def rect_remove_param(lo, hi) -> RectRemove:
    return RectRemove(lo, hi)


def rotated_rect_keep_physical(center, half_widths, angle: float) -> RotatedRect:
    """Rotated rectangle given in physical coordinates (identity map only)."""
    return RotatedRect(center, half_widths, angle, space="physical")


# ---------------------------------------------------------------------------
# boundary rules and the trimmed mesh


SIDES = {
    # name: (fixed axis, fixed value, direction of travel along the side)
    "bottom": (1, 0.0, +1),
    "right": (0, 1.0, +1),
    "top": (1, 1.0, -1),
    "left": (0, 0.0, -1),
}


@dataclass
class BoundaryRule:
    """Physical boundary quadrature, one row per point."""

    cell: np.ndarray
    xhat: np.ndarray
    x: np.ndarray
    weight: np.ndarray
    normal: np.ndarray

    @classmethod
    def empty(cls) -> "BoundaryRule":
        return cls(np.zeros(0, dtype=int), np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0), np.zeros((0, 2)))

    @classmethod
    def concat(cls, rules: list["BoundaryRule"]) -> "BoundaryRule":
        rules = [r for r in rules if len(r.cell)] or [cls.empty()]
        return cls(*(np.concatenate([getattr(r, f) for r in rules]) for f in ("cell", "xhat", "x", "weight", "normal")))

    def select(self, mask: np.ndarray) -> "BoundaryRule":
        return BoundaryRule(self.cell[mask], self.xhat[mask], self.x[mask], self.weight[mask], self.normal[mask])

    def __len__(self) -> int:
        return len(self.cell)


def piece_rule(piece, cell: int, center: np.ndarray, gmap: GeometryMap, order: int) -> BoundaryRule:
    s, ws = gauss_legendre(order + 2 if piece.curved else order)
    xhat = piece.points(s)
    frame = boundary_pushforward(gmap, xhat, piece.tangents(s), ws, hint=np.broadcast_to(center, xhat.shape))
    return BoundaryRule(np.full(len(s), cell), xhat, frame.x, frame.weight, frame.normal)


def cut_cell_quadrature(box, region: TrimRegion, order: int) -> CutResult:
    """Interior rule for the kept part of one cell (tensor Gauss if uncut)."""
    kind = region.classify_box(box)
    if kind == 1:
        return CutResult(*box_rule(box, order))
    if kind == 0:
        return CutResult(np.zeros((0, 2)), np.zeros(0))
    return region.cut_box(box, order)


def graded_cell_quadrature(box, region: TrimRegion, order: int, point, depth: int = 12) -> CutResult:
    """Composite rule refined geometrically towards ``point``.

    Used for integrands with a point singularity (such as errors of corner
    solutions); boxes not containing ``point`` get the plain cut rule.
    """
    point = np.asarray(point, dtype=float)
    x0, x1, y0, y1 = box
    near = x0 <= point[0] <= x1 and y0 <= point[1] <= y1
    if depth == 0 or not near:
        return cut_cell_quadrature(box, region, order)
    xm, ym = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    parts = [graded_cell_quadrature(b, region, order, point, depth - 1)
             for b in ((x0, xm, y0, ym), (xm, x1, y0, ym), (x0, xm, ym, y1), (xm, x1, ym, y1))]
    return CutResult(np.concatenate([r.points for r in parts]), np.concatenate([r.weights for r in parts]))


def trim_boundary_rule(box, region: TrimRegion, gmap: GeometryMap, order: int, cell: int = -1) -> BoundaryRule:
    """Physical quadrature frames on the trim curve inside one cell."""
    if region.classify_box(box) != -1:
        return BoundaryRule.empty()
    center = np.array([0.5 * (box[0] + box[1]), 0.5 * (box[2] + box[3])])
    res = region.cut_box(box, order)
    return BoundaryRule.concat([piece_rule(p, cell, center, gmap, order) for p in res.trim])


class TrimmedMesh:
    """Bezier cells of a space classified against a trim region."""

    def __init__(self, space: TensorSplineSpace, gmap: GeometryMap, region: TrimRegion, theta: float, order: int):
        if not 0.0 <= theta <= 1.0:
            raise TrimmingError("theta must lie in [0, 1]")
        self.space = space
        self.gmap = gmap
        self.region = region
        self.theta = float(theta)
        self.order = int(order)
        nc = space.num_cells
        boxes = space.cell_boxes
        self.centers = np.column_stack([0.5 * (boxes[:, 0] + boxes[:, 1]), 0.5 * (boxes[:, 2] + boxes[:, 3])])
        self.areas = (boxes[:, 1] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 2])
        self.labels = np.empty(nc, dtype=int)
        self.ratio = np.zeros(nc)
        self.cut: dict[int, CutResult] = {}
        for c in range(nc):
            kind = region.classify_box(boxes[c])
            if kind == 1:
                self.labels[c] = Label.INTERIOR
                self.ratio[c] = 1.0
            elif kind == 0:
                self.labels[c] = Label.EXTERIOR
            else:
                res = region.cut_box(boxes[c], order)
                if np.any(res.weights <= 0):
                    raise TrimmingError(f"non-positive quadrature weight in cell {c}")
                if res.area <= 0.0:
                    self.labels[c] = Label.EXTERIOR
                    continue
                self.cut[c] = res
                self.ratio[c] = min(res.area / self.areas[c], 1.0)
                self.labels[c] = Label.CUT_GOOD if self.ratio[c] >= self.theta else Label.CUT_BAD

        self.h = self._diameters()
        self.phys_ratio = self.ratio.copy()
        if not gmap.is_affine:
            for c, res in self.cut.items():
                full = self.cell_rule(c, full=True)
                self.phys_ratio[c] = self.measure(c) / np.sum(full[1])
        self.neighbor = {c: select_good_neighbor(self, c) for c in self.bad_cells}
        self._trim_rule: BoundaryRule | None = None

    # -- cell data ---------------------------------------------------------
    def _diameters(self) -> np.ndarray:
        boxes = self.space.cell_boxes
        t = np.array([0.0, 0.5, 1.0])
        loc = np.array([(a, b) for a in t for b in t if a != 0.5 or b != 0.5])
        pts = np.empty((len(boxes), len(loc), 2))
        pts[..., 0] = boxes[:, 0, None] + loc[None, :, 0] * (boxes[:, 1] - boxes[:, 0])[:, None]
        pts[..., 1] = boxes[:, 2, None] + loc[None, :, 1] * (boxes[:, 3] - boxes[:, 2])[:, None]
        hint = np.repeat(self.centers, len(loc), axis=0)
        x = self.gmap.evaluate(pts.reshape(-1, 2), hint=hint).x.reshape(pts.shape)
        diff = x[:, :, None, :] - x[:, None, :, :]
        return np.sqrt(np.max(np.sum(diff**2, axis=-1), axis=(1, 2)))

    @property
    def active_cells(self) -> np.ndarray:
        return np.nonzero(self.labels != Label.EXTERIOR)[0]

    @property
    def interior_cells(self) -> np.ndarray:
        return np.nonzero(self.labels == Label.INTERIOR)[0]

    @property
    def cut_cells(self) -> np.ndarray:
        return np.array(sorted(self.cut), dtype=int)

    @property
    def bad_cells(self) -> np.ndarray:
        return np.nonzero(self.labels == Label.CUT_BAD)[0]

    def is_good(self, c: int) -> bool:
        return self.labels[c] in (Label.INTERIOR, Label.CUT_GOOD)

    def cell_rule(self, c: int, full: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Parametric points and physical weights (``|det J|`` included)."""
        if full or c not in self.cut:
            pts, w = box_rule(self.space.cell_boxes[c], self.order)
        else:
            pts, w = self.cut[c].points, self.cut[c].weights
        det = self.gmap.evaluate(pts, hint=np.broadcast_to(self.centers[c], pts.shape)).det
        return pts, w * np.abs(det)

    def graded_rule(self, c: int, point, depth: int = 12) -> tuple[np.ndarray, np.ndarray]:
        """Like ``cell_rule`` but graded towards the parametric ``point``."""
        res = graded_cell_quadrature(self.space.cell_boxes[c], self.region, self.order, point, depth)
        det = self.gmap.evaluate(res.points, hint=np.broadcast_to(self.centers[c], res.points.shape)).det
        return res.points, res.weights * np.abs(det)

    def measure(self, c: int) -> float:
        """Physical measure of the kept part of cell ``c``."""
        if self.labels[c] == Label.EXTERIOR:
            return 0.0
        return float(np.sum(self.cell_rule(c)[1]))

    # -- boundary rules ----------------------------------------------------
    def trim_rule(self) -> BoundaryRule:
        if self._trim_rule is None:
            rules = []
            for c, res in sorted(self.cut.items()):
                rules.extend(piece_rule(p, c, self.centers[c], self.gmap, self.order) for p in res.trim)
            self._trim_rule = BoundaryRule.concat(rules)
        return self._trim_rule

    def side_pieces(self, side: str) -> list[tuple[int, Segment]]:
        """Kept parts of a patch side, per cell, oriented counter-clockwise."""
        axis, value, direction = SIDES[side]
        out = []
        boxes = self.space.cell_boxes
        for c in self.active_cells:
            box = boxes[c]
            lo, hi = (box[0], box[1]) if axis == 0 else (box[2], box[3])
            if (value == 0.0 and lo != 0.0) or (value == 1.0 and hi != 1.0):
                continue
            flo, fhi = (box[2], box[3]) if axis == 0 else (box[0], box[1])
            a = np.empty(2)
            b = np.empty(2)
            a[axis] = b[axis] = value
            a[1 - axis], b[1 - axis] = (flo, fhi) if direction > 0 else (fhi, flo)
            if self.labels[c] == Label.INTERIOR:
                out.append((int(c), Segment(a, b)))
            else:
                out.extend((int(c), Segment(p, q)) for p, q in self.region.clip_segment(a, b))
        return out

    def side_rule(self, side: str) -> BoundaryRule:
        return BoundaryRule.concat(
            [piece_rule(seg, c, self.centers[c], self.gmap, self.order) for c, seg in self.side_pieces(side)]
        )

    def side_intervals(self, side: str) -> list[tuple[float, float]]:
        """Kept parameter intervals along a side (in the side's free coordinate)."""
        axis = SIDES[side][0]
        ivs = sorted(
            (min(s.a[1 - axis], s.b[1 - axis]), max(s.a[1 - axis], s.b[1 - axis])) for _, s in self.side_pieces(side)
        )
        merged: list[list[float]] = []
        for lo, hi in ivs:
            if merged and lo <= merged[-1][1] + GEOM_TOL:
                merged[-1][1] = max(merged[-1][1], hi)
            else:
                merged.append([lo, hi])
        return [tuple(m) for m in merged]


def classify_cells(
    space: TensorSplineSpace,
    gmap: GeometryMap,
    region: TrimRegion,
    theta: float,
    quad_order: int | None = None,
) -> TrimmedMesh:
    return TrimmedMesh(space, gmap, region, theta, quad_order or space.degree + 2)


def _neighborhood(tm: TrimmedMesh, c: int, radius: int) -> list[int]:
    ne1, ne2 = tm.space.cell_shape
    e1, e2 = tm.space.cell_ij(c)
    out = []
    for d2 in range(-radius, radius + 1):
        for d1 in range(-radius, radius + 1):
            i, j = e1 + d1, e2 + d2
            if (d1 or d2) and 0 <= i < ne1 and 0 <= j < ne2:
                out.append(int(i + ne1 * j))
    return out


def select_good_neighbor(tm: TrimmedMesh, c: int) -> int:
    """Good neighbour with the largest physical overlap ratio.

    Searches the 3x3 block, then the 5x5 block. Ties go to the closest cell
    (in index distance), then to the lowest cell index.
    """
    if tm.labels[c] != Label.CUT_BAD:
        return int(c)
    e1, e2 = tm.space.cell_ij(c)
    for radius in (1, 2):
        cands = [k for k in _neighborhood(tm, c, radius) if tm.is_good(k)]
        if cands:
            def key(k: int):
                k1, k2 = tm.space.cell_ij(k)
                return (-round(float(tm.phys_ratio[k]), 12), (k1 - e1) ** 2 + (k2 - e2) ** 2, k)

            return int(min(cands, key=key))
    raise TrimmingError(f"bad cell {c} has no good neighbour")
