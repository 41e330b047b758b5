"""Scenarios, manufactured solutions and the sweep runners behind the CLI."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .assembly import (
    ProblemData,
    assemble,
    condition_number,
    error_norms,
    gen_eig_extremes,
    gram_1h,
    solve,
    weak_rule,
)
from .geometry import GEOMETRIES, GeometryMap, affine_map
from .spline import TensorSplineSpace, make_open_knot_vector
from .stabilization import MODES, StabilizationPlan, stability_ratio
from .trimming import Disk, HalfPlane, Label, RectRemove, RotatedRect, TrimRegion, TrimmedMesh, classify_cells


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


# ---------------------------------------------------------------------------
# manufactured solutions


@dataclass(frozen=True)
class Solution:
    u: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    f: Callable[[np.ndarray], np.ndarray]


def _exp_sin() -> Solution:
    def u(x):
        return np.exp(x[:, 0]) * np.sin(x[:, 0] * x[:, 1])

    def grad(x):
        X, Y = x[:, 0], x[:, 1]
        e, s, c = np.exp(X), np.sin(X * Y), np.cos(X * Y)
        return np.column_stack([e * (s + Y * c), e * X * c])

    def f(x):
        X, Y = x[:, 0], x[:, 1]
        e, s, c = np.exp(X), np.sin(X * Y), np.cos(X * Y)
        return -e * ((1.0 - X**2 - Y**2) * s + 2.0 * Y * c)

    return Solution(u, grad, f)


def lshape_angle(x: np.ndarray) -> np.ndarray:
    """Polar angle in [-pi/4, 7pi/4): the cut runs through the removed quadrant."""
    return np.mod(np.arctan2(x[:, 1], x[:, 0]) + np.pi / 4, 2 * np.pi) - np.pi / 4


def _lshape() -> Solution:
    def u(x):
        r = np.hypot(x[:, 0], x[:, 1])
        return r ** (2 / 3) * np.sin(2 / 3 * lshape_angle(x))

    def grad(x):
        r = np.hypot(x[:, 0], x[:, 1])
        phi = lshape_angle(x)
        ur = 2 / 3 * r ** (-1 / 3) * np.sin(2 / 3 * phi)
        uphi = 2 / 3 * r ** (-1 / 3) * np.cos(2 / 3 * phi)  # (1/r) du/dphi
        c, s = np.cos(phi), np.sin(phi)
        return np.column_stack([ur * c - uphi * s, ur * s + uphi * c])

    return Solution(u, grad, lambda x: np.zeros(len(x)))


def patch_polynomial(p: int) -> Solution:
    """A polynomial of coordinate degree ``p``, reproduced exactly by the spline space."""

    def a(t):
        return t**p + 0.5 * t + 0.3

    def da(t):
        return p * t ** (p - 1) + 0.5

    def dda(t):
        return p * (p - 1) * t ** (p - 2) if p > 1 else np.zeros_like(t)

    def b(t):
        return t**p - 0.7 * t + 0.2

    def db(t):
        return p * t ** (p - 1) - 0.7

    def u(x):
        return a(x[:, 0]) * b(x[:, 1]) + x[:, 0] * x[:, 1]

    def grad(x):
        X, Y = x[:, 0], x[:, 1]
        return np.column_stack([da(X) * b(Y) + Y, a(X) * db(Y) + X])

    def f(x):
        X, Y = x[:, 0], x[:, 1]
        return -(dda(X) * b(Y) + a(X) * dda(Y))

    return Solution(u, grad, f)


SOLUTIONS: dict[str, Callable[..., Solution]] = {"exp_sin": _exp_sin, "lshape": _lshape, "zero": lambda: Solution(
    lambda x: np.zeros(len(x)), lambda x: np.zeros((len(x), 2)), lambda x: np.zeros(len(x)))}


def make_solution(name: str, degree: int) -> Solution:
    if name == "patch":
        return patch_polynomial(degree)
    if name not in SOLUTIONS:
        raise ConfigError(f"unknown solution {name!r}")
    return SOLUTIONS[name]()


# ---------------------------------------------------------------------------
# scenarios

LSHAPE_BOX = ((-2.0, -1.0), (1.0, 2.0))
EPS_TRIM = 0.757
EPS_KNOT = 0.75


@dataclass
class Scenario:
    """Everything needed to build one discretization, except the mesh level."""

    name: str
    geometry: str
    region: dict
    solution: str
    singular: tuple[float, float] | None = None
    degree: int = 2
    theta: float = 1.0
    beta: str = "1"
    modes: tuple[str, ...] = ("parametric",)
    trim_bc: str = "weak"
    sides: dict[str, str] = field(default_factory=dict)
    levels: tuple[int, ...] = (2, 3, 4, 5, 6)
    eps_list: tuple[float, ...] = ()
    eps_knot: bool = False
    quad_order: int | None = None

    def beta_value(self, p: int | None = None) -> float:
        return parse_beta(self.beta, self.degree if p is None else p)


ALL_STRONG = {"left": "strong", "right": "strong", "bottom": "strong", "top": "strong"}
EPS_LIST = tuple(10.0**-k for k in range(2, 11))

SCENARIOS: dict[str, Scenario] = {
    "eps_mesh": Scenario(
        "eps_mesh", "identity", {"kind": "half_plane", "axis": 1, "threshold": EPS_TRIM, "keep_below": True},
        "zero", degree=3, theta=1.0, beta="1", modes=("none", "parametric", "physical"),
        levels=(5,), eps_list=EPS_LIST, eps_knot=True,
    ),
    "patch": Scenario(
        "patch", "identity", {"kind": "half_plane", "axis": 1, "threshold": EPS_TRIM, "keep_below": True},
        "patch", degree=2, theta=1.0, beta="10*(p+1)", modes=("parametric", "physical"),
        sides={"left": "weak", "right": "weak", "bottom": "weak"}, levels=(3,),
    ),
    "test1": Scenario(
        "test1", "quarter_annulus", {"kind": "disk", "center": (0.0, 0.0), "radius": 0.76, "keep_outside": True},
        "exp_sin", degree=2, theta=0.1, beta="1", modes=("parametric",), sides=dict(ALL_STRONG),
    ),
    "test2": Scenario(
        "test2", "lshape", {"kind": "rect_remove", "lo": (2 / 3, 0.0), "hi": (1.0, 1 / 3)},
        "lshape", singular=(2 / 3, 1 / 3), degree=2, theta=1.0, beta="10*(p+1)", modes=("parametric",), sides=dict(ALL_STRONG),
    ),
    "test3": Scenario(
        "test3", "c0_quarter_annulus",
        {"kind": "half_plane", "axis": 0, "threshold": EPS_KNOT + 1e-8, "keep_below": True},
        "exp_sin", degree=2, theta=1.0, beta="25*(p+1)", modes=("parametric", "physical"), sides=dict(ALL_STRONG),
    ),
    "cond1": Scenario(
        "cond1", "quarter_annulus", {"kind": "disk", "center": (0.0, 0.0), "radius": 0.76, "keep_outside": True},
        "exp_sin", degree=3, theta=0.1, beta="1", modes=("parametric",), sides=dict(ALL_STRONG), levels=(2, 3, 4),
    ),
    "cond2": Scenario(
        "cond2", "identity", {"kind": "half_plane", "axis": 1, "threshold": EPS_TRIM, "keep_below": True},
        "zero", degree=3, theta=1.0, beta="1", modes=("parametric",),
        sides={"left": "strong", "right": "strong", "bottom": "strong"},
        levels=(5,), eps_list=tuple(10.0**-k for k in range(2, 12)), eps_knot=True,
    ),
    "cond3": Scenario(
        "cond3", "identity",
        {"kind": "rotated_rect", "center": (0.485, 0.5), "half_widths": (0.295, 0.28), "angle": 0.0},
        "zero", degree=2, theta=0.5, beta="1", modes=("parametric",), levels=(3,),
    ),
}


def parse_beta(text: str, p: int) -> float:
    """``"25"`` or ``"25*(p+1)"``."""
    s = str(text).replace(" ", "")
    for suffix in ("*(p+1)", "(p+1)"):
        if s.endswith(suffix):
            return float(s[: -len(suffix)]) * (p + 1)
    return float(s)


def make_geometry(name: str) -> GeometryMap:
    if name == "lshape":
        return affine_map(*LSHAPE_BOX)
    if name == "affine":
        return affine_map((0.0, 0.0), (1.0, 1.0))
    if name not in GEOMETRIES:
        raise ConfigError(f"unknown geometry {name!r}")
    return GEOMETRIES[name]()


def make_region(desc: dict) -> TrimRegion:
    kind = desc.get("kind")
    try:
        if kind == "none":
            return HalfPlane(1, 2.0, True)
        if kind == "half_plane":
            return HalfPlane(int(desc["axis"]), float(desc["threshold"]), bool(desc.get("keep_below", True)))
        if kind == "disk":
            return Disk(desc["center"], float(desc["radius"]), bool(desc.get("keep_outside", True)))
        if kind == "rect_remove":
            return RectRemove(desc["lo"], desc["hi"])
        if kind == "rotated_rect":
            return RotatedRect(desc["center"], desc["half_widths"], float(desc.get("angle", 0.0)), space="physical")
    except KeyError as exc:
        raise ConfigError(f"region {kind!r} misses parameter {exc}") from exc
    raise ConfigError(f"unknown region kind {kind!r}")


def make_space(p: int, n: int, gmap: GeometryMap, eps: float | None = None) -> TensorSplineSpace:
    """Uniform C^{p-1} space with ``n`` cells per direction.

    Knots where the geometry loses smoothness keep that reduced continuity;
    with ``eps`` the second-direction knot 0.75 is moved to ``0.757 - eps``.
    """
    if n < 1:
        raise ConfigError("need at least one element")
    kvs = []
    for d in range(2):
        br = np.linspace(0.0, 1.0, n + 1)
        extra = {}
        for gd, knot, k in gmap.reduced_continuity():
            if gd == d:
                extra[knot] = min(k, p - 1)
        if eps is not None and d == 1:
            j = int(np.argmin(np.abs(br - EPS_KNOT)))
            if abs(br[j] - EPS_KNOT) > 1e-14:
                raise ConfigError("the eps mesh needs a breakpoint at 0.75")
            br[j] = EPS_TRIM - eps
            if not br[j - 1] < br[j] < br[j + 1]:
                raise ConfigError("eps too large for this mesh")
        br = np.union1d(br, list(extra))
        cont = [extra.get(float(b), p - 1) for b in br[1:-1]]
        for b in extra:
            cont[int(np.argmin(np.abs(br[1:-1] - b)))] = extra[b]
        kvs.append(make_open_knot_vector(br, p, cont))
    return TensorSplineSpace(*kvs)


@dataclass
class Discretization:
    space: TensorSplineSpace
    gmap: GeometryMap
    tm: TrimmedMesh
    data: ProblemData
    solution: Solution


def build(sc: Scenario, level: int, eps: float | None = None, theta: float | None = None,
          region: TrimRegion | None = None) -> Discretization:
    p = sc.degree
    gmap = make_geometry(sc.geometry)
    space = make_space(p, 2**level, gmap, eps if sc.eps_knot else None)
    if sc.geometry == "lshape":
        # the re-entrant corner must sit strictly inside a cell
        corner = np.array([2 / 3, 1 / 3])
        for d, kv in enumerate(space.kvs):
            if np.min(np.abs(kv.breakpoints - corner[d])) < 1e-12:
                raise ConfigError("L-shape corner lies on a knot line")
    region = region or make_region(sc.region)
    th = sc.theta if theta is None else theta
    tm = classify_cells(space, gmap, region, th, sc.quad_order)
    sol = make_solution(sc.solution, p)
    data = ProblemData(f=sol.f, g_D=sol.u, beta=sc.beta_value(), trim=sc.trim_bc, sides=dict(sc.sides))
    return Discretization(space, gmap, tm, data, sol)


def plan_for(d: Discretization, mode: str) -> StabilizationPlan:
    return StabilizationPlan(d.space, d.gmap, d.tm, mode, d.tm.order)


# ---------------------------------------------------------------------------
# runners


def observed_rates(h: list[float], err: list[float]) -> list[float]:
    """``log(e_{i-1}/e_i) / log(h_{i-1}/h_i)``; NaN for the first entry."""
    out = [float("nan")]
    for i in range(1, len(h)):
        out.append(math.log(err[i - 1] / err[i]) / math.log(h[i - 1] / h[i]))
    return out


def stability_rows(sc: Scenario) -> list[dict]:
    """Extreme generalized eigenvalues of the Nitsche matrix against the (1,h) Gram matrix."""
    rows = []
    for eps in sc.eps_list:
        d = build(sc, sc.levels[0], eps)
        weak = weak_rule(d.tm, d.data)
        B = gram_1h(d.space, d.tm, d.gmap, weak)
        for mode in sc.modes:
            system = assemble(d.space, d.tm, d.gmap, plan_for(d, mode), d.data)
            lo, hi = gen_eig_extremes(system.matrix, B, system.free)
            rows.append({"eps": eps, "mode": mode, "lambda_max": hi, "lambda_min": lo})
    return rows


def stability_constant_rows(sc: Scenario) -> list[dict]:
    """Largest local flux-to-gradient ratio over cut cells, per eps and mode."""
    rows = []
    for eps in sc.eps_list:
        d = build(sc, sc.levels[0], eps)
        for mode in sc.modes:
            plan = plan_for(d, mode)
            ratio = max(stability_ratio(plan, int(c)) for c in d.tm.cut_cells)
            rows.append({"eps": eps, "mode": mode, "max_ratio": ratio})
    return rows


def convergence_rows(sc: Scenario) -> list[dict]:
    rows = []
    for mode in sc.modes:
        hs, errs = [], []
        block = []
        for level in sc.levels:
            d = build(sc, level)
            system = assemble(d.space, d.tm, d.gmap, plan_for(d, mode), d.data)
            uh = solve(system)
            e1, e0 = error_norms(d.space, d.tm, d.gmap, uh, d.solution.u, d.solution.grad, weak_rule(d.tm, d.data),
                                 sc.singular)
            h = 2.0**-level
            hs.append(h)
            errs.append(e1)
            block.append({"h": h, "dofs": int(system.free.sum()), "err_nnorm": e1, "err_l2": e0, "mode": mode})
        for row, rate in zip(block, observed_rates(hs, errs)):
            row["rate_nnorm"] = rate
        rows.extend(block)
    return rows


def _kappas(d: Discretization, mode: str, theta: float | None = None) -> tuple[float, float]:
    system = assemble(d.space, d.tm, d.gmap, plan_for(d, mode), d.data)
    free = system.free
    return condition_number(system.matrix, free), condition_number(system.matrix, free, jacobi=True)


def min_cut_measure(tm: TrimmedMesh) -> float:
    cut = tm.cut_cells
    return float(min(tm.measure(int(c)) for c in cut)) if len(cut) else float("nan")


def conditioning_rows(sc: Scenario, angles: list[float] | None = None) -> list[dict]:
    """Condition numbers with and without Jacobi scaling.

    ``cond2``-like scenarios (with an eps list) sweep eps at the first level
    for theta 0 and 1, then h at eps 1e-3 and 1e-11; rotated rectangles
    sweep the angle; everything else sweeps h.
    """
    rows = []
    if sc.eps_list:
        for eps in sc.eps_list:
            for theta, mode in ((0.0, "none"), (1.0, sc.modes[0])):
                d = build(sc, sc.levels[0], eps, theta)
                kp, kj = _kappas(d, mode)
                rows.append(_crow("eps", eps, min_cut_measure(d.tm), f"theta={theta:g}", kp, kj))
        for eps in (1e-3, 1e-11):
            for level in (3, 4, 5, 6):
                for theta, mode in ((0.0, "none"), (1.0, sc.modes[0])):
                    d = build(sc, level, eps, theta)
                    kp, kj = _kappas(d, mode)
                    rows.append(_crow(f"h@eps={eps:g}", 2.0**-level, min_cut_measure(d.tm), f"theta={theta:g}", kp, kj))
    elif sc.region.get("kind") == "rotated_rect":
        angles = angles if angles is not None else [i * np.pi / 200 for i in range(101)]
        for alpha in angles:
            region = make_region({**sc.region, "angle": alpha})
            for theta, mode in ((0.0, "none"), (sc.theta, sc.modes[0])):
                d = build(sc, sc.levels[0], theta=theta, region=region)
                kp, kj = _kappas(d, mode)
                rows.append(_crow("alpha", alpha, min_cut_measure(d.tm), f"theta={theta:g}", kp, kj))
    else:
        for level in sc.levels:
            for mode in sc.modes:
                d = build(sc, level)
                kp, kj = _kappas(d, mode)
                rows.append(_crow("h", 2.0**-level, min_cut_measure(d.tm), mode, kp, kj))
    return rows


def _crow(var, value, eta, mode, kp, kj) -> dict:
    return {"sweep_var": var, "sweep_value": value, "eta": eta, "mode": mode, "kappa_plain": kp, "kappa_jacobi": kj}


def solve_rows(sc: Scenario) -> list[dict]:
    """Single solve per mode at the finest listed level."""
    level = sc.levels[-1]
    rows = []
    for mode in sc.modes:
        d = build(sc, level)
        system = assemble(d.space, d.tm, d.gmap, plan_for(d, mode), d.data)
        uh = solve(system)
        e1, e0 = error_norms(d.space, d.tm, d.gmap, uh, d.solution.u, d.solution.grad, weak_rule(d.tm, d.data),
                             sc.singular)
        labels = {lab.name.lower(): int(np.sum(d.tm.labels == lab)) for lab in Label}
        rows.append({"h": 2.0**-level, "mode": mode, "dofs": int(system.free.sum()), "err_nnorm": e1, "err_l2": e0,
                     **labels})
    return rows


HEADERS = {
    "stability": ["eps", "mode", "lambda_max", "lambda_min"],
    "convergence": ["h", "dofs", "err_nnorm", "err_l2", "rate_nnorm", "mode"],
    "conditioning": ["sweep_var", "sweep_value", "eta", "mode", "kappa_plain", "kappa_jacobi"],
    "solve": ["h", "mode", "dofs", "err_nnorm", "err_l2", "interior", "exterior", "cut_good", "cut_bad"],
}


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_csv(kind: str, rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADERS[kind])
    for row in rows:
        w.writerow([_fmt(row[k]) for k in HEADERS[kind]])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# config files


def _parse_value(v: str):
    v = v.strip()
    if v.lower() in ("true", "false"):
        return v.lower() == "true"
    if "," in v:
        return tuple(_parse_value(x) for x in v.split(",") if x.strip())
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v


def parse_config(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; lists are comma separated."""
    cfg = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise ConfigError(f"line {lineno}: empty key")
        cfg[k] = v
    return cfg


KNOWN_KEYS = {"experiment", "scenario", "geometry", "degree", "levels", "eps_list", "theta", "beta", "stab_mode",
              "solution", "quad_order", "out", "angles"}


def scenario_from_config(cfg: dict) -> Scenario:
    """Registered scenario (``scenario`` key) with config overrides applied."""
    for k in cfg:
        if k not in KNOWN_KEYS and not k.startswith("region.") and not k.startswith("bc."):
            raise ConfigError(f"unknown config key {k!r}")
    name = cfg.get("scenario", "custom")
    if name == "custom":
        if "geometry" not in cfg or "region.kind" not in cfg:
            raise ConfigError("custom scenarios need geometry and region.kind")
        sc = Scenario("custom", cfg["geometry"], {}, cfg.get("solution", "exp_sin"), sides=dict(ALL_STRONG))
    elif name in SCENARIOS:
        sc = replace(SCENARIOS[name], region=dict(SCENARIOS[name].region), sides=dict(SCENARIOS[name].sides))
    else:
        raise ConfigError(f"unknown scenario {name!r}")
    try:
        if "geometry" in cfg:
            sc.geometry = cfg["geometry"]
            make_geometry(sc.geometry)
        if "solution" in cfg:
            sc.solution = cfg["solution"]
        if "degree" in cfg:
            sc.degree = int(cfg["degree"])
        if "theta" in cfg:
            sc.theta = float(cfg["theta"])
        if "beta" in cfg:
            sc.beta = cfg["beta"]
            parse_beta(sc.beta, sc.degree)
        if "quad_order" in cfg:
            sc.quad_order = int(cfg["quad_order"])
        if "levels" in cfg:
            sc.levels = tuple(int(x) for x in cfg["levels"].split(","))
        if "eps_list" in cfg:
            sc.eps_list = tuple(float(x) for x in cfg["eps_list"].split(","))
        if "stab_mode" in cfg:
            sc.modes = tuple(m.strip() for m in cfg["stab_mode"].split(","))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    for k, v in cfg.items():
        if k.startswith("region."):
            sc.region[k[len("region."):]] = _parse_value(v)
        elif k.startswith("bc."):
            side = k[len("bc."):]
            if side == "trim":
                sc.trim_bc = v
            else:
                sc.sides[side] = v
    for m in sc.modes:
        if m not in MODES:
            raise ConfigError(f"unknown stabilization mode {m!r}")
    if sc.degree < 1 or not sc.levels:
        raise ConfigError("degree must be >= 1 and levels nonempty")
    if not 0.0 <= sc.theta <= 1.0:
        raise ConfigError("theta must lie in [0, 1]")
    make_region(sc.region)
    make_solution(sc.solution, sc.degree)
    return sc
