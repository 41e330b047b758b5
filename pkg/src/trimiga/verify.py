"""Quick self-checks run by ``trimiga verify``.

Each check returns ``(name, ok, detail)``. They exercise the invariants
that are cheap to test: partition of unity, knot insertion, quadrature
areas, manufactured sources, flux agreement, the patch test and the
rate formula.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from .assembly import assemble, error_norms, solve, weak_rule
from .experiments import SCENARIOS, SOLUTIONS, build, make_solution, observed_rates, plan_for
from .geometry import identity_map, quarter_annulus
from .spline import TensorSplineSpace, eval_basis, eval_spline, insert_knot, make_open_knot_vector, uniform_knot_vector
from .stabilization import StabilizationPlan
from .trimming import classify_cells, disk_param


def _partition_of_unity():
    kv = make_open_knot_vector([0.0, 0.2, 0.5, 0.7, 1.0], 3, 2)
    worst = 0.0
    for x in np.linspace(0.0, 1.0, 57):
        tab, _ = eval_basis(kv, x, 1)
        worst = max(worst, abs(tab[0].sum() - 1.0), abs(tab[1].sum()))
    return worst < 1e-12, f"max defect {worst:.1e}"


def _knot_insertion():
    rng = np.random.default_rng(0)
    kv = uniform_knot_vector(5, 3)
    c = rng.standard_normal(kv.n)
    kv2, c2 = insert_knot(kv, c, 0.37)
    x = np.linspace(0.0, 1.0, 101)
    err = np.max(np.abs(eval_spline(kv, c, x) - eval_spline(kv2, c2, x)))
    return err < 1e-13, f"max diff {err:.1e}"


def _disk_area():
    kv = uniform_knot_vector(8, 2)
    space = TensorSplineSpace(kv, kv)
    tm = classify_cells(space, identity_map(), disk_param((0.0, 0.0), 0.76), 0.5)
    removed = 1.0 - float(np.sum(tm.ratio * tm.areas))
    length = tm.trim_rule().weight.sum()
    ok = abs(removed - math.pi * 0.76**2 / 4) < 1e-6 and abs(length - 0.38 * math.pi) < 1e-6
    return ok, f"area {removed:.9f}, arc {length:.9f}"


def _sources():
    rng = np.random.default_rng(1)
    worst = 0.0
    for name in SOLUTIONS:
        sol = make_solution(name, 2)
        x = rng.uniform(0.2, 0.9, (100, 2))
        hh = 1e-4
        lap = sum(
            (sol.u(x + hh * e) - 2 * sol.u(x) + sol.u(x - hh * e)) / hh**2 for e in np.eye(2)
        )
        f = sol.f(x)
        worst = max(worst, np.max(np.abs(-lap - f)) / max(1.0, np.max(np.abs(f))))
    return worst < 1e-5, f"max relative defect {worst:.1e}"


def _flux_agreement():
    sc = SCENARIOS["eps_mesh"]
    d = build(sc, 5, 1e-6)
    rule = d.tm.trim_rule()
    worst = 0.0
    par = StabilizationPlan(d.space, d.gmap, d.tm, "parametric")
    phy = StabilizationPlan(d.space, d.gmap, d.tm, "physical")
    for c in d.tm.bad_cells:
        sel = rule.select(rule.cell == c)
        a, _ = par.flux(int(c), sel.xhat, sel.x, sel.normal)
        b, _ = phy.flux(int(c), sel.xhat, sel.x, sel.normal)
        worst = max(worst, np.max(np.abs(a - b)) / np.max(np.abs(a)))
    return worst < 1e-10, f"max relative difference {worst:.1e}"


def _patch():
    worst = 0.0
    for p in (1, 2, 3):
        sc = replace(SCENARIOS["patch"], degree=p)
        d = build(sc, 3)
        for mode in sc.modes:
            uh = solve(assemble(d.space, d.tm, d.gmap, plan_for(d, mode), d.data))
            weak = weak_rule(d.tm, d.data)
            e1, _ = error_norms(d.space, d.tm, d.gmap, uh, d.solution.u, d.solution.grad, weak)
            n1, _ = error_norms(d.space, d.tm, d.gmap, np.zeros_like(uh), d.solution.u, d.solution.grad, weak)
            worst = max(worst, e1 / n1)
    return worst < 1e-9, f"max relative error {worst:.1e}"


def _rates():
    h = [2.0**-k for k in range(2, 7)]
    r = observed_rates(h, [3.0 * t**2.5 for t in h])[1:]
    err = max(abs(x - 2.5) for x in r)
    return err < 1e-12, f"max deviation {err:.1e}"


def _annulus_circle():
    g = quarter_annulus()
    xi = np.linspace(0.0, 1.0, 50)
    x = g.evaluate(np.column_stack([xi, np.zeros_like(xi)])).x
    err = np.max(np.abs(np.hypot(x[:, 0], x[:, 1]) - 1.0))
    return err < 1e-12, f"max radius defect {err:.1e}"


CHECKS = {
    "partition_of_unity": _partition_of_unity,
    "knot_insertion": _knot_insertion,
    "annulus_inner_circle": _annulus_circle,
    "disk_area_and_arc": _disk_area,
    "manufactured_sources": _sources,
    "flux_agreement_identity": _flux_agreement,
    "patch_test": _patch,
    "rate_formula": _rates,
}


def run_checks() -> list[tuple[str, bool, str]]:
    out = []
    for name, fn in CHECKS.items():
        ok, detail = fn()
        out.append((name, bool(ok), detail))
    return out

