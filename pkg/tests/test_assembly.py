from dataclasses import replace

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp

from trimiga.assembly import (
    LinearSystem,
    ProblemData,
    SolverError,
    apply_strong_bc,
    assemble,
    condition_number,
    deactivate_dofs,
    edge_interpolant,
    error_norms,
    gen_eig_extremes,
    gram_1h,
    side_dofs,
    solve,
    weak_rule,
)
from trimiga.experiments import SCENARIOS, build, make_space, plan_for
from trimiga.geometry import affine_map, identity_map
from trimiga.spline import TensorSplineSpace, eval_spline, gauss_legendre, uniform_knot_vector
from trimiga.stabilization import StabilizationPlan
from trimiga.trimming import HalfPlane, classify_cells, half_plane_param

ALL_WEAK = {"left": "weak", "right": "weak", "bottom": "weak", "top": "weak"}


def _random_spd(n, seed, cond=1e3):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return Q @ np.diag(np.logspace(0, np.log10(cond), n)) @ Q.T


# -- patch test and basic properties ------------------------------------------


@pytest.mark.parametrize("p", [1, 2, 3])
@pytest.mark.parametrize("mode", ["none", "parametric", "physical"])
def test_patch_test(p, mode):
    sc = replace(SCENARIOS["patch"], degree=p)
    d = build(sc, 3)
    uh = solve(assemble(d.space, d.tm, d.gmap, plan_for(d, mode), d.data))
    weak = weak_rule(d.tm, d.data)
    e1, e0 = error_norms(d.space, d.tm, d.gmap, uh, d.solution.u, d.solution.grad, weak)
    n1, _ = error_norms(d.space, d.tm, d.gmap, 0 * uh, d.solution.u, d.solution.grad, weak)
    assert e1 / n1 < 1e-9
    assert e0 < 1e-10


def test_matrix_is_symmetric():
    d = build(SCENARIOS["test1"], 3)
    A = assemble(d.space, d.tm, d.gmap, plan_for(d, "parametric"), d.data).matrix
    assert abs(A - A.T).max() < 1e-12 * abs(A).max()


def test_zero_data_gives_zero_solution():
    d = build(replace(SCENARIOS["test3"], solution="zero"), 3)
    uh = solve(assemble(d.space, d.tm, d.gmap, plan_for(d, "physical"), d.data))
    assert np.all(uh == 0.0)


def _plain_nitsche_oracle(space, tm, gmap, beta):
    """Unstabilized Nitsche matrix with weak trim data, assembled point by point."""
    n = space.dim
    A = np.zeros((n, n))
    for c in tm.active_cells:
        pts, w = tm.cell_rule(int(c))
        dofs = space.cell_dofs[c]
        _, pg = space.eval_basis(pts, c)
        jinv = np.linalg.inv(gmap.evaluate(pts).jac)
        g = np.einsum("qba,qmb->qma", jinv, pg)
        A[np.ix_(dofs, dofs)] += np.einsum("qad,qbd,q->ab", g, g, w)
    rule = tm.trim_rule()
    for q in range(len(rule)):
        c = rule.cell[q]
        dofs = space.cell_dofs[c]
        N, pg = space.eval_basis(rule.xhat[q : q + 1], c)
        jinv = np.linalg.inv(gmap.evaluate(rule.xhat[q : q + 1]).jac)[0]
        dn = (pg[0] @ jinv) @ rule.normal[q]
        w = rule.weight[q]
        A[np.ix_(dofs, dofs)] += w * (beta / tm.h[c] * np.outer(N[0], N[0]) - np.outer(N[0], dn) - np.outer(dn, N[0]))
    return A


def test_theta_zero_is_the_unstabilized_method():
    sc = replace(SCENARIOS["eps_mesh"], theta=0.0)
    d = build(sc, 5, 1e-6)
    ref = assemble(d.space, d.tm, d.gmap, plan_for(d, "none"), d.data).matrix
    for mode in ("parametric", "physical"):
        A = assemble(d.space, d.tm, d.gmap, plan_for(d, mode), d.data).matrix
        assert (A != ref).nnz == 0
    oracle = _plain_nitsche_oracle(d.space, d.tm, d.gmap, 1.0)
    active = deactivate_dofs(d.space, d.tm)
    diff = ref.toarray()[np.ix_(active, active)] - oracle[np.ix_(active, active)]
    assert np.abs(diff).max() < 1e-11 * np.abs(oracle).max()


# -- Gram matrix -----------------------------------------------------------------


def _untrimmed(n, p, gmap=None):
    kv = uniform_knot_vector(n, p)
    space = TensorSplineSpace(kv, kv)
    gmap = gmap or identity_map()
    return space, gmap, classify_cells(space, gmap, HalfPlane(1, 2.0), 1.0)


def test_gram_of_constant_is_boundary_term():
    space, gmap, tm = _untrimmed(8, 2)
    data = ProblemData(sides=dict(ALL_WEAK))
    B = gram_1h(space, tm, gmap, weak_rule(tm, data))
    c = np.full(space.dim, 3.0)
    h = np.sqrt(2) / 8
    assert c @ B @ c == pytest.approx(9.0 * 4.0 / h, rel=1e-12)


def test_gram_is_positive_semidefinite():
    d = build(SCENARIOS["test1"], 3)
    B = gram_1h(d.space, d.tm, d.gmap, weak_rule(d.tm, d.data)).toarray()
    lam = np.linalg.eigvalsh(B)
    assert lam.min() >= -1e-10 * lam.max()


def test_gram_matches_doubled_order_quadrature():
    p, n = 2, 4
    space, gmap, tm = _untrimmed(n, p)
    B = gram_1h(space, tm, gmap, weak_rule(tm, ProblemData(sides=dict(ALL_WEAK))))
    h = np.sqrt(2) / n
    order = 2 * (p + 2)
    pts, w = space.tensor_rule(order)
    pts, w = pts.reshape(-1, 2), w.ravel()
    parts = [gauss_legendre(order, k / n, (k + 1) / n) for k in range(n)]
    s, ws = np.concatenate([a for a, _ in parts]), np.concatenate([b for _, b in parts])
    edges = [np.column_stack([s, 0 * s]), np.column_stack([s, 0 * s + 1]), np.column_stack([0 * s, s]),
             np.column_stack([0 * s + 1, s])]
    rng = np.random.default_rng(0)
    for _ in range(10):
        c = rng.standard_normal(space.dim)
        d = 1e-5
        gx = (space.evaluate(c, np.clip(pts + [d, 0], 0, 1)) - space.evaluate(c, np.clip(pts - [d, 0], 0, 1))) / (2 * d)
        gy = (space.evaluate(c, np.clip(pts + [0, d], 0, 1)) - space.evaluate(c, np.clip(pts - [0, d], 0, 1))) / (2 * d)
        ref = np.sum(w * (gx**2 + gy**2))
        ref += sum(np.sum(ws * space.evaluate(c, e) ** 2) for e in edges) / h
        assert c @ B @ c == pytest.approx(ref, rel=1e-8)


# -- deactivation ----------------------------------------------------------------


def test_no_trim_all_active():
    space, _, tm = _untrimmed(4, 2)
    assert deactivate_dofs(space, tm).all()


def test_half_plane_deactivates_top_rows():
    kv = uniform_knot_vector(4, 1)
    space = TensorSplineSpace(kv, kv)
    tm = classify_cells(space, identity_map(), half_plane_param(1, 0.5), 0.5)
    active = deactivate_dofs(space, tm).reshape(5, 5)  # [row j, column i]
    # hats centred at y = 0.75 and y = 1 have supports above y = 0.5
    assert active[:3].all()
    assert not active[3:].any()


def test_eps_mesh_activity_follows_supports():
    eps = 1e-6
    space = make_space(3, 32, identity_map(), eps)
    tm = classify_cells(space, identity_map(), half_plane_param(1, 0.757), 1.0)
    active = deactivate_dofs(space, tm).reshape(space.kv2.n, space.kv1.n)
    kv = space.kv2
    expect = np.array([kv.support(j)[0] < 0.757 for j in range(kv.n)])
    np.testing.assert_array_equal(active.all(axis=1), expect)
    np.testing.assert_array_equal(active.any(axis=1), expect)
    # the bad row sits on top of functions that barely reach the domain
    assert expect.sum() == 28


# -- strong boundary conditions ---------------------------------------------------


def test_homogeneous_strong_bc():
    space, gmap, tm = _untrimmed(4, 2)
    system = LinearSystem(sp.identity(space.dim, format="csr"), np.ones(space.dim), np.ones(space.dim, bool))
    out = apply_strong_bc(system, space, gmap, lambda x: np.zeros(len(x)), ["bottom", "left"], tm)
    assert np.all(out.values == 0.0)
    u = solve(out)
    assert np.all(u[out.constrained] == 0.0)
    assert np.all(u[out.free] == 1.0)


def test_strong_bc_linear_data_gives_greville_points():
    space, gmap, tm = _untrimmed(5, 1)
    coef = edge_interpolant(space, gmap, lambda x: x[:, 0], "bottom")
    np.testing.assert_allclose(coef, space.kv1.greville, atol=1e-15)
    system = LinearSystem(sp.identity(space.dim, format="csr"), np.zeros(space.dim), np.ones(space.dim, bool))
    out = apply_strong_bc(system, space, gmap, lambda x: x[:, 0], ["bottom"], tm)
    dofs, _ = side_dofs(space, "bottom")
    np.testing.assert_array_equal(out.constrained, dofs)
    np.testing.assert_allclose(out.values, space.kv1.greville, atol=1e-15)


def test_lshape_trace_interpolation_converges():
    sc = SCENARIOS["test2"]
    hs, errs = [], []
    s = np.linspace(0, 1, 401)
    for level in (2, 3, 4, 5, 6):
        d = build(sc, level)
        err = 0.0
        for side in ("bottom", "left", "top", "right"):
            coef = edge_interpolant(d.space, d.gmap, d.solution.u, side)
            _, run = side_dofs(d.space, side)
            axis = 1 - run
            pts = np.empty((len(s), 2))
            pts[:, run] = s
            pts[:, axis] = {"bottom": 0.0, "left": 0.0, "top": 1.0, "right": 1.0}[side]
            approx = eval_spline(d.space.kvs[run], coef, s)
            err = max(err, np.max(np.abs(approx - d.solution.u(d.gmap.evaluate(pts).x))))
        hs.append(2.0**-level)
        errs.append(err)
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert slope >= 2 / 3


# -- solvers and spectra ------------------------------------------------------------


def test_identity_system():
    b = np.arange(5.0)
    assert np.array_equal(solve(LinearSystem(sp.identity(5, format="csr"), b, np.ones(5, bool))), b)


def test_random_spd_residual():
    A = _random_spd(50, 1)
    b = np.random.default_rng(2).standard_normal(50)
    u = solve(LinearSystem(sp.csr_matrix(A), b, np.ones(50, bool)))
    assert np.linalg.norm(A @ u - b) < 1e-10 * np.linalg.norm(b)


def test_gen_eig_trivial():
    A = _random_spd(6, 3)
    assert gen_eig_extremes(A, A) == pytest.approx((1.0, 1.0), rel=1e-12)
    assert gen_eig_extremes(np.diag([1.0, 4.0]), np.eye(2)) == pytest.approx((1.0, 4.0))


@pytest.mark.parametrize("seed", range(5))
def test_gen_eig_matches_dense_oracle(seed):
    A, B = _random_spd(40, seed), _random_spd(40, seed + 100, cond=1e2)
    lam = sla.eigh(A, B, eigvals_only=True)
    lo, hi = gen_eig_extremes(A, B)
    assert lo == pytest.approx(lam[0], rel=1e-8)
    assert hi == pytest.approx(lam[-1], rel=1e-8)


def test_gen_eig_mask():
    A = np.diag([1.0, 5.0, 9.0])
    lo, hi = gen_eig_extremes(A, np.eye(3), np.array([True, True, False]))
    assert (lo, hi) == pytest.approx((1.0, 5.0))


def test_condition_number_trivial():
    assert condition_number(np.eye(4)) == pytest.approx(1.0)
    assert condition_number(np.diag([1.0, 100.0])) == pytest.approx(100.0)
    assert condition_number(np.diag([1.0, 100.0]), jacobi=True) == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(5))
def test_condition_number_matches_svd(seed):
    A = _random_spd(40, seed, cond=1e5)
    sv = np.linalg.svd(A, compute_uv=False)
    assert condition_number(A) == pytest.approx(sv[0] / sv[-1], rel=1e-8)
    D = np.diag(1 / np.sqrt(np.diag(A)))
    sv = np.linalg.svd(D @ A @ D, compute_uv=False)
    assert condition_number(A, jacobi=True) == pytest.approx(sv[0] / sv[-1], rel=1e-8)


def test_condition_number_zero_diagonal():
    with pytest.raises(SolverError):
        condition_number(np.array([[0.0, 1.0], [1.0, 2.0]]), jacobi=True)


# -- error norms --------------------------------------------------------------------


def test_error_of_zero_solution_is_norm_of_uh():
    d = build(SCENARIOS["test1"], 3)
    uh = solve(assemble(d.space, d.tm, d.gmap, plan_for(d, "parametric"), d.data))
    weak = weak_rule(d.tm, d.data)
    e1, e0 = error_norms(d.space, d.tm, d.gmap, uh, lambda x: 0 * x[:, 0], lambda x: 0 * x, weak)
    B = gram_1h(d.space, d.tm, d.gmap, weak)
    assert e1 == pytest.approx(np.sqrt(uh @ B @ uh), rel=1e-10)
    l2 = 0.0
    for c in d.tm.active_cells:
        pts, w = d.tm.cell_rule(int(c))
        l2 += np.sum(w * (d.space.eval_basis(pts, c)[0] @ uh[d.space.cell_dofs[c]]) ** 2)
    assert e0 == pytest.approx(np.sqrt(l2), rel=1e-12)


def test_error_insensitive_to_quadrature_order():
    sc = SCENARIOS["test1"]
    errs = []
    for q in (4, 8):
        d = build(replace(sc, quad_order=q), 3)
        uh = solve(assemble(d.space, d.tm, d.gmap, plan_for(d, "parametric"), d.data))
        errs.append(error_norms(d.space, d.tm, d.gmap, uh, d.solution.u, d.solution.grad, weak_rule(d.tm, d.data))[0])
    assert abs(errs[0] - errs[1]) < 1e-3 * errs[1]


def test_problem_data_validation():
    with pytest.raises(ValueError):
        ProblemData(beta=0.0)
    with pytest.raises(ValueError):
        ProblemData(sides={"left": "robin"})
    with pytest.raises(ValueError):
        ProblemData(sides={"north": "weak"})


def test_affine_patch_with_physical_mode():
    # an affine map keeps Q_p, so the patch test must still pass in physical mode
    sc = replace(SCENARIOS["patch"], geometry="lshape", degree=2)
    gmap = affine_map((-2.0, -1.0), (1.0, 2.0))
    d = build(sc, 3)
    assert d.gmap.is_affine and np.allclose(d.gmap.evaluate(np.zeros((1, 2))).x, gmap.evaluate(np.zeros((1, 2))).x)
    plan = StabilizationPlan(d.space, d.gmap, d.tm, "physical")
    uh = solve(assemble(d.space, d.tm, d.gmap, plan, d.data))
    weak = weak_rule(d.tm, d.data)
    e1, _ = error_norms(d.space, d.tm, d.gmap, uh, d.solution.u, d.solution.grad, weak)
    n1, _ = error_norms(d.space, d.tm, d.gmap, 0 * uh, d.solution.u, d.solution.grad, weak)
    assert e1 / n1 < 1e-9
