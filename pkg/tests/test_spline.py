import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trimiga.experiments import make_space
from trimiga.geometry import identity_map
from trimiga.spline import (
    KnotVector,
    SplineError,
    TensorSplineSpace,
    bernstein_tensor,
    bezier_extract,
    eval_basis,
    eval_spline,
    insert_knot,
    l2_project_global,
    make_open_knot_vector,
    uniform_knot_vector,
)


def test_open_knot_vector_no_internal_knots():
    kv = make_open_knot_vector([0, 1], 1, 0)
    np.testing.assert_array_equal(kv.knots, [0, 0, 1, 1])
    assert kv.n == 2


def test_open_knot_vector_single_c1_knot():
    kv = make_open_knot_vector([0, 0.5, 1], 2, 1)
    np.testing.assert_array_equal(kv.knots, [0, 0, 0, 0.5, 1, 1, 1])
    assert kv.n == 4


def test_eps_space_dimension():
    # 32 cells, cubic C2, one knot moved: 32 + 3 functions per direction
    space = make_space(3, 32, identity_map(), eps=1e-4)
    assert space.kv2.n == 35
    assert 0.757 - 1e-4 in space.kv2.breakpoints


@pytest.mark.parametrize(
    "knots, p, cont",
    [([0, 0.5], 2, 1), ([0, 0.5, 0.5, 1], 2, 1), ([0, 0.5, 1], 2, 2), ([0, 0.5, 1], 2, -1)],
)
def test_open_knot_vector_rejects_bad_input(knots, p, cont):
    with pytest.raises(SplineError):
        make_open_knot_vector(knots, p, cont)


def test_eval_basis_hat_functions():
    tab, first = eval_basis(KnotVector([0, 0, 1, 1], 1), 0.5)
    np.testing.assert_allclose(tab[0], [0.5, 0.5])
    assert first == 0


def test_eval_basis_bernstein():
    tab, _ = eval_basis(KnotVector([0, 0, 0, 1, 1, 1], 2), 0.5)
    np.testing.assert_allclose(tab[0], [0.25, 0.5, 0.25])


@st.composite
def knot_vectors(draw):
    p = draw(st.integers(1, 4))
    inner = sorted(set(draw(st.lists(st.floats(0.01, 0.99), max_size=6))))
    br = [0.0] + [x for x in inner] + [1.0]
    br = [b for i, b in enumerate(br) if i == 0 or b - br[i - 1] > 1e-3]
    if br[-1] != 1.0:
        br[-1] = 1.0
    k = draw(st.integers(0, p - 1))
    return make_open_knot_vector(br, p, k)


@settings(max_examples=60, deadline=None)
@given(knot_vectors(), st.floats(0.0, 1.0))
def test_partition_of_unity(kv, x):
    tab, first = eval_basis(kv, x, 1)
    assert abs(tab[0].sum() - 1.0) < 1e-12
    assert abs(tab[1].sum()) < 1e-9 * max(1.0, np.abs(tab[1]).max())
    assert 0 <= first <= kv.n - kv.degree - 1


def test_insert_knot_linear():
    kv2, c2 = insert_knot(KnotVector([0, 0, 1, 1], 1), np.array([0.0, 1.0]), 0.25)
    np.testing.assert_allclose(c2, [0, 0.25, 1])
    np.testing.assert_array_equal(kv2.knots, [0, 0, 0.25, 1, 1])


@pytest.mark.parametrize(
    "kv, c, xbar",
    [
        (KnotVector([0, 0, 0, 1, 1, 1], 2), np.array([1.0, 0.0, 0.0]), 0.5),
        (make_open_knot_vector([0, 0.3, 0.6, 1], 3, 2), np.arange(6.0) ** 2, 0.3),
        (make_open_knot_vector([0, 0.3, 0.6, 1], 3, 1), np.cos(np.arange(8.0)), 0.6),
    ],
)
def test_insert_knot_preserves_values(kv, c, xbar):
    kv2, c2 = insert_knot(kv, c, xbar)
    x = np.linspace(0, 1, 101)
    assert np.max(np.abs(eval_spline(kv, c, x) - eval_spline(kv2, c2, x))) < 1e-13


def test_insert_knot_respects_multiplicity_limit():
    kv = make_open_knot_vector([0, 0.5, 1], 2, 0)
    with pytest.raises(SplineError):
        insert_knot(kv, np.zeros(kv.n), 0.5)


def _bezier_values(space, coeffs, pts, cells):
    boxes = space.cell_boxes[cells]
    t = np.column_stack([(pts[:, 0] - boxes[:, 0]) / (boxes[:, 1] - boxes[:, 0]),
                         (pts[:, 1] - boxes[:, 2]) / (boxes[:, 3] - boxes[:, 2])])
    B, _ = bernstein_tensor(space.degree, t)
    ext = bezier_extract(space)
    bc = np.einsum("nkj,nj->nk", ext[cells], coeffs[space.cell_dofs[cells]])
    return np.einsum("nk,nk->n", B, bc)


def test_extraction_single_element_is_identity():
    kv = uniform_knot_vector(1, 3)
    ext = bezier_extract(TensorSplineSpace(kv, kv))
    np.testing.assert_allclose(ext[0], np.eye(16), atol=1e-15)


def test_extraction_c0_linear_duplicates_shared_coefficient():
    kv = make_open_knot_vector([0, 0.5, 1], 1, 0)
    space = TensorSplineSpace(kv, KnotVector([0, 0, 1, 1], 1))
    c = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    ext = bezier_extract(space)
    left = ext[0] @ c[space.cell_dofs[0]]
    right = ext[1] @ c[space.cell_dofs[1]]
    # the shared vertical edge carries the same two coefficients on both sides
    np.testing.assert_allclose(left[[1, 3]], right[[0, 2]])
    pts = np.array([[0.5, 0.3], [0.5, 0.8]])
    np.testing.assert_allclose(_bezier_values(space, c, pts, np.array([0, 0])),
                               _bezier_values(space, c, pts, np.array([1, 1])))


def test_extraction_random_cubic_matches_spline():
    rng = np.random.default_rng(3)
    kv1 = make_open_knot_vector([0, 0.2, 0.45, 0.7, 1], 3, 2)
    kv2 = make_open_knot_vector([0, 0.35, 0.6, 1], 3, 2)
    space = TensorSplineSpace(kv1, kv2)
    c = rng.standard_normal(space.dim)
    pts = rng.uniform(0, 1, (400, 2))
    cells = space.find_cell(pts)
    np.testing.assert_allclose(_bezier_values(space, c, pts, cells), space.evaluate(c, pts), atol=1e-12)


def test_l2_projection_of_constant():
    kv = uniform_knot_vector(4, 2)
    c = l2_project_global(TensorSplineSpace(kv, kv), lambda x: np.ones(len(x)))
    np.testing.assert_allclose(c, 1.0, atol=1e-12)


def test_l2_projection_reproduces_splines():
    rng = np.random.default_rng(4)
    kv = make_open_knot_vector([0, 0.25, 0.6, 1], 3, 1)
    space = TensorSplineSpace(kv, uniform_knot_vector(3, 3))
    c = rng.standard_normal(space.dim)
    c2 = l2_project_global(space, lambda x: space.evaluate(c, x))
    np.testing.assert_allclose(c2, c, atol=1e-12 * np.abs(c).max() * 10)


@pytest.mark.parametrize("p", [1, 2, 3])
def test_l2_projection_rate(p):
    def f(x):
        return np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])

    hs, errs = [], []
    for n in (4, 8, 16, 32):
        kv = uniform_knot_vector(n, p)
        space = TensorSplineSpace(kv, kv)
        c = l2_project_global(space, f)
        pts, wts = space.tensor_rule(p + 4)
        pts = pts.reshape(-1, 2)
        err = np.sqrt(np.sum(wts.ravel() * (space.evaluate(c, pts) - f(pts)) ** 2))
        hs.append(1 / n)
        errs.append(err)
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert abs(slope - (p + 1)) < 0.2
