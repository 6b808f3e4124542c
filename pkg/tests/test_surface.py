import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from carroll_forge import expr as ex
from carroll_forge.carroll import CarrollStructure, EhresmannForm
from carroll_forge.geometry import Chart
from carroll_forge.policy import WrongBranchError
from carroll_forge.surface import (
    DegenerateMetricError,
    SurfaceEmbedding,
    b_tensor,
    check_curved_case,
    check_flat_case,
    curvature_decomposition_terms,
    geometry_from_metric,
    hessian,
    hessian_identity_terms,
    induced_metric,
    pullback_alpha,
    slice_geometry,
    surface_points,
    verify_homothety,
)
from carroll_forge.policy import residual

from conftest import GALLERY, make_case, values

XY = ("x", "y")


def geometry(name, h="0", c=1.0, n=64):
    case = make_case(name)
    s = SurfaceEmbedding(case.parse(h), c, case.c)
    return case, induced_metric(case.c, s, surface_points(case.c, n, 0))


def scalar_values(geo):
    return values([geo.scalar], geo.points)[0]


def p(text):
    return ex.parse(text, XY)


@pytest.mark.parametrize("h", ["0", "x*y", "sin(x)+y^2"])
def test_flat_ambient_any_height(h):
    _, geo = geometry("flat", h)
    assert np.allclose(values(geo.metric, geo.points), np.eye(2)[:, :, None])
    assert np.max(np.abs(scalar_values(geo))) < 1e-12


def test_round_sphere_slice():
    _, geo = geometry("sphere")
    assert np.max(np.abs(scalar_values(geo) - 2.0)) < 1e-9
    g = values(geo.metric, geo.points)
    assert np.allclose(g[1, 1], np.sin(geo.points["x"]) ** 2)


def test_expanding_with_linear_height_is_flat():
    _, geo = geometry("expanding", "x", 1.0)
    g = values(geo.metric, geo.points)
    assert np.allclose(g[0, 0], np.exp(2 * (1.0 - geo.points["x"])))
    assert np.max(np.abs(scalar_values(geo))) < 1e-9


def test_degenerate_metric_rejected():
    pts = {"x": np.linspace(-1, 1, 8), "y": np.zeros(8)}
    metric = np.array([[ex.ONE, ex.ZERO], [ex.ZERO, p("x")]], dtype=object)
    with pytest.raises(DegenerateMetricError):
        geometry_from_metric(metric, XY, pts)


RNG = np.random.default_rng(3)
PTS = {"x": RNG.uniform(-1, 1, 32), "y": RNG.uniform(-1, 1, 32)}
small = st.integers(-3, 3).map(lambda k: k / 4)


@settings(max_examples=30, deadline=None)
@given(st.lists(small, min_size=6, max_size=6))
def test_conformal_scalar_curvature(cs):
    omega = p(f"({cs[0]})*x + ({cs[1]})*y + ({cs[2]})*x^2 + ({cs[3]})*x*y + ({cs[4]})*sin(y) + ({cs[5]})*cos(x*y)")
    f = ex.exp(ex.mul(ex.const(2.0), omega))
    geo = geometry_from_metric(np.array([[f, ex.ZERO], [ex.ZERO, f]], dtype=object), XY, PTS)
    lap = ex.add(ex.differentiate(ex.differentiate(omega, "x"), "x"), ex.differentiate(ex.differentiate(omega, "y"), "y"))
    expected = values([ex.mul(ex.const(-2.0), ex.mul(ex.exp(ex.mul(ex.const(-2.0), omega)), lap))], PTS)[0]
    got = scalar_values(geo)
    assert np.max(np.abs(got - expected) / (1 + np.abs(expected))) < 1e-9
    assert residual(curvature_decomposition_terms(geo), PTS).max < 1e-9


@settings(max_examples=25, deadline=None)
@given(st.lists(small, min_size=4, max_size=4))
def test_curvature_decomposition_general_metric(cs):
    metric = np.array(
        [
            [p(f"2 + ({cs[0]})*sin(x)"), p(f"({cs[1]})*x*y/4")],
            [p(f"({cs[1]})*x*y/4"), p(f"2 + ({cs[2]})*cos(y) + ({cs[3]})*x^2/4")],
        ],
        dtype=object,
    )
    geo = geometry_from_metric(metric, XY, PTS)
    assert residual(curvature_decomposition_terms(geo), PTS).max < 1e-9


@pytest.mark.parametrize("name", sorted(GALLERY))
def test_decomposition_on_gallery_slices(name):
    case = make_case(name)
    geo = slice_geometry(case.c, points=surface_points(case.c))
    assert residual(curvature_decomposition_terms(geo), geo.points).max < 1e-9


heights = st.lists(small, min_size=5, max_size=5).map(
    lambda cs: p(f"({cs[0]})*cos(x) + ({cs[1]})*sin(x)*cos(y) + ({cs[2]})*x^2*y + ({cs[3]})*exp(y/2) + ({cs[4]})*x*y")
)


@settings(max_examples=30, deadline=None)
@given(heights)
def test_hessian_identity_on_sphere(h):
    _, geo = geometry("sphere")
    assert residual(hessian_identity_terms(geo, h), geo.points).max < 1e-9


@settings(max_examples=20, deadline=None)
@given(heights)
def test_curved_check_accepts_hessians(h):
    _, geo = geometry("sphere")
    assert check_curved_case(geo, hessian(geo, h)).outcome


def test_b_tensor_examples():
    _, flat = geometry("flat")
    B = values(b_tensor(flat, [p("x"), p("y")]), flat.points)
    assert np.max(np.abs(B)) < 1e-15
    B = values(b_tensor(flat, [ex.ZERO, ex.ZERO]), flat.points)
    assert np.allclose(B, np.eye(2)[:, :, None])
    _, sphere = geometry("sphere")
    assert np.allclose(values(b_tensor(sphere, [ex.ZERO, ex.ZERO]), sphere.points), values(sphere.metric, sphere.points))


def test_flat_case_examples():
    case, geo = geometry("flat")
    s = SurfaceEmbedding(ex.ZERO, 1.0, case.c)
    swirl = pullback_alpha(case.c, s, EhresmannForm.from_strings(case.chart, "-y/2", "x/2"))
    v = check_flat_case(geo, swirl)
    assert v.outcome and v.details["ratio_mean"] == pytest.approx(1.0)
    v = check_flat_case(geo, pullback_alpha(case.c, s, EhresmannForm.from_strings(case.chart, "0", "x^2")))
    assert not v.outcome
    assert v.details["ratio_min"] == pytest.approx(2 * geo.points["x"].min())
    assert check_flat_case(geo, [ex.ZERO, ex.ZERO]).outcome


def test_flat_case_needs_flat_metric():
    _, geo = geometry("sphere")
    with pytest.raises(WrongBranchError):
        check_flat_case(geo, [ex.ZERO, ex.ZERO])


def test_pullback_includes_height_gradient():
    case = make_case("drift")
    s = SurfaceEmbedding(case.parse("x*y"), 1.0, case.c)
    pulled = pullback_alpha(case.c, s, case.omega)
    pts = surface_points(case.c, 8)
    v = values(np.array(pulled, dtype=object), pts)
    assert np.allclose(v[0], -pts["y"])
    assert np.allclose(v[1], 1.0 - pts["x"] * pts["y"] - pts["x"])


@settings(max_examples=20, deadline=None)
@given(heights, st.integers(-2, 2))
def test_flat_case_soundness(h, k):
    # B = Hess h exactly when iota*alpha + dh is a unit homothety form
    _, geo = geometry("flat")
    pulled = [
        ex.sub(p(f"x + ({k})*(-y)"), ex.differentiate(h, "x")),
        ex.sub(p(f"y + ({k})*x"), ex.differentiate(h, "y")),
    ]
    B = values(b_tensor(geo, pulled), geo.points)
    H = values(hessian(geo, h), geo.points)
    assert np.max(np.abs(B - H)) < 1e-9
    v = check_flat_case(geo, pulled)
    assert v.outcome and v.details["ratio_mean"] == pytest.approx(2 * k)


@settings(max_examples=20, deadline=None)
@given(heights, st.integers(1, 3))
def test_flat_case_negative(h, k):
    # a non-constant curl cannot come from a Hessian B
    _, geo = geometry("flat")
    pulled = [ex.sub(p("x"), ex.differentiate(h, "x")), ex.sub(p(f"y + ({k})*x^2"), ex.differentiate(h, "y"))]
    assert not check_flat_case(geo, pulled).outcome


def test_curved_case_examples():
    _, geo = geometry("sphere")
    assert check_curved_case(geo, hessian(geo, p("cos(x)"))).outcome
    v = check_curved_case(geo, geo.metric)
    assert not v.outcome and v.residuals["hessian_constraint"].max > 0.1
    _, flat = geometry("flat")
    with pytest.raises(WrongBranchError):
        check_curved_case(flat, flat.metric)


def test_homothety_flat():
    _, geo = geometry("flat")
    v = verify_homothety(geo, [p("x"), p("y")])
    assert v.outcome and v.residuals["homothety"].max < 1e-10
    assert not verify_homothety(geo, [ex.ONE, ex.ZERO]).outcome


@pytest.mark.parametrize("a", [-1.0, 0.0, 0.5, 2.0])
@pytest.mark.parametrize("b", [-1.0, 0.0, 1.0])
def test_sphere_has_no_homothety(a, b):
    _, geo = geometry("sphere")
    # gradient of a cos x + b sin x cos y, and the same pair as raw components
    f = p(f"({a})*cos(x) + ({b})*sin(x)*cos(y)")
    grad = [ex.differentiate(f, "x"), ex.differentiate(f, "y")]
    assert not verify_homothety(geo, grad).outcome
    assert not verify_homothety(geo, [f, ex.ZERO]).outcome
    assert not verify_homothety(geo, [p(f"({a})*x"), p(f"({b})*sin(x)^2")]).outcome
