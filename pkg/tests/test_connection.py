import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from carroll_forge import expr as ex
from carroll_forge.carroll import CarrollStructure, EhresmannForm, minimal_torsion
from carroll_forge.classify import check_carrollian_torsion_identity
from carroll_forge.connection import (
    AffineConnection,
    build_pcs_connection,
    build_scm_connection,
    coefficient_values,
    covariant_derivative,
    curvature_of,
    postconditions,
    solve_connection_at,
    torsion_of,
)
from carroll_forge.geometry import Chart, TensorField, as_expr_array, build_frame, change_basis, lie_bracket, zeros
from carroll_forge.policy import HypothesisViolation, NotPrincipalError

from conftest import GALLERY, make_case, values

COORDS = ("u", "x", "y")
MONOMIALS = ["1", "x", "y", "u", "x*y", "sin(u)", "exp(x)"]
CHART = Chart()
PTS = CHART.sample(16, seed=2)


def poly(coeffs):
    return CHART.parse("+".join(f"({c})*{m}" for c, m in zip(coeffs, MONOMIALS)))


row = st.lists(st.integers(-2, 2), min_size=len(MONOMIALS), max_size=len(MONOMIALS))


def field(draw_rows, shape):
    return as_expr_array(np.array([poly(r) for r in draw_rows], dtype=object).reshape(shape))


def zero_connection():
    return AffineConnection(zeros(3, 3, 3))


def test_derivative_of_constant_scalar():
    conn = AffineConnection(as_expr_array(np.full((3, 3, 3), CHART.parse("x*y"))))
    t = TensorField(0, 0, np.array(ex.const(3.0), dtype=object))
    d = covariant_derivative(conn, t)
    assert all(e is ex.ZERO for e in d.components.ravel())


def test_zero_connection_gives_partials():
    t = TensorField(1, 0, as_expr_array([CHART.parse("x^2"), CHART.parse("u*y"), ex.ONE]))
    d = covariant_derivative(zero_connection(), t)
    assert d.components[0, 1] is ex.differentiate(CHART.parse("x^2"), "x")
    assert d.components[1, 0] is CHART.parse("y")


def test_frame_field_needs_frame():
    t = TensorField(1, 0, as_expr_array([1, 0, 0]), "frame")
    with pytest.raises(ValueError):
        covariant_derivative(zero_connection(), t)


@settings(max_examples=25, deadline=None)
@given(
    st.lists(row, min_size=27, max_size=27),
    st.lists(row, min_size=3, max_size=3),
    st.lists(row, min_size=3, max_size=3),
)
def test_leibniz_rule(gamma_rows, s_rows, t_rows):
    conn = AffineConnection(field(gamma_rows, (3, 3, 3)))
    s = TensorField(1, 0, field(s_rows, (3,)))
    t = TensorField(0, 1, field(t_rows, (3,)))
    from carroll_forge.geometry import tensor_product

    lhs = values(covariant_derivative(conn, tensor_product(s, t)).components, PTS)
    ds = values(covariant_derivative(conn, s).components, PTS)  # [a, c]
    dt = values(covariant_derivative(conn, t).components, PTS)  # [b, c]
    sv = values(s.components, PTS)
    tv = values(t.components, PTS)
    rhs = np.einsum("acn,bn->abcn", ds, tv) + np.einsum("an,bcn->abcn", sv, dt)
    assert np.max(np.abs(lhs - rhs) / (1 + np.abs(rhs))) < 1e-10


@settings(max_examples=25, deadline=None)
@given(st.lists(row, min_size=27, max_size=27), st.lists(row, min_size=3, max_size=3), st.lists(row, min_size=3, max_size=3))
def test_torsion_is_commutator_defect(gamma_rows, x_rows, y_rows):
    conn = AffineConnection(field(gamma_rows, (3, 3, 3)))
    X = field(x_rows, (3,))
    Y = field(y_rows, (3,))
    dX = values(covariant_derivative(conn, TensorField(1, 0, X)).components, PTS)
    dY = values(covariant_derivative(conn, TensorField(1, 0, Y)).components, PTS)
    Xv, Yv = values(X, PTS), values(Y, PTS)
    br = values(np.array(lie_bracket(X, Y, COORDS), dtype=object), PTS)
    direct = np.einsum("acn,cn->an", dY, Xv) - np.einsum("acn,cn->an", dX, Yv) - br
    T = values(torsion_of(conn).field.components, PTS)
    via_T = np.einsum("abcn,bn,cn->an", T, Xv, Yv)
    assert np.max(np.abs(direct - via_T) / (1 + np.abs(direct))) < 1e-10


def test_symmetric_connection_is_torsion_free():
    G = zeros(3, 3, 3)
    G[0, 1, 2] = G[0, 2, 1] = CHART.parse("x")
    G[1, 1, 1] = CHART.parse("y*u")
    T = torsion_of(AffineConnection(G)).field.components
    assert all(e is ex.ZERO for e in T.ravel())


def test_zero_connection_is_flat():
    assert all(e is ex.ZERO for e in curvature_of(zero_connection()).components.ravel())


def _gauss_curvature(m22_text, domain, expected):
    chart = Chart(domain=domain)
    c = CarrollStructure.from_strings(chart, "1", "0", m22_text)
    omega = EhresmannForm.from_strings(chart)
    pts = chart.sample(64)
    conn = build_scm_connection(c, omega.with_role("principal"), pts)
    f = build_frame(c, omega)
    R = values(curvature_of(conn, f).components, pts)
    # sectional curvature g(R(e2,e3)e3, e2) = R^2_{323}
    assert np.max(np.abs(R[1, 2, 1, 2] - expected(pts))) < 1e-9


def test_round_sphere_sectional_curvature():
    _gauss_curvature("sin(x)", GALLERY["sphere"][5], lambda p: np.ones_like(p["x"]))


def test_warped_sectional_curvature():
    # ds^2 = dx^2 + G dy^2 has K = -(sqrt G)_xx / sqrt G
    _gauss_curvature("1+x^2", GALLERY["flat"][5], lambda p: -2.0 / (1 + p["x"] ** 2))


def test_flat_scm_is_zero():
    case = make_case("flat")
    conn = build_scm_connection(case.c, case.nu, case.points)
    assert all(e is ex.ZERO for e in conn.coefficients.ravel())
    assert all(e is ex.ZERO for e in curvature_of(conn).components.ravel())


def test_twisted_scm_fibre_coefficient():
    case = make_case("twisted")
    conn = build_scm_connection(case.c, case.omega, case.points)
    G = coefficient_values(conn, case.points)
    sym = 0.5 * (G[:, 0, 1, 2] + G[:, 0, 2, 1])
    assert np.allclose(sym, 0.5)
    mask = np.ones((3, 3, 3), dtype=bool)
    mask[0, 1, 2] = mask[0, 2, 1] = False
    assert np.max(np.abs(G[:, mask])) < 1e-15


def test_flat_pcs_coefficients():
    case = make_case("flat")
    conn = build_pcs_connection(case.c, case.omega, case.points)
    G = coefficient_values(conn, case.points)
    expected = np.zeros((3, 3, 3))
    expected[0, 1, 1] = expected[0, 2, 2] = -1.0
    assert np.max(np.abs(G - expected)) == 0
    assert conn.postconditions["potential"].max < 1e-10


def test_expanding_builders_match_minimal_torsion():
    case = make_case("expanding")
    M = values(minimal_torsion(case.c, case.omega).field.components, case.points)
    for build in (build_scm_connection, build_pcs_connection):
        conn = build(case.c, case.nu, case.points)
        T = values(torsion_of(conn).field.components, case.points)
        assert np.max(np.abs(T - M)) < 1e-9
    assert build_scm_connection(case.c, case.nu, case.points).postconditions["nabla_nu"].max < 1e-10


def test_scm_rejects_non_principal_form():
    case = make_case("drift")
    with pytest.raises(NotPrincipalError):
        build_scm_connection(case.c, case.omega, case.points)


@pytest.mark.parametrize("name", sorted(GALLERY))
def test_builder_postconditions(name):
    case = make_case(name)
    pcs = build_pcs_connection(case.c, case.omega, case.points)
    assert all(r.max < 1e-9 for r in pcs.postconditions.values()), pcs.postconditions
    scm = build_scm_connection(case.c, case.nu, case.points)
    for key in ("nabla_g", "nabla_ell", "torsion_minimal"):
        assert scm.postconditions[key].max < 1e-9
    if name == "twisted":
        # d nu does not vanish on horizontal pairs, so no parallel nu exists
        assert scm.postconditions["nabla_nu"].max > 0.1
    else:
        assert scm.postconditions["nabla_nu"].max < 1e-9


@pytest.mark.parametrize("name", sorted(GALLERY))
@pytest.mark.parametrize("kind", ["scm", "pcs"])
def test_uniqueness_against_linear_solve(name, kind):
    case = make_case(name, n=16, seed=11)
    form = case.nu if kind == "scm" else case.omega
    build = build_scm_connection if kind == "scm" else build_pcs_connection
    conn = build(case.c, form, case.points)
    solved, res = solve_connection_at(case.c, form, kind, case.points)
    assert res.max() < 1e-8
    assert np.max(np.abs(solved - coefficient_values(conn, case.points))) < 1e-8


@pytest.mark.parametrize("name", sorted(GALLERY))
def test_curvature_and_torsion_agree_across_bases(name):
    case = make_case(name, n=16)
    f = build_frame(case.c, case.omega)
    for conn in (build_pcs_connection(case.c, case.omega, case.points), build_scm_connection(case.c, case.nu, case.points)):
        Rf = values(curvature_of(conn, f).components, case.points)
        Rc = values(change_basis(curvature_of(conn), f, "to-frame").components, case.points)
        assert np.max(np.abs(Rf - Rc)) < 1e-9
        t = torsion_of(conn, f)
        Tc = values(change_basis(t.field, f, "to-frame").components, case.points)
        assert np.max(np.abs(values(t.frame_field.components, case.points) - Tc)) < 1e-9
        sym = Rf + np.swapaxes(Rf, 2, 3)
        assert np.max(np.abs(sym)) == 0


@pytest.mark.parametrize("name", sorted(GALLERY))
def test_lie_metric_identity_for_built_connections(name):
    case = make_case(name)
    for conn in (build_pcs_connection(case.c, case.omega, case.points), build_scm_connection(case.c, case.nu, case.points)):
        v = check_carrollian_torsion_identity(case.c, conn, case.points)
        assert v.outcome and v.residuals["lie_metric_identity"].max < 1e-9


@pytest.mark.parametrize("idx", [(a, 0, c) for a in range(3) for c in range(3)])
def test_breaking_ell_parallelism_is_detected(idx):
    case = make_case("expanding")
    conn = build_scm_connection(case.c, case.nu, case.points).perturbed(idx, 1e-3)
    with pytest.raises(HypothesisViolation) as info:
        check_carrollian_torsion_identity(case.c, conn, case.points)
    assert info.value.value > 1e-4


@pytest.mark.parametrize("kind", ["scm", "pcs"])
def test_every_coefficient_is_pinned(kind):
    case = make_case("shear")
    form = case.nu if kind == "scm" else case.omega
    conn = (build_scm_connection if kind == "scm" else build_pcs_connection)(case.c, form, case.points)
    for idx in np.ndindex(3, 3, 3):
        post = postconditions(conn.perturbed(idx, 1e-3), case.c, form, kind, case.points)
        assert max(r.max for r in post.values()) > 1e-4, idx


def test_from_mapping():
    conn = AffineConnection.from_mapping({"Gamma.u.x.y": CHART.parse("x")})
    assert conn[0, 1, 2] is CHART.parse("x")
    with pytest.raises(ValueError):
        AffineConnection.from_mapping({"Gamma.u.x": ex.ONE})
