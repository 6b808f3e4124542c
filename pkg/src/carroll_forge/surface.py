"""Horizontal graph surfaces u = c - h(x, y) and their induced 2-d Riemannian geometry."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import expr as ex
from .carroll import CarrollStructure, EhresmannForm
from .expr import ZERO, Expr
from .policy import (
    CarrollError,
    IndeterminateBranchError,
    PASS_TOL,
    Residual,
    Verdict,
    WrongBranchError,
    classify_scalar,
    evaluate_components,
    residual,
)

D2 = 2


class DegenerateMetricError(CarrollError):
    pass


def _zeros(*shape):
    out = np.empty(shape, dtype=object)
    out.fill(ZERO)
    return out


def _neg(arr: np.ndarray) -> np.ndarray:
    return np.vectorize(ex.neg, otypes=[object])(arr)


@dataclass(frozen=True)
class SurfaceEmbedding:
    h: Expr
    c: float
    carroll: CarrollStructure

    @property
    def coords(self) -> tuple[str, str]:
        return tuple(self.carroll.coords[1:])

    def substitution(self) -> dict:
        return {self.carroll.chart.fibre: ex.sub(ex.const(self.c), self.h)}


@dataclass
class InducedGeometry:
    coords: tuple[str, str]
    metric: np.ndarray
    inverse: np.ndarray
    christoffel: np.ndarray
    riemann: np.ndarray
    riemann_lowered: np.ndarray
    scalar: Expr
    density: Expr
    points: dict

    def d(self, e: Expr, i: int) -> Expr:
        return ex.differentiate(e, self.coords[i])


def surface_points(carroll: CarrollStructure, n: int = 64, seed: int = 0) -> dict:
    pts = carroll.chart.sample(n, seed)
    return {k: pts[k] for k in carroll.coords[1:]}


def geometry_from_metric(metric: np.ndarray, coords: Sequence[str], points: dict, density: Optional[Expr] = None) -> InducedGeometry:
    """Levi-Civita connection, curvature and scalar curvature of a 2-d metric."""
    g = metric
    det = ex.sub(g[0, 0] * g[1, 1], g[0, 1] * g[1, 0])
    detv = evaluate_components([np.array([det, g[0, 0]], dtype=object)], points)[0]
    if not (np.all(detv[0] > 0) and np.all(detv[1] > 0)):
        raise DegenerateMetricError("induced metric is not positive definite on the sample grid")
    inv = np.array([[g[1, 1] / det, ex.neg(g[0, 1]) / det], [ex.neg(g[1, 0]) / det, g[0, 0] / det]], dtype=object)
    coords = tuple(coords)

    def d(e, i):
        return ex.differentiate(e, coords[i])

    # Gamma^a_{bc}, symmetric in b, c
    lowered = _zeros(D2, D2, D2)
    for l, b, c in np.ndindex(D2, D2, D2):
        lowered[l, b, c] = ex.mul(ex.const(0.5), ex.esum([d(g[l, c], b), d(g[l, b], c), ex.neg(d(g[b, c], l))]))
    G = _zeros(D2, D2, D2)
    for a, b, c in np.ndindex(D2, D2, D2):
        G[a, b, c] = ex.esum(inv[a, l] * lowered[l, b, c] for l in range(D2))
    R = _zeros(D2, D2, D2, D2)
    for a, b, c, e in np.ndindex(D2, D2, D2, D2):
        if c == e:
            continue
        terms = [d(G[a, b, e], c), ex.neg(d(G[a, b, c], e))]
        for k in range(D2):
            terms.append(G[k, b, e] * G[a, k, c])
            terms.append(ex.neg(G[k, b, c] * G[a, k, e]))
        R[a, b, c, e] = ex.esum(terms)
    RL = _zeros(D2, D2, D2, D2)
    for a, b, c, e in np.ndindex(RL.shape):
        RL[a, b, c, e] = ex.esum(g[a, k] * R[k, b, c, e] for k in range(D2))
    scalar = ex.mul(ex.const(2.0), ex.div(RL[0, 1, 0, 1], det))
    if density is None:
        density = ex.sqrt(det)
    return InducedGeometry(coords, g, inv, G, R, RL, scalar, density, points)


def induced_metric(c: CarrollStructure, s: SurfaceEmbedding, points: Optional[dict] = None) -> InducedGeometry:
    """Pull g back along u = c - h; g has no du part so this is a substitution."""
    if points is None:
        points = surface_points(c)
    sub = s.substitution()
    g = c.metric().components
    metric = np.empty((D2, D2), dtype=object)
    for i, j in np.ndindex(D2, D2):
        metric[i, j] = ex.substitute(g[i + 1, j + 1], sub)
    density = ex.substitute(ex.mul(c.m11, c.m22), sub)
    return geometry_from_metric(metric, s.coords, points, density)


def slice_geometry(c: CarrollStructure, u0: Optional[float] = None, points: Optional[dict] = None) -> InducedGeometry:
    """Spatial metric on the slice u = u0 (default: middle of the fibre interval)."""
    if u0 is None:
        u0 = c.chart.midpoint(0)
    return induced_metric(c, SurfaceEmbedding(ZERO, u0, c), points)


def pullback_alpha(c: CarrollStructure, s: SurfaceEmbedding, alpha: EhresmannForm) -> list[Expr]:
    """Components of iota^* alpha on (x, y): alpha_i(c - h, x, y) - d_i h."""
    sub = s.substitution()
    return [
        ex.sub(ex.substitute(w, sub), ex.differentiate(s.h, s.coords[i])) for i, w in enumerate((alpha.w1, alpha.w2))
    ]


# ----------------------------------------------------------------------
# covariant derivatives on the surface
# ----------------------------------------------------------------------


def nabla_covector_terms(geo: InducedGeometry, w: Sequence[Expr]) -> list[np.ndarray]:
    """Pieces of nabla_b w_a stored at [a, b]."""
    part = _zeros(D2, D2)
    conn = _zeros(D2, D2)
    for a, b in np.ndindex(D2, D2):
        part[a, b] = geo.d(w[a], b)
        conn[a, b] = ex.neg(ex.esum(geo.christoffel[e, a, b] * w[e] for e in range(D2)))
    return [part, conn]


def nabla_covector(geo: InducedGeometry, w: Sequence[Expr]) -> np.ndarray:
    p, q = nabla_covector_terms(geo, w)
    return np.vectorize(ex.add, otypes=[object])(p, q)


def nabla_tensor2(geo: InducedGeometry, B: np.ndarray) -> np.ndarray:
    """nabla_c B_ab stored at [a, b, c]."""
    out = _zeros(D2, D2, D2)
    G = geo.christoffel
    for a, b, c in np.ndindex(D2, D2, D2):
        terms = [geo.d(B[a, b], c)]
        for e in range(D2):
            terms.append(ex.neg(G[e, a, c] * B[e, b]))
            terms.append(ex.neg(G[e, b, c] * B[a, e]))
        out[a, b, c] = ex.esum(terms)
    return out


def _sym(arr: np.ndarray) -> np.ndarray:
    out = np.empty_like(arr)
    for a, b in np.ndindex(arr.shape):
        out[a, b] = ex.mul(ex.const(0.5), ex.add(arr[a, b], arr[b, a]))
    return out


def b_tensor(geo: InducedGeometry, pulled_alpha: Sequence[Expr]) -> np.ndarray:
    """B_ab = g_ab - sym(nabla iota^* alpha)_ab."""
    S = _sym(nabla_covector(geo, pulled_alpha))
    return np.vectorize(ex.sub, otypes=[object])(geo.metric, S)


def hessian(geo: InducedGeometry, h: Expr) -> np.ndarray:
    return nabla_covector(geo, [geo.d(h, 0), geo.d(h, 1)])


# ----------------------------------------------------------------------
# checks
# ----------------------------------------------------------------------


def _scalar_branch(geo: InducedGeometry) -> tuple[str, np.ndarray]:
    vals = evaluate_components([np.array([geo.scalar], dtype=object)], geo.points)[0][0]
    try:
        return classify_scalar(vals, "scalar curvature"), vals
    except IndeterminateBranchError as err:
        raise WrongBranchError(str(err)) from None


def check_flat_case(geo: InducedGeometry, pulled_alpha: Sequence[Expr], tol: float = PASS_TOL) -> Verdict:
    """d(iota^* alpha) must be a constant multiple of the area form on a flat surface."""
    branch, _ = _scalar_branch(geo)
    if branch != "vanishing":
        raise WrongBranchError("flat-case check needs vanishing scalar curvature")
    curl = ex.sub(geo.d(pulled_alpha[1], 0), geo.d(pulled_alpha[0], 1))
    ratio = evaluate_components([np.array([ex.div(curl, geo.density)], dtype=object)], geo.points)[0][0]
    spread = float(ratio.max() - ratio.min())
    return Verdict(
        "flat_case",
        spread < tol,
        "flat",
        {"ratio_spread": Residual(spread, spread)},
        {"ratio_mean": float(ratio.mean()), "ratio_min": float(ratio.min()), "ratio_max": float(ratio.max())},
    )


def curved_case_terms(geo: InducedGeometry, B: np.ndarray) -> list[np.ndarray]:
    """Pieces of 2 nabla_a(Sc^{-1}(nabla_c B_b^c - nabla_b B_c^c)) - B_ab."""
    nB = nabla_tensor2(geo, B)
    inv = geo.inverse
    w = []
    for b in range(D2):
        div = ex.esum(inv[c, e] * nB[b, e, c] for c in range(D2) for e in range(D2))
        grad_tr = ex.esum(inv[c, e] * nB[c, e, b] for c in range(D2) for e in range(D2))
        w.append(ex.div(ex.sub(div, grad_tr), geo.scalar))
    nw = nabla_covector(geo, w)
    lhs = np.empty((D2, D2), dtype=object)
    for a, b in np.ndindex(D2, D2):
        lhs[a, b] = ex.mul(ex.const(2.0), nw[b, a])
    return [lhs, _neg(B)]


def check_curved_case(geo: InducedGeometry, B: np.ndarray, tol: float = PASS_TOL) -> Verdict:
    """Necessary condition for B to be the Hessian of a height on a curved surface."""
    branch, _ = _scalar_branch(geo)
    if branch != "nonvanishing":
        raise WrongBranchError("curved-case check needs non-vanishing scalar curvature")
    r = residual(curved_case_terms(geo, B), geo.points)
    return Verdict("curved_case", r.ok(tol), "curved", {"hessian_constraint": r})


def verify_homothety(geo: InducedGeometry, theta: Sequence[Expr], tol: float = PASS_TOL) -> Verdict:
    """sym(nabla theta) = g, i.e. theta is dual to a homothetic field with constant 1."""
    parts = [_sym(p) for p in nabla_covector_terms(geo, theta)] + [_neg(geo.metric)]
    r = residual(parts, geo.points)
    return Verdict("homothety", r.ok(tol), "none", {"homothety": r})


def curvature_decomposition_terms(geo: InducedGeometry) -> list[np.ndarray]:
    """R_abcd - (Sc/2)(g_ac g_bd - g_ad g_bc)."""
    g = geo.metric
    model = _zeros(D2, D2, D2, D2)
    half = ex.mul(ex.const(0.5), geo.scalar)
    for a, b, c, d in np.ndindex(model.shape):
        model[a, b, c, d] = half * ex.sub(g[a, c] * g[b, d], g[a, d] * g[b, c])
    return [geo.riemann_lowered, _neg(model)]


def hessian_identity_terms(geo: InducedGeometry, h: Expr) -> list[np.ndarray]:
    """R_abcd grad^d h - (nabla_a B_bc - nabla_b B_ac) with B = Hess h."""
    B = hessian(geo, h)
    nB = nabla_tensor2(geo, B)
    grad = [ex.esum(geo.inverse[d, e] * geo.d(h, e) for e in range(D2)) for d in range(D2)]
    lhs = _zeros(D2, D2, D2)
    rhs = _zeros(D2, D2, D2)
    for a, b, c in np.ndindex(D2, D2, D2):
        lhs[a, b, c] = ex.esum(geo.riemann_lowered[a, b, c, d] * grad[d] for d in range(D2))
        rhs[a, b, c] = ex.neg(ex.sub(nB[b, c, a], nB[a, c, b]))
    return [lhs, rhs]


def killing_terms(geo: InducedGeometry, xi: Sequence[Expr]) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Pieces of sym(nabla xi_flat) and of the vorticity d(xi_flat)."""
    flat = [ex.esum(geo.metric[a, b] * xi[b] for b in range(D2)) for a in range(D2)]
    sym_parts = [_sym(p) for p in nabla_covector_terms(geo, flat)]
    vort = [np.array([geo.d(flat[1], 0)], dtype=object), np.array([ex.neg(geo.d(flat[0], 1))], dtype=object)]
    return sym_parts, vort
