"""Characterization checks for minimal-torsion connections.

Every checker returns a Verdict whose residuals are normalized (see policy).
Standing hypotheses (nabla g = 0, nabla ell = 0, minimal torsion) are checked
first and raise HypothesisViolation instead of producing a verdict.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from . import expr as ex
from .carroll import CarrollStructure, EhresmannForm, TorsionTensor, lie_derivatives, minimal_torsion, torsion_trace
from .connection import (
    AffineConnection,
    covariant_derivative,
    covariant_derivative_terms,
    curvature_of,
    ell_terms,
    metric_terms,
    symmetrize_last,
    torsion_match_terms,
    torsion_of,
)
from .expr import ZERO
from .geometry import DIM, Frame, TensorField, build_frame, frame_component, zeros
from .policy import (
    NONVANISH_TOL,
    PASS_TOL,
    VANISH_TOL,
    HypothesisViolation,
    IndeterminateBranchError,
    Residual,
    VanishingTorsionError,
    Verdict,
    classify_scalar,
    evaluate_components,
    max_abs,
    pointwise_residual,
    residual,
)
from .surface import InducedGeometry, killing_terms

BULLET_LABELS = {1: "trace-nonzero", 2: "trace-horizontal-or-zero", 3: "torsion-free"}


def _neg(arr: np.ndarray) -> np.ndarray:
    return np.vectorize(ex.neg, otypes=[object])(arr)


def _scale(arr: np.ndarray, k: float) -> np.ndarray:
    f = ex.const(k)
    return np.vectorize(lambda e: ex.mul(f, e), otypes=[object])(arr)


def _points(c: CarrollStructure, points):
    return c.chart.sample() if points is None else points


def check_hypotheses(conn: AffineConnection, c: CarrollStructure, ehr: Optional[EhresmannForm], points, tol: float = PASS_TOL) -> dict[str, Residual]:
    out = {
        "nabla_g": residual(metric_terms(conn, c), points),
        "nabla_ell": residual(ell_terms(conn, c), points),
    }
    if ehr is not None:
        out["torsion_minimal"] = residual(torsion_match_terms(conn, c, ehr), points)
    for name, r in out.items():
        if not r.ok(tol):
            raise HypothesisViolation(name, r.max, tol)
    return out


def _lower(c: CarrollStructure, T: np.ndarray) -> np.ndarray:
    """T_{abc} = g_{ae} T^e_{bc}."""
    g = c.metric().components
    out = zeros(DIM, DIM, DIM)
    for a, b, cc in np.ndindex(out.shape):
        out[a, b, cc] = ex.esum(g[a, e] * T[e, b, cc] for e in range(DIM) if g[a, e] is not ZERO and T[e, b, cc] is not ZERO)
    return TensorField(0, 3, out)


def _vertical_torsion_terms(T: np.ndarray, w: np.ndarray) -> list[np.ndarray]:
    """omega_a T^a_{ub} for each b."""
    arr = np.empty(DIM, dtype=object)
    for b in range(DIM):
        arr[b] = ex.esum(w[a] * T[a, 0, b] for a in range(DIM) if T[a, 0, b] is not ZERO)
    return [arr]


def _sym_nabla_terms(conn: AffineConnection, form: Sequence, N: Optional[np.ndarray] = None) -> list[np.ndarray]:
    """Pieces of sym(nabla form) - N."""
    t = TensorField(0, 1, np.array(list(form), dtype=object))
    parts = [symmetrize_last(p) for p in covariant_derivative_terms(conn, t)]
    if N is not None:
        parts.append(_neg(N))
    return parts


def _antisym_nabla_terms(conn: AffineConnection, form: Sequence) -> list[np.ndarray]:
    t = TensorField(0, 1, np.array(list(form), dtype=object))
    out = []
    for p in covariant_derivative_terms(conn, t):
        q = np.empty_like(p)
        for a, b in np.ndindex(p.shape):
            q[a, b] = ex.mul(ex.const(0.5), ex.sub(p[a, b], p[b, a]))
        out.append(q)
    return out


def torsion_identity_terms(conn: AffineConnection, c: CarrollStructure, ehr: EhresmannForm, N: np.ndarray) -> list[np.ndarray]:
    """Pieces of nabla_d T_abc + nabla_d(L_a[b) w_c] + L_a[b N_c]d, antisymmetrized over [b,c].

    L = L_ell g and T is lowered with g; stored at [a, b, c, d].
    """
    T = torsion_of(conn).field.components
    L, _ = lie_derivatives(c, ehr)
    w = ehr.covector().components
    out = covariant_derivative_terms(conn, _lower(c, T))
    nL = covariant_derivative(conn, TensorField(0, 2, L)).components
    extra = zeros(DIM, DIM, DIM, DIM)
    extra2 = zeros(DIM, DIM, DIM, DIM)
    half = ex.const(0.5)
    for a, b, cc, d in np.ndindex(extra.shape):
        extra[a, b, cc, d] = half * ex.sub(nL[a, b, d] * w[cc], nL[a, cc, d] * w[b])
        extra2[a, b, cc, d] = half * ex.sub(L[a, b] * N[cc, d], L[a, cc] * N[b, d])
    return out + [extra, extra2]


def _identity_with_fallback(conn, c, ehr, N, points) -> tuple[np.ndarray, dict]:
    """Pointwise residual of the torsion-derivative identity.

    Where L_ell g vanishes the identity is empty; there the defining equation
    sym(nabla omega) = N is checked directly instead.
    """
    L, _ = lie_derivatives(c, ehr)
    Lmag = max_abs(L, points)
    ident = pointwise_residual(torsion_identity_terms(conn, c, ehr, N), points)
    direct = pointwise_residual(_sym_nabla_terms(conn, ehr.covector().components, N), points)
    use_identity = Lmag > NONVANISH_TOL
    combined = np.where(use_identity, ident, direct)
    return combined, {"identity_points": int(use_identity.sum()), "direct_points": int((~use_identity).sum())}


def _torsion_branch(T: np.ndarray, points) -> str:
    mag = max_abs(T, points)
    if mag.max() < VANISH_TOL:
        return "vanishing"
    if mag.min() > NONVANISH_TOL:
        return "nonvanishing"
    raise IndeterminateBranchError("torsion is neither uniformly vanishing nor uniformly non-vanishing")


def _sectional(conn: AffineConnection, frame: Frame, points) -> tuple[TensorField, np.ndarray]:
    R = curvature_of(conn)
    K = frame_component(R, frame, (1, 2, 1, 2))
    return R, evaluate_components([np.array([K], dtype=object)], points)[0][0]


def _as_residual(values: np.ndarray) -> Residual:
    if values.size == 0:
        return Residual(0.0, 0.0)
    return Residual.from_points(values)


# ----------------------------------------------------------------------
# torsion-level checks
# ----------------------------------------------------------------------


def check_carrollian_torsion_identity(c: CarrollStructure, conn: AffineConnection, points=None, tol: float = PASS_TOL) -> Verdict:
    """(L_ell g)(X,Y) = g(T(ell,X),Y) + g(X,T(ell,Y)) for a connection preserving g and ell."""
    points = _points(c, points)
    hyp = check_hypotheses(conn, c, None, points, tol)
    T = torsion_of(conn).field.components
    g = c.metric().components
    L, _ = lie_derivatives(c, EhresmannForm(ZERO, ZERO))
    a1 = zeros(DIM, DIM)
    a2 = zeros(DIM, DIM)
    for a, b in np.ndindex(DIM, DIM):
        a1[a, b] = ex.neg(ex.esum(g[e, b] * T[e, 0, a] for e in range(DIM)))
        a2[a, b] = ex.neg(ex.esum(g[a, e] * T[e, 0, b] for e in range(DIM)))
    r = residual([L, a1, a2], points)
    return Verdict("carrollian_torsion_identity", r.ok(tol), "none", {**hyp, "lie_metric_identity": r})



def check_minimal(c: CarrollStructure, ehr: EhresmannForm, t: TorsionTensor, points=None, tol: float = PASS_TOL) -> Verdict:
    """The three defining constraints of the minimal torsion, plus antisymmetry."""
    points = _points(c, points)
    T = t.field.components
    g = c.metric().components
    w = ehr.covector().components
    L, Lw = lie_derivatives(c, ehr)
    metric_part = zeros(DIM, DIM)
    for a, b in np.ndindex(DIM, DIM):
        metric_part[a, b] = ex.esum(g[e, b] * T[e, 0, a] for e in range(DIM))
    vertical = _vertical_torsion_terms(T, w)[0]
    hx = [ex.neg(w[1]), ex.ONE, ZERO]
    hy = [ex.neg(w[2]), ZERO, ex.ONE]
    horizontal = np.empty(DIM, dtype=object)
    for e in range(DIM):
        horizontal[e] = ex.esum(hx[a] * hy[b] * T[e, a, b] for a in range(DIM) for b in range(DIM) if T[e, a, b] is not ZERO)
    residuals = {
        "minimal_metric": residual([metric_part, _scale(L, -0.5)], points),
        "minimal_vertical": residual([vertical, _neg(Lw)], points),
        "minimal_horizontal": residual([horizontal], points),
        "antisymmetry": residual([T, np.transpose(T, (0, 2, 1))], points),
    }
    return Verdict("minimal_torsion", all(r.ok(tol) for r in residuals.values()), "none", residuals)


def check_lemma_26(
    c: CarrollStructure,
    ehr: EhresmannForm,
    conn: AffineConnection,
    N: np.ndarray,
    points=None,
    tol: float = PASS_TOL,
) -> Verdict:
    """Existence of a symmetric N with sym(nabla omega) = N, via the torsion trace branch."""
    points = _points(c, points)
    N = np.asarray(N, dtype=object)
    sym_r = residual([N, _neg(N.T)], points)
    if not sym_r.ok(tol):
        raise HypothesisViolation("N_symmetric", sym_r.max, tol)
    ell_r = residual([N[0]], points)
    if not ell_r.ok(tol):
        raise HypothesisViolation("N_ell", ell_r.max, tol)
    hyp = check_hypotheses(conn, c, ehr, points, tol)
    tor = torsion_of(conn)
    if _torsion_branch(tor.field.components, points) == "vanishing":
        raise VanishingTorsionError("torsion vanishes; use the torsion-free branches of classify_scm/classify_pcs")
    trace = torsion_trace(tor, c, ehr, points)
    forward = residual(_sym_nabla_terms(conn, ehr.covector().components, N), points)
    details = {"forward_ok": forward.ok(tol), "forward_max": forward.max}
    if trace.branch == "nonvanishing":
        branch = BULLET_LABELS[1]
        r = residual(_sym_nabla_terms(conn, trace.gamma.components, N), points)
        residuals = {"sym_nabla_gamma": r}
        details["gamma_mean"] = _mean_components(trace.gamma.components, points)
    else:
        branch = BULLET_LABELS[2]
        vals, info = _identity_with_fallback(conn, c, ehr, N, points)
        residuals = {"torsion_derivative_identity": _as_residual(vals)}
        details.update(info)
    outcome = all(r.ok(tol) for r in residuals.values())
    return Verdict("lemma_26", outcome, branch, {**hyp, **residuals}, details)


def _mean_components(arr: np.ndarray, points) -> list[float]:
    v = evaluate_components([arr], points)[0]
    return [float(x) for x in v.mean(axis=1)]


# ----------------------------------------------------------------------
# special Carrollian and potential Carroll classifications
# ----------------------------------------------------------------------


def classify_scm(c: CarrollStructure, nu: EhresmannForm, conn: AffineConnection, points=None, tol: float = PASS_TOL) -> Verdict:
    """Decide whether conn preserves nu, through the torsion-trace case split."""
    points = _points(c, points)
    hyp = check_hypotheses(conn, c, nu, points, tol)
    T = torsion_of(conn).field.components
    w = nu.covector().components
    details: dict = {}
    if _torsion_branch(T, points) == "vanishing":
        bullet = 3
        residuals = {"torsion": residual([T], points)}
        frame = build_frame(c, nu, points)
        R, K = _sectional(conn, frame, points)
        curved = np.abs(K) > NONVANISH_TOL
        nuR = zeros(DIM, DIM, DIM)
        for b, cc, d in np.ndindex(nuR.shape):
            nuR[b, cc, d] = ex.esum(w[a] * R.components[a, b, cc, d] for a in range(DIM))
        nablaR = covariant_derivative(conn, R).components
        nudR = zeros(DIM, DIM, DIM, DIM)
        for b, cc, d, e in np.ndindex(nudR.shape):
            nudR[b, cc, d, e] = ex.esum(w[a] * nablaR[a, b, cc, d, e] for a in range(DIM))
        r_curv = pointwise_residual([nuR], points)
        r_dcurv = pointwise_residual([nudR], points)
        r_direct = pointwise_residual(covariant_derivative_terms(conn, nu.covector()), points)
        residuals["nu_curvature"] = _as_residual(r_curv[curved])
        residuals["nu_curvature_derivative"] = _as_residual(r_dcurv[curved])
        residuals["nabla_nu_flat_points"] = _as_residual(r_direct[~curved])
        details["curved_points"] = int(curved.sum())
        details["sectional_mean"] = float(K.mean())
    else:
        trace = torsion_trace(TorsionTensor(TensorField(1, 2, T)), c, nu, points)
        residuals = {"nu_vertical_torsion": residual(_vertical_torsion_terms(T, w), points)}
        residuals["antisym_nabla_nu"] = residual(_antisym_nabla_terms(conn, w), points)
        if trace.branch == "nonvanishing":
            bullet = 1
            V = trace.V.components
            gamma = np.array([ex.div(V[a], trace.V_on_ell) for a in range(DIM)], dtype=object)
            residuals["sym_nabla_gamma"] = residual(_sym_nabla_terms(conn, gamma), points)
            details["gamma_mean"] = _mean_components(gamma, points)
        else:
            bullet = 2
            residuals["trace"] = residual([trace.V.components], points)
            vals, info = _identity_with_fallback(conn, c, nu, zeros(DIM, DIM), points)
            residuals["torsion_derivative_identity"] = _as_residual(vals)
            details.update(info)
    outcome = all(r.ok(tol) for r in residuals.values())
    details["bullet"] = bullet
    return Verdict("classify_scm", outcome, BULLET_LABELS[bullet], {**hyp, **residuals}, details)


def _fit_proportional(P: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares X with P = X g at each point; P, g have shape (9, npts)."""
    denom = (g * g).sum(axis=0)
    X = np.where(denom > 0, (P * g).sum(axis=0) / np.where(denom > 0, denom, 1.0), 0.0)
    res = np.abs(P - X * g).max(axis=0) / (1.0 + np.maximum(np.abs(P).max(axis=0), np.abs(X * g).max(axis=0)))
    return X, res


def _curvature_contraction(conn, R: np.ndarray, alpha_w: np.ndarray, frame: Frame, pairs) -> np.ndarray:
    """sym_{fc} sum over (b, d) pairs of alpha_a nabla_f Rt^a_{bcd} e^b e^d, Rt = R - ell (alpha R)."""
    Rt = R.copy()
    for b, cc, d in np.ndindex(DIM, DIM, DIM):
        aR = ex.esum(alpha_w[e] * R[e, b, cc, d] for e in range(DIM))
        Rt[0, b, cc, d] = ex.sub(R[0, b, cc, d], aR)
    nRt = covariant_derivative(conn, TensorField(1, 3, Rt)).components
    Q = zeros(DIM, DIM)
    for f, cc in np.ndindex(DIM, DIM):
        terms = []
        for (B, D) in pairs:
            for b in range(DIM):
                eb = frame.vectors[B, b]
                if eb is ZERO:
                    continue
                for d in range(DIM):
                    ed = frame.vectors[D, d]
                    if ed is ZERO:
                        continue
                    s = ex.esum(alpha_w[a] * nRt[a, b, cc, d, f] for a in range(DIM))
                    if s is not ZERO:
                        terms.append(s * eb * ed)
        Q[f, cc] = ex.esum(terms)
    return symmetrize_last(Q)


def classify_pcs(c: CarrollStructure, alpha: EhresmannForm, conn: AffineConnection, points=None, tol: float = PASS_TOL) -> Verdict:
    """Decide whether sym(nabla alpha) = g, through the torsion-trace case split."""
    points = _points(c, points)
    hyp = check_hypotheses(conn, c, alpha, points, tol)
    T = torsion_of(conn).field.components
    w = alpha.covector().components
    g = c.metric().components
    details: dict = {}
    if _torsion_branch(T, points) == "vanishing":
        bullet = 3
        residuals = {"torsion": residual([T], points)}
        frame = build_frame(c, alpha, points)
        Rf, K = _sectional(conn, frame, points)
        R = Rf.components
        curved = np.abs(K) > NONVANISH_TOL
        aR = zeros(DIM, DIM)
        for b, cc in np.ndindex(DIM, DIM):
            aR[b, cc] = ex.esum(w[a] * R[a, b, cc, 0] for a in range(DIM))
        residuals["alpha_curvature_ell"] = residual([aR], points)
        P = _curvature_contraction(conn, R, w, frame, [(1, 1), (2, 2)])
        Pv, gv = evaluate_components([P, g], points)
        X, r_prop = _fit_proportional(Pv, gv)
        r_direct = pointwise_residual(_sym_nabla_terms(conn, w, g), points)
        residuals["curvature_proportionality"] = _as_residual(r_prop[curved])
        residuals["potential_flat_points"] = _as_residual(r_direct[~curved])
        # the fitted scalar must match its closed form X = -K
        closed = np.abs(X + K) / (1.0 + np.abs(K))
        residuals["fitted_scalar_closed_form"] = _as_residual(closed[curved])
        details["X_mean"] = float(X.mean()) if X.size else 0.0
        details["curved_points"] = int(curved.sum())
        P23 = _curvature_contraction(conn, R, w, frame, [(1, 2)])
        P23v = evaluate_components([P23], points)[0]
        _, r23 = _fit_proportional(P23v, gv)
        details["mixed_frame_contraction_max"] = float(r23.max())
        details["X"] = [float(x) for x in X]
    else:
        trace = torsion_trace(TorsionTensor(TensorField(1, 2, T)), c, alpha, points)
        if trace.branch == "nonvanishing":
            bullet = 1
            residuals = {"sym_nabla_gamma": residual(_sym_nabla_terms(conn, trace.gamma.components, g), points)}
            details["gamma_mean"] = _mean_components(trace.gamma.components, points)
        else:
            bullet = 2
            vals, info = _identity_with_fallback(conn, c, alpha, g, points)
            residuals = {"torsion_derivative_identity": _as_residual(vals)}
            details.update(info)
    outcome = all(r.ok(tol) for r in residuals.values())
    details["bullet"] = bullet
    return Verdict("classify_pcs", outcome, BULLET_LABELS[bullet], {**hyp, **residuals}, details)


def verify_vorticity_free_killing(geo: InducedGeometry, xi: Sequence, tol: float = PASS_TOL) -> Verdict:
    """xi is Killing for the slice metric and its metric dual is closed."""
    sym_parts, vort = killing_terms(geo, xi)
    residuals = {
        "killing": residual(sym_parts, geo.points),
        "vorticity": residual(vort, geo.points),
    }
    return Verdict("vorticity_free_killing", all(r.ok(tol) for r in residuals.values()), "none", residuals)
