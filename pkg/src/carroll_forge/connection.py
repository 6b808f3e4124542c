"""Affine connections: covariant derivatives, torsion, curvature and the two builders.

Coefficients follow the derivative-index-last convention

    nabla_c V^a = d_c V^a + Gamma^a_{bc} V^b,

so nabla_{e_C} e_B = Gamma^A_{BC} e_A in any frame, T^a_{bc} = Gamma^a_{cb} - Gamma^a_{bc}
and R^a_{bcd} is the e_a component of R(d_c, d_d) d_b.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import expr as ex
from .carroll import CarrollStructure, EhresmannForm, TorsionTensor, minimal_torsion, minimal_torsion_at
from .expr import ZERO, Expr
from .geometry import DIM, Frame, TensorField, build_frame, change_basis, transform_index, zeros
from .policy import Residual, evaluate_components, residual

PROVENANCE = ("built-scm", "built-pcs", "user-supplied")
COORD_LABELS = ("u", "x", "y")


@dataclass
class AffineConnection:
    coefficients: np.ndarray
    provenance: str = "user-supplied"
    coords: tuple[str, str, str] = COORD_LABELS
    postconditions: dict[str, Residual] = field(default_factory=dict)

    def __post_init__(self):
        if self.coefficients.shape != (DIM, DIM, DIM):
            raise ValueError("a connection needs 27 coefficients")
        if self.provenance not in PROVENANCE:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    def __getitem__(self, idx) -> Expr:
        return self.coefficients[idx]

    def frame_coefficients(self, frame: Frame) -> np.ndarray:
        """Gamma^A_{BC} = theta^A_a (e_C(e_B^a) + Gamma^a_{bc} e_B^b e_C^c)."""
        G = self.coefficients
        out = zeros(DIM, DIM, DIM)
        for B in range(DIM):
            for C in range(DIM):
                vec = []
                for a in range(DIM):
                    terms = [frame.apply(C, frame.vectors[B, a])]
                    for b in range(DIM):
                        if frame.vectors[B, b] is ZERO:
                            continue
                        for c in range(DIM):
                            if G[a, b, c] is ZERO or frame.vectors[C, c] is ZERO:
                                continue
                            terms.append(G[a, b, c] * frame.vectors[B, b] * frame.vectors[C, c])
                    vec.append(ex.esum(terms))
                for A in range(DIM):
                    out[A, B, C] = ex.esum(frame.coframe[A, a] * vec[a] for a in range(DIM) if vec[a] is not ZERO)
        return out

    def perturbed(self, idx: tuple[int, int, int], eps: float) -> "AffineConnection":
        G = self.coefficients.copy()
        G[idx] = ex.add(G[idx], ex.const(eps))
        return AffineConnection(G, "user-supplied", self.coords)

    @classmethod
    def from_mapping(cls, mapping: dict[str, Expr], coords=COORD_LABELS) -> "AffineConnection":
        """Build from keys 'Gamma.a.b.c' naming coordinates; missing keys are zero."""
        G = zeros(DIM, DIM, DIM)
        pos = {name: i for i, name in enumerate(coords)}
        for key, value in mapping.items():
            parts = key.split(".")
            if len(parts) != 4 or parts[0] != "Gamma" or any(p not in pos for p in parts[1:]):
                raise ValueError(f"bad connection key {key!r}; expected Gamma.a.b.c over {tuple(coords)}")
            G[pos[parts[1]], pos[parts[2]], pos[parts[3]]] = value
        return cls(G, "user-supplied", tuple(coords))


# ----------------------------------------------------------------------
# covariant derivative
# ----------------------------------------------------------------------


def covariant_derivative_terms(conn: AffineConnection, t: TensorField, frame: Optional[Frame] = None) -> list[np.ndarray]:
    """Separate contributions to nabla t: the derivative part, then one array per index.

    Their sum is nabla t with the new covariant slot last.  Keeping them apart
    lets residual checks normalize by the size of each ingredient.
    """
    if t.basis == "frame":
        if frame is None:
            raise ValueError("basis mismatch: a frame-basis field needs the frame")
        G = conn.frame_coefficients(frame)

        def deriv(e, c):
            return frame.apply(c, e)
    else:
        G = conn.coefficients

        def deriv(e, c):
            return ex.differentiate(e, conn.coords[c])

    comp = t.components
    shape = comp.shape + (DIM,)
    partial = zeros(*shape)
    for idx in np.ndindex(comp.shape):
        for c in range(DIM):
            partial[idx + (c,)] = deriv(comp[idx], c)
    out = [partial]
    for pos in range(t.rank):
        arr = zeros(*shape)
        up = pos < t.up
        for idx in np.ndindex(comp.shape):
            for c in range(DIM):
                terms = []
                for e in range(DIM):
                    src = comp[idx[:pos] + (e,) + idx[pos + 1 :]]
                    if src is ZERO:
                        continue
                    g = G[idx[pos], e, c] if up else G[e, idx[pos], c]
                    if g is ZERO:
                        continue
                    terms.append(g * src)
                s = ex.esum(terms)
                arr[idx + (c,)] = s if up else ex.neg(s)
        out.append(arr)
    return out


def covariant_derivative(conn: AffineConnection, t: TensorField, frame: Optional[Frame] = None) -> TensorField:
    parts = covariant_derivative_terms(conn, t, frame)
    total = parts[0].copy()
    for p in parts[1:]:
        for idx in np.ndindex(total.shape):
            total[idx] = ex.add(total[idx], p[idx])
    return TensorField(t.up, t.down + 1, total, t.basis)


# ----------------------------------------------------------------------
# torsion and curvature
# ----------------------------------------------------------------------


def torsion_of(conn: AffineConnection, frame: Optional[Frame] = None) -> TorsionTensor:
    """Torsion from the coefficients; with a frame, also via the frame formula.

    Coordinate: T^a_{bc} = Gamma^a_{cb} - Gamma^a_{bc}.
    Frame:      T^A_{BC} = Gamma^A_{CB} - Gamma^A_{BC} - C^A_{BC}.
    """
    G = conn.coefficients
    T = zeros(DIM, DIM, DIM)
    for a, b, c in np.ndindex(T.shape):
        if b != c:
            T[a, b, c] = ex.sub(G[a, c, b], G[a, b, c])
    coord = TensorField(1, 2, T)
    if frame is None:
        return TorsionTensor(coord)
    return TorsionTensor(coord, frame, frame_torsion(conn, frame))


def frame_torsion(conn: AffineConnection, frame: Frame) -> TensorField:
    G = conn.frame_coefficients(frame)
    C = frame.structure
    T = zeros(DIM, DIM, DIM)
    for A, B, D in np.ndindex(T.shape):
        if B != D:
            T[A, B, D] = ex.sub(ex.sub(G[A, D, B], G[A, B, D]), C[A, B, D])
    return TensorField(1, 2, T, "frame")


def _curvature(G: np.ndarray, deriv, C: Optional[np.ndarray]) -> np.ndarray:
    R = zeros(DIM, DIM, DIM, DIM)
    for a, b in np.ndindex(DIM, DIM):
        for c in range(DIM):
            for d in range(c + 1, DIM):
                terms = [deriv(G[a, b, d], c), ex.neg(deriv(G[a, b, c], d))]
                for e in range(DIM):
                    if G[e, b, d] is not ZERO and G[a, e, c] is not ZERO:
                        terms.append(G[e, b, d] * G[a, e, c])
                    if G[e, b, c] is not ZERO and G[a, e, d] is not ZERO:
                        terms.append(ex.neg(G[e, b, c] * G[a, e, d]))
                    if C is not None and C[e, c, d] is not ZERO and G[a, b, e] is not ZERO:
                        terms.append(ex.neg(C[e, c, d] * G[a, b, e]))
                r = ex.esum(terms)
                R[a, b, c, d] = r
                R[a, b, d, c] = ex.neg(r)
    return R


def curvature_of(conn: AffineConnection, frame: Optional[Frame] = None) -> TensorField:
    """R^a_{bcd} = d_c Gamma^a_{bd} - d_d Gamma^a_{bc} + Gamma^e_{bd} Gamma^a_{ec} - Gamma^e_{bc} Gamma^a_{ed}.

    With a frame the result is in the frame basis and picks up the
    -C^E_{CD} Gamma^A_{BE} term.
    """
    if frame is None:
        R = _curvature(conn.coefficients, lambda e, c: ex.differentiate(e, conn.coords[c]), None)
        return TensorField(1, 3, R)
    R = _curvature(conn.frame_coefficients(frame), lambda e, c: frame.apply(c, e), frame.structure)
    return TensorField(1, 3, R, "frame")


# ----------------------------------------------------------------------
# builders
# ----------------------------------------------------------------------


def _half(e: Expr) -> Expr:
    return ex.mul(ex.const(0.5), e)


def _assemble(c: CarrollStructure, ehr: EhresmannForm, T: np.ndarray, N: np.ndarray) -> np.ndarray:
    """Coefficients with nabla ell = 0, nabla g = 0, torsion T and sym(nabla omega) = N."""
    coords = c.coords
    d = lambda e, k: ex.differentiate(e, coords[k])  # noqa: E731
    g = c.metric().components
    ginv = c.spatial_inverse()
    w = ehr.covector().components
    G = zeros(DIM, DIM, DIM)
    sp = (1, 2)
    # directional derivatives along ell are pure torsion
    for a in range(DIM):
        for i in sp:
            G[a, i, 0] = T[a, 0, i]
    # lowered spatial torsion T_{kij} = g_{kl} T^l_{ij}
    Tl = zeros(DIM, DIM, DIM)
    for k in sp:
        for i in sp:
            for j in sp:
                Tl[k, i, j] = ex.esum(g[k, l] * T[l, i, j] for l in sp if T[l, i, j] is not ZERO)
    S = zeros(DIM, DIM, DIM)
    for k in sp:
        for j in sp:
            for i in sp:
                christoffel = _half(ex.esum([d(g[j, k], i), d(g[i, k], j), ex.neg(d(g[i, j], k))]))
                contorsion = _half(ex.esum([Tl[k, i, j], Tl[j, k, i], Tl[i, k, j]]))
                S[k, j, i] = ex.add(christoffel, contorsion)
    for l in sp:
        for j in sp:
            for i in sp:
                G[l, j, i] = ex.esum(ginv[l, k] * S[k, j, i] for k in sp if S[k, j, i] is not ZERO)
    for j in sp:
        for i in sp:
            sym = ex.esum(
                [
                    _half(ex.add(d(w[j], i), d(w[i], j))),
                    ex.neg(ex.esum(_half(ex.add(G[l, j, i], G[l, i, j])) * w[l] for l in sp)),
                    ex.neg(N[i, j]),
                    _half(T[0, i, j]),
                ]
            )
            G[0, j, i] = sym
    return G


def _torsion_components(c: CarrollStructure, ehr: EhresmannForm) -> np.ndarray:
    return minimal_torsion(c, ehr).field.components


def build_scm_connection(c: CarrollStructure, nu: EhresmannForm, points=None) -> AffineConnection:
    """Connection with nabla g = nabla ell = 0, minimal torsion and nabla nu = 0.

    nabla nu = 0 additionally needs d nu to vanish on ker nu; when it does not,
    the returned coefficients still satisfy every symmetric condition and the
    failure shows up in the ``nabla_nu`` postcondition.
    """
    if points is None:
        points = c.chart.sample()
    nu.require_principal(c.chart, points)
    G = _assemble(c, nu, _torsion_components(c, nu), zeros(DIM, DIM))
    conn = AffineConnection(G, "built-scm", c.coords)
    conn.postconditions = postconditions(conn, c, nu, "scm", points)
    return conn


def build_pcs_connection(c: CarrollStructure, alpha: EhresmannForm, points=None) -> AffineConnection:
    """Connection with nabla g = nabla ell = 0, minimal torsion and sym(nabla alpha) = g."""
    if points is None:
        points = c.chart.sample()
    G = _assemble(c, alpha, _torsion_components(c, alpha), c.metric().components)
    conn = AffineConnection(G, "built-pcs", c.coords)
    conn.postconditions = postconditions(conn, c, alpha, "pcs", points)
    return conn


# ----------------------------------------------------------------------
# residuals of the defining conditions
# ----------------------------------------------------------------------


def symmetrize_last(arr: np.ndarray) -> np.ndarray:
    """(A_{ab} + A_{ba})/2 over the last two slots."""
    out = np.empty_like(arr)
    for idx in np.ndindex(arr.shape):
        swapped = idx[:-2] + (idx[-1], idx[-2])
        out[idx] = _half(ex.add(arr[idx], arr[swapped]))
    return out


def metric_terms(conn: AffineConnection, c: CarrollStructure) -> list[np.ndarray]:
    return covariant_derivative_terms(conn, c.metric())


def ell_terms(conn: AffineConnection, c: CarrollStructure) -> list[np.ndarray]:
    return covariant_derivative_terms(conn, c.ell())


def form_terms(conn: AffineConnection, ehr: EhresmannForm) -> list[np.ndarray]:
    return covariant_derivative_terms(conn, ehr.covector())


def potential_terms(conn: AffineConnection, c: CarrollStructure, alpha: EhresmannForm) -> list[np.ndarray]:
    """Pieces of sym(nabla alpha) - g."""
    parts = [symmetrize_last(p) for p in form_terms(conn, alpha)]
    g = c.metric().components
    return parts + [np.vectorize(ex.neg, otypes=[object])(g)]


def torsion_match_terms(conn: AffineConnection, c: CarrollStructure, ehr: EhresmannForm) -> list[np.ndarray]:
    T = torsion_of(conn).field.components
    M = minimal_torsion(c, ehr).field.components
    return [T, np.vectorize(ex.neg, otypes=[object])(M)]


def postconditions(conn: AffineConnection, c: CarrollStructure, ehr: EhresmannForm, kind: str, points) -> dict[str, Residual]:
    out = {
        "nabla_g": residual(metric_terms(conn, c), points),
        "nabla_ell": residual(ell_terms(conn, c), points),
        "torsion_minimal": residual(torsion_match_terms(conn, c, ehr), points),
    }
    if kind == "scm":
        out["nabla_nu"] = residual(form_terms(conn, ehr), points)
    elif kind == "pcs":
        out["potential"] = residual(potential_terms(conn, c, ehr), points)
    else:
        raise ValueError(f"unknown connection kind {kind!r}")
    return out


def coefficient_values(conn: AffineConnection, points) -> np.ndarray:
    """Numeric coefficients, shape (npts, 3, 3, 3)."""
    v = evaluate_components([conn.coefficients], points)[0]
    return v.T.reshape(-1, DIM, DIM, DIM)


def solve_connection_at(c: CarrollStructure, ehr: EhresmannForm, kind: str, points) -> tuple[np.ndarray, np.ndarray]:
    """Independent numeric solve of the defining linear system for Gamma.

    Unknowns: the 27 coefficients at each point.  Equations: nabla ell = 0 (9),
    torsion equal to the numerically solved minimal torsion (9), nabla g = 0 (18)
    and sym(nabla omega) = N with N = 0 (scm) or g (pcs) (6).  Returns the
    least-squares solution and the per-point equation residual.
    """
    if kind not in ("scm", "pcs"):
        raise ValueError(f"unknown connection kind {kind!r}")
    coords = c.coords
    g = c.metric().components
    w = ehr.covector().components
    dg = np.empty((DIM, DIM, DIM), dtype=object)
    dw = np.empty((DIM, DIM), dtype=object)
    for a, b, k in np.ndindex(dg.shape):
        dg[a, b, k] = ex.differentiate(g[a, b], coords[k])
    for a, k in np.ndindex(dw.shape):
        dw[a, k] = ex.differentiate(w[a], coords[k])
    gv, wv, dgv, dwv = evaluate_components([g, w, dg, dw], points)
    Tnum = minimal_torsion_at(c, ehr, points)
    n = gv.shape[1]
    sol = np.zeros((n, DIM, DIM, DIM))
    res = np.zeros(n)

    def col(a, b, cc):
        return a * 9 + b * 3 + cc

    for k in range(n):
        Gm = gv[:, k].reshape(3, 3)
        W = wv[:, k]
        DG = dgv[:, k].reshape(3, 3, 3)
        DW = dwv[:, k].reshape(3, 3)
        N = Gm if kind == "pcs" else np.zeros((3, 3))
        rows, rhs = [], []

        def eq(coeffs, value):
            r = np.zeros(27)
            for idx, v in coeffs:
                r[col(*idx)] += v
            rows.append(r)
            rhs.append(value)

        for a in range(3):
            for cc in range(3):
                eq([((a, 0, cc), 1.0)], 0.0)
        for a in range(3):
            for b in range(3):
                for cc in range(b + 1, 3):
                    eq([((a, cc, b), 1.0), ((a, b, cc), -1.0)], Tnum[k, a, b, cc])
        for a in range(3):
            for b in range(a, 3):
                for cc in range(3):
                    coeffs = [((e, a, cc), Gm[e, b]) for e in range(3)] + [((e, b, cc), Gm[a, e]) for e in range(3)]
                    eq(coeffs, DG[a, b, cc])
        for a in range(3):
            for b in range(a, 3):
                coeffs = [((e, a, b), 0.5 * W[e]) for e in range(3)] + [((e, b, a), 0.5 * W[e]) for e in range(3)]
                eq(coeffs, 0.5 * (DW[b, a] + DW[a, b]) - N[a, b])
        A = np.array(rows)
        y = np.array(rhs)
        x, *_ = np.linalg.lstsq(A, y, rcond=None)
        sol[k] = x.reshape(3, 3, 3)
        res[k] = np.abs(A @ x - y).max()
    return sol, res
