"""Carrollian structures, Ehresmann forms, boosts and the minimal torsion."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import expr as ex
from .expr import ONE, ZERO, Expr
from .geometry import (
    DIM,
    Chart,
    Frame,
    TensorField,
    as_expr_array,
    build_frame,
    change_basis,
    zeros,
)
from .policy import NotPrincipalError, classify_scalar, evaluate_components, max_abs, VANISH_TOL

ROLES = ("generic", "principal", "potential-candidate")


def _expr(v, chart: Chart) -> Expr:
    if isinstance(v, Expr):
        return v
    if isinstance(v, str):
        return chart.parse(v)
    return ex.const(float(v))


@dataclass(frozen=True)
class CarrollStructure:
    """Degenerate metric g = (m^1)^2 + (m^2)^2 with m^1 = m11 dx, m^2 = m21 dx + m22 dy."""

    chart: Chart
    m11: Expr
    m21: Expr
    m22: Expr

    @classmethod
    def from_strings(cls, chart: Chart, m11="1", m21="0", m22="1") -> "CarrollStructure":
        return cls(chart, _expr(m11, chart), _expr(m21, chart), _expr(m22, chart))

    @property
    def coords(self):
        return self.chart.coords

    def metric(self) -> TensorField:
        g = zeros(DIM, DIM)
        g[1, 1] = self.m11 * self.m11 + self.m21 * self.m21
        g[1, 2] = g[2, 1] = self.m21 * self.m22
        g[2, 2] = self.m22 * self.m22
        return TensorField(0, 2, g)

    def ell(self) -> TensorField:
        return TensorField(1, 0, as_expr_array([ONE, ZERO, ZERO]))

    def spatial_inverse(self) -> np.ndarray:
        """g^{ij} on the (x, y) block, embedded in a 3x3 array with zero u row/column."""
        inv = zeros(DIM, DIM)
        det = self.m11 * self.m22
        # rows of the horizontal frame, spatial part
        e2 = (ONE / self.m11, -self.m21 / det)
        e3 = (ZERO, ONE / self.m22)
        for i in range(2):
            for j in range(2):
                inv[i + 1, j + 1] = e2[i] * e2[j] + e3[i] * e3[j]
        return inv

    def positivity(self, points) -> np.ndarray:
        vals = evaluate_components([np.array([self.m11, self.m22], dtype=object)], points)[0]
        return vals.min(axis=0)


@dataclass(frozen=True)
class EhresmannForm:
    """omega = du + w1 dx + w2 dy."""

    w1: Expr
    w2: Expr
    role: str = "generic"

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown Ehresmann role {self.role!r}; expected one of {ROLES}")

    @classmethod
    def from_strings(cls, chart: Chart, w1="0", w2="0", role="generic") -> "EhresmannForm":
        return cls(_expr(w1, chart), _expr(w2, chart), role)

    def covector(self) -> TensorField:
        return TensorField(0, 1, as_expr_array([ONE, self.w1, self.w2]))

    def with_role(self, role: str) -> "EhresmannForm":
        return EhresmannForm(self.w1, self.w2, role)

    def principal_residual(self, chart: Chart, points) -> np.ndarray:
        u = chart.fibre
        return max_abs(np.array([ex.differentiate(self.w1, u), ex.differentiate(self.w2, u)], dtype=object), points)

    def require_principal(self, chart: Chart, points) -> None:
        r = self.principal_residual(chart, points)
        if r.max() >= VANISH_TOL:
            raise NotPrincipalError(f"L_ell of the Ehresmann form does not vanish (max |d_u w_i| = {r.max():.3e})")


def boost_to_principal(ehr: EhresmannForm, chart: Chart) -> EhresmannForm:
    """Boost omega -> omega + B_i dx^i with B_i = -omega_i + omega_i|_{u=u0}.

    u0 is the midpoint of the fibre sampling interval, so the result does
    not depend on u and is tagged principal.
    """
    u0 = chart.midpoint(0)
    at = {chart.fibre: u0}
    return EhresmannForm(ex.substitute(ehr.w1, at), ex.substitute(ehr.w2, at), "principal")


@dataclass(frozen=True)
class TorsionTensor:
    """Valence (1,2) torsion, antisymmetric in the lower pair.

    ``frame_field`` carries the components in the adapted frame, ``field`` the
    coordinate components.
    """

    field: TensorField
    frame: Optional[Frame] = None
    frame_field: Optional[TensorField] = None

    @classmethod
    def from_coordinates(cls, t: TensorField, frame: Optional[Frame] = None) -> "TorsionTensor":
        ff = change_basis(t, frame, "to-frame") if frame is not None else None
        return cls(t, frame, ff)

    def antisymmetry_terms(self) -> list[np.ndarray]:
        c = self.field.components
        return [c, np.transpose(c, (0, 2, 1))]


def lie_derivatives(c: CarrollStructure, ehr: EhresmannForm) -> tuple[np.ndarray, np.ndarray]:
    """Coordinate components of L_ell g and L_ell omega."""
    u = c.chart.fibre
    g = c.metric().components
    Lg = np.vectorize(lambda e: ex.differentiate(e, u), otypes=[object])(g)
    w = ehr.covector().components
    Lw = np.vectorize(lambda e: ex.differentiate(e, u), otypes=[object])(w)
    return Lg, Lw


def frame_lie_derivatives(frame: Frame, c: CarrollStructure, ehr: EhresmannForm) -> tuple[np.ndarray, np.ndarray]:
    """(L_ell g)_{AB} and (L_ell omega)_A in the adapted frame."""
    Lg, Lw = lie_derivatives(c, ehr)
    Lg_f = change_basis(TensorField(0, 2, Lg), frame, "to-frame").components
    Lw_f = change_basis(TensorField(0, 1, Lw), frame, "to-frame").components
    return Lg_f, Lw_f


def minimal_torsion(c: CarrollStructure, ehr: EhresmannForm, frame: Optional[Frame] = None) -> TorsionTensor:
    """The unique torsion with g(T(ell,X),Y) = L_ell g(X,Y)/2, omega(T(ell,X)) = L_ell omega(X)
    and T(U,V) = 0 on horizontal pairs."""
    if frame is None:
        frame = build_frame(c, ehr)
    Lg, Lw = frame_lie_derivatives(frame, c, ehr)
    T = zeros(DIM, DIM, DIM)
    for I in (1, 2):
        T[0, 0, I] = Lw[I]
        T[0, I, 0] = -Lw[I]
        for J in (1, 2):
            half = ex.mul(ex.const(0.5), Lg[I, J])
            T[J, 0, I] = half
            T[J, I, 0] = ex.neg(half)
    ff = TensorField(1, 2, T, "frame")
    return TorsionTensor(change_basis(ff, frame, "to-coordinate"), frame, ff)


@dataclass
class TorsionTrace:
    V: TensorField
    V_on_ell: Expr
    gamma: Optional[TensorField]
    branch: str
    values: np.ndarray = field(repr=False, default=None)


def torsion_trace(t: TorsionTensor, c: CarrollStructure, ehr: EhresmannForm, points=None) -> TorsionTrace:
    """Trace covector V with V(ell) = (ln m11 m22)_u and gamma = (V - L_ell omega)/V(ell).

    The plain contraction tau_a = T^b_{ba} has tau(ell) = -(ln m11 m22)_u and
    horizontal part L_ell omega; V flips the vertical part, V = tau - 2 tau(ell) omega.
    Raises IndeterminateBranchError when V(ell) is neither uniformly zero nor
    uniformly non-zero of one sign.
    """
    if points is None:
        points = c.chart.sample()
    T = t.field.components
    tau = [ex.esum(T[b, b, a] for b in range(DIM)) for a in range(DIM)]
    w = ehr.covector().components
    V = as_expr_array([ex.sub(tau[a], ex.mul(ex.mul(ex.const(2.0), tau[0]), w[a])) for a in range(DIM)])
    V_ell = V[0]
    vals = evaluate_components([np.array([V_ell], dtype=object)], points)[0][0]
    branch = classify_scalar(vals, "V(ell)")
    gamma = None
    if branch == "nonvanishing":
        _, Lw = lie_derivatives(c, ehr)
        gamma = TensorField(0, 1, as_expr_array([ex.div(ex.sub(V[a], Lw[a]), V_ell) for a in range(DIM)]))
    return TorsionTrace(TensorField(0, 1, V), V_ell, gamma, branch, vals)


def minimal_torsion_at(c: CarrollStructure, ehr: EhresmannForm, points) -> np.ndarray:
    """Numerical minimal torsion from the defining linear constraints.

    Independent of the frame construction: at each point the nine unknowns
    T^c_{ab} (a < b) are fitted by least squares to the 15 constraint
    equations written in coordinates.  Returns shape (npts, 3, 3, 3).
    """
    g = c.metric().components
    w = ehr.covector().components
    Lg, Lw = lie_derivatives(c, ehr)
    gv, wv, Lgv, Lwv = evaluate_components([g, w, Lg, Lw], points)
    n = gv.shape[1]
    pairs = [(0, 1), (0, 2), (1, 2)]
    out = np.zeros((n, DIM, DIM, DIM))
    for k in range(n):
        G = gv[:, k].reshape(3, 3)
        W = wv[:, k]
        LG = Lgv[:, k].reshape(3, 3)
        LW = Lwv[:, k]

        def column(cc, pair):
            return cc * 3 + pairs.index(pair)

        def t_coeffs(a, b):
            """Row vector picking T^c_{ab} for c = 0..2 (with sign for ordering)."""
            rows = np.zeros((3, 9))
            if a == b:
                return rows
            sign, pair = (1.0, (a, b)) if a < b else (-1.0, (b, a))
            for cc in range(3):
                rows[cc, column(cc, pair)] = sign
            return rows

        A, rhs = [], []
        ell = np.array([1.0, 0.0, 0.0])
        basis = np.eye(3)
        for X in range(3):
            tX = sum(ell[a] * basis[X][b] * t_coeffs(a, b) for a in range(3) for b in range(3))
            for Y in range(3):
                A.append(G[:, Y] @ tX)
                rhs.append(0.5 * LG[X, Y])
            A.append(W @ tX)
            rhs.append(LW[X])
        hx = np.array([-W[1], 1.0, 0.0])
        hy = np.array([-W[2], 0.0, 1.0])
        tH = sum(hx[a] * hy[b] * t_coeffs(a, b) for a in range(3) for b in range(3))
        for cc in range(3):
            A.append(tH[cc])
            rhs.append(0.0)
        sol, *_ = np.linalg.lstsq(np.array(A), np.array(rhs), rcond=None)
        for cc in range(3):
            for (a, b) in pairs:
                v = sol[column(cc, (a, b))]
                out[k, cc, a, b] = v
                out[k, cc, b, a] = -v
    return out
