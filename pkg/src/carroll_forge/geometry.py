"""Charts, expression-valued tensor fields, adapted frames and basis changes.

Index conventions used throughout the package:

* a TensorField of valence (r, s) stores its components in an object array of
  shape (3,)*(r+s), contravariant indices first;
* frame index 0 is the fundamental field ``ell`` (and its dual, the Ehresmann
  form), indices 1 and 2 are the horizontal frame vectors e_2, e_3;
* structure functions C[c, a, b] satisfy [e_a, e_b] = C[c, a, b] e_c.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from . import expr as ex
from .expr import ONE, ZERO, Expr
from .policy import DegenerateCoframeError, evaluate_components

if TYPE_CHECKING:
    from .carroll import CarrollStructure, EhresmannForm

DIM = 3


def zeros(*shape: int) -> np.ndarray:
    out = np.empty(shape, dtype=object)
    out.fill(ZERO)
    return out


def as_expr_array(values, shape=None) -> np.ndarray:
    arr = np.empty(np.shape(values), dtype=object)
    for idx in np.ndindex(arr.shape):
        v = values
        for i in idx:
            v = v[i]
        arr[idx] = v if isinstance(v, Expr) else ex.const(v)
    if shape is not None and arr.shape != tuple(shape):
        raise ValueError(f"expected shape {shape}, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class Chart:
    """Adapted chart (u, x, y); ``ell`` is the coordinate field of the first name."""

    coords: tuple[str, str, str] = ("u", "x", "y")
    domain: tuple[tuple[float, float], ...] = ((0.0, 2.0), (-1.0, 1.0), (-1.0, 1.0))

    def __post_init__(self):
        if len(self.coords) != DIM or len(set(self.coords)) != DIM:
            raise ValueError("a chart needs exactly three distinct coordinate names")
        if len(self.domain) != DIM:
            raise ValueError("a chart needs one interval per coordinate")
        for lo, hi in self.domain:
            if not hi > lo:
                raise ValueError(f"empty sampling interval [{lo}, {hi}]")

    @property
    def fibre(self) -> str:
        return self.coords[0]

    def parse(self, text: str) -> Expr:
        return ex.parse(text, self.coords)

    def midpoint(self, i: int = 0) -> float:
        lo, hi = self.domain[i]
        return 0.5 * (lo + hi)

    def sample(self, n: int = 64, seed: int = 0) -> dict[str, np.ndarray]:
        """Latin-hypercube sample of the domain box (one stratum per point and axis)."""
        rng = np.random.default_rng(seed)
        points = {}
        for name, (lo, hi) in zip(self.coords, self.domain):
            strata = (rng.permutation(n) + rng.random(n)) / n
            points[name] = lo + (hi - lo) * strata
        return points


@dataclass(frozen=True)
class TensorField:
    up: int
    down: int
    components: np.ndarray
    basis: str = "coordinate"

    def __post_init__(self):
        if self.basis not in ("coordinate", "frame"):
            raise ValueError(f"unknown basis tag {self.basis!r}")
        if self.components.shape != (DIM,) * (self.up + self.down):
            raise ValueError(
                f"valence ({self.up},{self.down}) needs shape {(DIM,) * (self.up + self.down)}, "
                f"got {self.components.shape}"
            )

    @property
    def rank(self) -> int:
        return self.up + self.down

    def __getitem__(self, idx):
        return self.components[idx]

    def map(self, fn) -> "TensorField":
        out = np.empty_like(self.components)
        for idx in np.ndindex(out.shape):
            out[idx] = fn(self.components[idx])
        return TensorField(self.up, self.down, out, self.basis)

    def __add__(self, other: "TensorField") -> "TensorField":
        _same_kind(self, other)
        return TensorField(self.up, self.down, _elementwise(self.components, other.components, ex.add), self.basis)

    def __sub__(self, other: "TensorField") -> "TensorField":
        _same_kind(self, other)
        return TensorField(self.up, self.down, _elementwise(self.components, other.components, ex.sub), self.basis)

    def scale(self, factor) -> "TensorField":
        f = factor if isinstance(factor, Expr) else ex.const(factor)
        return self.map(lambda c: ex.mul(f, c))


def _same_kind(a: TensorField, b: TensorField):
    if (a.up, a.down, a.basis) != (b.up, b.down, b.basis):
        raise ValueError("tensor fields differ in valence or basis")


def _elementwise(a: np.ndarray, b: np.ndarray, op) -> np.ndarray:
    out = np.empty_like(a)
    for idx in np.ndindex(a.shape):
        out[idx] = op(a[idx], b[idx])
    return out


def tensor_product(s: TensorField, t: TensorField) -> TensorField:
    """Product with indices ordered (up_s, up_t, down_s, down_t)."""
    if s.basis != t.basis:
        raise ValueError("basis mismatch")
    out = zeros(*((DIM,) * (s.rank + t.rank)))
    for i in np.ndindex(s.components.shape):
        for j in np.ndindex(t.components.shape):
            idx = i[: s.up] + j[: t.up] + i[s.up :] + j[t.up :]
            out[idx] = ex.mul(s.components[i], t.components[j])
    return TensorField(s.up + t.up, s.down + t.down, out, s.basis)


def apply_vector(vec: Sequence[Expr], f: Expr, coords: Sequence[str]) -> Expr:
    """Directional derivative X(f) = X^a d_a f."""
    return ex.esum(ex.mul(v, ex.differentiate(f, c)) for v, c in zip(vec, coords) if v is not ZERO)


def transform_index(comp: np.ndarray, pos: int, matrix: np.ndarray) -> np.ndarray:
    """new[..., A, ...] = sum_a matrix[A, a] * comp[..., a, ...] at slot ``pos``."""
    out = np.empty_like(comp)
    for idx in np.ndindex(comp.shape):
        A = idx[pos]
        terms = []
        for a in range(DIM):
            m = matrix[A, a]
            if m is ZERO:
                continue
            c = comp[idx[:pos] + (a,) + idx[pos + 1 :]]
            if c is ZERO:
                continue
            terms.append(ex.mul(m, c))
        out[idx] = ex.esum(terms)
    return out


@dataclass(frozen=True)
class Frame:
    """Coframe theta[A, a], dual frame vectors[A, a] and structure functions."""

    coords: tuple[str, str, str]
    coframe: np.ndarray
    vectors: np.ndarray
    structure: np.ndarray

    def apply(self, A: int, f: Expr) -> Expr:
        return apply_vector(self.vectors[A], f, self.coords)

    def vector_field(self, A: int) -> TensorField:
        return TensorField(1, 0, self.vectors[A].copy())

    def covector_field(self, A: int) -> TensorField:
        return TensorField(0, 1, self.coframe[A].copy())


def build_frame(carroll: "CarrollStructure", ehr: "EhresmannForm", points=None) -> Frame:
    """Frame dual to (omega, m^1, m^2) in closed form.

    Raises DegenerateCoframeError when m11 or m22 is not strictly positive on
    the sample grid (``points`` defaults to the chart's standard sample).
    """
    if points is None:
        points = carroll.chart.sample()
    m11, m21, m22 = carroll.m11, carroll.m21, carroll.m22
    vals = evaluate_components([np.array([m11, m22], dtype=object)], points)[0]
    if not np.all(vals > 0):
        raise DegenerateCoframeError("coframe entries m11 and m22 must be positive on the sample grid")
    w1, w2 = ehr.w1, ehr.w2
    det = m11 * m22
    theta = as_expr_array(
        [
            [ONE, w1, w2],
            [ZERO, m11, ZERO],
            [ZERO, m21, m22],
        ]
    )
    vectors = as_expr_array(
        [
            [ONE, ZERO, ZERO],
            [(w2 * m21 - w1 * m22) / det, ONE / m11, -m21 / det],
            [-w2 / m22, ZERO, ONE / m22],
        ]
    )
    coords = carroll.chart.coords
    return Frame(coords, theta, vectors, _structure(coords, theta, vectors))


def frame_from_matrices(coords, coframe: np.ndarray, vectors: np.ndarray) -> Frame:
    coframe = as_expr_array(coframe, (DIM, DIM))
    vectors = as_expr_array(vectors, (DIM, DIM))
    return Frame(tuple(coords), coframe, vectors, _structure(coords, coframe, vectors))


def lie_bracket(X: Sequence[Expr], Y: Sequence[Expr], coords: Sequence[str]) -> list[Expr]:
    return [ex.sub(apply_vector(X, Y[a], coords), apply_vector(Y, X[a], coords)) for a in range(DIM)]


def _structure(coords, theta, vectors) -> np.ndarray:
    C = zeros(DIM, DIM, DIM)
    for A, B in itertools.combinations(range(DIM), 2):
        bracket = lie_bracket(vectors[A], vectors[B], coords)
        for K in range(DIM):
            c = ex.esum(ex.mul(theta[K, a], bracket[a]) for a in range(DIM) if bracket[a] is not ZERO)
            C[K, A, B] = c
            C[K, B, A] = ex.neg(c)
    return C


def structure_functions(f: Frame) -> np.ndarray:
    return f.structure


def lie_derivative_along_ell(t: TensorField, chart: Chart) -> TensorField:
    """L_ell of a covariant coordinate-basis field; ell = d/du in the adapted chart."""
    if t.up != 0:
        raise ValueError("only covariant tensor fields are supported")
    if t.basis != "coordinate":
        raise ValueError("expected a coordinate-basis tensor field")
    return t.map(lambda c: ex.differentiate(c, chart.fibre))


def change_basis(t: TensorField, f: Frame, direction: str) -> TensorField:
    """Re-express ``t`` in the frame ('to-frame') or in coordinates ('to-coordinate')."""
    if direction == "to-frame":
        if t.basis != "coordinate":
            raise ValueError("basis mismatch: field is already in the frame basis")
        up_m, down_m, tag = f.coframe, f.vectors, "frame"
    elif direction == "to-coordinate":
        if t.basis != "frame":
            raise ValueError("basis mismatch: field is already in the coordinate basis")
        up_m, down_m, tag = f.vectors.T, f.coframe.T, "coordinate"
    else:
        raise ValueError(f"unknown direction {direction!r}")
    comp = t.components
    for pos in range(t.rank):
        comp = transform_index(comp, pos, up_m if pos < t.up else down_m)
    return TensorField(t.up, t.down, comp, tag)


def frame_component(t: TensorField, f: Frame, idx: Sequence[int]) -> Expr:
    """A single frame component of a coordinate-basis field."""
    if t.basis != "coordinate":
        raise ValueError("expected a coordinate-basis tensor field")
    terms = []
    for cidx in np.ndindex(t.components.shape):
        c = t.components[cidx]
        if c is ZERO:
            continue
        w = c
        for pos, (A, a) in enumerate(zip(idx, cidx)):
            m = f.coframe[A, a] if pos < t.up else f.vectors[A, a]
            if m is ZERO:
                w = ZERO
                break
            w = ex.mul(m, w)
        if w is not ZERO:
            terms.append(w)
    return ex.esum(terms)


def duality_matrix(f: Frame) -> np.ndarray:
    """<theta^A, e_B> as an expression matrix."""
    out = zeros(DIM, DIM)
    for A in range(DIM):
        for B in range(DIM):
            out[A, B] = ex.esum(ex.mul(f.coframe[A, a], f.vectors[B, a]) for a in range(DIM))
    return out
