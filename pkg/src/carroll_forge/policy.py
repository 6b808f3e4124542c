"""Tolerance policy, residual statistics, verdicts and the error hierarchy.

Every checker in the package measures an identity as a list of component
arrays ("terms") whose sum must vanish.  The normalized residual at a sample
point is

    max_components |sum(terms)| / (1 + max_components max_terms |term|)

so that identities built from large components are judged relative to the
size of their ingredients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .expr import Expr, evaluate_many

PASS_TOL = 1e-9
VANISH_TOL = 1e-9
NONVANISH_TOL = 1e-6


class CarrollError(Exception):
    """Base class for errors raised by the library (exit code 2 in the CLI)."""


class DegenerateCoframeError(CarrollError):
    pass


class NotPrincipalError(CarrollError):
    pass


class HypothesisViolation(CarrollError):
    def __init__(self, name: str, value: float, tol: float):
        self.name = name
        self.value = value
        super().__init__(f"hypothesis violated: {name} residual {value:.3e} exceeds {tol:.1e}")


class IndeterminateBranchError(CarrollError):
    pass


class VanishingTorsionError(CarrollError):
    pass


class WrongBranchError(CarrollError):
    pass


@dataclass(frozen=True)
class Residual:
    max: float
    mean: float

    @classmethod
    def from_points(cls, values: np.ndarray) -> "Residual":
        values = np.atleast_1d(np.asarray(values, dtype=float))
        return cls(float(values.max()), float(values.mean()))

    def ok(self, tol: float = PASS_TOL) -> bool:
        return self.max < tol


@dataclass
class Verdict:
    """Outcome of one characterization check."""

    name: str
    outcome: bool
    branch: str = "none"
    residuals: dict[str, Residual] = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def __bool__(self):
        return self.outcome


def npoints(points: Mapping[str, np.ndarray]) -> int:
    return len(next(iter(points.values())))


def evaluate_components(arrays: Sequence[np.ndarray], points) -> list[np.ndarray]:
    """Evaluate object arrays of expressions; each result has shape (ncomp, npts)."""
    n = npoints(points)
    flat = [np.asarray(a, dtype=object).ravel() for a in arrays]
    exprs = [e for f in flat for e in f]
    values = evaluate_many(exprs, points)
    out = []
    k = 0
    for f in flat:
        block = np.empty((len(f), n))
        for j in range(len(f)):
            block[j] = np.broadcast_to(values[k], (n,))
            k += 1
        out.append(block)
    return out


def pointwise_residual(terms: Iterable[np.ndarray], points, scale: Iterable[np.ndarray] = ()) -> np.ndarray:
    """Normalized residual of ``sum(terms) == 0`` at every sample point."""
    terms = list(terms)
    scale = list(scale)
    values = evaluate_components(terms + scale, points)
    total = sum(values[: len(terms)])
    magnitude = np.zeros(npoints(points))
    for v in values:
        if v.size:
            magnitude = np.maximum(magnitude, np.abs(v).max(axis=0))
    if total.size == 0:
        return np.zeros(npoints(points))
    return np.abs(total).max(axis=0) / (1.0 + magnitude)


def residual(terms: Iterable[np.ndarray], points, scale: Iterable[np.ndarray] = ()) -> Residual:
    return Residual.from_points(pointwise_residual(terms, points, scale))


def max_abs(arrays: Iterable[np.ndarray] | np.ndarray | Expr, points) -> np.ndarray:
    """Pointwise maximum absolute value over all components."""
    if isinstance(arrays, Expr):
        arrays = [np.array([arrays], dtype=object)]
    elif isinstance(arrays, np.ndarray):
        arrays = [arrays]
    values = evaluate_components(list(arrays), points)
    out = np.zeros(npoints(points))
    for v in values:
        if v.size:
            out = np.maximum(out, np.abs(v).max(axis=0))
    return out


def classify_scalar(values: np.ndarray, what: str = "scalar field") -> str:
    """Return 'vanishing' or 'nonvanishing'; anything in between is an error."""
    v = np.asarray(values, dtype=float)
    a = np.abs(v)
    if a.max() < VANISH_TOL:
        return "vanishing"
    if a.min() > NONVANISH_TOL:
        if np.all(v > 0) or np.all(v < 0):
            return "nonvanishing"
        raise IndeterminateBranchError(f"{what} changes sign on the sample grid")
    raise IndeterminateBranchError(
        f"{what} is neither uniformly vanishing nor uniformly non-vanishing on the sample grid "
        f"(min |.| = {a.min():.3e}, max |.| = {a.max():.3e})"
    )
