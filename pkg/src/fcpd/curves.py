"""Functional-data numerics: quadrature grids, curve storage, B-spline smoothing.

Curves live on a common quadrature grid over [0, 1]; every integral in the
package is a weighted sum over that grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import BSpline, make_lsq_spline

from .errors import IllPosedFitError, InvalidArgumentError

__all__ = [
    "QuadratureGrid",
    "RawCurves",
    "CurveMeta",
    "CurveSet",
    "BSplineBasis",
    "make_grid",
    "smooth_to_basis",
    "resample_to_grid",
    "inner_product",
]

DEFAULT_GRID_SIZE = 201


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    """Ordered abscissae in [0, 1] with positive weights summing to one."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", _readonly(self.points))
        object.__setattr__(self, "weights", _readonly(self.weights))
        p, w = self.points, self.weights
        if p.ndim != 1 or w.shape != p.shape:
            raise InvalidArgumentError("points and weights must be 1-D of equal length")
        if p.size < 2:
            raise InvalidArgumentError("a grid needs at least 2 points")
        if np.any(np.diff(p) <= 0):
            raise InvalidArgumentError("grid points must be strictly increasing")
        if p[0] < 0.0 or p[-1] > 1.0:
            raise InvalidArgumentError("grid points must lie in [0, 1]")
        if np.any(w <= 0):
            raise InvalidArgumentError("all quadrature weights must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise InvalidArgumentError("quadrature weights must sum to 1")

    @property
    def m(self) -> int:
        return self.points.size

    def matches(self, other: "QuadratureGrid") -> bool:
        return self.m == other.m and np.array_equal(self.points, other.points)


@dataclass(frozen=True, eq=False)
class RawCurves:
    """N x M table of grid observations before any smoothing.

    ``grid`` holds the raw sampling abscissae (plain array, not yet a
    quadrature grid); ``labels`` optionally names each curve for reporting.
    """

    values: np.ndarray
    grid: np.ndarray
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", _readonly(self.values))
        object.__setattr__(self, "grid", _readonly(self.grid))
        v, g = self.values, self.grid
        if v.ndim != 2:
            raise InvalidArgumentError("values must be a 2-D table (rows are curves)")
        if g.ndim != 1 or g.size != v.shape[1]:
            raise InvalidArgumentError("grid length must match the number of columns")
        if not np.isfinite(v).all():
            raise InvalidArgumentError("every observation must be finite")
        if v.shape[0] < 2:
            raise InvalidArgumentError("at least two curves are required")
        if self.labels is not None and len(self.labels) != v.shape[0]:
            raise InvalidArgumentError("labels must match the number of curves")

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class CurveMeta:
    """Provenance of a CurveSet: how the values got onto the grid."""

    source: str = "raw"  # raw | smoothed | resampled | simulated
    basis_size: int | None = None


@dataclass(frozen=True, eq=False)
class CurveSet:
    """N curves evaluated on a shared quadrature grid."""

    values: np.ndarray
    grid: QuadratureGrid
    meta: CurveMeta = field(default_factory=CurveMeta)

    def __post_init__(self):
        object.__setattr__(self, "values", _readonly(self.values))
        v = self.values
        if v.ndim != 2 or v.shape[1] != self.grid.m:
            raise InvalidArgumentError("values must be N x M matching the grid")
        if not np.isfinite(v).all():
            raise InvalidArgumentError("curve values must all be finite")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.grid.m

    def subset(self, start: int, stop: int) -> "CurveSet":
        """Curves [start, stop) on the same grid."""
        if not (0 <= start < stop <= self.n):
            raise InvalidArgumentError(f"bad subset [{start}, {stop}) for n={self.n}")
        return replace(self, values=self.values[start:stop])


@dataclass(frozen=True, eq=False)
class BSplineBasis:
    """Clamped B-spline basis on [0, 1]."""

    degree: int
    knots: np.ndarray
    size: int

    def __post_init__(self):
        object.__setattr__(self, "knots", _readonly(self.knots))
        t, p, nb = self.knots, self.degree, self.size
        if nb < p + 1:
            raise InvalidArgumentError("basis size must be at least degree + 1")
        if t.size != nb + p + 1:
            raise InvalidArgumentError("knot count must equal size + degree + 1")
        if np.any(np.diff(t) < 0):
            raise InvalidArgumentError("knots must be nondecreasing")
        if not (np.all(t[: p + 1] == 0.0) and np.all(t[-(p + 1):] == 1.0)):
            raise InvalidArgumentError("knots must be clamped at 0 and 1")

    @classmethod
    def uniform(cls, size: int, degree: int = 3) -> "BSplineBasis":
        """Basis with uniformly spaced interior knots."""
        if size < degree + 1:
            raise InvalidArgumentError("basis size must be at least degree + 1")
        inner = np.linspace(0.0, 1.0, size - degree + 1)[1:-1]
        knots = np.concatenate(
            [np.zeros(degree + 1), inner, np.ones(degree + 1)]
        )
        return cls(degree=degree, knots=knots, size=size)


def make_grid(m: int, rule: str = "trapezoid") -> QuadratureGrid:
    """Equispaced quadrature grid with ``m`` points.

    ``trapezoid`` places points on [0, 1] inclusive with half weights at the
    ends; ``midpoint`` uses cell centers with equal weights.
    """
    if m < 2:
        raise InvalidArgumentError(f"grid needs m >= 2, got {m}")
    if rule == "trapezoid":
        points = np.linspace(0.0, 1.0, m)
        h = 1.0 / (m - 1)
        weights = np.full(m, h)
        weights[0] = weights[-1] = h / 2.0
    elif rule == "midpoint":
        points = (np.arange(m) + 0.5) / m
        weights = np.full(m, 1.0 / m)
    else:
        raise InvalidArgumentError(f"unknown quadrature rule {rule!r}")
    return QuadratureGrid(points=points, weights=weights)


def smooth_to_basis(
    raw: RawCurves, basis: BSplineBasis, out_grid: QuadratureGrid
) -> CurveSet:
    """Least-squares B-spline fit of each raw curve, evaluated on ``out_grid``.

    Fitting is per curve and deterministic; raw abscissae outside [0, 1] are
    not accepted here (the CLI rescales beforehand).
    """
    x = raw.grid
    if np.unique(x).size < basis.size:
        raise IllPosedFitError(
            f"{basis.size} basis functions need at least that many distinct "
            f"abscissae, got {np.unique(x).size}"
        )
    if x[0] < 0.0 or x[-1] > 1.0:
        raise InvalidArgumentError("raw abscissae must lie in [0, 1]")
    try:
        spl = make_lsq_spline(x, raw.values.T, basis.knots, basis.degree)
    except Exception as exc:  # scipy signals deficiency via ValueError/LinAlgError
        raise IllPosedFitError(f"B-spline least squares failed: {exc}") from exc
    fitted = spl(out_grid.points).T
    return CurveSet(
        values=fitted,
        grid=out_grid,
        meta=CurveMeta(source="smoothed", basis_size=basis.size),
    )


def resample_to_grid(raw: RawCurves, out_grid: QuadratureGrid) -> CurveSet:
    """Linear interpolation of raw curves onto a quadrature grid."""
    x = raw.grid
    if x[0] > out_grid.points[0] or x[-1] < out_grid.points[-1]:
        raise InvalidArgumentError("raw abscissae must cover the target grid")
    idx = np.clip(np.searchsorted(x, out_grid.points, side="right") - 1, 0, x.size - 2)
    t0, t1 = x[idx], x[idx + 1]
    frac = (out_grid.points - t0) / (t1 - t0)
    vals = raw.values[:, idx] * (1.0 - frac) + raw.values[:, idx + 1] * frac
    return CurveSet(values=vals, grid=out_grid, meta=CurveMeta(source="resampled"))


def inner_product(f: np.ndarray, g: np.ndarray, grid: QuadratureGrid) -> float:
    """Weighted L2 inner product of two curves on the grid."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != (grid.m,) or g.shape != (grid.m,):
        raise InvalidArgumentError("curves and grid must share length")
    return float(np.sum(grid.weights * f * g))


def evaluate_basis(basis: BSplineBasis, points: np.ndarray) -> np.ndarray:
    """Design matrix of the basis at the given points (len(points) x size)."""
    return BSpline.design_matrix(points, basis.knots, basis.degree).toarray()
