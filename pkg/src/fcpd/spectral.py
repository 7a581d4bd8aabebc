"""Eigendecomposition of discretized kernels in the quadrature metric.

The grid eigenproblem is solved in symmetric form: with W the diagonal of
quadrature weights, W^(1/2) C W^(1/2) is decomposed and eigenvectors are
mapped back through W^(-1/2), making the discrete pairs consistent
estimates of the L2 operator pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .curves import QuadratureGrid, inner_product
from .errors import DegenerateKernelError, InvalidArgumentError
from .kernels import KernelEstimate

__all__ = ["EigenSystem", "EIGENVALUE_FLOOR_REL", "eigendecompose", "align_sign", "select_d"]

# Eigenvalues below this fraction of the kernel trace are treated as zero:
# the test statistic divides by them, and near-null modes only carry noise.
EIGENVALUE_FLOOR_REL = 1e-10


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Leading eigenvalues and unit-norm eigenfunctions of a kernel.

    ``eigenfunctions`` is d x M (one curve per row), orthonormal in the
    quadrature inner product. ``explained_fraction`` is the share of the
    total positive spectrum captured by the d retained modes.
    """

    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    grid: QuadratureGrid
    split_k: int | None = None
    explained_fraction: float = 1.0

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=float)
        funs = np.asarray(self.eigenfunctions, dtype=float)
        if lam.ndim != 1 or funs.shape != (lam.size, self.grid.m):
            raise InvalidArgumentError("need d eigenvalues and d x M eigenfunctions")
        if np.any(np.diff(lam) > 0):
            raise InvalidArgumentError("eigenvalues must be nonincreasing")
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "eigenfunctions", funs)

    @property
    def d(self) -> int:
        return self.eigenvalues.size


def _default_signs(funs: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """+1/-1 per row so the quadrature integral is >= 0 (ties: first nonzero)."""
    signs = np.ones(funs.shape[0])
    integrals = funs @ weights
    for l, s in enumerate(integrals):
        if s < 0.0:
            signs[l] = -1.0
        elif s == 0.0:
            nz = np.nonzero(funs[l])[0]
            if nz.size and funs[l, nz[0]] < 0.0:
                signs[l] = -1.0
    return signs


def eigendecompose(kernel: KernelEstimate, d: int) -> EigenSystem:
    """Leading d eigenpairs of the kernel in the quadrature metric.

    Eigenvalues are clipped at zero; eigenfunctions have unit L2 norm and a
    deterministic sign (nonnegative quadrature integral). Raises
    DegenerateKernelError when no eigenvalue clears the relative floor,
    which signals constant data.
    """
    m = kernel.grid.m
    if d < 1 or d > m:
        raise InvalidArgumentError(f"d must lie in 1..{m}, got {d}")
    w = kernel.grid.weights
    sqw = np.sqrt(w)
    b = kernel.values * np.outer(sqw, sqw)
    b = (b + b.T) / 2.0
    lam, y = np.linalg.eigh(b)
    lam = lam[::-1]
    y = y[:, ::-1]
    trace = float(np.sum(w * np.diag(kernel.values)))
    floor = EIGENVALUE_FLOOR_REL * max(trace, 0.0)
    if trace <= 0.0 or lam[0] <= floor:
        raise DegenerateKernelError(
            "kernel has no eigenvalue above the floor (constant curves?)"
        )
    lam = np.clip(lam, 0.0, None)
    funs = (y[:, :d] / sqw[:, None]).T
    norms = np.sqrt(np.sum(w * funs**2, axis=1))
    funs = funs / norms[:, None]
    signs = _default_signs(funs, w)
    funs = funs * signs[:, None]
    total = lam[lam > 0.0].sum()
    explained = float(lam[:d].sum() / total)
    return EigenSystem(
        eigenvalues=lam[:d],
        eigenfunctions=funs,
        grid=kernel.grid,
        split_k=kernel.split_k,
        explained_fraction=explained,
    )


def align_sign(system: EigenSystem, reference: EigenSystem | None = None) -> EigenSystem:
    """Resolve the sign ambiguity of each eigenfunction.

    Without a reference, flip so the quadrature integral is nonnegative
    (exact zero falls back to the first nonzero grid value). With one, flip
    so the inner product with the matching reference function is
    nonnegative.
    """
    funs = system.eigenfunctions.copy()
    if reference is None:
        signs = _default_signs(funs, system.grid.weights)
    else:
        if reference.d < system.d or not reference.grid.matches(system.grid):
            raise InvalidArgumentError("reference must cover d functions on the grid")
        signs = np.ones(system.d)
        for l in range(system.d):
            ip = inner_product(funs[l], reference.eigenfunctions[l], system.grid)
            if ip < 0.0:
                signs[l] = -1.0
    return replace(system, eigenfunctions=funs * signs[:, None])


def select_d(eigenvalues: np.ndarray, fraction: float) -> int:
    """Smallest d whose cumulative share of the positive spectrum reaches ``fraction``."""
    if not 0.0 < fraction < 1.0:
        raise InvalidArgumentError("fraction must lie in (0, 1)")
    lam = np.asarray(eigenvalues, dtype=float)
    lam = lam[lam > 0.0]
    if lam.size == 0:
        raise DegenerateKernelError("no positive eigenvalues to select from")
    shares = np.cumsum(np.sort(lam)[::-1])
    shares /= shares[-1]
    return int(np.searchsorted(shares, fraction) + 1)
