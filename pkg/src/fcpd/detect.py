"""Change-in-mean test: score CUSUM process, statistics, decision, segmentation.

The H statistic re-estimates the covariance kernel at every candidate split
with per-segment centering; the S baseline keeps the single pooled kernel
throughout. Both integrate the same self-normalized squared CUSUM of
eigenfunction scores over all splits.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .curves import CurveSet
from .errors import (
    DegenerateDataError,
    DegenerateKernelError,
    InsufficientSampleError,
    InvalidArgumentError,
)
from .kernels import pooled_kernel
from .limits import CriticalValueTable, default_table
from .spectral import EIGENVALUE_FLOOR_REL, EigenSystem, eigendecompose, select_d

__all__ = [
    "CusumProcess",
    "TestResult",
    "SegmentNode",
    "SegmentationTree",
    "scores",
    "r_process",
    "h_statistic",
    "estimate_change_point",
    "decide",
    "run_test",
    "binary_segmentation",
]


@dataclass(frozen=True, eq=False)
class CusumProcess:
    """Self-normalized squared CUSUM R(k/N) for k = 1..N.

    ``mode`` is "H" (per-split eigensystems) or "S" (one pooled system).
    ``reduced_splits`` records (k, modes used) wherever eigenvalues below the
    floor forced a locally smaller dimension.
    """

    values: np.ndarray
    d: int
    mode: str
    n: int
    reduced_splits: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.n,):
            raise InvalidArgumentError("process must hold one value per k = 1..N")
        if not np.isfinite(v).all() or np.any(v < 0):
            raise InvalidArgumentError("process values must be finite and >= 0")
        object.__setattr__(self, "values", v)

    @property
    def per_split_eigensystems_used(self) -> bool:
        return self.mode == "H"


@dataclass(frozen=True)
class TestResult:
    """Outcome of one change-in-mean test."""

    statistic: float
    mode: str
    d: int
    critical_value: float
    alpha: float
    p_value: float | None
    reject: bool
    theta_hat: float | None

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "mode": self.mode,
            "d": self.d,
            "critical_value": self.critical_value,
            "alpha": self.alpha,
            "p_value": self.p_value,
            "reject": self.reject,
            "theta_hat": self.theta_hat,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TestResult":
        return cls(**data)


def scores(curves: CurveSet, system: EigenSystem) -> np.ndarray:
    """Noncentral score table: curve i projected on eigenfunction l (N x d)."""
    if not curves.grid.matches(system.grid):
        raise InvalidArgumentError("curves and eigensystem live on different grids")
    w = curves.grid.weights
    return curves.values @ (system.eigenfunctions * w).T


def _drop_floor(lam: np.ndarray, trace: float) -> np.ndarray:
    """Indices of modes above the degeneracy floor, in descending-λ order."""
    floor = EIGENVALUE_FLOOR_REL * max(trace, 0.0)
    return np.nonzero(lam > floor)[0] if trace > 0.0 else np.array([], dtype=int)


def _pooled_gram(a: np.ndarray, n: int) -> np.ndarray:
    gm = a.sum(axis=0) / n
    return (a - gm[:, None] - gm[None, :] + gm.sum() / n) / n


def _split_gram(a: np.ndarray, p: np.ndarray, t2: np.ndarray, k: int, n: int) -> np.ndarray:
    """Gram matrix of the per-segment-centered curves at split k (weighted metric)."""
    rowtot = p[-1]
    hm = p[k - 1] / k
    tm = (rowtot - p[k - 1]) / (n - k)
    head_head = t2[k - 1, k - 1]
    head_all = t2[k - 1, -1]
    total = t2[-1, -1]
    m_hh = head_head / k**2
    m_ht = (head_all - head_head) / (k * (n - k))
    m_tt = (total - 2.0 * head_all + head_head) / (n - k) ** 2
    g = a.copy()
    g[:, :k] -= hm[:, None]
    g[:, k:] -= tm[:, None]
    g[:k, :] -= hm[None, :]
    g[k:, :] -= tm[None, :]
    g[:k, :k] += m_hh
    g[:k, k:] += m_ht
    g[k:, :k] += m_ht
    g[k:, k:] += m_tt
    g /= n
    return (g + g.T) / 2.0


def _r_values_gram(x: np.ndarray, w: np.ndarray, d: int) -> tuple[np.ndarray, list]:
    """H-mode R values via the N x N Gram matrices of the centered sample.

    For each split the nonzero spectrum of the split kernel equals that of
    the Gram matrix of the per-segment-centered, weight-scaled curves, and
    the score CUSUM contracts against the same eigenvectors, so no M x M
    decomposition is needed. Exact cancellation of the centering terms in
    the CUSUM contraction holds because positive-eigenvalue modes are
    orthogonal to the segment indicator vectors.
    """
    n = x.shape[0]
    a = (x * w) @ x.T
    p = np.cumsum(a, axis=0)
    t2 = np.cumsum(p, axis=1)
    values = np.zeros(n)
    reduced = []
    pooled_eig = None
    for k in range(1, n):
        if k in (1, n - 1):
            if pooled_eig is None:
                g = _pooled_gram(a, n)
                pooled_eig = (*np.linalg.eigh(g), float(np.trace(g)))
            lam_all, u_all, trace = pooled_eig
        else:
            g = _split_gram(a, p, t2, k, n)
            trace = float(np.trace(g))
            lam_all, u_all = np.linalg.eigh(g)
        lam = lam_all[::-1][:d]
        u = u_all[:, ::-1][:, :d]
        keep = _drop_floor(lam, trace)
        if keep.size == 0:
            raise DegenerateDataError(f"no usable eigenvalue at split k={k}")
        if keep.size < d:
            reduced.append((k, int(keep.size)))
        b_k = p[k - 1] - (k / n) * p[-1]
        proj = u[:, keep].T @ b_k
        values[k - 1] = float(np.sum(proj**2 / lam[keep] ** 2)) / n**2
    return values, reduced


def _r_values_kernel(x: np.ndarray, w: np.ndarray, d: int) -> tuple[np.ndarray, list]:
    """H-mode R values via per-split M x M weighted kernel eigenproblems."""
    n, m = x.shape
    sqw = np.sqrt(w)
    total = x.T @ x
    prefix = np.cumsum(x, axis=0)
    d_eff = min(d, m)
    values = np.zeros(n)
    reduced = []
    pooled_eig = None
    wouter = np.outer(sqw, sqw)
    for k in range(1, n):
        if k in (1, n - 1):
            if pooled_eig is None:
                gm = prefix[-1] / n
                c = (total - n * np.outer(gm, gm)) / n
                pooled_eig = _top_eig(c * wouter, d_eff)
            lam, y, trace = pooled_eig
        else:
            mu_h = prefix[k - 1] / k
            mu_t = (prefix[-1] - prefix[k - 1]) / (n - k)
            c = (total - k * np.outer(mu_h, mu_h) - (n - k) * np.outer(mu_t, mu_t)) / n
            lam, y, trace = _top_eig(c * wouter, d_eff)
        keep = _drop_floor(lam, trace)
        if keep.size == 0:
            raise DegenerateDataError(f"no usable eigenvalue at split k={k}")
        if keep.size < d:
            reduced.append((k, int(keep.size)))
        z_k = sqw * (prefix[k - 1] - (k / n) * prefix[-1])
        proj = y[:, keep].T @ z_k
        values[k - 1] = float(np.sum(proj**2 / lam[keep])) / n
    return values, reduced


def _top_eig(b: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Top-d eigenpairs (descending) and trace of a symmetric matrix."""
    m = b.shape[0]
    trace = float(np.trace(b))
    b = (b + b.T) / 2.0
    lam, y = scipy.linalg.eigh(
        b, subset_by_index=(m - d, m - 1), check_finite=False, overwrite_a=True
    )
    return lam[::-1], y[:, ::-1], trace


def r_process(
    curves: CurveSet,
    d: int,
    mode: str = "H",
    *,
    engine: str = "auto",
    bias_correction: bool | None = None,
) -> CusumProcess:
    """Self-normalized squared score CUSUM R(k/N) for every k = 1..N.

    Parameters
    ----------
    curves : CurveSet
        Sample of N >= 3 curves on a shared grid.
    d : int
        Number of leading eigenmodes to normalize against.
    mode : {"H", "S"}
        "H" re-estimates the kernel with per-segment centering at each split
        (bias-corrected by default); "S" uses the pooled kernel once.
    engine : {"auto", "gram", "kernel"}
        H-mode computation route. Both produce identical values; "auto"
        picks the cheaper side of min(N, M).
    bias_correction : bool, optional
        Override the default (True for "H", False for "S").

    R(1) is identically zero. Splits k = 1 and N-1 use the pooled kernel.
    Modes whose eigenvalue falls below the relative floor are dropped
    locally with a warning.
    """
    n = curves.n
    if n < 3:
        raise InsufficientSampleError("the CUSUM process needs at least 3 curves")
    if not 1 <= d <= curves.m:
        raise InvalidArgumentError(f"d must lie in 1..{curves.m}, got {d}")
    if mode not in ("H", "S"):
        raise InvalidArgumentError(f"mode must be 'H' or 'S', got {mode!r}")
    if bias_correction is None:
        bias_correction = mode == "H"
    x = curves.values
    w = curves.grid.weights
    reduced: list = []
    if mode == "S":
        try:
            kernel = pooled_kernel(curves)
            system = eigendecompose(kernel, d)
        except DegenerateKernelError as exc:
            raise DegenerateDataError(str(exc)) from exc
        lam = system.eigenvalues
        keep = _drop_floor(lam, kernel.trace())
        if keep.size == 0:
            raise DegenerateDataError("pooled kernel is degenerate (constant curves)")
        if keep.size < d:
            reduced.append((0, int(keep.size)))
        lam = lam[keep]
        if bias_correction:
            lam = lam / (1.0 - 2.0 / n)
        eta = scores(curves, system)[:, keep]
        cum = np.cumsum(eta, axis=0)
        u = np.arange(1, n + 1)[:, None] / n
        cusum = cum - u * cum[-1]
        values = np.sum(cusum**2 / lam, axis=1) / n
        values[-1] = 0.0
    else:
        use_gram = engine == "gram" or (engine == "auto" and n <= curves.m)
        if engine not in ("auto", "gram", "kernel"):
            raise InvalidArgumentError(f"unknown engine {engine!r}")
        if use_gram:
            values, reduced = _r_values_gram(x, w, d)
        else:
            values, reduced = _r_values_kernel(x, w, d)
        if bias_correction:
            values = values * (1.0 - 2.0 / n)
        values[n - 1] = 0.0
    if reduced:
        warnings.warn(
            f"{len(reduced)} split(s) used fewer than d={d} modes "
            "(eigenvalues below floor)",
            RuntimeWarning,
            stacklevel=2,
        )
    return CusumProcess(
        values=values, d=d, mode=mode, n=n, reduced_splits=tuple(reduced)
    )


def h_statistic(process: CusumProcess, n: int | None = None) -> float:
    """Integrated statistic: the mean of R(k/N) over k = 1..N."""
    if n is not None and n != process.n:
        raise InvalidArgumentError(f"process holds n={process.n}, got n={n}")
    return float(process.values.mean())


def estimate_change_point(process: CusumProcess) -> float:
    """Smallest k/N attaining the maximum of the process."""
    k = int(np.argmax(process.values)) + 1
    return k / process.n


def decide(
    statistic: float,
    d: int,
    alpha: float,
    table: CriticalValueTable,
    theta_hat: float | None = None,
) -> TestResult:
    """Compare a statistic against the tabulated critical value.

    Rejects on strict exceedance; attaches the Monte Carlo p-value when the
    table retains its limit sample for this d.
    """
    critical = table.critical_value(d, alpha)
    p_value = table.p_value(statistic, d) if table.has_sample(d) else None
    return TestResult(
        statistic=float(statistic),
        mode="",
        d=d,
        critical_value=critical,
        alpha=alpha,
        p_value=p_value,
        reject=bool(statistic > critical),
        theta_hat=theta_hat,
    )


def run_test(
    curves: CurveSet,
    d: int,
    alpha: float = 0.05,
    mode: str = "H",
    *,
    table: CriticalValueTable | None = None,
    engine: str = "auto",
) -> TestResult:
    """End-to-end change-in-mean test on a curve sample.

    Composes the CUSUM process, the integrated statistic, the change-point
    estimate and the tabulated decision. The change fraction is reported
    whether or not the test rejects (only meaningful on rejection).
    """
    if table is None:
        table = default_table(d)
    process = r_process(curves, d, mode, engine=engine)
    stat = h_statistic(process)
    theta = estimate_change_point(process)
    result = decide(stat, d, alpha, table, theta_hat=theta)
    return TestResult(**{**result.to_dict(), "mode": mode})


@dataclass(frozen=True)
class SegmentNode:
    """One node of the segmentation recursion over [start, stop)."""

    start: int
    stop: int
    depth: int
    result: TestResult | None
    change_index: int | None = None  # absolute: first index of the new regime
    too_short: bool = False
    note: str = ""

    @property
    def is_leaf(self) -> bool:
        return self.change_index is None

    def to_dict(self) -> dict:
        return {
            "start": self.start,
            "stop": self.stop,
            "depth": self.depth,
            "result": self.result.to_dict() if self.result else None,
            "change_index": self.change_index,
            "too_short": self.too_short,
            "note": self.note,
        }


@dataclass(frozen=True)
class SegmentationTree:
    """Preorder record of the test-split-recurse procedure."""

    nodes: tuple[SegmentNode, ...]
    n: int

    @property
    def leaves(self) -> tuple[SegmentNode, ...]:
        return tuple(node for node in self.nodes if node.is_leaf)

    @property
    def change_points(self) -> tuple[int, ...]:
        return tuple(
            sorted(n.change_index for n in self.nodes if n.change_index is not None)
        )

    def to_dict(self) -> dict:
        return {"n": self.n, "nodes": [node.to_dict() for node in self.nodes]}


def binary_segmentation(
    curves: CurveSet,
    d: int | None = None,
    alpha: float = 0.05,
    min_segment: int = 5,
    *,
    explained_fraction: float | None = None,
    mode: str = "H",
    table: CriticalValueTable | None = None,
    engine: str = "auto",
) -> SegmentationTree:
    """Locate multiple mean changes by recursive testing.

    Each rejecting segment is split at its estimated change point into
    half-open halves, which are tested in turn until every leaf accepts or
    is shorter than ``min_segment`` (such leaves are kept, annotated
    too-short). Give either a fixed ``d`` or ``explained_fraction`` to pick
    d per segment from the pooled spectrum.
    """
    if (d is None) == (explained_fraction is None):
        raise InvalidArgumentError("give exactly one of d or explained_fraction")
    if min_segment < 5:
        raise InvalidArgumentError("min_segment must be at least 5")
    if table is None:
        table = default_table(d if d is not None else curves.m)

    nodes: list[SegmentNode] = []

    def visit(start: int, stop: int, depth: int) -> None:
        length = stop - start
        if length < min_segment:
            nodes.append(
                SegmentNode(start, stop, depth, None, too_short=True, note="too-short")
            )
            return
        seg = curves.subset(start, stop)
        d_seg = d
        if d_seg is None:
            spectrum = eigendecompose(pooled_kernel(seg), seg.m).eigenvalues
            d_seg = select_d(spectrum, explained_fraction)
        try:
            result = run_test(seg, d_seg, alpha, mode, table=table, engine=engine)
        except DegenerateDataError:
            nodes.append(
                SegmentNode(start, stop, depth, None, note="degenerate")
            )
            return
        if not result.reject:
            nodes.append(SegmentNode(start, stop, depth, result))
            return
        k_hat = int(round(result.theta_hat * length))
        k_hat = min(max(k_hat, 1), length - 1)
        nodes.append(
            SegmentNode(start, stop, depth, result, change_index=start + k_hat)
        )
        visit(start, start + k_hat, depth + 1)
        visit(start + k_hat, stop, depth + 1)

    visit(0, curves.n, 0)
    return SegmentationTree(nodes=tuple(nodes), n=curves.n)
