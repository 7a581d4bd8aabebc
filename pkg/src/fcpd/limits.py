"""Limit-law Monte Carlo: Brownian paths, critical values, p-values.

Under no change the integrated CUSUM statistic converges to the integral of
a sum of d squared independent Brownian bridges. Quantiles of that law are
simulated once, retained as a sample for p-values, and optionally cached on
disk (directory from the FCPD_CACHE_DIR environment variable).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .curves import QuadratureGrid, make_grid
from .errors import InvalidArgumentError, TableMissError

__all__ = [
    "CriticalValueTable",
    "simulate_bm",
    "simulate_bb",
    "bm_sample",
    "bb_sample",
    "limit_quantiles",
    "p_value",
    "default_table",
    "cache_dir",
]

DEFAULT_ALPHAS = (0.10, 0.05, 0.01)
DEFAULT_TABLE_REPS = 100_000
DEFAULT_PVALUE_REPS = 10_000
DEFAULT_BRIDGE_GRID = 1000
DEFAULT_TABLE_SEED = 402
_BATCH = 512

_MEMO: dict[tuple, "CriticalValueTable"] = {}


def _increment_scales(grid: QuadratureGrid) -> np.ndarray:
    pts = grid.points
    var = np.empty(pts.size)
    var[0] = pts[0]
    var[1:] = np.diff(pts)
    return np.sqrt(var)


def bm_sample(grid: QuadratureGrid, size: int, rng: np.random.Generator) -> np.ndarray:
    """``size`` standard Brownian motion paths on the grid (size x M)."""
    steps = rng.standard_normal((size, grid.m)) * _increment_scales(grid)
    return np.cumsum(steps, axis=1)


def bb_sample(grid: QuadratureGrid, size: int, rng: np.random.Generator) -> np.ndarray:
    """``size`` standard Brownian bridge paths on the grid (size x M)."""
    w = bm_sample(grid, size, rng)
    end = grid.points[-1]
    if end == 1.0:
        w1 = w[:, -1]
    else:
        w1 = w[:, -1] + rng.standard_normal(size) * np.sqrt(1.0 - end)
    return w - grid.points * w1[:, None]


def simulate_bm(grid: QuadratureGrid, rng: np.random.Generator) -> np.ndarray:
    """One standard Brownian motion path; zero at t = 0 when 0 is on the grid."""
    return bm_sample(grid, 1, rng)[0]


def simulate_bb(grid: QuadratureGrid, rng: np.random.Generator) -> np.ndarray:
    """One standard Brownian bridge path; pinned to zero at on-grid endpoints."""
    return bb_sample(grid, 1, rng)[0]


@dataclass(frozen=True, eq=False)
class CriticalValueTable:
    """Quantiles of the integrated squared-bridge limit law.

    ``entries`` maps (d, alpha) to the critical value. ``limit_samples``
    retains the Monte Carlo draws per d so p-values can be computed; a
    user-supplied table may omit them.
    """

    entries: dict[tuple[int, float], float]
    provenance: dict = field(default_factory=dict)
    limit_samples: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        dims = sorted({d for d, _ in self.entries})
        alphas = sorted({a for _, a in self.entries})
        for alpha in alphas:
            kd = [self.entries[(d, alpha)] for d in dims if (d, alpha) in self.entries]
            if any(b <= a for a, b in zip(kd, kd[1:])):
                raise InvalidArgumentError(
                    "critical values must increase strictly with d"
                )
        for d in dims:
            ka = [self.entries[(d, a)] for a in alphas if (d, a) in self.entries]
            if any(b >= a for a, b in zip(ka, ka[1:])):
                raise InvalidArgumentError(
                    "critical values must decrease strictly as alpha grows"
                )

    def critical_value(self, d: int, alpha: float) -> float:
        try:
            return self.entries[(d, alpha)]
        except KeyError:
            raise TableMissError(
                f"no critical value for d={d}, alpha={alpha}; "
                "simulate a table covering this pair"
            ) from None

    def has_sample(self, d: int) -> bool:
        return d in self.limit_samples

    def p_value(self, statistic: float, d: int) -> float:
        return p_value(statistic, self, d)


def limit_quantiles(
    d: int,
    alphas: tuple[float, ...] = DEFAULT_ALPHAS,
    reps: int = DEFAULT_TABLE_REPS,
    bridge_grid: int = DEFAULT_BRIDGE_GRID,
    seed: int = DEFAULT_TABLE_SEED,
) -> CriticalValueTable:
    """Simulate the limit law for every dimension up to d.

    Each replication integrates the running sum of d squared independent
    bridges by the trapezoid rule, yielding coupled samples for all
    dimensions 1..d in one pass (so quantiles are strictly increasing in d
    by construction). The samples are retained on the table.
    """
    if d < 1 or reps < 1:
        raise InvalidArgumentError("need d >= 1 and reps >= 1")
    grid = make_grid(bridge_grid, "trapezoid")
    rng = np.random.default_rng(seed)
    draws = np.empty((reps, d))
    done = 0
    while done < reps:
        b = min(_BATCH, reps - done)
        steps = rng.standard_normal((b, d, grid.m)) * _increment_scales(grid)
        w = np.cumsum(steps, axis=2)
        bridges = w - grid.points * w[:, :, -1:]
        integrals = (bridges**2) @ grid.weights
        draws[done : done + b] = np.cumsum(integrals, axis=1)
        done += b
    entries = {}
    samples = {}
    for dim in range(1, d + 1):
        sample = draws[:, dim - 1].copy()
        samples[dim] = sample
        for alpha in alphas:
            entries[(dim, alpha)] = float(np.quantile(sample, 1.0 - alpha))
    provenance = {
        "kind": "simulated",
        "reps": reps,
        "bridge_grid": bridge_grid,
        "seed": seed,
    }
    return CriticalValueTable(
        entries=entries, provenance=provenance, limit_samples=samples
    )


def p_value(statistic: float, table: CriticalValueTable, d: int) -> float:
    """Add-one Monte Carlo p-value against the retained limit sample."""
    if not table.has_sample(d):
        raise TableMissError(f"table retains no limit sample for d={d}")
    sample = table.limit_samples[d]
    return float(1 + np.count_nonzero(sample >= statistic)) / (sample.size + 1)


def cache_dir() -> Path | None:
    """Directory for on-disk table caching, if configured."""
    value = os.environ.get("FCPD_CACHE_DIR")
    return Path(value) if value else None


def save_table(table: CriticalValueTable, path: Path) -> None:
    """Persist a simulated table with its samples (npz)."""
    sample_keys = sorted(table.limit_samples)
    np.savez_compressed(
        path,
        dims=np.array(sample_keys),
        samples=np.stack([table.limit_samples[d] for d in sample_keys]),
        reps=table.provenance.get("reps", 0),
        bridge_grid=table.provenance.get("bridge_grid", 0),
        seed=table.provenance.get("seed", 0),
        alphas=np.array(sorted({a for _, a in table.entries})),
    )


def load_table(path: Path) -> CriticalValueTable:
    """Rebuild a table from a cached npz file."""
    data = np.load(path)
    entries = {}
    samples = {}
    alphas = tuple(data["alphas"])
    for i, dim in enumerate(data["dims"]):
        dim = int(dim)
        samples[dim] = data["samples"][i]
        for alpha in alphas:
            entries[(dim, float(alpha))] = float(
                np.quantile(samples[dim], 1.0 - alpha)
            )
    provenance = {
        "kind": "simulated",
        "reps": int(data["reps"]),
        "bridge_grid": int(data["bridge_grid"]),
        "seed": int(data["seed"]),
        "cache": str(path),
    }
    return CriticalValueTable(entries=entries, provenance=provenance, limit_samples=samples)


def default_table(
    d: int,
    alphas: tuple[float, ...] = DEFAULT_ALPHAS,
    reps: int = DEFAULT_TABLE_REPS,
    bridge_grid: int = DEFAULT_BRIDGE_GRID,
    seed: int = DEFAULT_TABLE_SEED,
) -> CriticalValueTable:
    """Memoized (and disk-cached, when configured) simulated table up to d."""
    key = (d, tuple(alphas), reps, bridge_grid, seed)
    if key in _MEMO:
        return _MEMO[key]
    directory = cache_dir()
    path = None
    if directory is not None:
        directory.mkdir(parents=True, exist_ok=True)
        name = f"limits_d{d}_reps{reps}_grid{bridge_grid}_seed{seed}.npz"
        path = directory / name
        if path.exists():
            table = load_table(path)
            _MEMO[key] = table
            return table
    table = limit_quantiles(d, alphas, reps, bridge_grid, seed)
    if path is not None:
        save_table(table, path)
    _MEMO[key] = table
    return table
