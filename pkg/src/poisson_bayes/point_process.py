"""Poisson point processes on a uniform time grid.

Configurations are finite counting measures on ``[0, T]``.  Intensities are
piecewise constant on a :class:`TimeGrid`, so every integral of a
piecewise-constant integrand against the intensity is a finite sum and carries
no quadrature error.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np
from scipy import stats

Seed = Union[int, np.random.Generator]

# smallest uniform handed to inverse CDFs; avoids ppf(0) == -1 and ndtri(0) == -inf
_U_FLOOR = 2.0 ** -60


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Uniform partition of ``[0, horizon]`` into ``cells`` intervals."""

    horizon: float
    cells: int

    def __post_init__(self):
        if not (self.horizon > 0 and np.isfinite(self.horizon)):
            raise ValueError(f"horizon must be positive and finite, got {self.horizon!r}")
        if int(self.cells) != self.cells or self.cells < 1:
            raise ValueError(f"cells must be a positive integer, got {self.cells!r}")
        object.__setattr__(self, "cells", int(self.cells))
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def width(self) -> float:
        return self.horizon / self.cells

    @property
    def boundaries(self) -> np.ndarray:
        b = np.linspace(0.0, self.horizon, self.cells + 1)
        b[-1] = self.horizon
        return b

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.cells) + 0.5) * self.width

    def cell_of(self, t) -> np.ndarray:
        """Index of the cell containing ``t``; the right end ``T`` maps to the last cell."""
        idx = np.floor(np.asarray(t, dtype=float) / self.width).astype(np.int64)
        return np.clip(idx, 0, self.cells - 1)

    def __eq__(self, other):
        return (isinstance(other, TimeGrid) and self.cells == other.cells
                and self.horizon == other.horizon)

    def __hash__(self):
        return hash((self.horizon, self.cells))


@dataclass(frozen=True, eq=False)
class PointConfiguration:
    """Finite counting measure ``sum_k delta_{z_k}`` on ``[0, horizon]``.

    Duplicate atoms are allowed (multiset semantics); the samplers never
    produce them.
    """

    times: np.ndarray
    horizon: float

    def __post_init__(self):
        t = np.sort(np.asarray(self.times, dtype=float).ravel())
        if t.size and (t[0] < 0.0 or t[-1] > self.horizon):
            raise ValueError("atoms must lie in [0, horizon]")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "horizon", float(self.horizon))

    @classmethod
    def empty(cls, horizon: float) -> "PointConfiguration":
        return cls(np.empty(0), horizon)

    @property
    def count(self) -> int:
        return int(self.times.size)

    def __len__(self):
        return self.count

    def __eq__(self, other):
        return (isinstance(other, PointConfiguration) and self.horizon == other.horizon
                and np.array_equal(self.times, other.times))

    def __hash__(self):
        return hash((self.horizon, self.times.tobytes()))

    def cell_counts(self, grid: TimeGrid) -> np.ndarray:
        return np.bincount(grid.cell_of(self.times), minlength=grid.cells)

    def contains(self, z: float) -> bool:
        i = np.searchsorted(self.times, z)
        return bool(i < self.times.size and self.times[i] == z)


@dataclass(frozen=True, eq=False)
class IntensityMeasure:
    """Atomless intensity ``nu(ds) = density(s) ds`` with cell-constant density."""

    density: np.ndarray
    grid: TimeGrid

    def __post_init__(self):
        d = np.broadcast_to(np.asarray(self.density, dtype=float), (self.grid.cells,))
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            raise ValueError("intensity density must be finite and non-negative")
        object.__setattr__(self, "density", _frozen(d))

    @classmethod
    def unit(cls, grid: TimeGrid) -> "IntensityMeasure":
        return cls(np.ones(grid.cells), grid)

    @property
    def cell_mass(self) -> np.ndarray:
        """``nu`` of each cell, ``density_j * width``."""
        return self.density * self.grid.width

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.cell_mass))

    def integrate(self, h) -> float:
        """Exact ``int h dnu`` for a cell-constant ``h``."""
        return float(np.dot(np.broadcast_to(h, (self.grid.cells,)), self.cell_mass))


# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------

def make_rng(seed: Seed, *key: int) -> np.random.Generator:
    """Generator for stream ``key`` under a 64-bit ``seed``.

    A Generator passed as ``seed`` is returned unchanged.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(key)))


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("TOOL_THREADS", "1")))
    except ValueError:
        return 1


@lru_cache(maxsize=16)
def _replicate_block(seed: int, tag: int, n: int, width: int, workers: int) -> np.ndarray:
    out = np.empty((n, width))

    def fill(lo, hi):
        for i in range(lo, hi):
            out[i] = make_rng(seed, tag, i).random(width)

    if workers == 1 or n < 4 * workers:
        fill(0, n)
    else:
        edges = np.linspace(0, n, workers + 1).astype(int)
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(fill, edges[:-1], edges[1:]))
    np.maximum(out, _U_FLOOR, out=out)
    out.setflags(write=False)
    return out


def replicate_uniforms(seed: int, tag: int, n: int, width: int) -> np.ndarray:
    """Uniforms of shape ``(n, width)``; row ``i`` comes from stream ``(seed, tag, i)``.

    Rows are independent of ``n`` and of the worker count (``TOOL_THREADS``),
    so the same replicate sees the same numbers in every experiment that uses
    the same seed and tag.  The result is read-only and cached.
    """
    if n < 1 or width < 1:
        raise ValueError("n and width must be positive")
    return _replicate_block(int(seed), int(tag), int(n), int(width), _worker_count())


def poisson_counts(u, mean) -> np.ndarray:
    """Inverse-CDF Poisson draws; monotone in ``mean`` for fixed ``u``."""
    u = np.maximum(np.asarray(u, dtype=float), _U_FLOOR)
    return stats.poisson.ppf(u, mean).astype(np.int64)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def sample_poisson(intensity: IntensityMeasure, seed: Seed) -> PointConfiguration:
    """Draw a Poisson configuration cell by cell.

    Per cell the count is Poisson with mean ``density_j * width`` (inverse CDF
    of one uniform per cell, so draws at nearby intensities share randomness),
    and the atoms are placed uniformly inside the cell.
    """
    grid = intensity.grid
    rng = make_rng(seed)
    counts = poisson_counts(rng.random(grid.cells), intensity.cell_mass)
    cells = np.repeat(np.arange(grid.cells), counts)
    times = (cells + rng.random(cells.size)) * grid.width
    return PointConfiguration(np.minimum(times, grid.horizon), grid.horizon)


def _grid_values(h, grid: TimeGrid) -> np.ndarray:
    return np.broadcast_to(np.asarray(h, dtype=float), (grid.cells,))


def stieltjes_integral(h, y: PointConfiguration, grid: TimeGrid) -> float:
    """``int h dy = sum_k h(z_k)`` for a cell-constant ``h`` (or a callable)."""
    if callable(h):
        return float(np.sum(h(y.times))) if y.count else 0.0
    return float(np.sum(_grid_values(h, grid)[grid.cell_of(y.times)]))


def compensated_integral(h, y: PointConfiguration, intensity: IntensityMeasure) -> float:
    """``I_1(h) = int h (dy - dnu)``, compensator summed exactly per cell."""
    grid = intensity.grid
    return stieltjes_integral(h, y, grid) - intensity.integrate(_grid_values(h, grid))


def add_atom(y: PointConfiguration, z: float) -> PointConfiguration:
    """Return ``y + delta_z``; ``y`` itself is untouched."""
    if not (0.0 <= z <= y.horizon):
        raise ValueError(f"atom {z!r} outside [0, {y.horizon}]")
    return PointConfiguration(np.insert(y.times, np.searchsorted(y.times, z), z), y.horizon)


def remove_atom(y: PointConfiguration, z: float) -> PointConfiguration:
    """Return ``y - delta_z``; raises if ``z`` is not an atom of ``y``."""
    i = np.searchsorted(y.times, z)
    if i >= y.count or y.times[i] != z:
        raise ValueError(f"{z!r} is not an atom of the configuration")
    return PointConfiguration(np.delete(y.times, i), y.horizon)
