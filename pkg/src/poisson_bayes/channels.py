"""Likelihood ratios and samplers for the Poisson and Gaussian-Poisson channels.

Three channel families are covered:

* the scalar channel ``Y ~ Poisson(lam + alpha * X)`` on the integers, with
  density relative to ``Poisson(1)``;
* the path channel, a Poisson process on ``[0, T]`` with intensity
  ``(lam + alpha * xdot) * nu`` observed against the reference intensity ``nu``;
* the switched mixture, Brownian with drift ``lam - 1 + alpha * xdot`` on cells
  where the switch is 0 and Poisson with intensity ``lam + alpha * xdot`` where
  it is 1.

Every likelihood is returned as a natural log.  With cell-constant inputs the
path likelihood depends on the observation only through its per-cell counts,
which is what the batch kernel :func:`cell_log_likelihood` exploits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import special, stats

from .point_process import (
    IntensityMeasure,
    PointConfiguration,
    Seed,
    TimeGrid,
    make_rng,
    poisson_counts,
    replicate_uniforms,
    sample_poisson,
)


class ConsistencyError(ValueError):
    """Observation does not fit the switch function it is paired with."""


@dataclass(frozen=True)
class ChannelParams:
    """Dark current ``lam``, scale ``alpha`` and the time grid."""

    lam: float
    alpha: float
    grid: TimeGrid

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam!r}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha!r}")

    def replace(self, **changes) -> "ChannelParams":
        fields = {"lam": self.lam, "alpha": self.alpha, "grid": self.grid}
        fields.update(changes)
        return ChannelParams(**fields)


@dataclass(frozen=True, eq=False)
class IntensityPath:
    """Non-negative cell-constant input density ``xdot``."""

    values: np.ndarray
    grid: TimeGrid

    def __post_init__(self):
        v = np.array(np.broadcast_to(np.asarray(self.values, dtype=float), (self.grid.cells,)))
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("intensity path values must be finite and non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __call__(self, t) -> np.ndarray:
        return self.values[self.grid.cell_of(t)]

    def cumulative(self) -> np.ndarray:
        """``X_t`` at the grid boundaries, starting from ``X_0 = 0``."""
        return np.concatenate([[0.0], np.cumsum(self.values * self.grid.width)])


@dataclass(frozen=True, eq=False)
class SwitchFunction:
    """Deterministic 0/1 switch per cell: 0 is Gaussian, 1 is Poisson."""

    values: np.ndarray
    grid: TimeGrid

    def __post_init__(self):
        v = np.array(np.broadcast_to(np.asarray(self.values), (self.grid.cells,)))
        if not np.all((v == 0) | (v == 1)):
            raise ValueError("switch values must be 0 or 1")
        v = v.astype(np.int8)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, value: int, grid: TimeGrid) -> "SwitchFunction":
        return cls(np.full(grid.cells, value), grid)

    @classmethod
    def from_mask(cls, mask: str, grid: TimeGrid) -> "SwitchFunction":
        """Parse a bit string such as ``"0011"``."""
        if len(mask) != grid.cells or set(mask) - {"0", "1"}:
            raise ValueError(f"mask must be {grid.cells} characters of 0/1")
        return cls([int(c) for c in mask], grid)

    @classmethod
    def from_runs(cls, runs: Sequence[tuple[int, int]], grid: TimeGrid) -> "SwitchFunction":
        """Build from ``(length, value)`` runs whose lengths sum to the cell count."""
        values = np.concatenate([np.full(int(n), v) for n, v in runs]) if runs else np.empty(0)
        if values.size != grid.cells:
            raise ValueError(f"runs cover {values.size} cells, grid has {grid.cells}")
        return cls(values, grid)

    @property
    def poisson(self) -> np.ndarray:
        return self.values == 1

    @property
    def gaussian(self) -> np.ndarray:
        return self.values == 0


@dataclass(frozen=True, eq=False)
class MixtureObservation:
    """Jumps on the Poisson cells plus one Brownian increment per Gaussian cell.

    ``increments`` is ordered like the Gaussian cells of the switch function.
    """

    jumps: PointConfiguration
    increments: np.ndarray

    def __post_init__(self):
        g = np.array(self.increments, dtype=float).ravel()
        g.setflags(write=False)
        object.__setattr__(self, "increments", g)

    def check(self, phi: SwitchFunction) -> None:
        grid = phi.grid
        if self.jumps.count and np.any(phi.values[grid.cell_of(self.jumps.times)] != 1):
            raise ConsistencyError("jump recorded in a cell where the switch is 0")
        if self.increments.size != int(np.sum(phi.gaussian)):
            raise ConsistencyError(
                f"{self.increments.size} Gaussian increments for "
                f"{int(np.sum(phi.gaussian))} Gaussian cells")

    def full_increments(self, phi: SwitchFunction) -> np.ndarray:
        g = np.zeros(phi.grid.cells)
        g[phi.gaussian] = self.increments
        return g


# ---------------------------------------------------------------------------
# scalar channel
# ---------------------------------------------------------------------------

def discrete_log_density(y, x, lam: float, alpha: float):
    """``log dP(Y=y | X=x) / dPoisson(1)(y) = -(lam - 1 + alpha x) + y log(lam + alpha x)``."""
    y = np.asarray(y, dtype=float)
    rate = lam + alpha * np.asarray(x, dtype=float)
    out = -(lam - 1.0 + alpha * np.asarray(x, dtype=float)) + special.xlogy(y, rate)
    return out if out.ndim else float(out)


def discrete_sample(x, lam: float, alpha: float, seed: Seed, size=None):
    return make_rng(seed).poisson(lam + alpha * np.asarray(x, dtype=float), size=size)


def truncation_point(rate: float, tail: float = 1e-14) -> int:
    """Smallest ``y`` with ``P(Poisson(rate) > y) < tail``."""
    y = int(stats.poisson.isf(tail, rate))
    while stats.poisson.sf(y, rate) >= tail:
        y += 1
    while y > 0 and stats.poisson.sf(y - 1, rate) < tail:
        y -= 1
    return y


# ---------------------------------------------------------------------------
# path and mixture channels
# ---------------------------------------------------------------------------

def _reference(params: ChannelParams, nu: Optional[IntensityMeasure]) -> IntensityMeasure:
    return IntensityMeasure.unit(params.grid) if nu is None else nu


def cell_log_likelihood(counts, paths, params: ChannelParams, cell_mass,
                        poisson_mask=None, increments=None) -> np.ndarray:
    """Batch log-likelihood from sufficient statistics.

    Parameters
    ----------
    counts : (R, M) array
        Atoms per cell for each of ``R`` observations.
    paths : (K, M) array
        Cell values of ``K`` candidate inputs.
    cell_mass : (M,) array
        Reference intensity of each cell.
    poisson_mask, increments : optional
        Switch (1 = Poisson) and (R, M) Brownian increments for the mixture
        channel; Gaussian-cell entries of ``counts`` are ignored.

    Returns
    -------
    (R, K) array of ``log L(y_r, x_k)``.
    """
    paths = np.atleast_2d(np.asarray(paths, dtype=float))
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    mass = np.asarray(cell_mass, dtype=float)
    pm = np.ones(paths.shape[1]) if poisson_mask is None else np.asarray(poisson_mask, dtype=float)
    drift = (params.lam - 1.0) + params.alpha * paths
    log_rate = np.log(params.lam + params.alpha * paths)
    out = (counts * pm) @ log_rate.T - (drift * pm) @ mass
    gm = 1.0 - pm
    if increments is not None and np.any(gm):
        g = np.atleast_2d(np.asarray(increments, dtype=float))
        out = out + (g * gm) @ drift.T - 0.5 * ((drift * drift) * gm) @ mass
    return out


def log_likelihood_path(y: PointConfiguration, xdot: IntensityPath, params: ChannelParams,
                        nu: Optional[IntensityMeasure] = None) -> float:
    """``-(lam-1) nu(S) - alpha int xdot dnu + sum_k log(lam + alpha xdot(z_k))``."""
    nu = _reference(params, nu)
    counts = y.cell_counts(params.grid)
    return float(cell_log_likelihood(counts, xdot.values, params, nu.cell_mass)[0, 0])


def path_sample(xdot: IntensityPath, params: ChannelParams, seed: Seed,
                nu: Optional[IntensityMeasure] = None) -> PointConfiguration:
    """Output of the path channel: Poisson with intensity ``(lam + alpha xdot) nu``."""
    nu = _reference(params, nu)
    return sample_poisson(IntensityMeasure((params.lam + params.alpha * xdot.values) * nu.density,
                                           params.grid), seed)


def log_likelihood_mixture(obs: MixtureObservation, xdot: IntensityPath, params: ChannelParams,
                           phi: SwitchFunction) -> float:
    """Gaussian-segment Girsanov density times Poisson-segment density.

    On Gaussian cells ``sum (c_j g_j - c_j^2 width / 2)`` with
    ``c = lam - 1 + alpha xdot``; on Poisson cells the path-channel formula.
    """
    obs.check(phi)
    grid = params.grid
    counts = obs.jumps.cell_counts(grid)
    mass = np.full(grid.cells, grid.width)
    return float(cell_log_likelihood(counts, xdot.values, params, mass, phi.values,
                                     obs.full_increments(phi))[0, 0])


def mixture_sample(xdot: IntensityPath, params: ChannelParams, phi: SwitchFunction,
                   seed: Seed) -> MixtureObservation:
    grid = params.grid
    rng = make_rng(seed)
    rate = np.where(phi.poisson, params.lam + params.alpha * xdot.values, 0.0)
    jumps = sample_poisson(IntensityMeasure(rate, grid), rng)
    drift = params.lam - 1.0 + params.alpha * xdot.values[phi.gaussian]
    g = drift * grid.width + np.sqrt(grid.width) * rng.standard_normal(drift.size)
    return MixtureObservation(jumps, g)


def dlogL_dalpha(y: PointConfiguration, xdot: IntensityPath, params: ChannelParams,
                 nu: Optional[IntensityMeasure] = None) -> float:
    nu = _reference(params, nu)
    x = xdot.values
    n = y.cell_counts(params.grid)
    return float(-nu.integrate(x) + np.dot(n, x / (params.lam + params.alpha * x)))


def dlogL_dlambda(y: PointConfiguration, xdot: IntensityPath, params: ChannelParams,
                  nu: Optional[IntensityMeasure] = None) -> float:
    nu = _reference(params, nu)
    n = y.cell_counts(params.grid)
    return float(-nu.total_mass + np.dot(n, 1.0 / (params.lam + params.alpha * xdot.values)))


# ---------------------------------------------------------------------------
# batch simulation for Monte-Carlo engines
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CellSample:
    """Sufficient statistics of ``n`` simulated observations.

    ``member`` is the index of the prior member that generated each row, or
    ``None`` for draws from the reference law.
    """

    member: Optional[np.ndarray]
    counts: np.ndarray
    increments: np.ndarray


JOINT_STREAM = 1
REFERENCE_STREAM = 2


def simulate_cells(paths, weights, params: ChannelParams, cell_mass, n: int, seed: int,
                   poisson_mask=None, reference: bool = False,
                   stream: Optional[int] = None) -> CellSample:
    """Draw ``n`` observations from the joint law, or from the reference law.

    Each replicate consumes one row of ``1 + 2M`` uniforms from its own stream:
    the member pick, one inverse-CDF uniform per cell for the count and one per
    cell for the Brownian increment.  The layout is fixed, so the pure Poisson
    and the switched channel, and draws at perturbed parameters, share
    randomness replicate by replicate.
    """
    paths = np.atleast_2d(np.asarray(paths, dtype=float))
    M = params.grid.cells
    if stream is None:
        stream = REFERENCE_STREAM if reference else JOINT_STREAM
    u = replicate_uniforms(seed, stream, n, 1 + 2 * M)
    pm = np.ones(M, dtype=bool) if poisson_mask is None else np.asarray(poisson_mask) == 1
    width = params.grid.width
    normals = special.ndtri(u[:, 1 + M:])
    if reference:
        member = None
        mean = np.broadcast_to(cell_mass, (n, M))
        increments = np.sqrt(width) * normals
    else:
        cdf = np.cumsum(weights)
        member = np.minimum(np.searchsorted(cdf / cdf[-1], u[:, 0], side="right"), len(cdf) - 1)
        x = paths[member]
        mean = (params.lam + params.alpha * x) * cell_mass
        increments = (params.lam - 1.0 + params.alpha * x) * width + np.sqrt(width) * normals
    counts = np.where(pm, poisson_counts(u[:, 1:1 + M], mean), 0)
    increments = np.where(pm, 0.0, increments)
    return CellSample(member, counts, increments)


GIRSANOV_STREAM = 3


def girsanov_normalization(xdot: IntensityPath, params: ChannelParams, n: int, seed: int,
                           nu: Optional[IntensityMeasure] = None) -> tuple[float, float]:
    """Monte-Carlo ``E_0[L(Y, x)]`` under the reference law, with its standard error.

    The exact value is 1 for every input path.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    nu = _reference(params, nu)
    u = replicate_uniforms(seed, GIRSANOV_STREAM, n, params.grid.cells)
    counts = poisson_counts(u, nu.cell_mass)
    L = np.exp(cell_log_likelihood(counts, xdot.values, params, nu.cell_mass)[:, 0])
    return float(L.mean()), float(L.std(ddof=1) / np.sqrt(n))
