"""Priors, marginal likelihoods and conditional-mean estimators.

Three routes to the posterior mean of the input are implemented:

* the scalar-channel formula ``(m(y+1) - m(y)) / (alpha m(y)) - (lam-1)/alpha``;
* the gradient form on path space, where ``D_s m`` is obtained by actually
  adding an atom at ``s`` to the observation and re-evaluating ``m``;
* posterior weighting of the prior ensemble, used as the oracle.

Marginals are always sums over a finite ensemble and are handled in log
space.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy.special import logsumexp

from .channels import (
    ChannelParams,
    IntensityPath,
    MixtureObservation,
    SwitchFunction,
    cell_log_likelihood,
    discrete_log_density,
)
from .malliavin import evaluation_points
from .point_process import (
    IntensityMeasure,
    PointConfiguration,
    Seed,
    TimeGrid,
    add_atom,
    make_rng,
)

WEIGHT_TOL = 1e-9


class DegenerateWeightsWarning(UserWarning):
    """Posterior weights concentrate on very few ensemble members."""


def _normalized(weights, n: int) -> np.ndarray:
    w = np.asarray(weights, dtype=float).ravel()
    if w.size != n:
        raise ValueError(f"{w.size} weights for {n} members")
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ValueError("prior weights must be positive")
    if abs(w.sum() - 1.0) > WEIGHT_TOL:
        raise ValueError(f"prior weights sum to {w.sum()!r}, not 1")
    w = w / w.sum()
    w.setflags(write=False)
    return w


@dataclass(frozen=True, eq=False)
class FiniteScalarPrior:
    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        a = np.array(self.atoms, dtype=float).ravel()
        if np.any(a < 0) or not np.all(np.isfinite(a)):
            raise ValueError("prior atoms must be finite and non-negative")
        a.setflags(write=False)
        object.__setattr__(self, "atoms", a)
        object.__setattr__(self, "weights", _normalized(self.weights, a.size))

    @classmethod
    def point(cls, x: float) -> "FiniteScalarPrior":
        return cls([x], [1.0])

    @property
    def mean(self) -> float:
        return float(np.dot(self.weights, self.atoms))


@dataclass(frozen=True, eq=False)
class FinitePathPrior:
    """Weighted ensemble of cell-constant input paths on a common grid."""

    paths: np.ndarray
    weights: np.ndarray
    grid: TimeGrid

    def __post_init__(self):
        p = np.array(np.atleast_2d(np.asarray(self.paths, dtype=float)))
        if p.shape[1] != self.grid.cells:
            raise ValueError(f"paths have {p.shape[1]} cells, grid has {self.grid.cells}")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("prior paths must be finite and non-negative")
        p.setflags(write=False)
        object.__setattr__(self, "paths", p)
        object.__setattr__(self, "weights", _normalized(self.weights, p.shape[0]))

    @classmethod
    def from_members(cls, members: Sequence[IntensityPath], weights=None) -> "FinitePathPrior":
        grid = members[0].grid
        if any(m.grid != grid for m in members):
            raise ValueError("all members must share one grid")
        if weights is None:
            weights = np.full(len(members), 1.0 / len(members))
        return cls(np.stack([m.values for m in members]), weights, grid)

    @classmethod
    def constant(cls, prior: FiniteScalarPrior, grid: TimeGrid) -> "FinitePathPrior":
        """Constant-level paths, one per atom of a scalar prior."""
        return cls(np.repeat(prior.atoms[:, None], grid.cells, axis=1), prior.weights, grid)

    @property
    def size(self) -> int:
        return self.paths.shape[0]

    @property
    def members(self) -> list[IntensityPath]:
        return [IntensityPath(p, self.grid) for p in self.paths]

    @property
    def mean_path(self) -> np.ndarray:
        return self.weights @ self.paths


# ---------------------------------------------------------------------------
# prior samplers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstantLevelSampler:
    """Paths constant in time, level drawn from a scalar prior."""

    levels: FiniteScalarPrior
    grid: TimeGrid

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(self.levels.atoms.size, size=n, p=self.levels.weights)
        return np.repeat(self.levels.atoms[idx][:, None], self.grid.cells, axis=1)

    @property
    def stationary_mean(self) -> float:
        return self.levels.mean


@dataclass(frozen=True)
class MarkovSwitchingSampler:
    """Two-state chain sampled on the grid, started from its stationary law.

    ``rate_up`` is the low-to-high switching rate and ``rate_down`` the
    reverse, both per unit time.
    """

    low: float
    high: float
    rate_up: float
    rate_down: float
    grid: TimeGrid

    def __post_init__(self):
        if self.low < 0 or self.high < 0:
            raise ValueError("levels must be non-negative")
        if self.rate_up <= 0 or self.rate_down <= 0:
            raise ValueError("switching rates must be positive")

    @property
    def p_high(self) -> float:
        return self.rate_up / (self.rate_up + self.rate_down)

    @property
    def stationary_mean(self) -> float:
        return self.low + (self.high - self.low) * self.p_high

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        M, dt = self.grid.cells, self.grid.width
        # exact two-state transition over one cell
        total = self.rate_up + self.rate_down
        decay = np.exp(-total * dt)
        stay_high = self.p_high + (1 - self.p_high) * decay
        go_high = self.p_high * (1 - decay)
        u = rng.random((n, M))
        state = np.empty((n, M), dtype=bool)
        state[:, 0] = u[:, 0] < self.p_high
        for j in range(1, M):
            state[:, j] = u[:, j] < np.where(state[:, j - 1], stay_high, go_high)
        return np.where(state, self.high, self.low)


PathPriorSampler = Union[ConstantLevelSampler, MarkovSwitchingSampler]


def sample_prior_paths(sampler: PathPriorSampler, n: int, seed: Seed) -> FinitePathPrior:
    """Empirical prior of ``n`` equally weighted sampled paths."""
    if n < 1:
        raise ValueError("n must be at least 1")
    paths = sampler.draw(n, make_rng(seed))
    return FinitePathPrior(paths, np.full(n, 1.0 / n), sampler.grid)


# ---------------------------------------------------------------------------
# scalar channel
# ---------------------------------------------------------------------------

def log_marginal_discrete(y, prior: FiniteScalarPrior, lam: float, alpha: float):
    y = np.asarray(y)
    logL = discrete_log_density(y[..., None], prior.atoms, lam, alpha)
    out = logsumexp(logL, b=prior.weights, axis=-1)
    return out if np.ndim(out) else float(out)


def marginal_discrete(y, prior: FiniteScalarPrior, lam: float, alpha: float):
    """``m(y) = sum_i w_i exp(-(lam-1+alpha x_i)) (lam + alpha x_i)^y``."""
    return np.exp(log_marginal_discrete(y, prior, lam, alpha))


def conditional_mean_discrete(y, prior: FiniteScalarPrior, lam: float, alpha: float):
    """``E[X | Y=y] = (m(y+1) - m(y)) / (alpha m(y)) - (lam-1)/alpha``."""
    y = np.asarray(y)
    ratio_m1 = np.expm1(log_marginal_discrete(y + 1, prior, lam, alpha)
                        - log_marginal_discrete(y, prior, lam, alpha))
    out = ratio_m1 / alpha - (lam - 1.0) / alpha
    return out if np.ndim(out) else float(out)


# ---------------------------------------------------------------------------
# path channel
# ---------------------------------------------------------------------------

class Marginal(NamedTuple):
    log_m: float
    posterior: np.ndarray

    @property
    def ess(self) -> float:
        return effective_sample_size(self.posterior)


def effective_sample_size(p) -> float:
    """``1 / sum p_i^2`` for normalized weights."""
    p = np.asarray(p, dtype=float)
    return float(1.0 / np.sum(p * p))


def _posterior(log_prior_plus_lik: np.ndarray) -> Marginal:
    log_m = float(logsumexp(log_prior_plus_lik))
    return Marginal(log_m, np.exp(log_prior_plus_lik - log_m))


def _reference(params: ChannelParams, nu: Optional[IntensityMeasure]) -> IntensityMeasure:
    return IntensityMeasure.unit(params.grid) if nu is None else nu


def _member_log_likelihoods(y: PointConfiguration, prior: FinitePathPrior,
                            params: ChannelParams, nu: IntensityMeasure) -> np.ndarray:
    return cell_log_likelihood(y.cell_counts(params.grid), prior.paths, params, nu.cell_mass)[0]


def marginal_path(y: PointConfiguration, prior: FinitePathPrior, params: ChannelParams,
                  nu: Optional[IntensityMeasure] = None) -> Marginal:
    """``log m(y) = log sum_i w_i L(y, x_i)`` and the posterior weights."""
    nu = _reference(params, nu)
    return _posterior(np.log(prior.weights) + _member_log_likelihoods(y, prior, params, nu))


def conditional_mean_weighting(y: PointConfiguration, prior: FinitePathPrior,
                               params: ChannelParams,
                               nu: Optional[IntensityMeasure] = None) -> np.ndarray:
    """Oracle ``sum_i p_i xdot_i`` per cell with ``p_i = w_i L_i / m``."""
    return marginal_path(y, prior, params, nu).posterior @ prior.paths


@dataclass
class PosteriorReport:
    """Per-cell posterior means from the gradient form and from the oracle.

    ``cumulative_*`` hold ``E[X(0, t_j] | Y]`` at the right cell boundaries.
    ``rel_diff`` is ``abs_diff`` divided by the oracle's magnitude.
    """

    s: np.ndarray
    estimate_gradient: np.ndarray
    estimate_oracle: np.ndarray
    cumulative_gradient: np.ndarray
    cumulative_oracle: np.ndarray
    log_m: float
    ess: float
    true_value: Optional[np.ndarray] = None
    phi: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def abs_diff(self) -> np.ndarray:
        return np.abs(self.estimate_gradient - self.estimate_oracle)

    @property
    def rel_diff(self) -> np.ndarray:
        scale = np.abs(self.estimate_oracle)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(scale > 0, self.abs_diff / scale, self.abs_diff)
        return r

    @property
    def max_abs_discrepancy(self) -> float:
        return float(self.abs_diff.max())

    @property
    def max_rel_discrepancy(self) -> float:
        return float(self.rel_diff.max())

    def rows(self) -> list[dict]:
        out = []
        for j in range(self.s.size):
            row = {"s": self.s[j]}
            if self.phi is not None:
                row["phi"] = int(self.phi[j])
            row.update(estimate_gradient=self.estimate_gradient[j],
                       estimate_oracle=self.estimate_oracle[j],
                       abs_diff=self.abs_diff[j],
                       true_value_if_known="" if self.true_value is None else self.true_value[j])
            out.append(row)
        return out

    def summary(self) -> dict:
        return {"cells": int(self.s.size), "log_m": self.log_m, "ess": self.ess,
                "max_abs_discrepancy": self.max_abs_discrepancy,
                "max_rel_discrepancy": self.max_rel_discrepancy, **self.meta}

    def to_csv(self) -> str:
        buf = io.StringIO()
        rows = self.rows()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def _check_ess(marg: Marginal, n: int) -> None:
    if marg.ess < 0.01 * n:
        warnings.warn(f"effective sample size {marg.ess:.3g} below 1% of {n} members",
                      DegenerateWeightsWarning, stacklevel=3)


def conditional_mean_gradient(y: PointConfiguration, prior: FinitePathPrior,
                              params: ChannelParams, nu: Optional[IntensityMeasure] = None,
                              true_path: Optional[IntensityPath] = None) -> PosteriorReport:
    """Posterior mean of the input density through the discrete gradient of ``m``.

    For each cell, ``D_s m / m = m(y + delta_s) / m(y) - 1`` is computed by
    re-evaluating the marginal on the configuration with an extra atom at the
    cell midpoint, then ``E[xdot_s | Y] = D_s m / (alpha m) - (lam-1)/alpha``.
    The cumulative column integrates ``D_s m`` over ``[0, t]`` against ``nu``.
    """
    nu = _reference(params, nu)
    marg = marginal_path(y, prior, params, nu)
    _check_ess(marg, prior.size)
    dm_over_m = np.array([np.expm1(marginal_path(add_atom(y, s), prior, params, nu).log_m
                                   - marg.log_m)
                          for s in evaluation_points(y, params.grid)])
    return _report(dm_over_m, marg, prior, params, nu.cell_mass, true_path)


def _report(dm_over_m, marg: Marginal, prior: FinitePathPrior, params: ChannelParams,
            mass, true_path, phi=None) -> PosteriorReport:
    lam, alpha = params.lam, params.alpha
    pointwise = dm_over_m / alpha - (lam - 1.0) / alpha
    # nabla_[0,t] m / (alpha m) - (lam-1) nu[0,t] / alpha
    grad_cum = np.cumsum(dm_over_m * mass) / alpha - (lam - 1.0) * np.cumsum(mass) / alpha
    oracle = marg.posterior @ prior.paths
    return PosteriorReport(
        s=params.grid.midpoints, estimate_gradient=pointwise, estimate_oracle=oracle,
        cumulative_gradient=grad_cum, cumulative_oracle=np.cumsum(oracle * mass),
        log_m=marg.log_m, ess=marg.ess,
        true_value=None if true_path is None else true_path.values,
        phi=None if phi is None else np.array(phi.values))


def conditional_mean_mixture(obs: MixtureObservation, prior: FinitePathPrior,
                             params: ChannelParams, phi: SwitchFunction,
                             true_path: Optional[IntensityPath] = None) -> PosteriorReport:
    """Posterior mean for the switched Gaussian-Poisson channel.

    The oracle column weights the ensemble with mixture likelihoods.  The
    gradient column uses ``D_s m / m``: on Poisson cells by adding an atom, on
    Gaussian cells by the Brownian derivative of ``log m`` with respect to the
    cell increment, ``sum_i p_i (lam - 1 + alpha xdot_i(s))``.
    """
    obs.check(phi)
    grid = params.grid
    lam, alpha = params.lam, params.alpha
    mass = np.full(grid.cells, grid.width)
    log_w = np.log(prior.weights)
    g = obs.full_increments(phi)

    def marginal(config: PointConfiguration) -> Marginal:
        logL = cell_log_likelihood(config.cell_counts(grid), prior.paths, params, mass,
                                   phi.values, g)[0]
        return _posterior(log_w + logL)

    marg = marginal(obs.jumps)
    _check_ess(marg, prior.size)
    points = evaluation_points(obs.jumps, grid)
    drift = (lam - 1.0) + alpha * prior.paths
    dm_over_m = np.empty(grid.cells)
    for j in range(grid.cells):
        if phi.values[j] == 1:
            dm_over_m[j] = np.expm1(marginal(add_atom(obs.jumps, points[j])).log_m - marg.log_m)
        else:
            dm_over_m[j] = marg.posterior @ drift[:, j]
    report = _report(dm_over_m, marg, prior, params, mass, true_path, phi)
    if not np.allclose(report.estimate_gradient, report.estimate_oracle, rtol=1e-8, atol=1e-10):
        warnings.warn("gradient form and posterior weighting disagree beyond 1e-8",
                      RuntimeWarning, stacklevel=2)
    return report
