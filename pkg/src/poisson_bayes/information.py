"""Mutual information, De Bruijn identities and MI derivatives.

All path-space estimates run on batches of sufficient statistics drawn by
:func:`poisson_bayes.channels.simulate_cells`.  The marginal ``m`` is exact
over the finite prior, so Monte-Carlo error only enters through the outer
average over observations.

Conditional quantities inside ``psi_lambda`` and ``log`` are the posterior
mean of the total intensity, ``lam + alpha * E[xdot_s | Y]``.

Finite differences are taken with common random numbers.  Two estimators of
``E_1[log m]`` and of the mutual information are available:

``"joint"``
    average over draws ``(x, y)`` from the joint law;
``"reference"``
    reweighted draws from the reference law, ``E_0[m log m]`` and
    ``E_0[sum_i w_i L_i (log L_i - log m)]``.  The draws do not move with the
    channel parameters, so the per-replicate difference quotient is smooth.
``"importance"``
    draws from the joint law at the base parameters, reweighted by the exact
    ratio ``m_theta(y) / m_theta0(y)`` when the parameters move.  Smooth like
    ``"reference"`` but sampled where the marginal puts its mass, which gives
    the smallest finite-difference variance of the three.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Callable, Literal, Optional

import numpy as np
from scipy.special import logsumexp

from .bayes import FinitePathPrior, FiniteScalarPrior
from .channels import (
    CellSample,
    ChannelParams,
    SwitchFunction,
    cell_log_likelihood,
    simulate_cells,
    truncation_point,
)
from .point_process import IntensityMeasure

Scheme = Literal["joint", "reference", "importance"]

# joint draws behind the importance-weighted finite differences; kept apart
# from the stream the formula side uses so the two estimates are independent
IMPORTANCE_STREAM = 4
Param = Literal["alpha", "lambda"]


def psi_lambda(x, lam: float):
    """``(x - lam) log x`` for ``x > 0``."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("psi_lambda is defined for x > 0 only")
    out = (x - lam) * np.log(x)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class Estimate:
    """Monte-Carlo mean with its standard error."""

    value: float
    stderr: float
    n: int

    def __float__(self):
        return self.value


def _estimate(samples: np.ndarray) -> Estimate:
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    se = float(samples.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return Estimate(float(samples.mean()), se, n)


@dataclass(frozen=True)
class MIEstimate:
    value: float
    stderr: float
    n_outer: int
    mean_log_likelihood: float
    mean_log_marginal: float
    scheme: str = "joint"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


@dataclass(frozen=True)
class DerivativeReport:
    """Formula value of a parameter derivative against its finite difference.

    ``passed`` is ``abs(formula - fd) <= tolerance`` where the tolerance is
    ``max(atol, 4 * sqrt(stderr_formula**2 + stderr_fd**2))``.
    ``richardson`` extrapolates the finite difference from steps ``h`` and
    ``h/2``.
    """

    param: str
    formula: float
    fd: float
    h: float
    stderr_formula: float
    stderr_fd: float
    tolerance: float
    passed: bool
    richardson: float
    value: str = "dI"

    @property
    def combined_stderr(self) -> float:
        return float(np.hypot(self.stderr_formula, self.stderr_fd))

    def row(self) -> dict:
        return {"param": self.param, "value": self.value, "formula": self.formula, "fd": self.fd,
                "stderr_formula": self.stderr_formula, "stderr_fd": self.stderr_fd,
                "h": self.h, "pass": self.passed}

    def to_json(self) -> str:
        return json.dumps({**asdict(self), "combined_stderr": self.combined_stderr},
                          indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# channel layout shared by the pure Poisson and the switched channel
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Layout:
    poisson_mask: np.ndarray   # float 0/1 per cell
    mass: np.ndarray           # reference intensity per cell
    width: float

    @property
    def gauss_mask(self) -> np.ndarray:
        return 1.0 - self.poisson_mask

    @property
    def has_gaussian(self) -> bool:
        return bool(np.any(self.poisson_mask == 0))


def _poisson_layout(params: ChannelParams, nu: Optional[IntensityMeasure]) -> _Layout:
    nu = IntensityMeasure.unit(params.grid) if nu is None else nu
    return _Layout(np.ones(params.grid.cells), nu.cell_mass, params.grid.width)


def _mixture_layout(params: ChannelParams, phi: SwitchFunction) -> _Layout:
    grid = params.grid
    return _Layout(phi.values.astype(float), np.full(grid.cells, 1.0) * grid.width, grid.width)


def as_path_prior(prior, grid) -> FinitePathPrior:
    if isinstance(prior, FiniteScalarPrior):
        return FinitePathPrior.constant(prior, grid)
    return prior


def _simulate(prior: FinitePathPrior, params: ChannelParams, lay: _Layout, n: int, seed: int,
              reference: bool, stream: Optional[int] = None) -> CellSample:
    return simulate_cells(prior.paths, prior.weights, params, lay.mass, n, seed,
                          poisson_mask=lay.poisson_mask, reference=reference, stream=stream)


def _log_likelihoods(sample: CellSample, prior: FinitePathPrior, params: ChannelParams,
                     lay: _Layout) -> np.ndarray:
    return cell_log_likelihood(sample.counts, prior.paths, params, lay.mass, lay.poisson_mask,
                               sample.increments if lay.has_gaussian else None)


def _posterior(logL: np.ndarray, weights: np.ndarray):
    a = logL + np.log(weights)
    log_m = logsumexp(a, axis=1)
    return log_m, np.exp(a - log_m[:, None])


# ---------------------------------------------------------------------------
# mutual information
# ---------------------------------------------------------------------------

def _mi_samples(prior, params, lay, n_outer, seed, scheme: Scheme, sample=None, base_log_m=None):
    """Per-replicate contributions to ``(I, E[log L], E_1[log m])``.

    For ``"importance"`` the joint ``sample`` was drawn at other parameters
    whose log marginal is ``base_log_m``.
    """
    ref = scheme == "reference"
    if sample is None:
        sample = _simulate(prior, params, lay, n_outer, seed, ref)
    logL = _log_likelihoods(sample, prior, params, lay)
    log_m, post = _posterior(logL, prior.weights)
    if scheme == "importance" and base_log_m is not None:
        r = np.exp(log_m - base_log_m)
        a = np.sum(post * logL, axis=1)
        return r * (a - log_m), r * a, r * log_m
    if not ref:
        own = logL[np.arange(logL.shape[0]), sample.member]
        return own - log_m, own, log_m
    # E_0[sum_i w_i L_i (log L_i - log m)], E_0[sum_i w_i L_i log L_i], E_0[m log m]
    m = np.exp(log_m)
    wL = post * m[:, None]
    a = np.sum(wL * logL, axis=1)
    b = m * log_m
    return np.sum(wL * (logL - log_m[:, None]), axis=1), a, b


def _mi(prior, params, lay, n_outer, seed, scheme) -> MIEstimate:
    if n_outer < 2:
        raise ValueError("n_outer must be at least 2")
    if scheme not in ("joint", "reference", "importance"):
        raise ValueError(f"unknown scheme {scheme!r}")
    i_s, a_s, b_s = _mi_samples(prior, params, lay, n_outer, seed, scheme)
    est = _estimate(i_s)
    return MIEstimate(est.value, est.stderr, n_outer, float(a_s.mean()), float(b_s.mean()), scheme)


def mutual_information_poisson(prior, params: ChannelParams, nu: Optional[IntensityMeasure] = None,
                               n_outer: int = 20000, seed: int = 0,
                               scheme: Scheme = "joint") -> MIEstimate:
    """``I(X;Y) = E[log L(Y, X)] - E_1[log m(Y)]`` for the path channel."""
    prior = as_path_prior(prior, params.grid)
    return _mi(prior, params, _poisson_layout(params, nu), n_outer, seed, scheme)


def mutual_information_mixture(prior, params: ChannelParams, phi: SwitchFunction,
                               n_outer: int = 20000, seed: int = 0,
                               scheme: Scheme = "joint") -> MIEstimate:
    prior = as_path_prior(prior, params.grid)
    return _mi(prior, params, _mixture_layout(params, phi), n_outer, seed, scheme)


def mutual_information_discrete_exact(prior: FiniteScalarPrior, lam: float, alpha: float,
                                      y_max: Optional[int] = None) -> float:
    """Exact MI of the scalar channel, summed over ``y = 0..y_max``.

    The default ``y_max`` leaves a Poisson tail below ``1e-14`` at the largest
    rate in the prior's support.
    """
    from scipy import stats

    rates = lam + alpha * prior.atoms
    if y_max is None:
        y_max = truncation_point(float(rates.max()))
    y = np.arange(y_max + 1)[:, None]
    logf = stats.poisson.logpmf(y, rates)                    # (Y, K)
    log_m = logsumexp(logf + np.log(prior.weights), axis=1)  # (Y,)
    f = np.exp(logf)
    return float(np.sum(prior.weights * f * (logf - log_m[:, None])))


def log_marginal_expectation(prior, params: ChannelParams, nu: Optional[IntensityMeasure] = None,
                             n_outer: int = 20000, seed: int = 0, scheme: Scheme = "joint",
                             phi: Optional[SwitchFunction] = None) -> Estimate:
    """Monte-Carlo estimate of ``E_1[log m]``."""
    prior = as_path_prior(prior, params.grid)
    lay = _poisson_layout(params, nu) if phi is None else _mixture_layout(params, phi)
    return _estimate(_mi_samples(prior, params, lay, n_outer, seed, scheme)[2])


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def finite_difference(f: Callable[[float], object], p0: float, h: float,
                      lower: Optional[float] = None) -> Estimate:
    """Central difference ``(f(p0+h) - f(p0-h)) / 2h``.

    ``f`` may return a scalar or an array of per-replicate values computed
    with common random numbers; the quotient is then formed replicate by
    replicate before averaging and the standard error comes from its spread.
    """
    if not h > 0:
        raise ValueError("step h must be positive")
    if lower is not None and not p0 - h > lower:
        raise ValueError(f"p0 - h = {p0 - h!r} leaves the parameter domain (> {lower})")
    up = np.asarray(f(p0 + h), dtype=float)
    down = np.asarray(f(p0 - h), dtype=float)
    q = (up - down) / (2.0 * h)
    if q.ndim == 0:
        return Estimate(float(q), 0.0, 1)
    return _estimate(q)


def _with_param(params: ChannelParams, param: Param, value: float) -> ChannelParams:
    if param == "alpha":
        return params.replace(alpha=value)
    if param == "lambda":
        return params.replace(lam=value)
    raise ValueError(f"unknown parameter {param!r}")


def _param_value(params: ChannelParams, param: Param) -> float:
    return params.alpha if param == "alpha" else params.lam


def _default_step(params, param, h):
    return 1e-3 * _param_value(params, param) if h is None else h


def _fd_samples(which: int, prior, params, lay, param: Param, n_outer, seed, scheme, h):
    """CRN finite difference of per-replicate MI (``which=0``) or log m (``which=2``)."""
    p0 = _param_value(params, param)
    fixed, base = None, None
    if scheme == "reference":
        fixed = _simulate(prior, params, lay, n_outer, seed, True)
    elif scheme == "importance":
        fixed = _simulate(prior, params, lay, n_outer, seed, False, IMPORTANCE_STREAM)
        base = _posterior(_log_likelihoods(fixed, prior, params, lay), prior.weights)[0]

    def f(p):
        q = _with_param(params, param, p)
        return _mi_samples(prior, q, lay, n_outer, seed, scheme, sample=fixed,
                           base_log_m=base)[which]

    full = finite_difference(f, p0, h, lower=0.0)
    half = finite_difference(f, p0, h / 2, lower=0.0)
    return full, (4.0 * half.value - full.value) / 3.0


# ---------------------------------------------------------------------------
# posterior terms
# ---------------------------------------------------------------------------

def _posterior_terms(prior, params, lay, n_outer, seed):
    """Joint draws with the true input, its posterior mean and the MI contributions."""
    sample = _simulate(prior, params, lay, n_outer, seed, False)
    logL = _log_likelihoods(sample, prior, params, lay)
    _, post = _posterior(logL, prior.weights)
    x_true = prior.paths[sample.member]
    x_hat = post @ prior.paths
    return x_true, x_hat


def _debruijn_samples(param: Param, x_hat, params, lay) -> np.ndarray:
    lam, alpha = params.lam, params.alpha
    total = lam + alpha * x_hat
    pm, gm = lay.poisson_mask, lay.gauss_mask
    if param == "alpha":
        poisson = psi_lambda(total, lam) / alpha
        gauss = (lam - 1.0 + alpha * x_hat) * x_hat
    else:
        poisson = np.log(total)
        gauss = lam - 1.0 + alpha * x_hat
    out = (poisson * pm) @ lay.mass
    if lay.has_gaussian:
        out = out + (gauss * gm) @ lay.mass
    return out


def _derivative_samples(param: Param, x_true, x_hat, params, lay) -> np.ndarray:
    lam, alpha = params.lam, params.alpha
    pm, gm = lay.poisson_mask, lay.gauss_mask
    true_total = lam + alpha * x_true
    hat_total = lam + alpha * x_hat
    if param == "alpha":
        poisson = (psi_lambda(true_total, lam) - psi_lambda(hat_total, lam)) / alpha
        gauss = (lam - 1.0 + alpha * x_true) * x_true - (lam - 1.0 + alpha * x_hat) * x_hat
    else:
        poisson = np.log(true_total) - np.log(hat_total)
        gauss = alpha * (x_true - x_hat)
    out = (poisson * pm) @ lay.mass
    if lay.has_gaussian:
        out = out + (gauss * gm) @ lay.mass
    return out


def _loglik_term_samples(param: Param, x_true, params, lay) -> np.ndarray:
    """Per-replicate derivative of ``E[log L]`` in closed form."""
    lam, alpha = params.lam, params.alpha
    pm, gm = lay.poisson_mask, lay.gauss_mask
    rate = lam + alpha * x_true
    drift = lam - 1.0 + alpha * x_true
    if param == "alpha":
        poisson, gauss = x_true * np.log(rate), drift * x_true
    else:
        poisson, gauss = np.log(rate), drift
    out = (poisson * pm) @ lay.mass
    if lay.has_gaussian:
        out = out + (gauss * gm) @ lay.mass
    return out


def expected_log_likelihood_derivative(prior, params: ChannelParams, param: Param,
                                       nu: Optional[IntensityMeasure] = None,
                                       phi: Optional[SwitchFunction] = None) -> float:
    """Exact ``d/dparam E[log L(Y, X)]`` by summing over the prior ensemble."""
    prior = as_path_prior(prior, params.grid)
    lay = _poisson_layout(params, nu) if phi is None else _mixture_layout(params, phi)
    return float(prior.weights @ _loglik_term_samples(param, prior.paths, params, lay))


# ---------------------------------------------------------------------------
# public identities
# ---------------------------------------------------------------------------

def _debruijn(param, prior, params, lay, n_outer, seed) -> Estimate:
    _, x_hat = _posterior_terms(prior, params, lay, n_outer, seed)
    return _estimate(_debruijn_samples(param, x_hat, params, lay))


def debruijn_dalpha(prior, params: ChannelParams, nu: Optional[IntensityMeasure] = None,
                    n_outer: int = 20000, seed: int = 0) -> Estimate:
    """``(1/alpha) E[int psi_lambda(lam + alpha E[xdot_s|Y]) nu(ds)]``, i.e. ``d/dalpha E_1[log m]``."""
    prior = as_path_prior(prior, params.grid)
    return _debruijn("alpha", prior, params, _poisson_layout(params, nu), n_outer, seed)


def debruijn_dlambda(prior, params: ChannelParams, nu: Optional[IntensityMeasure] = None,
                     n_outer: int = 20000, seed: int = 0) -> Estimate:
    """``E[int log(lam + alpha E[xdot_s|Y]) nu(ds)]``, i.e. ``d/dlambda E_1[log m]``."""
    prior = as_path_prior(prior, params.grid)
    return _debruijn("lambda", prior, params, _poisson_layout(params, nu), n_outer, seed)


def mixture_debruijn(param: Param, prior, params: ChannelParams, phi: SwitchFunction,
                     n_outer: int = 20000, seed: int = 0) -> Estimate:
    """``d/dparam E_1[log m]`` for the switched channel from posterior means."""
    prior = as_path_prior(prior, params.grid)
    return _debruijn(param, prior, params, _mixture_layout(params, phi), n_outer, seed)


def _report(name: str, param: Param, formula: Estimate, fd: Estimate, richardson: float,
            h: float, atol: float) -> DerivativeReport:
    tol = max(atol, 4.0 * float(np.hypot(formula.stderr, fd.stderr)))
    return DerivativeReport(param=param, formula=formula.value, fd=fd.value, h=h,
                            stderr_formula=formula.stderr, stderr_fd=fd.stderr, tolerance=tol,
                            passed=bool(abs(formula.value - fd.value) <= tol),
                            richardson=richardson, value=name)


def debruijn_report(param: Param, prior, params: ChannelParams,
                    nu: Optional[IntensityMeasure] = None, n_outer: int = 20000, seed: int = 0,
                    h: Optional[float] = None, fd_scheme: Scheme = "importance",
                    atol: float = 0.0, phi: Optional[SwitchFunction] = None) -> DerivativeReport:
    """De Bruijn identity for ``E_1[log m]`` against its CRN finite difference."""
    prior = as_path_prior(prior, params.grid)
    lay = _poisson_layout(params, nu) if phi is None else _mixture_layout(params, phi)
    h = _default_step(params, param, h)
    formula = _debruijn(param, prior, params, lay, n_outer, seed)
    fd, rich = _fd_samples(2, prior, params, lay, param, n_outer, seed, fd_scheme, h)
    return _report("dE1logm", param, formula, fd, rich, h, atol)


def _mi_derivative(param: Param, prior, params, lay, n_outer, seed, h, fd_scheme,
                   atol) -> DerivativeReport:
    h = _default_step(params, param, h)
    x_true, x_hat = _posterior_terms(prior, params, lay, n_outer, seed)
    formula = _estimate(_derivative_samples(param, x_true, x_hat, params, lay))
    fd, rich = _fd_samples(0, prior, params, lay, param, n_outer, seed, fd_scheme, h)
    return _report("dI", param, formula, fd, rich, h, atol)


def mi_dalpha(prior, params: ChannelParams, nu: Optional[IntensityMeasure] = None,
              n_outer: int = 20000, seed: int = 0, h: Optional[float] = None,
              fd_scheme: Scheme = "importance", atol: float = 0.0) -> DerivativeReport:
    """``dI/dalpha = (1/alpha) E[int psi(lam + alpha xdot) - psi(lam + alpha E[xdot|Y]) dnu]``."""
    prior = as_path_prior(prior, params.grid)
    return _mi_derivative("alpha", prior, params, _poisson_layout(params, nu), n_outer, seed, h,
                          fd_scheme, atol)


def mi_dlambda(prior, params: ChannelParams, nu: Optional[IntensityMeasure] = None,
               n_outer: int = 20000, seed: int = 0, h: Optional[float] = None,
               fd_scheme: Scheme = "importance", atol: float = 0.0) -> DerivativeReport:
    """``dI/dlambda = E[int log(lam + alpha xdot) - log(lam + alpha E[xdot|Y]) dnu]``."""
    prior = as_path_prior(prior, params.grid)
    return _mi_derivative("lambda", prior, params, _poisson_layout(params, nu), n_outer, seed, h,
                          fd_scheme, atol)


def mixture_mi_dalpha(prior, params: ChannelParams, phi: SwitchFunction, n_outer: int = 20000,
                      seed: int = 0, h: Optional[float] = None, fd_scheme: Scheme = "importance",
                      atol: float = 0.0) -> DerivativeReport:
    """Switched channel: Gaussian cells contribute ``c xdot - E[c|Y] E[xdot|Y]`` with
    ``c = lam - 1 + alpha xdot``, Poisson cells the ``psi_lambda`` term."""
    prior = as_path_prior(prior, params.grid)
    return _mi_derivative("alpha", prior, params, _mixture_layout(params, phi), n_outer, seed, h,
                          fd_scheme, atol)


def mixture_mi_dlambda(prior, params: ChannelParams, phi: SwitchFunction, n_outer: int = 20000,
                       seed: int = 0, h: Optional[float] = None, fd_scheme: Scheme = "importance",
                       atol: float = 0.0) -> DerivativeReport:
    prior = as_path_prior(prior, params.grid)
    return _mi_derivative("lambda", prior, params, _mixture_layout(params, phi), n_outer, seed, h,
                          fd_scheme, atol)


def mi_derivative_terms(param: Param, prior, params: ChannelParams,
                        nu: Optional[IntensityMeasure] = None, n_outer: int = 20000,
                        seed: int = 0, phi: Optional[SwitchFunction] = None) -> dict:
    """Pieces of the derivative formula on one set of joint draws.

    ``loglik`` evaluates the integrand at the true input (for ``alpha`` on
    Poisson cells ``psi_lambda(lam + alpha xdot) / alpha``), ``debruijn`` at
    the posterior mean, and ``derivative`` is their per-replicate difference.
    Convexity of ``psi_lambda`` makes ``loglik >= debruijn`` on average.
    """
    prior = as_path_prior(prior, params.grid)
    lay = _poisson_layout(params, nu) if phi is None else _mixture_layout(params, phi)
    x_true, x_hat = _posterior_terms(prior, params, lay, n_outer, seed)
    return {
        "derivative": _estimate(_derivative_samples(param, x_true, x_hat, params, lay)),
        "loglik": _estimate(_loglik_term_samples(param, x_true, params, lay)),
        "debruijn": _estimate(_debruijn_samples(param, x_hat, params, lay)),
    }
