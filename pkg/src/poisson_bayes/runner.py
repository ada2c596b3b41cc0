"""Scenario execution and artifact writing for the batch runner."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from . import __version__
from . import information as info
from .bayes import (
    ConstantLevelSampler,
    FinitePathPrior,
    FiniteScalarPrior,
    MarkovSwitchingSampler,
    conditional_mean_discrete,
    conditional_mean_gradient,
    conditional_mean_mixture,
    sample_prior_paths,
)
from .channels import (
    ChannelParams,
    IntensityPath,
    MixtureObservation,
    SwitchFunction,
    cell_log_likelihood,
    discrete_log_density,
    girsanov_normalization,
    log_likelihood_path,
    mixture_sample,
    path_sample,
)
from .config import ConfigError, config_hash, parse_runs, validate, with_defaults
from .malliavin import CountFunctional, chain_rule_residual, difference, ibp_check
from .point_process import IntensityMeasure, PointConfiguration, TimeGrid, make_rng, sample_poisson

PRIOR_STREAM = 21
OBSERVATION_STREAM = 22
INSTANCE_STREAM = 23
IBP_PAIR_STREAM = 24
GIRSANOV_PATH_STREAM = 25

DISCRETE_TOL = 1e-12
GRADIENT_RTOL = 1e-10
CHAIN_RULE_TOL = 1e-10
EXACT_FD_ATOL = 1e-4


@dataclass
class ScenarioResult:
    rows: list[dict]
    summary: dict
    checks: dict[str, bool]
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


@dataclass
class RunManifest:
    scenario: str
    config_hash: str
    seed: int
    tool_version: str
    wall_clock_seconds: float
    summary: dict
    checks: dict[str, bool]
    artifacts: list[str]

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_json(self) -> str:
        return json.dumps({**asdict(self), "passed": self.passed}, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def format_csv(rows: list[dict], meta: dict) -> str:
    """RFC-4180 table followed by ``# key=value`` metadata lines."""
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\r\n")
    columns = list(rows[0]) if rows else []
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row[c]) for c in columns])
    for key, value in meta.items():
        buf.write(f"# {key}={_cell(value)}\r\n")
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def atomic_write(path: Path, text: str) -> None:
    """Write ``text`` to a temporary sibling, then rename it over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# building library objects from a config
# ---------------------------------------------------------------------------

def _params(cfg) -> ChannelParams:
    ch = cfg["channel"]
    return ChannelParams(float(ch["lambda"]), float(ch["alpha"]), TimeGrid(ch["T"], ch["M"]))


def _scalar_prior(cfg) -> FiniteScalarPrior:
    return FiniteScalarPrior(cfg["prior"]["atoms"], cfg["prior"]["weights"])


def _path_prior(cfg, grid: TimeGrid) -> FinitePathPrior:
    pr, seed = cfg["prior"], cfg["mc"]["seed"]
    kind = pr["kind"]
    if kind == "scalar":
        return FinitePathPrior.constant(_scalar_prior(cfg), grid)
    if kind == "paths":
        return FinitePathPrior(np.array(pr["members"], dtype=float), pr["weights"], grid)
    if kind == "constant-sampler":
        sampler = ConstantLevelSampler(_scalar_prior(cfg), grid)
    else:
        sampler = MarkovSwitchingSampler(pr["low"], pr["high"], pr["rate_up"], pr["rate_down"], grid)
    return sample_prior_paths(sampler, cfg["mc"]["n_prior"], make_rng(seed, PRIOR_STREAM))


def _phi(cfg, grid: TimeGrid) -> SwitchFunction:
    phi = cfg["phi"]
    if "mask" in phi:
        return SwitchFunction.from_mask(phi["mask"], grid)
    return SwitchFunction.from_runs(parse_runs(phi["runs"]), grid)


def _params_list(cfg) -> list[str]:
    p = cfg["derivative"]["param"]
    return ["alpha", "lambda"] if p == "both" else [p]


def _true_member(cfg, prior: FinitePathPrior):
    member = cfg["observation"].get("member", 0)
    if not 0 <= member < prior.size:
        raise ConfigError([f"observation.member: index {member} outside 0..{prior.size - 1}"])
    return IntensityPath(prior.paths[member], prior.grid)


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

def run_discrete_estimate(cfg) -> ScenarioResult:
    prior = _scalar_prior(cfg)
    lam, alpha = float(cfg["channel"]["lambda"]), float(cfg["channel"]["alpha"])
    y = np.arange(cfg["observation"]["y_max"] + 1)
    formula = conditional_mean_discrete(y, prior, lam, alpha)
    # posterior weighting by direct enumeration over the atoms
    logf = discrete_log_density(y[:, None], prior.atoms[None, :], lam, alpha) + np.log(prior.weights)
    post = np.exp(logf - logsumexp(logf, axis=1, keepdims=True))
    oracle = post @ prior.atoms
    diff = np.abs(formula - oracle)
    rows = [{"y": int(y[i]), "estimate_formula": formula[i], "estimate_enumeration": oracle[i],
             "abs_diff": diff[i]} for i in range(y.size)]
    summary = {"y_max": int(y[-1]), "max_abs_diff": float(diff.max()), "tolerance": DISCRETE_TOL}
    return ScenarioResult(rows, summary, {"formula_matches_enumeration": bool(diff.max() <= DISCRETE_TOL)})


def _posterior_result(report) -> ScenarioResult:
    cum_gap = float(np.max(np.abs(report.cumulative_gradient - report.cumulative_oracle)))
    summary = {**report.summary(), "max_cumulative_discrepancy": cum_gap,
               "tolerance_rel": GRADIENT_RTOL}
    checks = {"gradient_matches_oracle": bool(report.max_rel_discrepancy <= GRADIENT_RTOL)}
    return ScenarioResult(report.rows(), summary, checks)


def run_path_estimate(cfg) -> ScenarioResult:
    params = _params(cfg)
    prior = _path_prior(cfg, params.grid)
    obs = cfg["observation"]
    if "times" in obs:
        y, truth = PointConfiguration(obs["times"], params.grid.horizon), None
    else:
        truth = _true_member(cfg, prior)
        y = path_sample(truth, params, make_rng(cfg["mc"]["seed"], OBSERVATION_STREAM))
    res = _posterior_result(conditional_mean_gradient(y, prior, params, true_path=truth))
    res.summary["observed_atoms"] = y.count
    return res


def run_mixture_estimate(cfg) -> ScenarioResult:
    params = _params(cfg)
    prior = _path_prior(cfg, params.grid)
    phi = _phi(cfg, params.grid)
    obs = cfg["observation"]
    if "times" in obs:
        n_gauss = int(np.sum(phi.gaussian))
        inc = obs.get("increments", [0.0] * n_gauss)
        data, truth = MixtureObservation(PointConfiguration(obs["times"], params.grid.horizon),
                                         inc), None
    else:
        truth = _true_member(cfg, prior)
        data = mixture_sample(truth, params, phi, make_rng(cfg["mc"]["seed"], OBSERVATION_STREAM))
    res = _posterior_result(conditional_mean_mixture(data, prior, params, phi, true_path=truth))
    res.summary["observed_atoms"] = data.jumps.count
    return res


def _exact_scalar(cfg) -> Optional[FiniteScalarPrior]:
    """Scalar prior whose constant paths reduce the path channel to the count channel."""
    return _scalar_prior(cfg) if cfg["prior"]["kind"] == "scalar" else None


def run_mi(cfg) -> ScenarioResult:
    params = _params(cfg)
    prior = _path_prior(cfg, params.grid)
    mc = cfg["mc"]
    est = info.mutual_information_poisson(prior, params, n_outer=mc["n_outer"], seed=mc["seed"])
    rows = [{"quantity": "I", "value": est.value, "stderr": est.stderr},
            {"quantity": "E_log_likelihood", "value": est.mean_log_likelihood, "stderr": ""},
            {"quantity": "E_log_marginal", "value": est.mean_log_marginal, "stderr": ""}]
    checks = {"nonnegative": bool(est.value >= -4 * est.stderr)}
    summary = {"mi": est.value, "stderr": est.stderr, "n_outer": est.n_outer}
    scalar = _exact_scalar(cfg)
    if scalar is not None:
        T = params.grid.horizon
        exact = info.mutual_information_discrete_exact(scalar, params.lam * T, params.alpha * T)
        rows.append({"quantity": "I_exact", "value": exact, "stderr": 0.0})
        summary["mi_exact"] = exact
        checks["matches_exact"] = bool(abs(est.value - exact) <= 4 * est.stderr + 1e-15)
    return ScenarioResult(rows, summary, checks)


def _derivative_result(reports) -> ScenarioResult:
    rows = [r.row() for r in reports]
    summary = {f"{r.value}/d{r.param}": {"formula": r.formula, "fd": r.fd,
                                          "richardson": r.richardson, "tolerance": r.tolerance,
                                          "combined_stderr": r.combined_stderr}
               for r in reports}
    checks = {f"{r.value}_{r.param}": r.passed for r in reports}
    return ScenarioResult(rows, summary, checks)


def run_debruijn(cfg) -> ScenarioResult:
    params = _params(cfg)
    prior = _path_prior(cfg, params.grid)
    mc, der = cfg["mc"], cfg["derivative"]
    reports = [info.debruijn_report(p, prior, params, n_outer=mc["n_outer"], seed=mc["seed"],
                                    h=der.get("h"), fd_scheme=der["fd_scheme"], atol=der["atol"])
               for p in _params_list(cfg)]
    return _derivative_result(reports)


def _exact_fd_report(param, report, scalar, params, h) -> info.DerivativeReport:
    T = params.grid.horizon

    def mi(p):
        lam = p if param == "lambda" else params.lam
        alpha = p if param == "alpha" else params.alpha
        return info.mutual_information_discrete_exact(scalar, lam * T, alpha * T)

    p0 = params.alpha if param == "alpha" else params.lam
    fd = info.finite_difference(mi, p0, h)
    tol = max(EXACT_FD_ATOL, 4 * report.stderr_formula)
    return info.DerivativeReport(param=param, formula=report.formula, fd=fd.value, h=h,
                                 stderr_formula=report.stderr_formula, stderr_fd=0.0,
                                 tolerance=tol, passed=bool(abs(report.formula - fd.value) <= tol),
                                 richardson=fd.value, value="dI_exact")


def run_mi_derivative(cfg) -> ScenarioResult:
    params = _params(cfg)
    prior = _path_prior(cfg, params.grid)
    mc, der = cfg["mc"], cfg["derivative"]
    scalar = _exact_scalar(cfg)
    reports = []
    for p in _params_list(cfg):
        fn = info.mi_dalpha if p == "alpha" else info.mi_dlambda
        r = fn(prior, params, n_outer=mc["n_outer"], seed=mc["seed"], h=der.get("h"),
               fd_scheme=der["fd_scheme"], atol=der["atol"])
        reports.append(r)
        if scalar is not None:
            reports.append(_exact_fd_report(p, r, scalar, params, r.h))
    return _derivative_result(reports)


def run_mixture_derivative(cfg) -> ScenarioResult:
    params = _params(cfg)
    prior = _path_prior(cfg, params.grid)
    phi = _phi(cfg, params.grid)
    mc, der = cfg["mc"], cfg["derivative"]
    reports = []
    for p in _params_list(cfg):
        fn = info.mixture_mi_dalpha if p == "alpha" else info.mixture_mi_dlambda
        reports.append(fn(prior, params, phi, n_outer=mc["n_outer"], seed=mc["seed"],
                          h=der.get("h"), fd_scheme=der["fd_scheme"], atol=der["atol"]))
    res = _derivative_result(reports)
    res.summary["phi"] = "".join(str(v) for v in phi.values)
    return res


def ibp_pairs(params: ChannelParams, rng: np.random.Generator):
    """Five ``(name, F, h)`` pairs for the integration-by-parts check."""
    grid = params.grid
    M = grid.cells
    first = np.arange(M) < M // 2
    alt = np.where(np.arange(M) % 2 == 0, 1.0, -1.0)
    x = rng.uniform(0.0, 2.0, M)
    mass = IntensityMeasure.unit(grid).cell_mass

    def log_lik(c):
        c = np.asarray(c)
        flat = c.reshape(-1, M)
        return cell_log_likelihood(flat, x, params, mass)[:, 0].reshape(c.shape[:-1])

    return [
        ("total_count", CountFunctional(lambda c: c.sum(-1), grid), np.ones(M)),
        ("total_count_squared", CountFunctional(lambda c: c.sum(-1) ** 2.0, grid),
         first.astype(float)),
        ("exp_minus_first_half", CountFunctional(lambda c: np.exp(-(c * first).sum(-1)), grid),
         grid.midpoints),
        ("product_of_halves",
         CountFunctional(lambda c: (c * first).sum(-1) * (c * ~first).sum(-1), grid), alt + 0.5),
        ("log_likelihood", CountFunctional(log_lik, grid), x / (params.lam + params.alpha * x)),
    ]


def _random_polynomial(rng, grid: TimeGrid) -> Callable[[PointConfiguration], float]:
    a = rng.uniform(-1.0, 1.0, 3)
    cells_a = rng.random(grid.cells) < 0.5
    cells_b = rng.random(grid.cells) < 0.5

    def F(y):
        c = y.cell_counts(grid)
        na, nb = float(c[cells_a].sum()), float(c[cells_b].sum())
        return a[0] + a[1] * na + a[2] * nb * nb

    return F


def run_operator_checks(cfg) -> ScenarioResult:
    params = _params(cfg)
    grid = params.grid
    mc = cfg["mc"]
    seed, n = mc["seed"], mc["n_samples"]
    rows, checks = [], {}

    chain, dl = 0.0, 0.0
    for i in range(mc["n_instances"]):
        rng = make_rng(seed, INSTANCE_STREAM, i)
        y = sample_poisson(IntensityMeasure(np.full(grid.cells, rng.uniform(0.5, 3.0)), grid), rng)
        z = float(rng.uniform(0.0, grid.horizon))
        F, G = _random_polynomial(rng, grid), _random_polynomial(rng, grid)
        chain = max(chain, abs(chain_rule_residual(F, G, y, z)))
        x = IntensityPath(rng.uniform(0.0, 3.0, grid.cells), grid)

        def L(cfg_, x=x):
            return np.exp(log_likelihood_path(cfg_, x, params))

        expected = L(y) * (params.lam - 1.0 + params.alpha * float(x(z)))
        dl = max(dl, abs(difference(L, y, z) - expected) / max(abs(expected), 1e-300))
    rows.append({"check": "chain_rule_max_residual", "statistic": chain, "reference": 0.0,
                 "stderr": "", "tolerance": CHAIN_RULE_TOL, "pass": chain <= CHAIN_RULE_TOL})
    rows.append({"check": "likelihood_difference_max_rel_error", "statistic": dl,
                 "reference": 0.0, "stderr": "", "tolerance": CHAIN_RULE_TOL,
                 "pass": dl <= CHAIN_RULE_TOL})

    nu = IntensityMeasure.unit(grid)
    for name, F, h in ibp_pairs(params, make_rng(seed, IBP_PAIR_STREAM)):
        r = ibp_check(F, h, nu, n, seed)
        ok = abs(r.gap) <= 4 * r.stderr
        rows.append({"check": f"ibp_{name}", "statistic": r.lhs, "reference": r.rhs,
                     "stderr": r.stderr, "tolerance": 4 * r.stderr, "pass": ok})

    x = IntensityPath(make_rng(seed, GIRSANOV_PATH_STREAM).uniform(0.0, 2.0, grid.cells), grid)
    mean, se = girsanov_normalization(x, params, n, seed)
    rows.append({"check": "girsanov_normalization", "statistic": mean, "reference": 1.0,
                 "stderr": se, "tolerance": 4 * se, "pass": abs(mean - 1.0) <= 4 * se})

    for r in rows:
        checks[r["check"]] = bool(r["pass"])
    summary = {r["check"]: {"statistic": r["statistic"], "reference": r["reference"]} for r in rows}
    return ScenarioResult(rows, summary, checks)


SCENARIO_RUNNERS: dict[str, Callable[[dict], ScenarioResult]] = {
    "discrete-estimate": run_discrete_estimate,
    "path-estimate": run_path_estimate,
    "mixture-estimate": run_mixture_estimate,
    "mi": run_mi,
    "debruijn": run_debruijn,
    "mi-derivative": run_mi_derivative,
    "mixture-derivative": run_mixture_derivative,
    "operator-checks": run_operator_checks,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def run(config: dict, seed: Optional[int] = None, out: Optional[str | Path] = None) -> RunManifest:
    """Validate ``config``, execute its scenario and write artifacts to the output directory.

    Writes ``<prefix>.csv``, ``<prefix>.json`` and ``manifest.json``; the CSV
    and scenario JSON depend only on the config and seed.

    Raises
    ------
    ConfigError
        If the config does not validate.
    OSError
        If an artifact cannot be written.
    """
    config = json.loads(json.dumps(config))
    if seed is not None:
        config.setdefault("mc", {})["seed"] = int(seed)
    diags = validate(config)
    if diags:
        raise ConfigError(diags)
    cfg = with_defaults(config)
    digest = config_hash(config)
    started = time.perf_counter()
    result = SCENARIO_RUNNERS[cfg["scenario"]](cfg)
    elapsed = time.perf_counter() - started

    out_dir = Path(out if out is not None else cfg["output"]["dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    prefix = cfg["output"].get("prefix") or cfg["scenario"]
    meta = {"scenario": cfg["scenario"], "config_hash": digest, "seed": cfg["mc"]["seed"],
            "tool_version": __version__, **result.meta, "passed": result.passed}
    csv_path, json_path = out_dir / f"{prefix}.csv", out_dir / f"{prefix}.json"
    atomic_write(csv_path, format_csv(result.rows, meta))
    summary_doc = {"meta": meta, "summary": result.summary, "checks": result.checks}
    atomic_write(json_path, json.dumps(_jsonable(summary_doc), indent=2, sort_keys=True) + "\n")
    manifest = RunManifest(scenario=cfg["scenario"], config_hash=digest, seed=cfg["mc"]["seed"],
                           tool_version=__version__, wall_clock_seconds=elapsed,
                           summary=_jsonable(result.summary), checks=result.checks,
                           artifacts=[csv_path.name, json_path.name])
    atomic_write(out_dir / "manifest.json", manifest.to_json() + "\n")
    return manifest
