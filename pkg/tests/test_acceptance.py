"""Acceptance suite: one test and one PASS/FAIL line per criterion."""

import warnings

import mpmath as mp
import numpy as np

from poisson_bayes import information as info
from poisson_bayes import point_process
from poisson_bayes.bayes import (
    DegenerateWeightsWarning,
    FinitePathPrior,
    FiniteScalarPrior,
    conditional_mean_discrete,
    conditional_mean_gradient,
    conditional_mean_weighting,
)
from poisson_bayes.channels import (
    ChannelParams,
    IntensityPath,
    SwitchFunction,
    girsanov_normalization,
    path_sample,
)
from poisson_bayes.cli import preset_paths
from poisson_bayes.config import load
from poisson_bayes.malliavin import chain_rule_residual, ibp_check
from poisson_bayes.point_process import IntensityMeasure, TimeGrid, make_rng
from poisson_bayes.runner import _random_polynomial, ibp_pairs, run

GRID = TimeGrid(1.0, 32)
PARAMS = ChannelParams(1.0, 1.0, GRID)
TWO_POINT = FiniteScalarPrior([0.0, 1.0], [0.5, 0.5])
N_OUTER = 20_000
SEED = 2024


def _enumeration(prior: FiniteScalarPrior, y_max: int) -> np.ndarray:
    """Posterior mean of the count channel with lam = alpha = 1, in 40-digit arithmetic."""
    mp.mp.dps = 40
    out = []
    for y in range(y_max + 1):
        num = den = mp.mpf(0)
        for a, w in zip(prior.atoms, prior.weights):
            rate = 1 + mp.mpf(float(a))
            f = mp.mpf(float(w)) * mp.e ** (-rate) * rate ** y
            num += f * mp.mpf(float(a))
            den += f
        out.append(float(num / den))
    return np.array(out)


def test_c1_count_channel_formula_exactness(report_line):
    y = np.arange(41)
    rng = make_rng(SEED, 1)
    w = rng.uniform(0.1, 1.0, 5)
    priors = {"two-point": TWO_POINT,
              "random 5-atom": FiniteScalarPrior(rng.uniform(0.0, 5.0, 5), w / w.sum())}
    errors = {name: float(np.max(np.abs(conditional_mean_discrete(y, p, 1.0, 1.0)
                                        - _enumeration(p, 40))))
              for name, p in priors.items()}
    closed = float(np.max(np.abs(conditional_mean_discrete(y, TWO_POINT, 1.0, 1.0)
                                 - 1.0 / (1.0 + np.e * 2.0 ** -y))))
    worst = max(*errors.values(), closed)
    ok = worst <= 1e-12
    report_line("C1 count-channel posterior mean exactness", ok, f"max abs error {worst:.2e} <= 1e-12")
    assert ok


def test_c2_gradient_oracle_identity(report_line):
    worst = 0.0
    for i in range(100):
        rng = make_rng(SEED, 2, i)
        k = int(rng.integers(1, 17))
        w = rng.uniform(0.1, 1.0, k)
        prior = FinitePathPrior(rng.uniform(0.05, 5.0, (k, 32)), w / w.sum(), GRID)
        params = ChannelParams(float(rng.uniform(0.2, 3.0)), float(rng.uniform(0.2, 3.0)), GRID)
        y = path_sample(prior.members[int(rng.integers(k))], params, rng)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateWeightsWarning)
            rep = conditional_mean_gradient(y, prior, params)
        oracle = conditional_mean_weighting(y, prior, params)
        rel = np.abs(rep.estimate_gradient - oracle) / np.abs(oracle)
        worst = max(worst, float(rel.max()))
    ok = worst <= 1e-10
    report_line("C2 gradient vs posterior weighting", ok, f"max rel {worst:.2e} <= 1e-10")
    assert ok


def test_c3_operator_laws(report_line):
    chain = 0.0
    for i in range(100):
        rng = make_rng(SEED, 3, i)
        y = point_process.sample_poisson(
            IntensityMeasure(np.full(32, rng.uniform(0.5, 3.0)), GRID), rng)
        z = float(rng.uniform(0.0, 1.0))
        F, G = _random_polynomial(rng, GRID), _random_polynomial(rng, GRID)
        chain = max(chain, abs(chain_rule_residual(F, G, y, z)))

    nu = IntensityMeasure.unit(GRID)
    gaps = []
    for name, F, h in ibp_pairs(PARAMS, make_rng(SEED, 4)):
        r = ibp_check(F, h, nu, 100_000, SEED)
        gaps.append((name, abs(r.gap) / r.stderr))
    x = IntensityPath(make_rng(SEED, 5).uniform(0.0, 2.0, 32), GRID)
    mean, se = girsanov_normalization(x, PARAMS, 100_000, SEED)

    ok_chain = chain <= 1e-10
    ok_ibp = all(g <= 4 for _, g in gaps)
    ok_gir = abs(mean - 1.0) <= 4 * se
    ok = ok_chain and ok_ibp and ok_gir
    detail = (f"chain {chain:.1e}; ibp gaps/se {', '.join(f'{g:.2f}' for _, g in gaps)}; "
              f"E[L]={mean:.4f}+-{se:.4f}")
    report_line("C3 operator laws", ok, detail)
    assert ok


def test_c4_debruijn(report_line):
    details, ok = [], True
    for param in ("alpha", "lambda"):
        r = info.debruijn_report(param, TWO_POINT, PARAMS, n_outer=N_OUTER, seed=SEED, h=1e-3)
        tol = max(4 * r.combined_stderr, 5e-3)
        passed = abs(r.formula - r.fd) <= tol
        ok &= passed
        details.append(f"d{param}: {r.formula:.4f} vs fd {r.fd:.4f} (tol {tol:.4f})")
    report_line("C4 De Bruijn identities", ok, "; ".join(details))
    assert ok


def _exact_fd(param):
    def mi(p):
        lam, alpha = (1.0, p) if param == "alpha" else (p, 1.0)
        return info.mutual_information_discrete_exact(TWO_POINT, lam, alpha)

    return info.finite_difference(mi, 1.0, 1e-3).value


def _pure_reports():
    return {"alpha": info.mi_dalpha(TWO_POINT, PARAMS, n_outer=N_OUTER, seed=SEED, h=1e-3),
            "lambda": info.mi_dlambda(TWO_POINT, PARAMS, n_outer=N_OUTER, seed=SEED, h=1e-3)}


def test_c5_mi_derivatives(report_line):
    details, ok = [], True
    for param, r in _pure_reports().items():
        exact = _exact_fd(param)
        tol_a = max(1e-4, 4 * r.stderr_formula)
        a = abs(r.formula - exact) <= tol_a
        b = abs(r.formula - r.fd) <= 4 * r.combined_stderr
        ok &= a and b
        details.append(f"d{param}: {r.formula:.4f}, exact fd {exact:.4f}, MC fd {r.fd:.4f}")
    report_line("C5 MI derivatives", ok, "; ".join(details))
    assert ok


def test_c6_mixture_reductions(report_line):
    pure = _pure_reports()
    ones = SwitchFunction.constant(1, GRID)
    reduced = {"alpha": info.mixture_mi_dalpha(TWO_POINT, PARAMS, ones, n_outer=N_OUTER, seed=SEED,
                                               h=1e-3),
               "lambda": info.mixture_mi_dlambda(TWO_POINT, PARAMS, ones, n_outer=N_OUTER,
                                                 seed=SEED, h=1e-3)}
    reduction = max(max(abs(pure[p].formula - reduced[p].formula),
                        abs(pure[p].fd - reduced[p].fd),
                        abs(pure[p].stderr_formula - reduced[p].stderr_formula)) for p in pure)

    zeros = SwitchFunction.constant(0, GRID)
    gauss = info.mixture_mi_dalpha(TWO_POINT, PARAMS, zeros, n_outer=N_OUTER, seed=SEED)
    half = SwitchFunction.from_runs([(16, 0), (16, 1)], GRID)
    half_a = info.mixture_mi_dalpha(TWO_POINT, PARAMS, half, n_outer=N_OUTER, seed=SEED)
    half_l = info.mixture_mi_dlambda(TWO_POINT, PARAMS, half, n_outer=N_OUTER, seed=SEED)

    def within(r):
        return abs(r.formula - r.fd) <= 4 * r.combined_stderr

    ok = reduction <= 1e-12 and within(gauss) and within(half_a) and within(half_l)
    detail = (f"phi=1 gap {reduction:.1e}; phi=0 {gauss.formula:.4f} vs {gauss.fd:.4f}; "
              f"half d/dalpha {half_a.formula:.4f} vs {half_a.fd:.4f}, "
              f"d/dlambda {half_l.formula:.4f} vs {half_l.fd:.4f}")
    report_line("C6 mixture reductions", ok, detail)
    assert ok


def test_c7_degeneracy(report_line):
    half = SwitchFunction.from_runs([(16, 0), (16, 1)], GRID)
    exact_zero, mc_ok = [], []
    for c in (0.0, 0.7, 3.0):
        point = FiniteScalarPrior.point(c)
        exact_zero.append(info.mutual_information_discrete_exact(point, 1.0, 1.0))
        for est in (info.mutual_information_poisson(point, PARAMS, n_outer=2000, seed=SEED),
                    info.mutual_information_mixture(point, PARAMS, half, n_outer=2000, seed=SEED)):
            mc_ok.append(abs(est.value) <= est.stderr)
        for r in (info.mi_dalpha(point, PARAMS, n_outer=2000, seed=SEED),
                  info.mi_dlambda(point, PARAMS, n_outer=2000, seed=SEED),
                  info.mixture_mi_dalpha(point, PARAMS, half, n_outer=2000, seed=SEED),
                  info.mixture_mi_dlambda(point, PARAMS, half, n_outer=2000, seed=SEED)):
            exact_zero.append(r.formula)
            mc_ok.append(abs(r.fd) <= r.stderr_fd)
    ok = all(v == 0.0 for v in exact_zero) and all(mc_ok)
    report_line("C7 degeneracy", ok, f"{len(exact_zero)} formula values exactly 0, "
                                     f"{sum(mc_ok)}/{len(mc_ok)} MC values within stderr")
    assert ok


def test_c8_reproducibility(report_line, tmp_path):
    differing = []
    for name, path in preset_paths().items():
        outputs = []
        for attempt in ("first", "second"):
            point_process._replicate_block.cache_clear()
            out = tmp_path / name / attempt
            manifest = run(load(path), out=out)
            outputs.append([(out / a).read_bytes() for a in manifest.artifacts])
        if outputs[0] != outputs[1]:
            differing.append(name)
    ok = not differing
    report_line("C8 reproducibility", ok,
                f"{len(preset_paths())} presets byte-identical" if ok else f"differ: {differing}")
    assert ok
