import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from poisson_bayes.bayes import (
    ConstantLevelSampler,
    DegenerateWeightsWarning,
    FinitePathPrior,
    FiniteScalarPrior,
    MarkovSwitchingSampler,
    conditional_mean_discrete,
    conditional_mean_gradient,
    conditional_mean_mixture,
    conditional_mean_weighting,
    effective_sample_size,
    log_marginal_discrete,
    marginal_discrete,
    marginal_path,
    sample_prior_paths,
)
from poisson_bayes.channels import (
    ChannelParams,
    MixtureObservation,
    SwitchFunction,
    mixture_sample,
    path_sample,
)
from poisson_bayes.point_process import IntensityMeasure, PointConfiguration, TimeGrid, make_rng

GRID = TimeGrid(1.0, 32)
TWO_POINT = FiniteScalarPrior([0.0, 1.0], [0.5, 0.5])

atoms = st.lists(st.floats(0.0, 5.0), min_size=1, max_size=6)


def _weights(n, seed):
    w = make_rng(seed).uniform(0.1, 1.0, n)
    return w / w.sum()


def test_prior_validation():
    with pytest.raises(ValueError):
        FiniteScalarPrior([0.0, 1.0], [0.5, 0.6])
    with pytest.raises(ValueError):
        FiniteScalarPrior([-1.0], [1.0])
    with pytest.raises(ValueError):
        FinitePathPrior(np.ones((2, 4)), [0.5, 0.5], GRID)
    FiniteScalarPrior([0.0, 1.0], [0.5, 0.5 + 5e-10])


def test_two_point_marginal_closed_form():
    y = np.arange(20)
    expected = 0.5 + 0.5 * np.exp(-1.0) * 2.0 ** y
    np.testing.assert_allclose(marginal_discrete(y, TWO_POINT, 1.0, 1.0), expected, rtol=1e-14)


def test_marginal_is_a_density():
    y = np.arange(120)
    log_ref = -1.0 - special.gammaln(y + 1)
    total = np.exp(log_marginal_discrete(y, TWO_POINT, 1.0, 1.0) + log_ref).sum()
    assert abs(total - 1.0) <= 1e-10


def test_two_point_conditional_mean():
    assert conditional_mean_discrete(0, TWO_POINT, 1.0, 1.0) == pytest.approx(1 / (1 + math.e),
                                                                              abs=1e-15)
    y = np.arange(41)
    np.testing.assert_allclose(conditional_mean_discrete(y, TWO_POINT, 1.0, 1.0),
                               1.0 / (1.0 + math.e * 2.0 ** -y), rtol=0, atol=1e-12)
    # the posterior concentrates on the upper atom at rate e 2**-y
    assert 1.0 - conditional_mean_discrete(30, TWO_POINT, 1.0, 1.0) == pytest.approx(
        math.e * 2.0 ** -30, rel=1e-6)
    assert abs(conditional_mean_discrete(40, TWO_POINT, 1.0, 1.0) - 1.0) <= 1e-10


@settings(max_examples=60)
@given(atoms, st.integers(0, 2 ** 32 - 1), st.floats(0.2, 3.0), st.floats(0.2, 3.0))
def test_conditional_mean_matches_enumeration(a, seed, lam, alpha):
    prior = FiniteScalarPrior(a, _weights(len(a), seed))
    y = np.arange(30)
    rates = lam + alpha * prior.atoms
    post = prior.weights * np.exp(-rates) * rates ** y[:, None]
    post /= post.sum(1, keepdims=True)
    np.testing.assert_allclose(conditional_mean_discrete(y, prior, lam, alpha), post @ prior.atoms,
                               rtol=1e-9, atol=1e-11)


def test_empty_observation_posterior_ratio():
    params = ChannelParams(1.0, 1.7, GRID)
    paths = np.array([np.linspace(0, 2, 32), np.full(32, 0.4)])
    prior = FinitePathPrior(paths, [0.3, 0.7], GRID)
    p = marginal_path(PointConfiguration.empty(1.0), prior, params).posterior
    ints = paths.mean(1)
    expected = 0.3 / 0.7 * np.exp(-params.alpha * (ints[0] - ints[1]))
    assert p[0] / p[1] == pytest.approx(expected, rel=1e-13)


@pytest.mark.parametrize("w", [0.2, 0.5, 0.9])
def test_gradient_empty_observation_closed_form(w):
    params = ChannelParams(1.0, 1.0, GRID)
    prior = FinitePathPrior.constant(FiniteScalarPrior([1.0, 0.0], [w, 1 - w]), GRID)
    rep = conditional_mean_gradient(PointConfiguration.empty(1.0), prior, params)
    expected = w * math.exp(-1) / (w * math.exp(-1) + 1 - w)
    np.testing.assert_allclose(rep.estimate_gradient, expected, rtol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 16), st.integers(0, 2 ** 32 - 1), st.floats(0.2, 3.0), st.floats(0.2, 3.0))
def test_gradient_matches_weighting(k, seed, lam, alpha):
    rng = make_rng(seed)
    prior = FinitePathPrior(rng.uniform(0.05, 5.0, (k, 32)), _weights(k, seed), GRID)
    params = ChannelParams(lam, alpha, GRID)
    y = path_sample(prior.members[int(rng.integers(k))], params, rng)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateWeightsWarning)
        rep = conditional_mean_gradient(y, prior, params)
    np.testing.assert_allclose(rep.estimate_oracle, conditional_mean_weighting(y, prior, params))
    assert rep.max_rel_discrepancy <= 1e-10
    np.testing.assert_allclose(rep.cumulative_gradient, rep.cumulative_oracle, rtol=1e-9)


def test_gradient_with_nonuniform_reference():
    params = ChannelParams(1.4, 0.6, GRID)
    nu = IntensityMeasure(np.linspace(0.5, 3.0, 32), GRID)
    rng = make_rng(8)
    prior = FinitePathPrior(rng.uniform(0, 3, (5, 32)), np.full(5, 0.2), GRID)
    y = path_sample(prior.members[2], params, rng, nu)
    rep = conditional_mean_gradient(y, prior, params, nu)
    np.testing.assert_allclose(rep.estimate_gradient, rep.estimate_oracle, rtol=1e-10)


def test_gaussian_segment_two_hypothesis_closed_form():
    # all-Gaussian switch, lambda = 1: posterior of level 1 is logistic in the total increment
    params = ChannelParams(1.0, 1.3, GRID)
    phi = SwitchFunction.constant(0, GRID)
    w = 0.35
    prior = FinitePathPrior.constant(FiniteScalarPrior([1.0, 0.0], [w, 1 - w]), GRID)
    obs = mixture_sample(prior.members[0], params, phi, seed=4)
    G = obs.increments.sum()
    a = params.alpha
    expected = 1.0 / (1.0 + (1 - w) / w * math.exp(-(a * G - 0.5 * a * a)))
    rep = conditional_mean_mixture(obs, prior, params, phi)
    assert np.max(np.abs(rep.estimate_gradient - expected)) <= 1e-10
    assert np.max(np.abs(rep.estimate_oracle - expected)) <= 1e-10


def test_mixture_all_poisson_equals_path_estimator():
    params = ChannelParams(1.2, 0.9, GRID)
    rng = make_rng(5)
    prior = FinitePathPrior(rng.uniform(0, 3, (6, 32)), np.full(6, 1 / 6), GRID)
    y = path_sample(prior.members[1], params, rng)
    a = conditional_mean_gradient(y, prior, params)
    b = conditional_mean_mixture(MixtureObservation(y, []), prior, params,
                                 SwitchFunction.constant(1, GRID))
    np.testing.assert_array_equal(a.estimate_gradient, b.estimate_gradient)
    np.testing.assert_array_equal(a.cumulative_gradient, b.cumulative_gradient)


def test_mixture_half_and_half_identity():
    params = ChannelParams(0.7, 1.5, GRID)
    phi = SwitchFunction.from_runs([(16, 0), (16, 1)], GRID)
    rng = make_rng(6)
    prior = FinitePathPrior(rng.uniform(0, 3, (8, 32)), np.full(8, 1 / 8), GRID)
    obs = mixture_sample(prior.members[3], params, phi, rng)
    with warnings.catch_warnings():
        warnings.simplefilter("error", RuntimeWarning)
        rep = conditional_mean_mixture(obs, prior, params, phi)
    assert rep.max_rel_discrepancy <= 1e-10
    assert rep.rows()[0]["phi"] == 0 and rep.rows()[-1]["phi"] == 1


def test_tower_property():
    # averaging the posterior mean over joint draws recovers the prior mean
    grid = TimeGrid(1.0, 8)
    params = ChannelParams(1.0, 1.0, grid)
    prior = FinitePathPrior(make_rng(2).uniform(0, 3, (4, 8)), [0.1, 0.2, 0.3, 0.4], grid)
    rng = make_rng(3)
    n = 4000
    est = np.empty((n, 8))
    for i in range(n):
        k = rng.choice(4, p=prior.weights)
        est[i] = conditional_mean_weighting(path_sample(prior.members[k], params, rng), prior, params)
    se = est.std(0, ddof=1) / np.sqrt(n)
    assert np.all(np.abs(est.mean(0) - prior.mean_path) <= 4 * se)


def test_markov_sampler_stationary_mean():
    s = MarkovSwitchingSampler(0.5, 3.0, 2.0, 1.0, GRID)
    prior = sample_prior_paths(s, 10_000, seed=1)
    vals = prior.paths[:, 20]
    assert abs(vals.mean() - s.stationary_mean) <= 4 * vals.std() / np.sqrt(vals.size)
    with pytest.raises(ValueError):
        MarkovSwitchingSampler(0.5, 3.0, 0.0, 1.0, GRID)


def test_constant_sampler_paths_are_constant():
    prior = sample_prior_paths(ConstantLevelSampler(TWO_POINT, GRID), 50, seed=2)
    assert np.all(prior.paths.min(1) == prior.paths.max(1))
    np.testing.assert_allclose(prior.weights.sum(), 1.0)


def test_effective_sample_size_and_warning():
    assert effective_sample_size([0.25] * 4) == pytest.approx(4.0)
    grid = TimeGrid(1.0, 4)
    paths = np.zeros((200, 4))
    paths[0] = 30.0
    prior = FinitePathPrior(paths, np.full(200, 1 / 200), grid)
    params = ChannelParams(1.0, 1.0, grid)
    y = PointConfiguration(np.linspace(0, 1, 40), 1.0)
    with pytest.warns(DegenerateWeightsWarning):
        conditional_mean_gradient(y, prior, params)


def test_report_serialization():
    params = ChannelParams(1.0, 1.0, TimeGrid(1.0, 4))
    prior = FinitePathPrior.constant(TWO_POINT, params.grid)
    truth = prior.members[1]
    rep = conditional_mean_gradient(PointConfiguration([0.3], 1.0), prior, params, true_path=truth)
    header = rep.to_csv().splitlines()[0]
    assert header == "s,estimate_gradient,estimate_oracle,abs_diff,true_value_if_known"
    summary = json.loads(rep.to_json())
    assert summary["cells"] == 4 and summary["max_rel_discrepancy"] <= 1e-10
