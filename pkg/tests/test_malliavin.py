import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from poisson_bayes.channels import ChannelParams, IntensityPath, log_likelihood_path
from poisson_bayes.malliavin import (
    CountFunctional,
    cell_differences,
    chain_rule_residual,
    difference,
    evaluation_points,
    ibp_check,
    integrated_gradient,
)
from poisson_bayes.point_process import IntensityMeasure, PointConfiguration, TimeGrid

GRID = TimeGrid(1.0, 8)
times = st.lists(st.floats(0.0, 1.0, allow_nan=False), max_size=20)
point = st.floats(0.0, 1.0, allow_nan=False)


def count(y):
    return float(y.count)


def count_squared(y):
    return float(y.count) ** 2


@given(st.integers(0, 50))
def test_difference_of_count_squared(n):
    y = PointConfiguration(np.linspace(0.0, 1.0, n), 1.0)
    assert difference(count_squared, y, 0.5) == 2 * n + 1


def test_integrated_gradient_of_count_map():
    nu = IntensityMeasure.unit(GRID)
    y = PointConfiguration([0.2, 0.3], 1.0)
    assert integrated_gradient(count, y, None, nu) == pytest.approx(1.0)
    assert integrated_gradient(count, y, np.arange(4), nu) == pytest.approx(0.5)
    assert integrated_gradient(count, y, np.zeros(8, dtype=bool), nu) == 0.0
    two = IntensityMeasure.unit(TimeGrid(2.0, 8))
    assert integrated_gradient(count, PointConfiguration.empty(2.0), None, two) == pytest.approx(2.0)


def test_cell_differences_fast_path_matches_generic():
    F = CountFunctional(lambda c: (c * np.arange(1, 9)).sum(-1) ** 2.0, GRID)
    y = PointConfiguration([0.05, 0.3, 0.31, 0.9], 1.0)
    generic = cell_differences(lambda cfg: F(cfg), y, GRID)
    np.testing.assert_allclose(cell_differences(F, y, GRID), generic)


def test_evaluation_points_avoid_atoms():
    y = PointConfiguration([GRID.midpoints[2]], 1.0)
    s = evaluation_points(y, GRID)
    assert s[2] != GRID.midpoints[2]
    assert GRID.cell_of(s[2]) == 2
    np.testing.assert_array_equal(np.delete(s, 2), np.delete(GRID.midpoints, 2))


@settings(max_examples=100)
@given(times, point, st.lists(st.floats(-2, 2), min_size=6, max_size=6))
def test_chain_rule(ts, z, a):
    y = PointConfiguration(ts, 1.0)

    def F(cfg):
        n = cfg.cell_counts(GRID)
        return a[0] + a[1] * n[:4].sum() + a[2] * n.sum() ** 2

    def G(cfg):
        n = cfg.cell_counts(GRID)
        return a[3] + a[4] * np.exp(-n[4:].sum()) + a[5] * n[0]

    assert abs(chain_rule_residual(F, G, y, z)) <= 1e-10


@given(times, point, st.lists(st.floats(0, 3), min_size=8, max_size=8),
       st.floats(0.2, 3), st.floats(0.2, 3))
def test_difference_of_likelihood(ts, z, x, lam, alpha):
    # D_z L = (lam - 1 + alpha xdot(z)) L
    params = ChannelParams(lam, alpha, GRID)
    xdot = IntensityPath(x, GRID)
    y = PointConfiguration(ts, 1.0)

    def L(cfg):
        return np.exp(log_likelihood_path(cfg, xdot, params))

    expected = (lam - 1 + alpha * float(xdot(z))) * L(y)
    assert difference(L, y, z) == pytest.approx(expected, rel=1e-10, abs=1e-300)


def test_ibp_count_map_constant_h():
    # E[N (N - 1)] = 1 for N ~ Poisson(1), and the right side is nu([0, 1]) = 1
    nu = IntensityMeasure.unit(GRID)
    F = CountFunctional(lambda c: c.sum(-1), GRID)
    r = ibp_check(F, 1.0, nu, 100_000, seed=1)
    assert r.rhs == pytest.approx(1.0)
    assert abs(r.gap) <= 4 * r.stderr
    assert abs(r.lhs - 1.0) <= 0.05


def test_ibp_generic_and_vectorized_agree_per_sample():
    nu = IntensityMeasure(np.linspace(0.5, 2.0, 8), GRID)
    F = CountFunctional(lambda c: np.exp(-0.3 * c.sum(-1)) * c[..., 0], GRID)
    h = np.linspace(-1, 1, 8)
    fast = ibp_check(F, h, nu, 200, seed=4)
    slow = ibp_check(lambda y: F(y), h, nu, 200, seed=4)
    np.testing.assert_allclose(fast, slow, rtol=1e-12)


def test_ibp_needs_two_samples():
    with pytest.raises(ValueError):
        ibp_check(count, 1.0, IntensityMeasure.unit(GRID), 1, seed=0)
