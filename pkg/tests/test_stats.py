import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crownpipe.errors import DegenerateX, TooFewPoints, UnknownTreeId
from crownpipe.matcher import MatchResult
from crownpipe.stats import (P_FLOOR, agreement, ols_fit, residual_vs_distance,
                             t_sf_two_sided)


def oracle_two_sided_p(t, df, steps=200_000):
    """2 * integral of the t density from |t| to infinity, by trapezoid on
    [0, |t|] against the known total mass of 1/2 per half-line."""
    t = abs(t)
    if t == 0.0:
        return 1.0
    const = math.exp(math.lgamma((df + 1) / 2.0)
                     - math.lgamma(df / 2.0)) / math.sqrt(df * math.pi)
    u = np.linspace(0.0, t, steps + 1)
    dens = const * (1.0 + u * u / df) ** (-(df + 1) / 2.0)
    h = t / steps
    inner = h * (dens[0] / 2.0 + dens[1:-1].sum() + dens[-1] / 2.0)
    return 1.0 - 2.0 * inner


def make_matches(pairs):
    return MatchResult(pairs=tuple(pairs), discarded=(),
                       unmatched_trunks=(), unmatched_crowns=())


class TestOlsFit:
    def test_exact_line_three_points(self):
        rep = ols_fit([0, 1, 2], [1, 3, 5])
        assert rep.slope == pytest.approx(2.0, abs=1e-12)
        assert rep.intercept == pytest.approx(1.0, abs=1e-12)
        assert rep.r_squared == pytest.approx(1.0, abs=1e-12)
        assert rep.rmse == pytest.approx(0.0, abs=1e-12)
        assert rep.n == 3

    def test_constant_y(self):
        rep = ols_fit([0, 1, 2, 3], [7, 7, 7, 7])
        assert rep.slope == 0.0
        assert rep.r_squared == 0.0
        assert rep.p_value == 1.0

    def test_constant_x_raises(self):
        with pytest.raises(DegenerateX):
            ols_fit([2, 2, 2], [1, 2, 3])

    def test_too_few_points(self):
        with pytest.raises(TooFewPoints):
            ols_fit([0, 1], [0, 1])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            ols_fit([0, 1, 2], [0, 1])

    @given(slope=st.floats(-50, 50), intercept=st.floats(-100, 100),
           n=st.integers(3, 40), seed=st.integers(0, 2**31))
    @settings(max_examples=150, deadline=None)
    def test_exact_linear_recovery(self, slope, intercept, n, seed):
        rng = np.random.default_rng(seed)
        x = np.sort(rng.uniform(-10, 10, size=n))
        if np.ptp(x) < 1e-6:
            return
        y = slope * x + intercept
        rep = ols_fit(x, y)
        scale = max(1.0, abs(slope), abs(intercept))
        assert rep.slope == pytest.approx(slope, abs=1e-9 * scale)
        assert rep.intercept == pytest.approx(intercept, abs=1e-9 * scale)
        assert rep.r_squared == pytest.approx(1.0, abs=1e-12) or np.allclose(y, y[0])

    @given(seed=st.integers(0, 2**31))
    @settings(max_examples=100, deadline=None)
    def test_residuals_sum_to_zero(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(3, 60))
        x = rng.normal(size=n)
        if np.ptp(x) == 0:
            return
        y = rng.normal(size=n)
        rep = ols_fit(x, y)
        total = sum(r for _, r, _ in rep.residuals)
        assert abs(total) < 1e-9 * n

    @given(seed=st.integers(0, 2**31))
    @settings(max_examples=100, deadline=None)
    def test_r_squared_equals_pearson_squared(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(3, 50))
        x = rng.normal(size=n)
        y = rng.normal(size=n)
        if np.std(x) == 0 or np.std(y) == 0:
            return
        rep = ols_fit(x, y)
        r = np.corrcoef(x, y)[0, 1]
        assert rep.r_squared == pytest.approx(r * r, abs=1e-12)

    def test_rmse_definition(self):
        x = np.array([0.0, 1.0, 2.0, 3.0])
        y = np.array([0.0, 1.1, 1.9, 3.2])
        rep = ols_fit(x, y)
        resid = np.array([r for _, r, _ in rep.residuals])
        assert rep.rmse == pytest.approx(math.sqrt(float(resid @ resid) / 4), abs=1e-15)

    def test_report_carries_ids_and_distances(self):
        rep = ols_fit([0, 1, 2], [1, 3, 4], tree_ids=["a", "b", "c"],
                      distances=[0.5, 0.6, 0.7])
        assert [row[0] for row in rep.residuals] == ["a", "b", "c"]
        assert [row[2] for row in rep.residuals] == [0.5, 0.6, 0.7]


class TestPValue:
    def test_correlation_point_nine_n_five(self):
        # r = 0.9 with n = 5 gives t = 0.9 * sqrt(3 / (1 - 0.81))
        t = 0.9 * math.sqrt(3.0 / (1.0 - 0.81))
        assert t == pytest.approx(3.576, abs=1e-3)
        assert t_sf_two_sided(t, 3) == pytest.approx(0.0374, abs=5e-4)

    def test_zero_t_gives_one(self):
        assert t_sf_two_sided(0.0, 5) == 1.0

    def test_floor_applied(self):
        assert t_sf_two_sided(1e8, 50) == P_FLOOR
        assert t_sf_two_sided(math.inf, 3) == P_FLOOR
        assert t_sf_two_sided(1e6, 50) >= P_FLOOR

    def test_perfect_fit_p_at_floor(self):
        rep = ols_fit([0, 1, 2, 3], [0, 2, 4, 6])
        assert rep.p_value == P_FLOOR

    @pytest.mark.parametrize("df", [1, 2, 3, 5, 10, 30, 100])
    @pytest.mark.parametrize("t", [0.0, 0.2, 1.0, 2.5, 5.0, 10.0])
    def test_matches_density_integration(self, t, df):
        assert t_sf_two_sided(t, df) == pytest.approx(
            oracle_two_sided_p(t, df), abs=1e-8)

    def test_noisy_regression_p_matches_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.uniform(0, 1, size=24)
        y = 0.8 * x + rng.normal(scale=0.3, size=24)
        rep = ols_fit(x, y)
        dx = x - x.mean()
        slope = float(dx @ (y - y.mean())) / float(dx @ dx)
        resid = y - (slope * x + (y.mean() - slope * x.mean()))
        se = math.sqrt(float(resid @ resid) / 22 / float(dx @ dx))
        assert rep.p_value == pytest.approx(
            oracle_two_sided_p(slope / se, 22), abs=1e-8)


class TestResidualVsDistance:
    def test_perfect_fit_zero_residuals(self):
        rep = ols_fit([0, 1, 2], [1, 3, 5], tree_ids=["t1", "t2", "t3"])
        matches = make_matches([("t1", 0, 0.2), ("t2", 1, 1.5), ("t3", 2, 0.9)])
        table = residual_vs_distance(rep, matches)
        assert [row[0] for row in table.rows] == ["t1", "t2", "t3"]
        assert [row[1] for row in table.rows] == [0.2, 1.5, 0.9]
        assert all(abs(row[2]) < 1e-12 for row in table.rows)
        assert math.isnan(table.abs_residual_distance_correlation)

    def test_unknown_tree_id(self):
        rep = ols_fit([0, 1, 2], [1, 3, 4], tree_ids=["t1", "t2", "t9"])
        matches = make_matches([("t1", 0, 0.2), ("t2", 1, 1.5)])
        with pytest.raises(UnknownTreeId):
            residual_vs_distance(rep, matches)

    def test_independent_noise_uncorrelated(self):
        rng = np.random.default_rng(42)
        n = 500
        x = rng.uniform(0, 1, size=n)
        y = 2.0 * x + rng.normal(scale=0.1, size=n)
        ids = [f"t{i}" for i in range(n)]
        rep = ols_fit(x, y, tree_ids=ids)
        matches = make_matches([(tid, i, float(d)) for i, (tid, d) in
                                enumerate(zip(ids, rng.uniform(0, 3, size=n)))])
        table = residual_vs_distance(rep, matches)
        assert abs(table.abs_residual_distance_correlation) < 0.1

    def test_planted_correlation_detected(self):
        rng = np.random.default_rng(3)
        n = 300
        x = rng.uniform(0, 1, size=n)
        dist = rng.uniform(0, 2, size=n)
        noise = rng.normal(size=n) * (0.02 + 0.2 * dist)
        ids = [f"t{i}" for i in range(n)]
        rep = ols_fit(x, x + noise, tree_ids=ids)
        matches = make_matches(list(zip(ids, range(n), dist)))
        table = residual_vs_distance(rep, matches)
        assert table.abs_residual_distance_correlation > 0.3


class TestAgreement:
    def test_identical_series(self):
        a = [0.40, 0.45, 0.52, 0.38, 0.47]
        rep = agreement(a, a)
        assert rep.r_squared == pytest.approx(1.0, abs=1e-12)
        assert rep.rmse == 0.0

    def test_constant_offset(self):
        a = np.array([0.40, 0.45, 0.52, 0.38, 0.47])
        rep = agreement(a, a + 0.01)
        assert rep.r_squared == pytest.approx(1.0, abs=1e-12)
        assert rep.rmse == pytest.approx(0.01, abs=1e-12)
        assert rep.regression_rmse == pytest.approx(0.0, abs=1e-12)

    def test_direct_and_regression_rmse_differ(self):
        a = np.array([0.1, 0.2, 0.3, 0.4, 0.5])
        rep = agreement(a, 2.0 * a)
        assert rep.regression_rmse == pytest.approx(0.0, abs=1e-12)
        assert rep.rmse == pytest.approx(math.sqrt(float(a @ a) / 5), abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            agreement([0.1, 0.2, 0.3], [0.1, 0.2])
