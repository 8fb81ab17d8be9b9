import math

import numpy as np
import pytest

from groupednormal.errors import SingularInformation
from groupednormal.estimators import FitOptions, fit_em, fit_mcem
from groupednormal.gaussian import GaussianParams, rect_prob_batch
from groupednormal.grouped import GroupedTable, Rectangle
from groupednormal.inference import (
    Z95,
    empirical_info_em,
    empirical_info_mcem,
    information_from_scores,
    mean_score,
)
from groupednormal.sampling import RngState

from .conftest import GALTON_INIT_1D, GALTON_INIT_2D, random_params


def fd_scores(table, params, h=1e-6):
    """Oracle: central differences of log P_c with respect to the mean."""
    lower, upper, counts = table.cell_bounds(positive_only=True)
    out = np.empty((lower.shape[0], params.d))
    for j in range(params.d):
        e = np.zeros(params.d)
        e[j] = h
        up = rect_prob_batch(lower, upper, params.shifted(e))
        dn = rect_prob_batch(lower, upper, params.shifted(-e))
        out[:, j] = (np.log(up) - np.log(dn)) / (2 * h)
    return out, counts


class TestScore:
    def test_whole_space(self, rng):
        for d in (1, 2, 3):
            p = random_params(rng, d)
            np.testing.assert_allclose(mean_score(Rectangle.whole_space(d), p), 0, atol=1e-6)

    def test_half_line(self):
        s = mean_score(Rectangle.interval(-np.inf, 5.0), GaussianParams.univariate(5.0, 1.0))
        assert s[0] == pytest.approx(-math.sqrt(2 / math.pi), abs=1e-10)

    def test_symmetric_pair(self):
        p = GaussianParams.univariate(2.0, 4.0)
        a = mean_score(Rectangle.interval(2.5, 4.0), p)
        b = mean_score(Rectangle.interval(0.0, 1.5), p)
        assert a[0] == pytest.approx(-b[0], abs=1e-12)

    def test_expected_score_vanishes(self, rng):
        for d in (1, 2):
            p = random_params(rng, d)
            edges = [np.r_[-np.inf, np.sort(rng.normal(size=4)) * p.sd[j] + p.mean[j], np.inf]
                     for j in range(d)]
            t = GroupedTable(edges, np.ones((5,) * d, int))
            lower, upper, _ = t.cell_bounds()
            alpha = rect_prob_batch(lower, upper, p)
            s = np.array([mean_score(Rectangle(lo, hi), p) for lo, hi in zip(lower, upper)])
            np.testing.assert_allclose(alpha @ s, 0, atol=1e-8)


class TestEmpiricalInfo:
    @pytest.mark.parametrize("which", ["parent", "child", "2d"])
    def test_matches_finite_difference_oracle(self, which, request):
        table = request.getfixturevalue(f"galton_{which}")
        init = GALTON_INIT_2D if which == "2d" else GALTON_INIT_1D
        p = fit_em(table, init).params
        inf = empirical_info_em(table, p)
        s, counts = fd_scores(table, p)
        ref = information_from_scores(s, counts)
        np.testing.assert_allclose(inf.info, ref, rtol=1e-6)
        np.testing.assert_allclose(inf.info, inf.info.T, atol=1e-10)

    def test_galton_bivariate(self, galton_2d):
        p = fit_em(galton_2d, GALTON_INIT_2D).params
        inf = empirical_info_em(galton_2d, p)
        np.testing.assert_allclose(inf.se, [0.059656, 0.084259], rtol=0.05)
        np.testing.assert_allclose(inf.ci_upper - inf.mean, Z95 * inf.se, atol=1e-12)
        np.testing.assert_allclose(inf.mean - inf.ci_lower, Z95 * inf.se, atol=1e-12)

    def test_se_not_below_complete_data_bound(self, galton_parent):
        """Grouping loses information, so se >= sigma / sqrt(n)."""
        p = fit_em(galton_parent, GALTON_INIT_1D).params
        se = empirical_info_em(galton_parent, p).se[0]
        assert se >= math.sqrt(p.cov[0, 0] / galton_parent.n)

    def test_doubling_counts(self, galton_2d):
        p = fit_em(galton_2d, GALTON_INIT_2D).params
        a = empirical_info_em(galton_2d, p)
        b = empirical_info_em(galton_2d.with_counts(2 * galton_2d.counts), p)
        np.testing.assert_allclose(b.info, 2 * a.info, rtol=1e-12)
        np.testing.assert_allclose(b.se, a.se / math.sqrt(2), rtol=1e-12)

    def test_too_few_cells(self):
        t = GroupedTable([[-np.inf, 0.0, 1.0, np.inf]], [0, 30, 0])
        with pytest.raises(SingularInformation):
            empirical_info_em(t, GaussianParams.univariate(0.5, 1.0))

    def test_singular(self):
        # the second axis is never split, so with independent coordinates its
        # score is zero in every cell
        t = GroupedTable([[-np.inf, 0.0, 1.0, np.inf], [-np.inf, np.inf]], [[5], [5], [5]])
        p = GaussianParams(np.zeros(2), np.diag([1.0, 2.0]))
        with pytest.raises(SingularInformation):
            empirical_info_em(t, p)


class TestMonteCarloInfo:
    def test_galton_parent(self, galton_parent):
        r = fit_mcem(galton_parent, GALTON_INIT_1D, FitOptions(mcem_samples=1000))
        inf = empirical_info_mcem(galton_parent, r.params, 1000, RngState(3))
        assert inf.se[0] == pytest.approx(0.05992, rel=0.30)

    def test_converges_to_analytic(self, galton_parent):
        p = fit_em(galton_parent, GALTON_INIT_1D).params
        exact = empirical_info_em(galton_parent, p).info[0, 0]
        small = [empirical_info_mcem(galton_parent, p, 10**4, RngState(s)).info[0, 0]
                 for s in range(10)]
        sd_large = np.std(small, ddof=1) / math.sqrt(10)  # spread at M = 1e5
        big = empirical_info_mcem(galton_parent, p, 10**5, RngState(99)).info[0, 0]
        assert abs(big - exact) < 5 * sd_large

    def test_deterministic(self, galton_2d):
        p = fit_em(galton_2d, GALTON_INIT_2D).params
        a = empirical_info_mcem(galton_2d, p, 300, RngState(8))
        b = empirical_info_mcem(galton_2d, p, 300, RngState(8))
        np.testing.assert_array_equal(a.info, b.info)
