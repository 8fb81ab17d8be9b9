import math

import numpy as np
import pytest
from scipy import integrate, stats

from groupednormal import gaussian
from groupednormal.errors import DomainError, NonPositiveDefinite, ToleranceNotReached
from groupednormal.gaussian import (
    GaussianParams,
    bvn_upper,
    mvn_density,
    mvn_logpdf,
    normal_interval_prob,
    rect_prob,
    rect_prob_batch,
    rect_prob_qmc,
    std_normal_cdf,
    std_normal_pdf,
    std_normal_quantile,
)
from groupednormal.grouped import GroupedTable, Rectangle

from .conftest import random_params


def erfc_cdf(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


class TestScalar:
    def test_pdf_values(self):
        assert std_normal_pdf(0.0) == pytest.approx(0.3989422804, abs=1e-10)
        assert std_normal_pdf(1.0) == pytest.approx(0.2419707245, abs=1e-10)
        x = np.linspace(-8, 8, 33)
        np.testing.assert_array_equal(std_normal_pdf(x), std_normal_pdf(-x))

    def test_cdf_values(self):
        assert std_normal_cdf(0.0) == 0.5
        assert std_normal_cdf(-np.inf) == 0.0 and std_normal_cdf(np.inf) == 1.0
        assert std_normal_cdf(1.959963985) == pytest.approx(0.975, abs=1e-10)

    def test_cdf_against_erfc(self):
        for x in np.linspace(-37, 8, 451):
            assert std_normal_cdf(x) == pytest.approx(erfc_cdf(x), rel=1e-12, abs=1e-300)

    def test_cdf_monotone(self):
        c = std_normal_cdf(np.linspace(-10, 10, 10001))
        assert np.all(np.diff(c) >= 0)

    def test_quantile(self):
        assert std_normal_quantile(0.5) == 0.0
        assert std_normal_quantile(0.975) == pytest.approx(1.959963985, abs=1e-9)
        p = np.linspace(1e-12, 1 - 1e-12, 1001)
        np.testing.assert_allclose(std_normal_cdf(std_normal_quantile(p)), p, atol=1e-10)
        x = np.linspace(-6, 6, 241)
        np.testing.assert_allclose(std_normal_quantile(std_normal_cdf(x)), x, atol=1e-8)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, np.nan])
    def test_quantile_domain(self, p):
        with pytest.raises(DomainError):
            std_normal_quantile(p)

    def test_interval_upper_tail_accuracy(self):
        # relative accuracy survives far in the upper tail
        p = normal_interval_prob(9.0, 10.0)
        ref = 0.5 * (math.erfc(9 / math.sqrt(2)) - math.erfc(10 / math.sqrt(2)))
        assert p == pytest.approx(ref, rel=1e-12)


class TestParams:
    def test_not_pd(self):
        with pytest.raises(NonPositiveDefinite):
            GaussianParams(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_not_symmetric(self):
        with pytest.raises(NonPositiveDefinite):
            GaussianParams(np.zeros(2), np.array([[1.0, 0.2], [0.3, 1.0]]))

    def test_bivariate_summary(self):
        p = GaussianParams.bivariate(1, 2, 4, 9, 0.5)
        assert p.summary() == pytest.approx(
            {"mean_1": 1, "mean_2": 2, "var_1": 4, "var_2": 9, "rho_12": 0.5})


class TestDensity:
    def test_values(self):
        assert mvn_density(np.array([3.0]), GaussianParams.univariate(3.0, 1.0)) == \
            pytest.approx(0.3989422804, abs=1e-10)
        assert mvn_density(np.zeros(2), GaussianParams(np.zeros(2), np.eye(2))) == \
            pytest.approx(1 / (2 * np.pi), abs=1e-12)

    def test_dense_inverse_oracle(self, rng):
        for d in (1, 2, 3, 5):
            p = random_params(rng, d)
            x = rng.normal(size=(20, d))
            inv = np.linalg.inv(p.cov)
            dev = x - p.mean
            ref = (-0.5 * d * np.log(2 * np.pi) - 0.5 * np.log(np.linalg.det(p.cov))
                   - 0.5 * np.einsum("mi,ij,mj->m", dev, inv, dev))
            np.testing.assert_allclose(mvn_logpdf(x, p), ref, rtol=0, atol=1e-12)


class TestBivariate:
    def test_orthant_independent(self):
        p = GaussianParams(np.zeros(2), np.eye(2))
        assert rect_prob(Rectangle(np.zeros(2), np.full(2, np.inf)), p) == \
            pytest.approx(0.25, abs=1e-14)

    @pytest.mark.parametrize("rho", [-0.95, -0.5, 0.0, 0.3, 0.5, 0.9, 0.999])
    def test_orthant_closed_form(self, rho):
        p = GaussianParams.bivariate(0, 0, 1, 1, rho)
        ref = 0.25 + math.asin(rho) / (2 * math.pi)
        assert rect_prob(Rectangle(np.zeros(2), np.full(2, np.inf)), p) == \
            pytest.approx(ref, abs=1e-14)

    def test_bvn_upper_against_scipy(self, rng):
        h, k = rng.normal(size=50), rng.normal(size=50)
        for r in (-0.7, 0.2, 0.8):
            ref = [stats.multivariate_normal(cov=[[1, r], [r, 1]]).cdf([-a, -b]) for a, b in zip(h, k)]
            np.testing.assert_allclose(bvn_upper(h, k, r), ref, atol=1e-7)

    def test_quadrature_oracle(self, rng):
        """100 random rectangles against adaptive 2-D quadrature of the density."""
        worst = 0.0
        for _ in range(100):
            p = random_params(rng, 2)
            lo = p.mean + rng.normal(size=2) * p.sd
            hi = lo + rng.uniform(0.1, 2.0, size=2) * p.sd
            val, _ = integrate.dblquad(
                lambda y, x: mvn_density(np.array([x, y]), p),
                lo[0], hi[0], lo[1], hi[1], epsabs=1e-13, epsrel=1e-12)
            worst = max(worst, abs(rect_prob(Rectangle(lo, hi), p) - val))
        assert worst < 1e-8

    def test_whole_space(self, rng):
        for d in (1, 2):
            assert rect_prob(Rectangle.whole_space(d), random_params(rng, d)) == \
                pytest.approx(1.0, abs=1e-14)


class TestInvariance:
    def test_additivity(self, rng):
        for _ in range(20):
            p = random_params(rng, 2)
            lo = p.mean - rng.uniform(0.2, 2, 2)
            hi = p.mean + rng.uniform(0.2, 2, 2)
            cut = rng.uniform(lo[1], hi[1])
            left = Rectangle(lo, np.array([hi[0], cut]))
            right = Rectangle(np.array([lo[0], cut]), hi)
            whole = rect_prob(Rectangle(lo, hi), p)
            assert rect_prob(left, p) + rect_prob(right, p) == pytest.approx(whole, abs=2e-10)

    def test_translation_and_scaling(self, rng):
        for d in (2, 3):
            p = random_params(rng, d)
            r = Rectangle(p.mean - 0.7, p.mean + np.linspace(0.3, 1.1, d))
            base = rect_prob(r, p)
            c = rng.normal(size=d) * 10
            assert rect_prob(r.shift(c), p.shifted(c)) == pytest.approx(base, abs=2e-6)
            s = 3.7
            scaled = GaussianParams(s * p.mean, s * s * p.cov)
            assert rect_prob(Rectangle(s * r.lower, s * r.upper), scaled) == \
                pytest.approx(base, abs=2e-6)

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_partition_sums_to_one(self, rng, d):
        p = random_params(rng, d)
        edges = [np.r_[-np.inf, np.sort(rng.normal(size=3)) * p.sd[j] + p.mean[j], np.inf]
                 for j in range(d)]
        table = GroupedTable(edges, np.ones((4,) * d, int))
        lo, hi, _ = table.cell_bounds()
        total = rect_prob_batch(lo, hi, p).sum()
        tol = 1e-12 if d < 3 else 1e-6
        assert total == pytest.approx(1.0, abs=lo.shape[0] * tol)


class TestQMC:
    def test_against_scipy(self, rng):
        for d in (3, 4):
            for _ in range(3):
                p = random_params(rng, d)
                lo = p.mean - rng.uniform(0.2, 1.5, d) * p.sd
                hi = p.mean + rng.uniform(0.2, 1.5, d) * p.sd
                ref = stats.multivariate_normal.cdf(hi, p.mean, p.cov, maxpts=10**7, abseps=1e-9,
                                                   releps=0, lower_limit=lo)
                val, err = rect_prob_qmc(lo, hi, p.mean, p.cov)
                assert err <= 1e-6
                assert val == pytest.approx(ref, abs=3e-6)

    def test_deterministic(self, rng):
        p = random_params(rng, 3)
        r = Rectangle(p.mean - 1, p.mean + 0.5)
        assert rect_prob(r, p) == rect_prob(r, p)

    def test_whole_space(self, rng):
        assert rect_prob(Rectangle.whole_space(4), random_params(rng, 4)) == \
            pytest.approx(1.0, abs=1e-6)

    def test_budget_exhausted(self, rng, monkeypatch):
        orig = gaussian.rect_prob_qmc
        monkeypatch.setattr(gaussian, "rect_prob_qmc",
                            lambda *a, **k: orig(*a, **{**k, "max_points": 1000}))
        p = random_params(rng, 4)
        with pytest.raises(ToleranceNotReached) as info:
            rect_prob(Rectangle(p.mean - 1, p.mean + 1), p, tol=1e-12)
        assert 0 < info.value.estimate < 1 and info.value.error > 1e-12
