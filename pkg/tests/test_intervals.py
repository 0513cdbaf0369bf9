import numpy as np
import pytest

from mixedboot.intervals import (
    CiOptions,
    IntervalError,
    bca_ci,
    bca_components,
    confint,
    percentile_ci,
    wald_ci,
)
from mixedboot.numerics import norm_quantile


class TestCiOptions:
    def test_method_normalization(self):
        assert CiOptions(method="WALD").method == "Wald"
        assert CiOptions(method="bca", cluster_id="g").method == "BCa"
        assert CiOptions(method="boot").method == "boot"

    def test_unknown_method(self):
        with pytest.raises(IntervalError):
            CiOptions(method="percentile")

    def test_bca_requires_cluster_id(self):
        with pytest.raises(IntervalError, match="clusterID"):
            CiOptions(method="BCa")

    def test_level_and_nsim_bounds(self):
        with pytest.raises(IntervalError):
            CiOptions(level=1.0)
        with pytest.raises(IntervalError):
            CiOptions(nsim=0)


class TestPercentile:
    def test_matches_numpy(self):
        gen = np.random.default_rng(0)
        s = gen.normal(size=500)
        lo, hi = percentile_ci(s, 0.95)
        assert lo == pytest.approx(np.quantile(s, 0.025, method="linear"), abs=1e-12)
        assert hi == pytest.approx(np.quantile(s, 0.975, method="linear"), abs=1e-12)

    def test_degenerate_sample(self):
        lo, hi = percentile_ci(np.full(100, 3.0), 0.9)
        assert lo == 3.0 and hi == 3.0


class TestBcaComponents:
    def test_median_unbiased_gives_zero_z0(self):
        samples = np.concatenate([np.arange(1.0, 51.0), np.arange(52.0, 102.0)])
        comp = bca_components(samples, 51.0, np.array([1.0, 2.0, 3.0]), 0.95)
        assert comp.z0 == 0.0

    def test_z0_from_proportion(self):
        samples = np.arange(100.0)  # 30 values below 30.0
        comp = bca_components(samples, 30.0, np.full(4, 1.0), 0.95)
        assert comp.z0 == pytest.approx(norm_quantile(0.30), abs=1e-12)

    def test_strict_inequality(self):
        # ties with the point estimate do not count as "below"
        samples = np.array([1.0, 2.0, 2.0, 3.0])
        comp = bca_components(samples, 2.0, np.full(4, 1.0), 0.95)
        assert comp.z0 == pytest.approx(norm_quantile(0.25), abs=1e-12)

    def test_clamping(self):
        samples = np.arange(1.0, 101.0)
        below = bca_components(samples, 0.0, np.full(4, 1.0), 0.95)
        assert below.proportion_clamped
        assert below.z0 == pytest.approx(norm_quantile(1.0 / 200.0), abs=1e-12)
        above = bca_components(samples, 1000.0, np.full(4, 1.0), 0.95)
        assert above.proportion_clamped
        assert above.z0 == pytest.approx(norm_quantile(1.0 - 1.0 / 200.0), abs=1e-12)

    def test_acceleration_hand_case(self):
        # jackknife column (9, 8, 13, 10): deviations from the mean are
        # (1, 2, -3, 0), so sum d^3 = -18, sum d^2 = 14 and
        # a = -18 / (6 * 14**1.5)
        jack = np.array([9.0, 8.0, 13.0, 10.0])
        samples = np.arange(1.0, 101.0)
        comp = bca_components(samples, 50.0, jack, 0.95)
        assert comp.a == pytest.approx(-18.0 / (6.0 * 14.0**1.5), abs=1e-14)

    def test_zero_denominator_acceleration(self):
        comp = bca_components(np.arange(10.0), 5.0, np.full(5, 2.0), 0.95)
        assert comp.a == 0.0

    def test_adjusted_tails_formula(self):
        samples = np.arange(1.0, 201.0)
        jack = np.array([9.0, 8.0, 13.0, 10.0])
        comp = bca_components(samples, 90.0, jack, 0.90)
        from mixedboot.numerics import norm_cdf

        for alpha, z in ((comp.alpha1, norm_quantile(0.05)), (comp.alpha2, norm_quantile(0.95))):
            expected = norm_cdf(comp.z0 + (comp.z0 + z) / (1.0 - comp.a * (comp.z0 + z)))
            assert alpha == pytest.approx(expected, abs=1e-14)

    def test_degenerate_equals_percentile(self):
        # symmetric counts and a flat jackknife: BCa collapses to percentile
        gen = np.random.default_rng(3)
        samples = gen.normal(size=1000)
        point = float(np.median(samples))
        below = np.count_nonzero(samples < point)
        assert below == 500
        comp = bca_components(samples, point, np.full(6, 1.0), 0.95)
        assert comp.z0 == 0.0 and comp.a == 0.0
        assert (comp.alpha1, comp.alpha2) == pytest.approx((0.025, 0.975), abs=1e-12)
        assert bca_ci(samples, comp, 0.95) == percentile_ci(samples, 0.95)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            bca_components(np.array([]), 0.0, np.full(5, 1.0), 0.95)
        with pytest.raises(ValueError):
            bca_components(np.arange(10.0), 0.0, np.array([1.0, 2.0]), 0.95)


class TestWald:
    def test_exact_formula(self, small_fit):
        table = wald_ci(small_fit, 0.95)
        z = 1.959963984540054
        for (name, lo, hi), est, se in zip(
            table.rows, small_fit.params.gamma, small_fit.se_gamma
        ):
            assert lo == pytest.approx(est - z * se, abs=1e-10)
            assert hi == pytest.approx(est + z * se, abs=1e-10)
        assert len(table.rows) == len(small_fit.fixed_names)

    def test_level_labels(self, small_fit):
        table = wald_ci(small_fit, 0.95)
        assert table.bound_labels() == ("2.5 %", "97.5 %")
        assert wald_ci(small_fit, 0.90).bound_labels() == ("5 %", "95 %")

    def test_not_converged_rejected(self, small_fit):
        import dataclasses

        broken = dataclasses.replace(small_fit, converged=False)
        with pytest.raises(IntervalError):
            wald_ci(broken, 0.95)


class TestConfint:
    def test_wald_variance_row_rejected(self, small_data, small_fit):
        options = CiOptions(method="Wald", parm=("Sigma Residual",))
        with pytest.raises(IntervalError, match="only for fixed effects"):
            confint(small_fit, small_data, options)

    def test_wald_parm_selection(self, small_data, small_fit):
        options = CiOptions(method="Wald", parm=("t", "1"))
        table = confint(small_fit, small_data, options)
        assert [r[0] for r in table.rows] == ["t", "(Intercept)"]

    def test_boot_full_row_set(self, small_data, small_fit):
        options = CiOptions(method="boot", nsim=40, seed=1)
        table = confint(small_fit, small_data, options)
        names = [r[0] for r in table.rows]
        assert names == list(small_fit.reported().keys())
        run = table.full_results["bootstrap_run"]
        assert run.requested_B == 40

    def test_boot_parm_by_name_and_index(self, small_data, small_fit):
        options = CiOptions(method="boot", nsim=30, seed=1, parm=("t", "Sigma g t"))
        table = confint(small_fit, small_data, options)
        assert [r[0] for r in table.rows] == ["t", "Sigma g t"]
        by_index = CiOptions(method="boot", nsim=30, seed=1, parm=(2, "4"))
        table2 = confint(small_fit, small_data, by_index)
        assert [r[0] for r in table2.rows] == ["t", "Sigma g t"]
        assert table2.rows == table.rows

    def test_unknown_parm(self, small_data, small_fit):
        with pytest.raises(IntervalError, match="unknown parameter"):
            confint(small_fit, small_data, CiOptions(method="Wald", parm=("dose",)))
        with pytest.raises(IntervalError, match="out of range"):
            confint(small_fit, small_data, CiOptions(method="Wald", parm=(99,)))

    def test_variance_rows_clamped(self, small_data, small_fit):
        options = CiOptions(method="boot", nsim=60, seed=3)
        table = confint(small_fit, small_data, options)
        rows = {name: (lo, hi) for name, lo, hi in table.rows}
        for name in ("Sigma g (Intercept)", "Sigma g t", "Sigma Residual"):
            assert rows[name][0] >= 0.0
        corr_lo, corr_hi = rows["Sigma g (Intercept) t"]
        assert -1.0 <= corr_lo <= corr_hi <= 1.0

    def test_bca_cluster_id_must_match(self, small_data, small_fit):
        options = CiOptions(method="BCa", cluster_id="subject", nsim=20, seed=1)
        with pytest.raises(IntervalError, match="cluster"):
            confint(small_fit, small_data, options)

    def test_bca_produces_components(self, small_data, small_fit):
        options = CiOptions(method="BCa", cluster_id="g", nsim=50, seed=2)
        table = confint(small_fit, small_data, options)
        assert table.method == "BCa"
        comps = table.full_results["bca"]
        assert set(comps) == set(small_fit.reported().keys())
        jack = table.full_results["jackknife"]
        assert jack.estimates.shape[0] == small_data.n

    def test_reproducible_with_seed(self, small_data, small_fit):
        options = CiOptions(method="boot", nsim=30, seed=7)
        a = confint(small_fit, small_data, options)
        b = confint(small_fit, small_data, options)
        assert a.rows == b.rows

    def test_render_and_to_dict(self, small_data, small_fit):
        options = CiOptions(method="boot", nsim=25, seed=1)
        table = confint(small_fit, small_data, options)
        text = table.render()
        assert "2.5 %" in text and "97.5 %" in text
        doc = table.to_dict()
        assert doc["method"] == "boot"
        assert len(doc["rows"]) == len(table.rows)
        assert doc["full_results"]["bootstrap_estimates"]["scheme"] == "wild"
