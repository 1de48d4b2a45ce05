"""Metric, test-statistic, and comparison-harness tests."""
import numpy as np
import pytest
from scipy import stats as scipy_stats

from vitaldyn.core import GeneralizedLogistic, StateSpaceParams
from vitaldyn.evaluation import (
    EvaluationReport,
    ModelsConfig,
    bic,
    compare_models,
    config_hash,
    count_params,
    horizon_predictions,
    paired_t_test,
    smse,
)
from vitaldyn.learning import EMConfig
from vitaldyn.synth import GeneratorSpec, make_cohort


class TestSMSE:
    def test_mean_predictor_scores_exactly_one(self, rng):
        y = rng.normal(10.0, 3.0, size=200)
        pred = np.full_like(y, y.mean())
        assert smse(pred, y) == 1.0

    def test_perfect_predictions_score_zero(self, rng):
        y = rng.normal(size=50)
        assert smse(y.copy(), y) == 0.0

    def test_scale_invariance(self, rng):
        y = rng.normal(size=100)
        pred = y + rng.normal(0, 0.5, size=100)
        assert smse(7.0 * pred, 7.0 * y) == pytest.approx(smse(pred, y))

    def test_mask_restricts_to_observed_cells(self, rng):
        y = rng.normal(size=60)
        pred = y + 1.0
        mask = np.zeros(60, dtype=bool)
        mask[:30] = True
        assert smse(pred, y, mask) == pytest.approx(
            smse(pred[:30], y[:30]))

    def test_degenerate_inputs_rejected(self):
        with pytest.raises(ValueError):
            smse(np.array([1.0]), np.array([1.0]))
        with pytest.raises(ValueError):
            smse(np.array([1.0, 2.0]), np.array([3.0, 3.0]))


class TestBIC:
    def test_reference_value(self):
        assert bic(-100.0, 10, 100) == pytest.approx(246.0517, abs=1e-3)

    def test_formula(self, rng):
        ll, b, N = rng.normal(), rng.integers(1, 50), rng.integers(2, 500)
        assert bic(ll, int(b), int(N)) == pytest.approx(
            -2 * ll + b * np.log(N))


class TestPairedTTest:
    def test_reference_case(self):
        t, df, p = paired_t_test([1.0, -1.0, 0.0, 2.0])
        assert t == pytest.approx(0.7746, abs=1e-3)
        assert df == 3
        assert p == pytest.approx(0.2473, abs=1e-3)

    def test_matches_scipy_on_random_samples(self, rng):
        for _ in range(30):
            d = rng.normal(rng.normal(), 1.0, size=rng.integers(3, 40))
            t, df, p = paired_t_test(d)
            ref_t, ref_p = scipy_stats.ttest_1samp(d, 0.0,
                                                   alternative="greater")
            assert t == pytest.approx(ref_t, rel=1e-10)
            assert p == pytest.approx(ref_p, rel=1e-8)

    def test_zero_variance_rejected(self):
        with pytest.raises(ValueError):
            paired_t_test([1.0, 1.0, 1.0])


class TestParameterCounting:
    def _params(self, d_x=4, d_u=1, d_y=3):
        eta = tuple(GeneralizedLogistic(m=0.0, M=1.0, gamma=1.0, nu=1.0)
                    for _ in range(d_y))
        return StateSpaceParams(
            A=0.5 * np.eye(d_x), B=np.ones((d_x, d_u)),
            C=np.ones((d_y, d_x)), Q=np.eye(d_x), R=np.eye(d_y),
            mu1=np.zeros(d_x), Sigma1=np.eye(d_x), eta=eta)

    def test_data_driven_convention(self):
        # d_x=4, d_u=1, d_y=3:
        # mu1 (4) + Sigma1 (10) + A (16) + B (4) + C (12) + Q (4) + R (3)
        # + warp parameters (4 per channel) = 65
        assert count_params(self._params(), convention="io-nlds") == 65

    def test_mechanistic_convention_drops_fixed_blocks(self):
        # A, B, C fixed by the compartment structure; only the per-channel
        # effect-site rate is an extra free parameter
        p = self._params()
        got = count_params(p, convention="pkpd")
        d_x, d_y = 4, 3
        expected = d_x + d_x * (d_x + 1) // 2 + d_x + d_y + 4 * d_y + d_y
        assert got == expected

    def test_unknown_convention_rejected(self):
        with pytest.raises(ValueError):
            count_params(self._params(), convention="bogus")


class TestConfigHash:
    def test_stable_and_order_insensitive(self):
        a = config_hash({"x": 1, "y": [1, 2]})
        b = config_hash({"y": [1, 2], "x": 1})
        assert a == b and len(a) == 16

    def test_sensitive_to_values(self):
        assert config_hash({"x": 1}) != config_hash({"x": 2})


class TestHorizonPredictions:
    def test_shapes_and_free_run(self):
        p = make_cohort(1, seed=3)[0]
        targets, means, variances = horizon_predictions(
            p.truth, p.series, p.protocol, 10)
        T = p.series.values.shape[0]
        assert means.shape == (T - 10, 3) and variances.shape == means.shape
        np.testing.assert_array_equal(targets, np.arange(10, T))
        ft, fm, fv = horizon_predictions(p.truth, p.series, p.protocol,
                                         "free")
        assert fm.shape == (T, 3)
        assert np.all(fv > 0)

    def test_bad_horizon_rejected(self):
        p = make_cohort(1, seed=3)[0]
        with pytest.raises(ValueError):
            horizon_predictions(p.truth, p.series, p.protocol, -1)


@pytest.fixture(scope="module")
def report():
    cohort = [(p.seed, p.series, p.protocol)
              for p in make_cohort(2, seed=21,
                                   spec=GeneratorSpec(nonstationary=True,
                                                      drift_frac=0.15))]
    from vitaldyn.pkpd import CompartmentRates
    cfg = ModelsConfig(
        nlds_em=EMConfig(max_iterations=3, bfgs_evals_early=60,
                         bfgs_evals_late=40, bfgs_early_iters=1),
        pkpd_rates=CompartmentRates(k10=0.119, k12=0.112, k21=0.055,
                                    k13=0.0419, k31=0.0033, k1e=(0.456,)),
        pkpd_grid=(0.1, 2.0),
        pkpd_em=EMConfig(max_iterations=2, bfgs_evals_early=40,
                         bfgs_evals_late=30, bfgs_early_iters=1),
        seed=0)
    return compare_models(cohort, cfg)


class TestComparisonHarness:
    def test_report_covers_both_models_and_all_horizons(self, report):
        assert set(report.smse_mean) == {"io-nlds", "pkpd"}
        for model in report.smse_mean.values():
            assert set(model) == {"1", "10", "20", "free"}
            for per_channel in model.values():
                assert set(per_channel) == {"BPsys", "BPdia", "BIS"}
        assert set(report.bic_mean) == {"io-nlds", "pkpd"}

    def test_baseline_row_is_one(self, report):
        for h, per_channel in report.baseline_smse.items():
            for v in per_channel.values():
                assert v == pytest.approx(1.0, abs=1e-9)

    def test_t_tests_present_per_cell(self, report):
        assert set(report.t_tests) == {"1", "10", "20", "free"}
        for per_channel in report.t_tests.values():
            for cell in per_channel.values():
                assert set(cell) >= {"t", "df", "p_right"}

    def test_table_rendering_layout(self, report):
        table = report.format_table()
        for label in ("IO-NLDS", "PK/PD", "BIC", "BPs", "BPd", "BIS",
                      "1-step", "10-step", "20-step", "free-running"):
            assert label in table
        # header rows + one row per model + the mean-predictor baseline row
        lines = [ln for ln in table.splitlines() if ln.strip()]
        assert len(lines) == 5

    def test_json_roundtrip(self, report, tmp_path):
        import json
        path = tmp_path / "report.json"
        path.write_text(report.to_json())
        again = json.loads(path.read_text())
        assert again["smse_mean"] == report.smse_mean
        assert again["metadata"] == report.metadata
