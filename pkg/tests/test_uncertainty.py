"""MC dropout sampling, symmetric intervals and gamma calibration."""
import numpy as np
import pytest

from symreg.errors import ConfigError
from symreg.evaluation import PLAIN_LABEL, SYMMETRIC_LABEL, evaluate_all
from symreg.uncertainty import (McConfig, McSamples, SetIntervals, calibrate_gamma,
                                calibrate_gamma_from_intervals, combined_intervals, mc_sample, mc_sample_set,
                                mc_stats, predict_with_uncertainty, sigma_sym)

PAIRS = np.array([[1.0, 2.0], [3.0, 2.0], [2.0, 5.0]])


class TestStats:
    def test_population_sd(self):
        y_r, y_l, s_r, s_l = mc_stats(McSamples(PAIRS))
        assert (y_r, y_l) == (2.0, 3.0)
        assert s_r == pytest.approx(np.sqrt(2.0 / 3.0))
        assert s_l == pytest.approx(np.sqrt(2.0))

    def test_sigma_sym(self):
        assert sigma_sym(PAIRS) == pytest.approx((1 + 1 + 3) / 3)
        assert sigma_sym(np.array([[2.0, 2.0], [3.0, 3.0]])) == 0.0

    def test_combined_intervals(self):
        stats = mc_stats(PAIRS)
        res = combined_intervals(stats, 2.0, McConfig(gamma_r=0.5, gamma_l=0.25))
        assert res.sigma_r_sym == pytest.approx(stats[2] + 1.0)
        assert res.sigma_l_sym == pytest.approx(stats[3] + 0.5)
        crossed = combined_intervals(stats, 2.0, McConfig(gamma_r=0.5, gamma_l=0.25, crossed=True))
        assert crossed.sigma_r_sym == pytest.approx(stats[2] + 0.5)

    @pytest.mark.parametrize("kwargs", [{"n": 1}, {"gamma_r": 1.5}, {"gamma_l": -0.1}])
    def test_invalid_config(self, kwargs):
        with pytest.raises(ConfigError):
            McConfig(**kwargs)

    def test_set_intervals_match_per_case(self, rng):
        samples = rng.normal(size=(4, 6, 2))
        iv = SetIntervals.from_samples(samples)
        for c in range(4):
            y_r, y_l, s_r, s_l = mc_stats(samples[c])
            assert iv.sigma_r[c] == pytest.approx(s_r) and iv.mean_l[c] == pytest.approx(y_l)
            assert iv.sigma_sym[c] == pytest.approx(sigma_sym(samples[c]))


class TestSampling:
    def test_reproducible_per_case_stream(self, tiny_model, rng):
        x_r, x_l = rng.normal(size=(2, 8, 8, 4))
        a = mc_sample(tiny_model, x_r, x_l, n=5, seed=3, case_id=7)
        b = mc_sample(tiny_model, x_r, x_l, n=5, seed=3, case_id=7)
        c = mc_sample(tiny_model, x_r, x_l, n=5, seed=3, case_id=8)
        np.testing.assert_array_equal(a.pairs, b.pairs)
        assert not np.array_equal(a.pairs, c.pairs)

    def test_set_matches_single_case(self, tiny_model, rng):
        x_r, x_l = rng.normal(size=(2, 3, 8, 8, 4))
        samples = mc_sample_set(tiny_model, x_r, x_l, n=4, seed=1, batch=2)
        assert samples.shape == (3, 4, 2)
        single = mc_sample(tiny_model, x_r[2], x_l[2], n=4, seed=1, case_id=2)
        np.testing.assert_allclose(samples[2], single.pairs, atol=1e-12)

    def test_samples_are_stochastic_with_mean_near_eval(self, tiny_model, rng):
        x = rng.normal(size=(8, 8, 4))
        s = mc_sample(tiny_model, x, x, n=400)
        assert np.std(s.right) > 0
        p = tiny_model.forward_pair(x[None], x[None], mode="eval")[0].item()
        assert abs(np.mean(s.right) - p) < 5 * np.std(s.right) / np.sqrt(400) + 1e-9

    def test_predict_with_uncertainty(self, tiny_model, rng):
        x_r, x_l = rng.normal(size=(2, 8, 8, 4))
        res = predict_with_uncertainty(tiny_model, x_r, x_l, McConfig(n=6, gamma_r=0.3, gamma_l=0.6))
        assert res.sigma_r_sym >= res.sigma_r and res.sigma_l_sym >= res.sigma_l


class TestCalibration:
    def test_picks_highest_auc(self, rng):
        y_r = rng.normal(size=30)
        y_l = y_r + rng.normal(size=30)
        # right residuals tiny, left residuals large but the symmetric hint covers them
        samples = np.stack([np.stack([y_r + rng.normal(0, 0.05, 10),
                                      y_l + rng.normal(0, 0.05, 10)], axis=1) for y_r, y_l in zip(y_r, y_l)])
        samples[:, :, 1] += 1.0
        iv = SetIntervals.from_samples(samples)
        cal = calibrate_gamma_from_intervals(iv, y_r, y_l, [0.0, 0.5, 1.0])
        assert len(cal.table) == 9
        assert cal.auc == max(row[2] for row in cal.table)

    def test_ties_go_to_smallest(self):
        iv = SetIntervals(np.zeros(3), np.zeros(3), np.ones(3), np.ones(3), np.zeros(3))
        cal = calibrate_gamma_from_intervals(iv, np.zeros(3), np.zeros(3), [1.0, 0.0, 0.5])
        assert (cal.gamma_r, cal.gamma_l) == (0.0, 0.0)

    def test_grid_validation(self):
        iv = SetIntervals(np.zeros(1), np.zeros(1), np.ones(1), np.ones(1), np.zeros(1))
        with pytest.raises(ConfigError):
            calibrate_gamma_from_intervals(iv, [0.0], [0.0], [])
        with pytest.raises(ConfigError):
            calibrate_gamma_from_intervals(iv, [0.0], [0.0], [2.0])

    def test_model_level_calibration(self, tiny_model, tiny_dataset):
        g = calibrate_gamma(tiny_model, tiny_dataset.subset("val"), [0.0, 1.0], McConfig(n=4))
        assert all(v in (0.0, 1.0) for v in g)


class TestEvaluation:
    def test_gamma_zero_equals_plain(self, tiny_model, tiny_dataset):
        rep = evaluate_all(tiny_model, tiny_dataset.subset("test"), McConfig(n=5))
        plain, sym = rep.uncertainty[PLAIN_LABEL], rep.uncertainty[SYMMETRIC_LABEL]
        for side in ("right", "left", "pooled"):
            assert plain[side] == sym[side]

    def test_report_tables(self, tiny_model, tiny_dataset):
        rep = evaluate_all(tiny_model, tiny_dataset.subset("test"), McConfig(n=5, gamma_r=0.5))
        t3 = rep.table3_csv().splitlines()
        assert t3[0].startswith("RMSE_right,RMSE_left,RMSE_avg")
        t5 = rep.table5_csv().splitlines()
        assert t5[1].startswith(PLAIN_LABEL) and t5[2].startswith(SYMMETRIC_LABEL)
        assert 0.0 <= rep.auc <= 1.0
        assert set(rep.binary) == {"right", "left"}
