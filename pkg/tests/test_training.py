"""Trainer determinism, best-epoch restore, failure reporting and sweeps."""
from dataclasses import replace

import numpy as np
import pytest

from symreg.checkpoint import checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint
from symreg.errors import ConfigError, FormatError, NumericError, TrainingError
from symreg.training import (REPORT_COLUMNS, TrainConfig, evaluate_losses, fit, log_grid, predict_pairs,
                             split_mae, sweep, train)

TINY = dict(plan=(2, 3, 4, 5), dims=(8, 8, 4), epochs=2, batch=8, lr=1e-3)


@pytest.fixture
def cfg():
    return TrainConfig(**TINY)


class TestConfig:
    def test_round_trip_and_unknown_keys(self, cfg):
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(ConfigError, match="unknown"):
            TrainConfig.from_dict({"betta": 1.0})

    def test_unpaired_forces_beta_zero(self, cfg):
        assert replace(cfg, unpaired=True, beta=1.0).loss.beta == 0.0

    def test_cosine_schedule(self, cfg):
        c = replace(cfg, lr_schedule="cosine", lr=1.0)
        assert c.lr_at(0, 10) == 1.0
        assert c.lr_at(5, 10) == pytest.approx(0.5)
        assert cfg.lr_at(5, 10) == cfg.lr

    @pytest.mark.parametrize("kwargs", [{"batch": 0}, {"lr": 0.0}, {"optimizer": "rmsprop"},
                                        {"lr_schedule": "step"}, {"beta": -1.0}])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            TrainConfig(**{**TINY, **kwargs})

    def test_log_grid(self):
        assert log_grid(0.01, 1.0, 3) == pytest.approx([0.01, 0.1, 1.0])
        with pytest.raises(ConfigError):
            log_grid(0.0, 1.0, 3)


class TestTrain:
    def test_identical_seeds_identical_trace(self, cfg, tiny_dataset):
        _, a = fit(cfg, tiny_dataset)
        _, b = fit(cfg, tiny_dataset)
        assert a.to_csv() == b.to_csv()
        assert a.to_csv().splitlines()[0] == ",".join(REPORT_COLUMNS)

    def test_report_rows_and_best_restore(self, cfg, tiny_dataset):
        model, report = fit(replace(cfg, epochs=3), tiny_dataset)
        assert [r["epoch"] for r in report.rows] == [1, 2, 3]
        val = evaluate_losses(model, tiny_dataset.subset("val"), cfg.loss)
        assert val["mae"] == pytest.approx(report.best_val_mae)
        assert report.best_val_mae <= report.initial_val_mae

    def test_training_reduces_train_loss(self, tiny_dataset):
        cfg = TrainConfig(**{**TINY, "epochs": 6, "beta": 0.0})
        _, report = fit(cfg, tiny_dataset)
        assert report.rows[-1]["train_reg"] < report.rows[0]["train_reg"]

    def test_beta_zero_sym_term_reported_but_unweighted(self, cfg, tiny_dataset):
        _, report = fit(replace(cfg, beta=0.0), tiny_dataset)
        for r in report.rows:
            assert r["train_final"] == r["train_reg"]

    def test_non_finite_targets_rejected(self, cfg, tiny_dataset):
        bad = replace(tiny_dataset, y_r=tiny_dataset.y_r.copy())
        bad.y_r[np.flatnonzero(bad.split == 0)[0]] = np.nan
        with pytest.raises(NumericError, match="train set"):
            fit(cfg, bad)

    def test_divergence_names_epoch_and_batch(self, cfg, tiny_dataset):
        with np.errstate(all="ignore"), pytest.raises(TrainingError, match=r"epoch \d+, batch \d+"):
            fit(replace(cfg, optimizer="sgd", lr=1e30, epochs=3), tiny_dataset)

    def test_unpaired_and_sgd_run(self, cfg, tiny_dataset):
        model, report = fit(replace(cfg, unpaired=True, optimizer="sgd", lr=1e-4), tiny_dataset)
        assert report.beta == 0.0 and len(report.rows) == 2
        assert np.isfinite(split_mae(model, tiny_dataset.subset("test")))

    def test_on_epoch_callback(self, cfg, tiny_dataset):
        from symreg.model import build_model
        seen = []
        model = build_model(cfg.backbone_config(), seed=0)
        train(model, tiny_dataset.subset("train"), tiny_dataset.subset("val"), cfg, seen.append)
        assert len(seen) == cfg.epochs

    def test_predict_pairs_batches(self, tiny_model, tiny_dataset):
        a = predict_pairs(tiny_model, tiny_dataset.x_r, tiny_dataset.x_l, batch=5)
        b = predict_pairs(tiny_model, tiny_dataset.x_r, tiny_dataset.x_l, batch=64)
        np.testing.assert_allclose(a[0], b[0], atol=1e-12)


class TestSweep:
    def test_sweep_rows_and_best(self, cfg, tiny_dataset):
        res = sweep("beta", [0.0, 0.5], replace(cfg, epochs=1), tiny_dataset)
        assert [r["value"] for r in res.rows] == [0.0, 0.5]
        assert res.best_value == min(res.rows, key=lambda r: r["val_mae"])["value"]
        assert res.to_csv().splitlines()[0] == "param,value,val_mae,test_mae,best_epoch"

    def test_bad_param(self, cfg, tiny_dataset):
        with pytest.raises(ConfigError):
            sweep("lr", [0.1], cfg, tiny_dataset)


class TestCheckpoint:
    @pytest.mark.parametrize("unpaired", [False, True])
    def test_round_trip(self, tiny_dataset, tmp_path, unpaired):
        model, _ = fit(TrainConfig(**{**TINY, "epochs": 1, "unpaired": unpaired}), tiny_dataset)
        save_checkpoint(model, tmp_path / "m.bin", extra={"note": 1})
        back, header = load_checkpoint(tmp_path / "m.bin")
        assert header["extra"]["note"] == 1
        assert type(back) is type(model)
        a = predict_pairs(model, tiny_dataset.x_r, tiny_dataset.x_l)
        b = predict_pairs(back, tiny_dataset.x_r, tiny_dataset.x_l)
        np.testing.assert_allclose(a[0], b[0], atol=1e-5)

    def test_bytes_deterministic(self, tiny_model):
        assert checkpoint_bytes(tiny_model) == checkpoint_bytes(tiny_model)

    def test_corrupt(self, tiny_model):
        buf = checkpoint_bytes(tiny_model)
        with pytest.raises(FormatError):
            parse_checkpoint(b"XXXXXXXX" + buf[8:])
        with pytest.raises(FormatError):
            parse_checkpoint(buf[:-4])
