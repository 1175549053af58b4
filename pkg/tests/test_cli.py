"""Command-line interface: outputs, precedence, provenance and exit codes."""
import json

import numpy as np
import pytest

from symreg.cli import EXIT_FORMAT, EXIT_NUMERIC, EXIT_USAGE, main

TRAIN_FLAGS = ["--epochs", "1", "--plan", "2,3,4,5", "--lr", "1e-3"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["gen", "--out", str(d / "d.bin"), "--n", "30", "--dims", "8x8x4", "--seed", "2",
                 "--split-counts", "18,6,6"]) == 0
    assert main(["train", "--data", str(d / "d.bin"), "--out", str(d / "m.bin"), *TRAIN_FLAGS]) == 0
    return d


def provenance(path):
    return json.loads(open(str(path) + ".provenance.json").read())


class TestCommands:
    def test_gen_outputs(self, workdir):
        prov = provenance(workdir / "d.bin")
        assert prov["command"] == "gen" and prov["config"]["seed"] == 2
        assert prov["config"]["split_counts"] == [18, 6, 6]

    def test_train_report_and_provenance(self, workdir):
        lines = (workdir / "m.report.csv").read_text().splitlines()
        assert lines[0].startswith("epoch,train_reg") and len(lines) == 2
        assert provenance(workdir / "m.bin")["config"]["epochs"] == 1

    def test_eval_writes_tables(self, workdir):
        out = workdir / "ev.json"
        assert main(["eval", "--data", str(workdir / "d.bin"), "--model", str(workdir / "m.bin"),
                     "--out", str(out), "--n-mc", "4", "--calibrate", "--gamma-grid", "0,1"]) == 0
        doc = json.loads(out.read_text())
        assert {"prediction", "binary", "uncertainty", "gamma", "auc"} <= set(doc)
        assert (workdir / "ev.table3.csv").exists() and (workdir / "ev.table5.csv").exists()

    def test_uq_writes_intervals_and_curve(self, workdir):
        out = workdir / "iv.csv"
        assert main(["uq", "--data", str(workdir / "d.bin"), "--model", str(workdir / "m.bin"),
                     "--out", str(out), "--n-mc", "4", "--gamma-r", "0.5"]) == 0
        rows = out.read_text().splitlines()
        assert rows[0].split(",")[:3] == ["case_id", "y_r", "y_l"] and len(rows) == 7
        assert (workdir / "iv.curve.csv").read_text().startswith("k,cp,sharpness")

    def test_gamma_sweep(self, workdir):
        out = workdir / "g.csv"
        assert main(["sweep", "--param", "gamma", "--grid", "0,0.5,1", "--data", str(workdir / "d.bin"),
                     "--model", str(workdir / "m.bin"), "--out", str(out), "--n-mc", "3"]) == 0
        assert len(out.read_text().splitlines()) == 10

    def test_beta_log_grid_sweep(self, workdir):
        out = workdir / "b.csv"
        assert main(["sweep", "--param", "beta", "--log-grid", "0.1:1:2", "--data", str(workdir / "d.bin"),
                     "--out", str(out), *TRAIN_FLAGS]) == 0
        assert provenance(out)["config"]["grid"] == pytest.approx([0.1, 1.0])

    @pytest.mark.parametrize("extra", [["--unpaired"], ["--beta", "0"]])
    def test_baseline_modes(self, workdir, extra):
        out = workdir / f"m{len(extra)}.bin"
        assert main(["train", "--data", str(workdir / "d.bin"), "--out", str(out), *TRAIN_FLAGS, *extra]) == 0
        cfg = provenance(out)["config"]
        assert cfg["unpaired"] if extra == ["--unpaired"] else cfg["beta"] == 0.0


class TestPrecedence:
    def test_flag_over_config_over_default(self, workdir):
        conf = workdir / "c.json"
        conf.write_text(json.dumps({"epochs": 3, "alpha": 0.1, "plan": [2, 3, 4, 5]}))
        out = workdir / "mp.bin"
        assert main(["train", "--data", str(workdir / "d.bin"), "--out", str(out), "--config", str(conf),
                     "--epochs", "1"]) == 0
        cfg = provenance(out)["config"]
        assert cfg["epochs"] == 1      # flag
        assert cfg["alpha"] == 0.1     # config file
        assert cfg["batch"] == 8       # default


class TestDeterminism:
    def test_gen_and_train_byte_identical(self, workdir, tmp_path):
        main(["gen", "--out", str(tmp_path / "d.bin"), "--n", "30", "--dims", "8x8x4", "--seed", "2",
              "--split-counts", "18,6,6"])
        assert (tmp_path / "d.bin").read_bytes() == (workdir / "d.bin").read_bytes()
        main(["train", "--data", str(tmp_path / "d.bin"), "--out", str(tmp_path / "m.bin"), *TRAIN_FLAGS])
        assert (tmp_path / "m.bin").read_bytes() == (workdir / "m.bin").read_bytes()
        assert (tmp_path / "m.report.csv").read_bytes() == (workdir / "m.report.csv").read_bytes()


class TestExitCodes:
    def test_usage_error(self):
        with pytest.raises(SystemExit) as err:
            main(["train"])
        assert err.value.code == EXIT_USAGE

    def test_bad_grid_is_usage(self, workdir):
        with pytest.raises(SystemExit) as err:
            main(["sweep", "--param", "beta", "--log-grid", "1:2", "--data", "x", "--out", "y"])
        assert err.value.code == EXIT_USAGE

    def test_gamma_sweep_needs_model(self, workdir):
        with pytest.raises(SystemExit) as err:
            main(["sweep", "--param", "gamma", "--grid", "0", "--data", str(workdir / "d.bin"),
                  "--out", str(workdir / "x.csv")])
        assert err.value.code == EXIT_USAGE

    def test_config_error(self, workdir):
        assert main(["train", "--data", str(workdir / "d.bin"), "--out", str(workdir / "z.bin"),
                     "--batch", "0"]) == EXIT_USAGE

    def test_format_error(self, tmp_path):
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"not a dataset at all")
        assert main(["train", "--data", str(bad), "--out", str(tmp_path / "m.bin")]) == EXIT_FORMAT

    def test_missing_file(self, tmp_path):
        assert main(["train", "--data", str(tmp_path / "nope.bin"), "--out", str(tmp_path / "m.bin")]) \
            == EXIT_FORMAT

    def test_numeric_failure(self, workdir):
        with np.errstate(all="ignore"):
            code = main(["train", "--data", str(workdir / "d.bin"), "--out", str(workdir / "nan.bin"),
                         "--optimizer", "sgd", "--lr", "1e30", "--epochs", "3", "--plan", "2,3,4,5"])
        assert code == EXIT_NUMERIC
