import json
import os

import numpy as np
import pytest

from sysident import ModelConfig, Rng, build_model, save_checkpoint
from sysident.cli import main
from sysident.data import Dataset, SequenceRecord, save_csv_dataset

from test_models import u_channel_model


def run_cli(*args):
    return main([str(a) for a in args])


def write_linear_dataset(path, num_records, length, seed, gain=0.5):
    rng = Rng(seed)
    records = []
    for _ in range(num_records):
        u = rng.gaussian(length)
        y = np.zeros(length)
        y[1:] = gain * u[:-1]
        records.append(SequenceRecord(u=u, y=y))
    save_csv_dataset(Dataset(records=records), path)


class TestGenerate:
    def test_chen_sample_counts(self, tmp_path, capsys):
        out = tmp_path / "gen"
        assert run_cli("generate", "chen", "--records", 20, "--length", 100,
                       "--sigma-v", 0.3, "--sigma-w", 0.3, "--seed", 1,
                       "--out", out) == 0
        text = (out / "train.csv").read_text()
        assert len(text.strip().splitlines()) == 2001   # header + 20*100 rows
        assert (out / "valid.csv").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 1
        assert manifest["command"] == "generate"

    def test_noiseless_y_equals_ystar(self, tmp_path):
        out = tmp_path / "gen"
        run_cli("generate", "chen", "--records", 2, "--length", 50,
                "--sigma-v", 0, "--sigma-w", 0, "--seed", 2, "--out", out)
        lines = (out / "train.csv").read_text().strip().splitlines()
        assert lines[0] == "u1,y1,ystar1"
        for line in lines[1:]:
            _, y, ystar = line.split(",")
            assert y == ystar

    def test_same_seed_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            run_cli("generate", "chen", "--records", 3, "--length", 40,
                    "--seed", 7, "--out", out)
        assert (a / "train.csv").read_bytes() == (b / "train.csv").read_bytes()
        assert (a / "valid.csv").read_bytes() == (b / "valid.csv").read_bytes()


class TestTrain:
    def test_recovers_linear_gain_through_cli(self, tmp_path):
        data = tmp_path / "train.csv"
        val = tmp_path / "val.csv"
        write_linear_dataset(data, 8, 60, seed=3)
        write_linear_dataset(val, 2, 60, seed=4)
        out = tmp_path / "run"
        code = run_cli("train", "--data", data, "--val", val, "--family", "tcn",
                       "--fir", "--hidden", 8, "--depth", 1, "--kernel-size", 1,
                       "--activation", "tanh", "--epochs", 500, "--batch-size", 2,
                       "--plateau-patience", 25, "--lr-factor", 0.5,
                       "--early-stop-patience", 200, "--seed", 5, "--out", out)
        assert code == 0
        from sysident.models import load_checkpoint
        model, _ = load_checkpoint(out / "checkpoint.json")
        hi = model.forward(np.full((1, 1, 2), 1.0), training=False)[0, 0, -1]
        lo = model.forward(np.full((1, 1, 2), -1.0), training=False)[0, 0, -1]
        assert abs((hi - lo) / 2.0 - 0.5) < 1e-3
        assert (out / "history.csv").exists()

    def test_missing_dataset_exit_2(self, tmp_path, capsys):
        code = run_cli("train", "--data", tmp_path / "absent.csv",
                       "--out", tmp_path / "o")
        assert code == 2
        assert "absent.csv" in capsys.readouterr().err

    @pytest.mark.parametrize("family", ["tcn", "mlp", "lstm"])
    def test_family_dispatch(self, tmp_path, family):
        data = tmp_path / "train.csv"
        write_linear_dataset(data, 2, 40, seed=6)
        out = tmp_path / f"run_{family}"
        code = run_cli("train", "--data", data, "--family", family,
                       "--hidden", 3, "--epochs", 2, "--seed", 6, "--out", out)
        assert code == 0
        doc = json.loads((out / "checkpoint.json").read_text())
        assert doc["config"]["family"] == family


class TestEval:
    def _oracle_setup(self, tmp_path):
        """Checkpoint realizing yhat[k+1] = u[k] plus data obeying it."""
        model = u_channel_model()
        ckpt = tmp_path / "ckpt.json"
        save_checkpoint(model, ckpt)
        rng = Rng(8)
        u = rng.gaussian(50)
        y = np.zeros(50)
        y[1:] = u[:-1]
        data = tmp_path / "test.csv"
        save_csv_dataset(Dataset(records=[SequenceRecord(u=u, y=y)]), data)
        return ckpt, data

    def test_perfect_oracle_rmse_zero(self, tmp_path):
        ckpt, data = self._oracle_setup(tmp_path)
        out = tmp_path / "eval"
        assert run_cli("eval", "--checkpoint", ckpt, "--data", data,
                       "--mode", "one-step", "--out", out) == 0
        report = json.loads((out / "report_one_step.json").read_text())
        assert report["rmse_mean"] == 0.0

    def test_feedback_free_modes_agree(self, tmp_path):
        ckpt, data = self._oracle_setup(tmp_path)
        out = tmp_path / "eval"
        run_cli("eval", "--checkpoint", ckpt, "--data", data,
                "--mode", "both", "--out", out)
        one = json.loads((out / "report_one_step.json").read_text())
        free = json.loads((out / "report_free_run.json").read_text())
        assert one["rmse_per_channel"] == free["rmse_per_channel"]

    def test_band_restricts_spectrum(self, tmp_path):
        ckpt, data = self._oracle_setup(tmp_path)
        out = tmp_path / "eval"
        run_cli("eval", "--checkpoint", ckpt, "--data", data, "--mode",
                "one-step", "--band", 0.1, 0.3, "--out", out)
        lines = (out / "spectrum_one_step.csv").read_text().strip().splitlines()
        freqs = [float(l.split(",")[0]) for l in lines[1:]]
        assert freqs and min(freqs) >= 0.1 and max(freqs) <= 0.3

    def test_channel_mismatch_exit_2(self, tmp_path, capsys):
        ckpt, _ = self._oracle_setup(tmp_path)
        bad = tmp_path / "bad.csv"
        bad.write_text("u1,u2,y1\n1.0,2.0,3.0\n4.0,5.0,6.0\n")
        assert run_cli("eval", "--checkpoint", ckpt, "--data", bad,
                       "--out", tmp_path / "o") == 2


class TestGridsearch:
    def test_six_config_grid(self, tmp_path):
        data = tmp_path / "train.csv"
        val = tmp_path / "val.csv"
        write_linear_dataset(data, 4, 40, seed=9)
        write_linear_dataset(val, 2, 40, seed=10)
        grid = tmp_path / "grid.json"
        grid.write_text(json.dumps({
            "axes": {"hidden": [2, 3, 4], "kernel_size": [1, 2]},
            "base": {"family": "tcn", "depth": 1, "activation": "tanh"},
        }))
        out = tmp_path / "sweep"
        assert run_cli("gridsearch", "--grid", grid, "--data", data,
                       "--val", val, "--epochs", 3, "--seed", 11,
                       "--out", out) == 0
        lines = (out / "results.csv").read_text().strip().splitlines()
        assert len(lines) == 7   # header + 6 rows
        best = json.loads((out / "best.json").read_text())
        assert best["config"]["family"] == "tcn"


class TestVolterra:
    def _fir_checkpoint(self, tmp_path, activation="tanh"):
        cfg = ModelConfig(family="mlp", narx=False, hidden=5, depth=1,
                          order=3, activation=activation)
        model = build_model(cfg, Rng(12))
        rng = Rng(13)
        for _, p in model.named_parameters():
            p[...] = rng.uniform(-0.5, 0.5, p.shape)
        path = tmp_path / "fir.json"
        save_checkpoint(model, path)
        return path

    def test_kernels_with_verification(self, tmp_path):
        ckpt = self._fir_checkpoint(tmp_path)
        out = tmp_path / "volterra"
        assert run_cli("volterra", "--checkpoint", ckpt, "--degree", 2,
                       "--verify", "--out", out) == 0
        h1 = (out / "h1.csv").read_text().strip().splitlines()
        assert len(h1) == 4          # header + 3 lags
        h2 = (out / "h2.csv").read_text().strip().splitlines()
        assert len(h2) == 4          # header + 3 rows

    def test_relu_checkpoint_exit_3(self, tmp_path, capsys):
        ckpt = self._fir_checkpoint(tmp_path, activation="relu")
        assert run_cli("volterra", "--checkpoint", ckpt, "--verify",
                       "--out", tmp_path / "o") == 3


def test_eval_numeric_outputs_reproducible(tmp_path):
    model = u_channel_model()
    ckpt = tmp_path / "ckpt.json"
    save_checkpoint(model, ckpt)
    rng = Rng(14)
    u = rng.gaussian(30)
    y = np.zeros(30)
    y[1:] = u[:-1]
    data = tmp_path / "d.csv"
    save_csv_dataset(Dataset(records=[SequenceRecord(u=u, y=y)]), data)
    outs = []
    for name in ("e1", "e2"):
        out = tmp_path / name
        run_cli("eval", "--checkpoint", ckpt, "--data", data, "--mode",
                "one-step", "--seed", 0, "--out", out)
        outs.append((out / "predictions_one_step.csv").read_bytes())
    assert outs[0] == outs[1]
