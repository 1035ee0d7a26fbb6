import json
import subprocess
import sys

import numpy as np
import pytest

from n2c.cli import main
from n2c.image import Contrast, Image, read_image, write_image


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    """A small generated volume shared by the CLI tests."""
    out = tmp_path_factory.mktemp("data")
    code = run_cli(
        "generate", "--out", str(out), "--seed", "11",
        "--size", "32", "--n-slices", "4", "--n-regions", "3",
    )
    assert code == 0
    return out


class TestGenerate:
    def test_default_file_count(self, tmp_path):
        out = tmp_path / "vol"
        assert run_cli("generate", "--out", str(out), "--seed", "5") == 0
        files = sorted(p.name for p in out.glob("*.n2cimg"))
        # 8 slices x 2 contrasts x (1 clean + 2 noisy)
        assert len(files) == 48
        assert "slice000_A_clean.n2cimg" in files
        assert "slice007_B_noisy02.n2cimg" in files
        assert (out / "manifest.json").exists()

    def test_rerun_same_seed_identical_bytes(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run_cli(
                "generate", "--out", str(out), "--seed", "9",
                "--size", "32", "--n-slices", "2", "--n-regions", "3",
            ) == 0
        for f in sorted(a.glob("*.n2cimg")):
            assert f.read_bytes() == (b / f.name).read_bytes()

    def test_missing_seed_names_key(self, tmp_path, capsys):
        assert run_cli("generate", "--out", str(tmp_path / "x")) == 2
        assert "seed" in capsys.readouterr().err

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("seed = 1\nnoise_levle = 0.05\n")
        assert run_cli("generate", "--config", str(cfg), "--out", str(tmp_path / "x")) == 2
        assert "noise_levle" in capsys.readouterr().err

    def test_config_file_with_flag_override(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("# comment\nseed = 1\nsize = 32\nn_slices = 2\nn_regions = 3\n")
        out = tmp_path / "v"
        assert run_cli("generate", "--config", str(cfg), "--out", str(out), "--seed", "2") == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 2  # flag wins
        assert manifest["config"]["size"] == 32
        assert manifest["finished_at"] is not None

    def test_invalid_config_value_exit_2(self, tmp_path, capsys):
        assert run_cli(
            "generate", "--out", str(tmp_path / "x"), "--seed", "1", "--size", "4"
        ) == 2
        assert "size" in capsys.readouterr().err


class TestTrain:
    def test_train_writes_model_report_manifest(self, data_dir, tmp_path):
        out = tmp_path / "run"
        code = run_cli(
            "train", "n2v_bfs", "--data", str(data_dir), "--out", str(out),
            "--seed", "0", "--lr", "2e-3", "--max-epochs", "2", "--patience", "1",
        )
        assert code == 0
        assert (out / "model.n2cmdl").exists()
        report = json.loads((out / "report.json").read_text())
        assert report["scheme"] == "n2v_bfs"
        assert len(report["history"]) == 2
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "train"
        assert manifest["config"]["lr"] == 2e-3

    def test_unknown_scheme_lists_valid(self, data_dir, tmp_path, capsys):
        code = run_cli("train", "bogus", "--data", str(data_dir), "--out", str(tmp_path / "x"), "--seed", "0")
        assert code == 2
        err = capsys.readouterr().err
        assert "n2c_bfs" in err and "n2neighbor_bfs" in err

    def test_missing_data_dir_exit_3(self, tmp_path, capsys):
        code = run_cli(
            "train", "n2v_bfs", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "x"),
            "--seed", "0",
        )
        assert code == 3

    def test_rerun_from_manifest_reproduces_model_bytes(self, data_dir, tmp_path):
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        argv = [
            "train", "n2v_bfs", "--data", str(data_dir), "--seed", "3",
            "--lr", "2e-3", "--max-epochs", "2", "--patience", "1",
        ]
        assert run_cli(*argv, "--out", str(out1)) == 0
        manifest = json.loads((out1 / "manifest.json").read_text())
        cfg = manifest["config"]
        assert run_cli(
            "train", cfg["scheme"], "--data", str(data_dir), "--out", str(out2),
            "--seed", str(cfg["seed"]), "--lr", str(cfg["lr"]),
            "--max-epochs", str(cfg["max_epochs"]), "--patience", str(cfg["patience"]),
        ) == 0
        assert (out1 / "model.n2cmdl").read_bytes() == (out2 / "model.n2cmdl").read_bytes()
        r1 = json.loads((out1 / "report.json").read_text())
        r2 = json.loads((out2 / "report.json").read_text())
        assert r1["history"] == r2["history"]


@pytest.fixture(scope="module")
def trained_model(data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("model")
    assert run_cli(
        "train", "n2v_bfs", "--data", str(data_dir), "--out", str(out),
        "--seed", "1", "--lr", "2e-3", "--max-epochs", "3", "--patience", "2",
    ) == 0
    return out / "model.n2cmdl"


class TestDenoise:
    def test_constant_image_unchanged(self, trained_model, tmp_path):
        src = tmp_path / "const.n2cimg"
        write_image(Image(np.full((24, 24), 0.4, dtype=np.float32)), src)
        out = tmp_path / "den"
        assert run_cli("denoise", "--model", str(trained_model), "--out", str(out), str(src)) == 0
        den = read_image(out / "const.n2cimg")
        np.testing.assert_allclose(den.data, 0.4, atol=1e-6)

    def test_output_bounded_and_tagged(self, trained_model, data_dir, tmp_path):
        src = data_dir / "slice000_A_noisy01.n2cimg"
        out = tmp_path / "den"
        assert run_cli("denoise", "--model", str(trained_model), "--out", str(out), str(src)) == 0
        noisy = read_image(src)
        den = read_image(out / src.name)
        assert den.contrast is Contrast.A
        assert den.realization_id == noisy.realization_id
        assert den.data.min() >= noisy.data.min() - 1e-6
        assert den.data.max() <= noisy.data.max() + 1e-6

    def test_denoising_raises_psnr(self, trained_model, data_dir, tmp_path):
        from n2c.metrics import MetricConfig, psnr

        src = data_dir / "slice000_A_noisy01.n2cimg"
        out = tmp_path / "den"
        assert run_cli("denoise", "--model", str(trained_model), "--out", str(out), str(src)) == 0
        clean = read_image(data_dir / "slice000_A_clean.n2cimg")
        mc = MetricConfig(data_range=float(clean.data.max()))
        assert psnr(read_image(out / src.name), clean, mc) > psnr(read_image(src), clean, mc)

    def test_bad_model_file_exit_3(self, tmp_path, capsys):
        bad = tmp_path / "bad.n2cmdl"
        bad.write_bytes(b"NOTAMODEL")
        src = tmp_path / "x.n2cimg"
        write_image(Image(np.zeros((8, 8), dtype=np.float32)), src)
        assert run_cli("denoise", "--model", str(bad), "--out", str(tmp_path / "o"), str(src)) == 3


class TestEvaluate:
    def test_clean_vs_itself_inf_and_one(self, data_dir, tmp_path):
        out_csv = tmp_path / "m.csv"
        pred = tmp_path / "preds"
        pred.mkdir()
        for f in data_dir.glob("*_clean.n2cimg"):
            (pred / f.name).write_bytes(f.read_bytes())
        assert run_cli(
            "evaluate", "--pred", str(pred), "--clean", str(data_dir),
            "--out", str(out_csv), "--method", "identity",
        ) == 0
        lines = out_csv.read_text().strip().splitlines()
        assert lines[0] == "slice_index,method,psnr_db,ssim"
        body = [l.split(",") for l in lines[1:]]
        data_rows = [r for r in body if r[0] not in ("mean", "std")]
        assert all(r[2] == "inf" and float(r[3]) == 1.0 for r in data_rows)
        mean_row = next(r for r in body if r[0] == "mean")
        assert mean_row[1] == "identity"

    def test_noisy_vs_clean_summary_hits_anchor(self, tmp_path):
        out = tmp_path / "vol64"
        assert run_cli("generate", "--out", str(out), "--seed", "5") == 0
        pred = tmp_path / "noisy"
        pred.mkdir()
        for f in out.glob("*_noisy*.n2cimg"):
            if "_A_" in f.name:
                (pred / f.name).write_bytes(f.read_bytes())
        csv_path = tmp_path / "m.csv"
        assert run_cli(
            "evaluate", "--pred", str(pred), "--clean", str(out), "--out", str(csv_path),
        ) == 0
        rows = [l.split(",") for l in csv_path.read_text().strip().splitlines()[1:]]
        mean_psnr = float(next(r for r in rows if r[0] == "mean")[2])
        assert mean_psnr == pytest.approx(26.02, abs=0.3)

    def test_orphans_listed(self, data_dir, tmp_path, capsys):
        pred = tmp_path / "preds"
        pred.mkdir()
        write_image(Image(np.zeros((8, 8), dtype=np.float32)), pred / "mystery.n2cimg")
        assert run_cli(
            "evaluate", "--pred", str(pred), "--clean", str(data_dir), "--out", str(tmp_path / "m.csv")
        ) == 3
        assert "mystery" in capsys.readouterr().err


class TestGradcheckCommand:
    def test_bilateral_passes(self, capsys):
        assert run_cli("gradcheck", "--target", "bilateral", "--seed", "1") == 0
        out = capsys.readouterr().out
        for name in ("layer0.sigma_sx", "layer1.sigma_sy", "layer2.sigma_r"):
            assert name in out

    def test_injected_fault_fails(self, capsys):
        assert run_cli("gradcheck", "--target", "bilateral", "--seed", "1", "--inject-fault") == 4
        assert "sigma_r" in capsys.readouterr().out


class TestEntryPoint:
    def test_console_script_version(self):
        proc = subprocess.run(
            [sys.executable, "-m", "n2c.cli", "--version"], capture_output=True, text=True
        )
        assert proc.returncode == 0
        assert "n2c" in proc.stdout
