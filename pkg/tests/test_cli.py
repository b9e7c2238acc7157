"""End-to-end tests of the command-line surface and its exit codes."""

import json
import os

import numpy as np
import pytest

from softsil.cli import main

TINY_CFG = """
dataset = synthetic
classes = 4
dim = 6
per_class = 12
data_seed = 0
encoder_widths = 8,6
head_hidden = 4
embed_dim = 4
p_classes = 4
k_samples = 2
epochs = 1
aug_noise = 0.05
"""


@pytest.fixture
def tiny_cfg(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY_CFG)
    return str(p)


class TestTrain:
    def test_success_writes_artifacts_and_prints_summary(self, tiny_cfg, tmp_path, capsys):
        out = str(tmp_path / "run")
        code = main(["train", "--config", tiny_cfg, "--objective", "ce_sil",
                     "--seed", "1", "--out", out])
        assert code == 0
        printed = json.loads(capsys.readouterr().out)
        assert printed["objective"] == "ce_sil"
        assert printed["seed"] == 1
        for name in ("metrics.csv", "summary.json", "checkpoint.bin", "timings.csv"):
            assert os.path.exists(os.path.join(out, name))

    def test_invalid_config_exit_1(self, tmp_path, capsys):
        p = tmp_path / "bad.cfg"
        p.write_text("bogus = 1\n")
        assert main(["train", "--config", str(p)]) == 1
        assert "error:" in capsys.readouterr().err

    def test_data_error_exit_3(self, tmp_path, capsys):
        p = tmp_path / "csv.cfg"
        p.write_text("dataset = csv\ncsv_path = /no/such/file.csv\n")
        assert main(["train", "--config", str(p)]) == 3
        assert "data error:" in capsys.readouterr().err


class TestEval:
    def test_checkpoint_roundtrip(self, tiny_cfg, tmp_path, capsys):
        out = str(tmp_path / "run")
        assert main(["train", "--config", tiny_cfg, "--objective", "ce", "--out", out]) == 0
        capsys.readouterr()
        code = main(["eval", "--checkpoint", os.path.join(out, "checkpoint.bin"),
                     "--data", tiny_cfg])
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["epoch"] == 1
        assert 0.0 <= report["test"]["top1"] <= 1.0

    def test_missing_checkpoint_exit_3(self, tiny_cfg, capsys):
        assert main(["eval", "--checkpoint", "/no/ckpt.bin", "--data", tiny_cfg]) == 3


class TestGradcheck:
    def test_small_scope_passes(self, capsys):
        assert main(["gradcheck", "--scope", "baselines", "--instances", "2"]) == 0
        out = capsys.readouterr().out
        assert out.count("PASS") == 4


class TestSynthReportPlot:
    def test_synth_writes_csvs(self, tiny_cfg, tmp_path, capsys):
        out = str(tmp_path / "synth")
        assert main(["synth", "--spec", tiny_cfg, "--out", out]) == 0
        for split in ("train", "val", "test"):
            rows = np.loadtxt(os.path.join(out, f"{split}.csv"), delimiter=",", ndmin=2)
            assert rows.shape[1] == 7  # label + 6 features
        meta = json.load(open(os.path.join(out, "meta.json")))
        assert meta["classes"] == 4

    def test_report_and_plot(self, tiny_cfg, tmp_path, capsys):
        runs = []
        for seed, tag in ((0, "ce"), (1, "ce")):
            out = str(tmp_path / f"run{seed}")
            assert main(["train", "--config", tiny_cfg, "--objective", tag,
                         "--seed", str(seed), "--out", out]) == 0
            runs.append(out)
        capsys.readouterr()

        csv_out = str(tmp_path / "report.csv")
        assert main(["report", *runs, "--out", csv_out]) == 0
        table = capsys.readouterr().out
        assert "ce" in table
        lines = open(csv_out).read().splitlines()
        assert lines[0] == "objective,runs,mean_test_top1,mean_test_top5"
        assert lines[1].startswith("ce,2,")

        plot_dir = str(tmp_path / "plots")
        metrics = [os.path.join(r, "metrics.csv") for r in runs]
        assert main(["plot", *metrics, "--out", plot_dir, "--name", "demo"]) == 0
        svg = open(os.path.join(plot_dir, "curves_demo.svg")).read()
        assert svg.startswith("<svg")

    def test_report_missing_dir_exit_3(self, tmp_path, capsys):
        assert main(["report", str(tmp_path / "nope")]) == 3
        assert "data error:" in capsys.readouterr().err
