import json

import numpy as np
import pytest
from sklearn.datasets import load_digits

from conftest import gaussian_multiview
from gpmvc import report
from gpmvc.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, SweepSpec, main
from gpmvc.dataio import MultiViewDataset, PartialSplit, save_dataset

FAST = {"epochs_per_step": 2, "batch_size": 16, "learning_rate": 1e-3,
        "network": {"latent_dim": 4, "encoder_hidden": [16], "discriminator_hidden": [8, 4]}}


@pytest.fixture
def toy_dir(tmp_path):
    save_dataset(gaussian_multiview(n_per_class=20), tmp_path / "toy")
    return tmp_path / "toy"


@pytest.fixture
def fast_config(tmp_path):
    path = tmp_path / "fast.json"
    path.write_text(json.dumps(FAST))
    return path


@pytest.fixture
def digits_dir(tmp_path):
    """Pixels plus a gradient-magnitude view, both 8x8 images, 3 classes."""
    d = load_digits(n_class=3)
    x = d.images[:90] / 16.0
    gy, gx = np.gradient(x, axis=(1, 2))
    edges = np.hypot(gx, gy)
    ds = MultiViewDataset("digits", (x.reshape(90, 64), edges.reshape(90, 64)),
                          d.target[:90], 3, image_shapes={0: (8, 8), 1: (8, 8)})
    save_dataset(ds, tmp_path / "digits")
    return tmp_path / "digits"


def run_cli(*args):
    return main([str(a) for a in args])


class TestMask:
    def test_deterministic_bytes(self, toy_dir, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert run_cli("mask", "--data", toy_dir, "--ratio", 0.5, "--seed", 7, "--out", a) == EXIT_OK
        assert run_cli("mask", "--data", toy_dir, "--ratio", 0.5, "--seed", 7, "--out", b) == EXIT_OK
        assert a.read_bytes() == b.read_bytes()

    def test_bad_ratio(self, toy_dir, tmp_path, capsys):
        code = run_cli("mask", "--data", toy_dir, "--ratio", 1.5, "--out", tmp_path / "m.json")
        assert code == EXIT_INVALID
        assert "ratio must be in [0,1]" in capsys.readouterr().err

    def test_full_ratio(self, toy_dir, tmp_path):
        out = tmp_path / "m.json"
        run_cli("mask", "--data", toy_dir, "--ratio", 1.0, "--out", out)
        assert PartialSplit.load(out).unpaired == {}

    def test_missing_dataset(self, tmp_path):
        assert run_cli("mask", "--data", tmp_path / "nope", "--ratio", 0.5,
                       "--out", tmp_path / "m.json") == EXIT_INVALID


class TestRun:
    def _mask(self, toy_dir, tmp_path, ratio=0.5):
        out = tmp_path / "mask.json"
        run_cli("mask", "--data", toy_dir, "--ratio", ratio, "--seed", 1, "--out", out)
        return out

    def test_metrics_contract(self, toy_dir, tmp_path, fast_config):
        mask = self._mask(toy_dir, tmp_path)
        out = tmp_path / "run"
        assert run_cli("run", "--data", toy_dir, "--mask", mask, "--config", fast_config,
                       "--out", out) == EXIT_OK
        metrics = json.loads((out / "metrics.json").read_text())
        assert {"acc", "nmi", "purity"} <= set(metrics)
        assert metrics["mode"] == "ALL" and metrics["seed"] == 1
        assert (out / "mask.json").read_bytes() == mask.read_bytes()

    def test_ablation_tag(self, toy_dir, tmp_path):
        cfg = tmp_path / "ae.json"
        cfg.write_text(json.dumps({**FAST, "ablation_mode": "AE"}))
        out = tmp_path / "run"
        run_cli("run", "--data", toy_dir, "--mask", self._mask(toy_dir, tmp_path),
                "--config", cfg, "--out", out)
        assert json.loads((out / "metrics.json").read_text())["mode"] == "AE"

    def test_missing_mask(self, toy_dir, tmp_path):
        assert run_cli("run", "--data", toy_dir, "--mask", tmp_path / "none.json",
                       "--out", tmp_path / "run") == EXIT_INVALID

    def test_bad_config(self, toy_dir, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"epochs_per_step": -1}))
        assert run_cli("run", "--data", toy_dir, "--mask", self._mask(toy_dir, tmp_path),
                       "--config", cfg, "--out", tmp_path / "run") == EXIT_INVALID

    def test_runtime_failure(self, toy_dir, tmp_path, fast_config):
        # a single paired sample cannot seed two clusters
        mask = self._mask(toy_dir, tmp_path, ratio=0.02)
        assert run_cli("run", "--data", toy_dir, "--mask", mask, "--config", fast_config,
                       "--out", tmp_path / "run") == EXIT_RUNTIME

    def test_baseline(self, toy_dir, tmp_path, fast_config):
        out = tmp_path / "base"
        assert run_cli("baseline", "--data", toy_dir, "--mask", self._mask(toy_dir, tmp_path),
                       "--config", fast_config, "--out", out) == EXIT_OK
        assert json.loads((out / "metrics.json").read_text())["mode"] == "baseline"


def write_spec(tmp_path, toy_dir, **fields):
    spec = {"data": str(toy_dir), "out": str(tmp_path / "sweep"), "config": FAST, **fields}
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec))
    return path


class TestSweep:
    def test_two_repeats(self, tmp_path, toy_dir):
        spec = write_spec(tmp_path, toy_dir, ratios=[0.5], repeats=2)
        assert run_cli("sweep", "--spec", spec) == EXIT_OK
        out = tmp_path / "sweep"
        rows = (out / "summary.csv").read_text().strip().splitlines()
        assert len(rows) == 2  # header + one cell
        # aggregation agrees with the per-run files
        runs = report.collect_metrics(out / "runs")
        assert len(runs) == 2
        cell = report.aggregate(runs)[0]
        accs = [r["acc"] for r in runs]
        assert cell.mean("acc") == pytest.approx(np.mean(accs))
        assert cell.std("acc") == pytest.approx(np.std(accs))
        assert f"{np.std(accs):.6g}" in rows[1] or f"{round(np.std(accs), 6)}" in rows[1]
        md = (out / "summary.md").read_text()
        assert md.count("| ALL |") == 3  # one row per metric table

    def test_single_repeat_std_zero(self, tmp_path, toy_dir):
        spec = write_spec(tmp_path, toy_dir, ratios=[0.7], repeats=1)
        assert run_cli("sweep", "--spec", spec) == EXIT_OK
        cell = report.aggregate(report.collect_metrics(tmp_path / "sweep" / "runs"))[0]
        assert cell.std("acc") == 0.0 and cell.n == 1

    def test_failed_run_recorded(self, tmp_path, toy_dir):
        spec = write_spec(tmp_path, toy_dir, ratios=[0.0, 0.6], repeats=1)
        assert run_cli("sweep", "--spec", spec) == EXIT_RUNTIME
        out = tmp_path / "sweep"
        failures = json.loads((out / "failures.json").read_text())
        assert [f["ratio"] for f in failures] == [0.0]
        assert "TrainingError" in failures[0]["error"]
        assert len(report.collect_metrics(out / "runs")) == 1

    def test_modes_and_workers(self, tmp_path, toy_dir):
        spec = write_spec(tmp_path, toy_dir, ratios=[0.5], repeats=1,
                          modes=["AE", "ALL", "baseline"], workers=2)
        assert run_cli("sweep", "--spec", spec) == EXIT_OK
        modes = {c.mode for c in report.aggregate(report.collect_metrics(tmp_path / "sweep"))}
        assert modes == {"AE", "ALL", "baseline"}

    def test_default_spec_size(self, toy_dir):
        spec = SweepSpec(data=str(toy_dir))
        assert spec.ratios == [0.1, 0.3, 0.5, 0.7, 0.9] and spec.repeats == 10
        jobs = spec.jobs()
        assert len(jobs) == 50
        assert len({j["out"] for j in jobs}) == 50

    @pytest.mark.parametrize("bad", [{"ratios": [1.2]}, {"repeats": 0}, {"modes": ["GAN"]},
                                     {"config": {"batch_size": 0}}, {"colour": 1}])
    def test_invalid_spec(self, tmp_path, toy_dir, bad):
        assert run_cli("sweep", "--spec", write_spec(tmp_path, toy_dir, **bad)) == EXIT_INVALID

    def test_missing_spec(self, tmp_path):
        assert run_cli("sweep", "--spec", tmp_path / "nope.json") == EXIT_INVALID


def fake_runs(root, modes=("AE", "ALL"), ratios=(0.1, 0.5, 0.9), seeds=(0, 1)):
    rng = np.random.default_rng(0)
    for mode in modes:
        for r in ratios:
            for s in seeds:
                d = root / mode / f"r{r}" / f"s{s}"
                d.mkdir(parents=True)
                vals = rng.uniform(0.5, 1.0, 3)
                d.joinpath("metrics.json").write_text(json.dumps(
                    {"acc": vals[0], "nmi": vals[1], "purity": vals[2], "ratio": r,
                     "seed": s, "mode": mode}))


class TestReport:
    def test_outputs(self, tmp_path):
        fake_runs(tmp_path / "runs")
        out = tmp_path / "rep"
        assert run_cli("report", "--runs", tmp_path / "runs", "--format", "md", "--plots",
                       "--out", out) == EXIT_OK
        assert sorted(p.name for p in out.iterdir()) == ["acc_table.md", "nmi.png", "purity.png"]
        lines = (out / "acc_table.md").read_text().strip().splitlines()
        assert all(line.startswith("|") and line.endswith("|") for line in lines)
        assert len(lines) == 4  # header, rule, AE, ALL

    def test_one_curve_per_mode(self, tmp_path):
        fake_runs(tmp_path / "runs", modes=("AE+AT", "ALL"))
        cells = report.aggregate(report.collect_metrics(tmp_path / "runs"))
        assert report.plot_curves(cells, "nmi", tmp_path / "nmi.png") == ["AE+AT", "ALL"]
        assert (tmp_path / "nmi.png").stat().st_size > 0

    def test_csv(self, tmp_path, capsys):
        fake_runs(tmp_path / "runs", modes=("ALL",), ratios=(0.3,))
        assert run_cli("report", "--runs", tmp_path / "runs", "--format", "csv") == EXIT_OK
        text = capsys.readouterr().out
        assert text.splitlines()[0] == "method,0.3"

    def test_empty(self, tmp_path):
        (tmp_path / "empty").mkdir()
        assert run_cli("report", "--runs", tmp_path / "empty") == EXIT_INVALID


class TestDumpGenerated:
    @pytest.fixture
    def digits_run(self, digits_dir, tmp_path, fast_config):
        mask = tmp_path / "mask.json"
        run_cli("mask", "--data", digits_dir, "--ratio", 0.5, "--out", mask)
        out = tmp_path / "run"
        assert run_cli("run", "--data", digits_dir, "--mask", mask, "--config", fast_config,
                       "--out", out) == EXIT_OK
        return out

    def test_grid(self, digits_run, tmp_path):
        out = tmp_path / "grid"
        assert run_cli("dump-generated", "--run", digits_run, "--view", 1, "--count", 8,
                       "--out", out) == EXIT_OK
        grid = np.loadtxt(out / "view_1_grid.csv", delimiter=",")
        assert grid.shape == (3 * 8, 8 * 8)
        assert (out / "view_1_grid.png").exists()
        # pipeline already dumped every image view
        assert (digits_run / "generated_samples" / "view_0_grid.png").exists()

    def test_count_zero(self, digits_run):
        assert run_cli("dump-generated", "--run", digits_run, "--view", 0,
                       "--count", 0) == EXIT_INVALID

    def test_feature_view(self, toy_dir, tmp_path, fast_config, capsys):
        mask = tmp_path / "mask.json"
        run_cli("mask", "--data", toy_dir, "--ratio", 0.5, "--out", mask)
        run_cli("run", "--data", toy_dir, "--mask", mask, "--config", fast_config,
                "--out", tmp_path / "run")
        capsys.readouterr()
        assert run_cli("dump-generated", "--run", tmp_path / "run", "--view", 0) == EXIT_INVALID
        assert "image metadata" in capsys.readouterr().err
