"""Pipeline commands: artifacts, determinism, exit codes."""

import hashlib
import json
import os

import pytest

from latent_abcss.cli import main
from latent_abcss.rng_linalg import RngStream, load_array, save_array
from latent_abcss.tomography import NoiseModel, add_noise

MICRO_CONFIG = {
    "seed": 7,
    "grid": {"n_rows": 6, "n_cols": 5, "cell_size": 0.1},
    "gp": {"lengthscale": 0.4, "variance": 0.16, "mean": 0.5},
    "n_src": 2,
    "n_rcv": 2,
    "depth_min": 0.1,
    "depth_max": 0.5,
    "separation": 0.4,
    "noise_std": 0.1,
    "train_size": 120,
    "test_size": 3,
    "latent_dim": 3,
    "hidden": [12, 12],
    "epochs": 25,
    "batch_size": 32,
    "lambda_halving_period": 10,
    "n_particles": 300,
    "max_levels": 12,
    "eps_min": 1e-4,
    "eps_max": 50.0,
    "eps_count": 25,
    "smoothing_window": 5,
    "diag_subsample": 80,
}


def tree_digest(root):
    h = hashlib.sha256()
    for base, _, files in sorted(os.walk(root)):
        for name in sorted(files):
            path = os.path.join(base, name)
            h.update(os.path.relpath(path, root).encode())
            h.update(open(path, "rb").read())
    return h.hexdigest()


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "cfg.json"
    cfg_path.write_text(json.dumps(MICRO_CONFIG))
    return root, str(cfg_path)


@pytest.fixture(scope="module")
def pipeline(workdir):
    """gendata + train once; later tests reuse the artifacts."""
    root, cfg = workdir
    data = str(root / "data")
    model = str(root / "model")
    assert main(["gendata", "--config", cfg, "--out", data]) == 0
    assert main(["train", "--config", cfg, "--dataset", data, "--out", model]) == 0
    test_y = load_array(os.path.join(data, "test_y.f64"))
    test_x = load_array(os.path.join(data, "test_x.f64"))
    yobs = add_noise(test_y[0], NoiseModel(std=0.1), RngStream(7, 9))
    save_array(str(root / "yobs.f64"), yobs)
    save_array(str(root / "truth.f64"), test_x[0])
    return root, cfg, data, model


class TestGendata:
    def test_manifest_counts(self, pipeline):
        root, cfg, data, _ = pipeline
        manifest = json.load(open(os.path.join(data, "manifest.json")))
        assert manifest["n_train"] == 120
        assert manifest["n_test"] == 3
        assert manifest["n_rays"] == 4
        assert "provenance" in manifest

    def test_rerun_byte_identical(self, pipeline):
        root, cfg, data, _ = pipeline
        again = str(root / "data_again")
        assert main(["gendata", "--config", cfg, "--out", again]) == 0
        assert tree_digest(data) == tree_digest(again)

    def test_single_couple_dataset(self, workdir, tmp_path):
        root, cfg = workdir
        out = str(tmp_path / "one")
        assert main(["gendata", "--config", cfg, "--out", out, "--train-size", "1"]) == 0
        x = load_array(os.path.join(out, "train_x.f64"))
        assert x.shape[0] == 1

    def test_missing_config_exits_2(self, tmp_path):
        assert main(["gendata", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) == 2

    def test_invalid_config_exits_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({**MICRO_CONFIG, "separation": 99.0}))
        assert main(["gendata", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2


class TestTrain:
    def test_rerun_byte_identical(self, pipeline):
        root, cfg, data, model = pipeline
        again = str(root / "model_again")
        assert main(["train", "--config", cfg, "--dataset", data, "--out", again]) == 0
        assert tree_digest(model) == tree_digest(again)

    def test_history_csv_columns(self, pipeline):
        _, _, _, model = pipeline
        header = open(os.path.join(model, "history.csv")).readline().strip()
        assert header == "epoch,mse_x,mse_y,ot_term,lambda,val_mse_x,val_mse_y"

    def test_missing_dataset_exits_2(self, workdir, tmp_path):
        _, cfg = workdir
        rc = main(["train", "--config", cfg, "--dataset", str(tmp_path / "missing"), "--out", str(tmp_path / "m")])
        assert rc == 2


class TestInvert:
    def test_runs_and_writes_artifacts(self, pipeline):
        root, cfg, data, model = pipeline
        out = str(root / "inv")
        rc = main(
            [
                "invert",
                "--config",
                cfg,
                "--checkpoint",
                os.path.join(model, "model.ckpt"),
                "--yobs",
                str(root / "yobs.f64"),
                "--dataset",
                data,
                "--out",
                out,
                "--oracle",
                "--truth",
                str(root / "truth.f64"),
            ]
        )
        assert rc == 0
        summary = json.load(open(os.path.join(out, "summary.json")))
        assert summary["selected_eps_n"] > summary["stagnation_eps_n"]
        assert 0 < summary["p_hat_at_selected"] <= 1.0
        for name in ("curve.csv", "metrics.csv", "wasserstein.csv", "solutions_x.f64"):
            assert os.path.exists(os.path.join(out, name)), name

    def test_rerun_byte_identical(self, pipeline):
        root, cfg, data, model = pipeline
        outs = []
        for tag in ("da", "db"):
            out = str(root / f"inv_{tag}")
            rc = main(
                [
                    "invert",
                    "--config",
                    cfg,
                    "--checkpoint",
                    os.path.join(model, "model.ckpt"),
                    "--yobs",
                    str(root / "yobs.f64"),
                    "--dataset",
                    data,
                    "--out",
                    out,
                    "--oracle",
                    "--truth",
                    str(root / "truth.f64"),
                ]
            )
            assert rc == 0
            outs.append(out)
        assert tree_digest(outs[0]) == tree_digest(outs[1])

    def test_eps_grid_override(self, pipeline):
        root, cfg, data, model = pipeline
        out = str(root / "inv_grid")
        rc = main(
            [
                "invert",
                "--config",
                cfg,
                "--checkpoint",
                os.path.join(model, "model.ckpt"),
                "--yobs",
                str(root / "yobs.f64"),
                "--dataset",
                data,
                "--out",
                out,
                "--eps-grid",
                "1e-4,60,30,log",
            ]
        )
        assert rc == 0
        lines = open(os.path.join(out, "curve.csv")).read().strip().splitlines()
        assert len(lines) <= 31

    def test_bad_eps_grid_exits_2(self, pipeline):
        root, cfg, data, model = pipeline
        rc = main(
            [
                "invert",
                "--config",
                cfg,
                "--checkpoint",
                os.path.join(model, "model.ckpt"),
                "--yobs",
                str(root / "yobs.f64"),
                "--dataset",
                data,
                "--out",
                str(root / "inv_bad"),
                "--eps-grid",
                "5,4",
            ]
        )
        assert rc == 2


class TestEvaluateAndOracle:
    def test_evaluate_aggregates(self, pipeline):
        root, cfg, data, model = pipeline
        agg = str(root / "agg.csv")
        rc = main(["evaluate", "--runs", str(root / "inv"), str(root / "inv_da"), "--out", agg])
        assert rc == 0
        lines = open(agg).read().strip().splitlines()
        assert lines[0] == "inversion,pairing,count,mean,median,p05,p95"
        pooled = [l for l in lines if l.startswith("pooled,")]
        assert {p.split(",")[1] for p in pooled} == {"train", "post", "ours", "prior"}
        dist = open(str(root / "agg_pooled.csv")).readline().strip()
        assert dist == "train,post,ours,prior"

    def test_evaluate_rerun_identical(self, pipeline):
        root, cfg, data, model = pipeline
        a, b = str(root / "agg_a.csv"), str(root / "agg_b.csv")
        for out in (a, b):
            assert main(["evaluate", "--runs", str(root / "inv"), "--out", out]) == 0
        assert open(a).read() == open(b).read()

    def test_evaluate_missing_run_exits_2(self, tmp_path):
        rc = main(["evaluate", "--runs", str(tmp_path / "ghost"), "--out", str(tmp_path / "agg.csv")])
        assert rc == 2

    def test_oracle_posterior_artifacts(self, pipeline):
        root, cfg, data, model = pipeline
        out = str(root / "oracle")
        rc = main(["oracle-posterior", "--config", cfg, "--dataset", data, "--yobs", str(root / "yobs.f64"), "--out", out])
        assert rc == 0
        mean = load_array(os.path.join(out, "posterior_mean.f64"))
        cov = load_array(os.path.join(out, "posterior_cov.f64"))
        assert mean.shape == (30,)
        assert cov.shape == (30, 30)
