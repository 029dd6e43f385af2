import csv

import numpy as np
import pytest
import torch

from martrain.data import PairedDataset, ingest_hu, ingested_to_normalized, normalize_hu
from martrain.infer import infer_file, infer_volume, load_generator
from martrain.io import KIND_NORMALIZED, read_marv
from martrain.train import LOG_FIELDS, TrainConfig, train


class TestDataset:
    def test_loading(self, toy_manifest):
        ds = PairedDataset(toy_manifest)
        assert len(ds) == 10
        s = ds[0]
        assert s.artifact.shape == (1, 1, 16, 16, 16)
        assert s.target.shape == s.artifact.shape == s.clean.shape
        for t in (s.artifact, s.target, s.clean):
            assert float(t.min()) >= 0.2
            assert float(t.max()) <= 1.0

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            PairedDataset(tmp_path / "none.tsv")

    def test_window_roundtrip(self):
        rng = np.random.default_rng(0)
        hu = rng.uniform(-1000, 3071, (4, 4, 4))
        ing = ingest_hu(hu)
        assert np.abs(ingested_to_normalized(ing) - normalize_hu(hu)).max() < 1e-6


@pytest.fixture(scope="module")
def short_run(toy_manifest, tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = TrainConfig(
        manifest_path=str(toy_manifest),
        model_out=str(root / "model.pt"),
        log_out=str(root / "log.csv"),
        epochs=2,
        seed=11,
    )
    return cfg, train(cfg)


class TestTraining:
    def test_log_rows_and_fields(self, short_run):
        cfg, result = short_run
        assert len(result.rows) == 2 * 10
        with open(result.log_path) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 20
        assert set(rows[0]) == set(LOG_FIELDS)
        for r in rows:
            assert np.isfinite(float(r["l_gen"]))

    def test_checkpoint_loads(self, short_run):
        cfg, result = short_run
        g = load_generator(result.model_path)
        assert g.downsampling_factor == 8

    def test_deterministic_given_seed(self, toy_manifest, tmp_path):
        logs = []
        for run in range(2):
            cfg = TrainConfig(
                manifest_path=str(toy_manifest),
                model_out=str(tmp_path / f"m{run}.pt"),
                epochs=1,
                seed=21,
            )
            logs.append(train(cfg).rows)
        assert logs[0] == logs[1]

    def test_alpha_zero_run_logs_but_excludes_retinex(self, toy_manifest, tmp_path):
        cfg = TrainConfig(
            manifest_path=str(toy_manifest),
            model_out=str(tmp_path / "m.pt"),
            epochs=1,
            seed=4,
            alpha=0.0,
        )
        result = train(cfg)
        for r in result.rows:
            assert r["l_retinex"] > 0.0
            assert r["l_gen"] == pytest.approx(r["l_mse"] + r["l_adv"], rel=1e-6)

    def test_config_validation(self, toy_manifest):
        with pytest.raises(ValueError):
            TrainConfig(manifest_path="m", model_out="o", lr_g=0.0)
        with pytest.raises(ValueError):
            TrainConfig(manifest_path="m", model_out="o", alpha=-1.0)
        with pytest.raises(ValueError):
            TrainConfig(manifest_path="m", model_out="o", batch_size=2)


class TestInference:
    def test_infer_writes_normalized_volume(self, short_run, toy_manifest, tmp_path):
        from martrain.io import read_manifest

        cfg, result = short_run
        entry = read_manifest(toy_manifest)[0]
        out = tmp_path / "mar.marv"
        infer_file(result.model_path, entry.artifact, out)
        vol = read_marv(out)
        assert vol.kind == KIND_NORMALIZED
        assert vol.data.shape == (16, 16, 16)
        assert 0.0 <= vol.data.min() and vol.data.max() <= 1.0

    def test_inference_deterministic(self, short_run, toy_manifest):
        from martrain.io import read_manifest

        cfg, result = short_run
        entry = read_manifest(toy_manifest)[0]
        g = load_generator(result.model_path)
        vol = read_marv(entry.artifact)
        a = infer_volume(g, vol)
        b = infer_volume(g, vol)
        assert np.array_equal(a, b)

    def test_nondivisible_dims_padded(self, short_run):
        from martrain.io import MarvVolume

        cfg, result = short_run
        g = load_generator(result.model_path)
        rng = np.random.default_rng(0)
        vol = MarvVolume(rng.uniform(-1000, 500, (10, 14, 18)).astype(np.float32),
                         (0.5, 0.5, 0.5), 0)
        out = infer_volume(g, vol)
        assert out.shape == (10, 14, 18)


class TestCli:
    def test_train_and_infer_cli(self, toy_manifest, tmp_path, capsys):
        from martrain.cli import main

        rc = main([
            "train", "--manifest", str(toy_manifest),
            "--model-out", str(tmp_path / "m.pt"),
            "--log-out", str(tmp_path / "l.csv"),
            "--epochs", "1", "--seed", "3",
        ])
        out = capsys.readouterr().out
        assert rc == 0
        assert "final_mean_l_mse=" in out

        from martrain.io import read_manifest

        entry = read_manifest(toy_manifest)[0]
        rc = main([
            "infer", "--model", str(tmp_path / "m.pt"),
            "--in", str(entry.artifact), "--out", str(tmp_path / "mar.marv"),
        ])
        assert rc == 0
        assert (tmp_path / "mar.marv").is_file()

    def test_export_cli(self, toy_manifest, tmp_path):
        from martrain.cli import main

        rc = main([
            "train", "--manifest", str(toy_manifest),
            "--model-out", str(tmp_path / "m.pt"), "--epochs", "1",
        ])
        assert rc == 0
        rc = main([
            "export", "--model", str(tmp_path / "m.pt"),
            "--manifest", str(toy_manifest), "--out-dir", str(tmp_path / "mar"),
        ])
        assert rc == 0
        assert len(list((tmp_path / "mar").glob("sample_*_mar.marv"))) == 10

    def test_error_exit(self, tmp_path):
        from martrain.cli import main

        rc = main(["infer", "--model", str(tmp_path / "none.pt"),
                   "--in", "x.marv", "--out", "y.marv"])
        assert rc == 1
