"""Acceptance suite for the trainer component (run with ``-v -s`` for the
PASS/FAIL lines)."""

import numpy as np
import pytest
import torch

from martrain.data import normalize_hu
from martrain.infer import infer_volume, load_generator
from martrain.io import MarvVolume, read_manifest, read_marv, write_marv
from martrain.losses import adversarial_loss, mse_loss, positive_shift, retinex_loss
from martrain.train import TrainConfig, train, train_overfit_single


def report(name: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    print(f"{status} {name}" + (f" ({detail})" if detail else ""))
    assert ok, f"{name}: {detail}"


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    rmse = float(np.sqrt(np.mean((a - b) ** 2)))
    return 20.0 * np.log10(1.0 / max(rmse, 1e-12))


def test_toy_training_and_overfit(toy_manifest, tmp_path):
    cfg = TrainConfig(
        manifest_path=str(toy_manifest),
        model_out=str(tmp_path / "model.pt"),
        log_out=str(tmp_path / "losses.csv"),
        epochs=20,
        seed=1,
    )
    result = train(cfg)
    first = result.epoch_mean(0, "l_mse")
    last = result.epoch_mean(cfg.epochs - 1, "l_mse")

    ocfg = TrainConfig(
        manifest_path=str(toy_manifest),
        model_out=str(tmp_path / "overfit.pt"),
        epochs=120,
        seed=2,
    )
    train_overfit_single(ocfg, 0)
    entry = read_manifest(toy_manifest)[0]
    clean = normalize_hu(read_marv(entry.clean).data)
    artifact = normalize_hu(read_marv(entry.artifact).data)
    mar = infer_volume(load_generator(tmp_path / "overfit.pt"), read_marv(entry.artifact))
    p_raw = psnr(artifact, clean)
    p_mar = psnr(mar, clean)
    report(
        "toy-training",
        bool(last < first and p_mar > p_raw),
        f"l_mse {first:.5f} -> {last:.5f}; overfit PSNR {p_mar:.2f} dB vs untreated {p_raw:.2f} dB",
    )


def test_loss_parity_with_primary(tmp_path):
    quality = pytest.importorskip("marsim.quality")
    marsim_volume = pytest.importorskip("marsim.volume")

    rng = np.random.default_rng(33)
    worst = 0.0
    for i in range(5):
        # shared volume files: written by this package, read by the primary
        data = rng.random((12, 12, 12)).astype(np.float32)
        ref = rng.random((12, 12, 12)).astype(np.float32)
        p_a = tmp_path / f"a{i}.marv"
        p_b = tmp_path / f"b{i}.marv"
        write_marv(MarvVolume(data, (1, 1, 1), 4), p_a)
        write_marv(MarvVolume(ref, (1, 1, 1), 4), p_b)
        va = marsim_volume.read_volume(p_a).data.astype(np.float64)
        vb = marsim_volume.read_volume(p_b).data.astype(np.float64)

        g_s = quality.positive_shift(va)
        y_s = quality.positive_shift(vb)
        ours_mse = float(mse_loss(torch.from_numpy(vb), torch.from_numpy(va)))
        ours_ret = float(retinex_loss(torch.from_numpy(g_s), torch.from_numpy(y_s), 3.0))
        d_fake = np.array([0.37, 0.62, 0.81])
        ours_adv = float(adversarial_loss(torch.from_numpy(d_fake)))

        ref_losses = quality.gan_losses(
            np.array([0.5]), d_fake, g_s, vb, y_s, alpha=1.0, sigma_voxels=3.0
        )
        worst = max(
            worst,
            abs(ours_mse - ref_losses.l_mse),
            abs(ours_ret - ref_losses.l_retinex),
            abs(ours_adv - ref_losses.l_adv),
        )
    report("loss-parity", bool(worst < 1e-5), f"worst |diff| {worst:.2e}")


def test_ablation_hook(toy_manifest, tmp_path):
    logs = {}
    for alpha in (5e-5, 0.0):
        cfg = TrainConfig(
            manifest_path=str(toy_manifest),
            model_out=str(tmp_path / f"m_{alpha}.pt"),
            log_out=str(tmp_path / f"log_{alpha}.csv"),
            epochs=2,
            seed=7,
            alpha=alpha,
        )
        logs[alpha] = train(cfg)
    distinct = logs[5e-5].rows != logs[0.0].rows
    zero_rows = logs[0.0].rows
    excluded = all(
        r["l_gen"] == pytest.approx(r["l_mse"] + r["l_adv"], rel=1e-6) for r in zero_rows
    )
    logged = all(r["l_retinex"] > 0 for r in zero_rows)
    included = any(
        abs(r["l_gen"] - (r["l_mse"] + r["l_adv"])) > 1e-9 for r in logs[5e-5].rows
    )
    report(
        "ablation-hook",
        bool(distinct and excluded and logged and included),
        f"distinct logs {distinct}, alpha=0 excludes retinex {excluded}, "
        f"alpha>0 includes it {included}",
    )
