"""Alternating adversarial training over a generated paired dataset.

Per step: one RMSprop discriminator update (maximizing its ability to tell
artifact-free volumes from generator output), then one RMSprop generator
update on ``alpha * L_retinex + L_mse + L_adv``.  Every step appends a CSV
log row (step, l_disc, l_mse, l_retinex, l_adv, l_gen).  Runs are
deterministic for a fixed seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch import optim

from .data import PairedDataset
from .losses import discriminator_loss, generator_loss
from .models import DiscriminatorNet, GeneratorNet

LOG_FIELDS = ("step", "epoch", "sample", "l_disc", "l_mse", "l_retinex", "l_adv", "l_gen")


@dataclass
class TrainConfig:
    manifest_path: str
    model_out: str
    log_out: str | None = None
    lr_g: float = 1e-4
    lr_d: float = 1e-3
    alpha: float = 5e-5
    batch_size: int = 1
    epochs: int = 20
    sigma_retinex: float = 3.0
    seed: int = 0
    base_channels: int = 16
    depth: int = 3
    channel_cap: int = 64

    def __post_init__(self):
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ValueError("learning rates must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.epochs < 1 or self.batch_size != 1:
            raise ValueError("epochs must be >= 1 and batch_size fixed at 1")


@dataclass
class TrainResult:
    model_path: str
    log_path: str | None
    rows: list[dict] = field(default_factory=list)

    def epoch_mean(self, epoch: int, key: str) -> float:
        vals = [r[key] for r in self.rows if r["epoch"] == epoch]
        return sum(vals) / len(vals)


def train(cfg: TrainConfig) -> TrainResult:
    dataset = PairedDataset(cfg.manifest_path)
    if len(dataset) < 2:
        raise ValueError("training needs at least 2 samples")
    return _run(cfg, dataset)


def _run(cfg: TrainConfig, dataset: PairedDataset) -> TrainResult:
    torch.manual_seed(cfg.seed)
    g = GeneratorNet(cfg.base_channels, cfg.depth, cfg.channel_cap)
    d = DiscriminatorNet()
    opt_g = optim.RMSprop(g.parameters(), lr=cfg.lr_g)
    opt_d = optim.RMSprop(d.parameters(), lr=cfg.lr_d)
    g.train()
    d.train()

    rows: list[dict] = []
    step = 0
    for epoch in range(cfg.epochs):
        for i in range(len(dataset)):
            sample = dataset[i]

            # discriminator: ascend log D(clean) + log(1 - D(G(artifact)))
            opt_d.zero_grad()
            with torch.no_grad():
                fake = g(sample.artifact)
            d_real = d(sample.clean)
            d_fake = d(fake)
            l_disc = discriminator_loss(d_real, d_fake)
            (-l_disc).backward()
            opt_d.step()

            # generator
            opt_g.zero_grad()
            fake = g(sample.artifact)
            d_fake_g = d(fake)
            loss, parts = generator_loss(
                fake, sample.target, sample.artifact, d_fake_g,
                cfg.alpha, cfg.sigma_retinex,
            )
            loss.backward()
            opt_g.step()

            rows.append(
                {
                    "step": step,
                    "epoch": epoch,
                    "sample": sample.index,
                    "l_disc": float(l_disc.detach()),
                    **parts,
                }
            )
            step += 1

    model_path = Path(cfg.model_out)
    model_path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "generator": g.state_dict(),
            "discriminator": d.state_dict(),
            "base_channels": cfg.base_channels,
            "depth": cfg.depth,
            "channel_cap": cfg.channel_cap,
            "alpha": cfg.alpha,
            "sigma_retinex": cfg.sigma_retinex,
            "seed": cfg.seed,
        },
        model_path,
    )

    log_path = cfg.log_out
    if log_path is not None:
        with open(log_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
            w.writeheader()
            w.writerows(rows)
    return TrainResult(str(model_path), log_path, rows)


def train_overfit_single(cfg: TrainConfig, sample_index: int = 0) -> TrainResult:
    """Overfit on one manifest sample (sanity-check workflow)."""
    dataset = PairedDataset(cfg.manifest_path)

    class _Single:
        def __init__(self, ds, idx):
            self.ds, self.idx = ds, idx

        def __len__(self):
            return 1

        def __getitem__(self, _):
            return self.ds[self.idx]

    return _run(cfg, _Single(dataset, sample_index))
