"""Patch-based MSE training with Adam and a step-decay learning rate."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DataError, NumericError
from .imageio import degrade, image_to_batch, modcrop, quantize, super_resolve
from .kvtext import dataclass_from_kv, format_kv, parse_kv
from .metrics import psnr, y_channel
from .tensor import Parameter, Tensor, mse_loss

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "step", "lr", "loss", "val_psnr")


class Adam:
    """Adam with bias-corrected moments; moments are kept in each parameter's dtype."""

    def __init__(self, params: Sequence[Parameter], lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                raise ValueError(f"missing gradient for parameter {p.name!r}")
            if not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient for parameter {p.name!r}; step aborted")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


@dataclass
class TrainConfig:
    hr_patch_size: int = 200
    scale: int = 4
    batch_size: int = 16
    initial_lr: float = 1e-4
    lr_decay_every: int = 200
    lr_decay_factor: float = 0.5
    epochs: int = 1
    seed: int = 0
    patches_per_image: int = 32
    # 0 means no cap beyond epochs
    max_steps: int = 0
    hflip: bool = True
    vflip: bool = True
    rotate: bool = True
    checkpoint_every: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("hr_patch_size", "scale", "batch_size", "lr_decay_every", "epochs", "patches_per_image"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.initial_lr < 0 or self.lr_decay_factor <= 0:
            raise ValueError("learning rate settings must be positive")
        if self.max_steps < 0 or self.checkpoint_every < 0:
            raise ValueError("max_steps and checkpoint_every must be >= 0")
        if self.hr_patch_size % self.scale:
            raise ValueError(f"hr_patch_size {self.hr_patch_size} not divisible by scale {self.scale}")

    def augmentations(self) -> tuple[str, ...]:
        ops = ["identity"]
        if self.hflip:
            ops.append("hflip")
        if self.vflip:
            ops.append("vflip")
        if self.rotate:
            ops += ["rot90", "rot180", "rot270"]
        return tuple(ops)

    def to_kv(self) -> str:
        return format_kv(vars(self))

    @classmethod
    def from_kv(cls, text: str | dict) -> "TrainConfig":
        items = parse_kv(text) if isinstance(text, str) else text
        return dataclass_from_kv(cls, items)


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return config.initial_lr * config.lr_decay_factor ** (epoch // config.lr_decay_every)


def augment(image: np.ndarray, op: str) -> np.ndarray:
    if op == "identity":
        return image
    if op == "hflip":
        return image[:, ::-1]
    if op == "vflip":
        return image[::-1]
    if op in ("rot90", "rot180", "rot270"):
        return np.rot90(image, {"rot90": 1, "rot180": 2, "rot270": 3}[op])
    raise ValueError(f"unknown augmentation {op!r}")


@dataclass
class Batch:
    hr: np.ndarray  # B x H x W x 3
    lr: np.ndarray  # B x H/s x W/s x 3
    sources: list[tuple[int, int, int, str]]  # (image index, top, left, augmentation)


class PatchSampler:
    """Random HR crops, a dihedral augmentation, and their bicubic LR versions.

    The draw for step ``k`` depends only on ``(seed, k)``, so a resumed run
    sees exactly the batches an uninterrupted run would.
    """

    def __init__(self, images: Sequence[np.ndarray], config: TrainConfig):
        if not images:
            raise DataError("training set is empty")
        p = config.hr_patch_size
        for i, img in enumerate(images):
            if img.shape[0] < p or img.shape[1] < p:
                raise DataError(f"image {i} ({img.shape[0]}x{img.shape[1]}) is smaller than the {p}px patch")
        self.images = list(images)
        self.config = config
        self.ops = config.augmentations()

    def batch(self, step: int) -> Batch:
        cfg = self.config
        rng = np.random.default_rng([cfg.seed, step])
        p = cfg.hr_patch_size
        hrs, lrs, sources = [], [], []
        for _ in range(cfg.batch_size):
            i = int(rng.integers(len(self.images)))
            img = self.images[i]
            top = int(rng.integers(img.shape[0] - p + 1))
            left = int(rng.integers(img.shape[1] - p + 1))
            op = self.ops[int(rng.integers(len(self.ops)))]
            hr = np.ascontiguousarray(augment(img[top : top + p, left : left + p], op))
            hrs.append(hr)
            lrs.append(degrade(hr, cfg.scale))
            sources.append((i, top, left, op))
        return Batch(np.stack(hrs), np.stack(lrs), sources)


def nhwc_to_nchw(x: np.ndarray, dtype) -> np.ndarray:
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2).astype(dtype))


def validation_psnr(net, images: Sequence[np.ndarray]) -> float:
    """Mean Y-channel PSNR (border = scale) of quantized SR outputs over ``images``."""
    s = net.config.scale_factor
    vals = []
    for img in images:
        hr = modcrop(img, s)
        sr = quantize(super_resolve(net, degrade(hr, s)))
        vals.append(psnr(y_channel(hr), y_channel(sr), border_crop=s))
    return float(np.mean(vals))


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    epoch_rows: list[dict] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)
    final_step: int = 0


def _batch_stats(batch: Batch, out: np.ndarray) -> str:
    return (
        f"lr patch range [{batch.lr.min():.4g}, {batch.lr.max():.4g}], "
        f"output finite {np.isfinite(out).mean():.3%}, sources {batch.sources}"
    )


def train(
    net,
    images: Sequence[np.ndarray],
    config: TrainConfig,
    optimizer: Adam | None = None,
    start_step: int = 0,
    val_images: Sequence[np.ndarray] | None = None,
    log_path=None,
    checkpoint_dir=None,
    on_step: Callable[[int, float], None] | None = None,
) -> TrainReport:
    """Train ``net`` in place; returns per-step losses/learning rates and per-epoch rows.

    Pass the optimizer and step stored in a checkpoint to resume.
    """
    from .checkpoint import save_checkpoint

    if config.scale != net.config.scale_factor:
        raise ValueError(f"train scale {config.scale} != network scale {net.config.scale_factor}")
    sampler = PatchSampler(images, config)
    opt = optimizer or Adam(net.parameters(), config.initial_lr, config.beta1, config.beta2, config.adam_eps)
    steps_per_epoch = math.ceil(len(images) * config.patches_per_image / config.batch_size)
    total = config.epochs * steps_per_epoch
    if config.max_steps:
        total = min(total, config.max_steps)

    report = TrainReport(final_step=start_step)
    log_file = writer = None
    if log_path is not None:
        log_path = Path(log_path)
        resume_log = start_step > 0 and log_path.exists()
        log_file = open(log_path, "a" if resume_log else "w", newline="")
        writer = csv.writer(log_file, lineterminator="\n")
        if not resume_log:
            writer.writerow(LOG_COLUMNS)

    epoch_losses: list[float] = []
    try:
        for step in range(start_step, total):
            epoch = step // steps_per_epoch
            opt.lr = lr_at_epoch(config, epoch)
            batch = sampler.batch(step)
            net.zero_grad()
            out = net(Tensor(nhwc_to_nchw(batch.lr, net.dtype)))
            loss = mse_loss(out, Tensor(nhwc_to_nchw(batch.hr, net.dtype)))
            value = float(loss.data)
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss at step {step}: {_batch_stats(batch, out.data)}")
            loss.backward()
            opt.step()

            report.losses.append(value)
            report.lrs.append(opt.lr)
            report.final_step = step + 1
            epoch_losses.append(value)
            if on_step is not None:
                on_step(step, value)

            if (step + 1) % steps_per_epoch == 0 or step + 1 == total:
                row = {
                    "epoch": epoch,
                    "step": step + 1,
                    "lr": opt.lr,
                    "loss": float(np.mean(epoch_losses)),
                    "val_psnr": validation_psnr(net, val_images) if val_images else "",
                }
                epoch_losses = []
                report.epoch_rows.append(row)
                log.info("epoch %d step %d lr %.3g loss %.6g val_psnr %s", *row.values())
                if writer is not None:
                    writer.writerow([_fmt(row[c]) for c in LOG_COLUMNS])
                    log_file.flush()
                due = config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0
                if checkpoint_dir is not None and (due or step + 1 == total):
                    path = Path(checkpoint_dir) / f"checkpoint_step{step + 1:07d}.adrd"
                    save_checkpoint(path, net, opt, step=step + 1, train_config=config)
                    report.checkpoints.append(path)
    finally:
        if log_file is not None:
            log_file.close()
    return report


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)
