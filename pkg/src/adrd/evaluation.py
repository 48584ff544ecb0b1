"""Dataset-level protocols: benchmark evaluation, noise sweeps and module ablations."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .blocks import ADRD, NetworkConfig
from .imageio import bicubic_upscale, degrade, modcrop, quantize, super_resolve
from .metrics import NOISE_VARIANCES, RandomConvFeatures, add_gaussian_noise, psnr, rcir, ssim, y_channel
from .train import TrainConfig, train

log = logging.getLogger(__name__)

Upscaler = Callable[[np.ndarray], np.ndarray]


def bicubic_upscaler(scale: int) -> Upscaler:
    return lambda lr: bicubic_upscale(lr, scale)


def network_upscaler(net: ADRD, tile: int = 0, overlap: int = 8) -> Upscaler:
    return lambda lr: super_resolve(net, lr, tile=tile, overlap=overlap)


@dataclass
class ImageScore:
    image: str
    psnr_db: float
    ssim: float
    rcir: float


def score_image(hr: np.ndarray, upscaler: Upscaler, scale: int, crop: int | None = None, phi=None,
                noise_variance: float = 0.0, noise_seed: int = 0, noise_target: str = "lr",
                name: str = "", with_rcir: bool = True) -> ImageScore:
    """Degrade ``hr``, super-resolve it and score the 8-bit result on the Y channel.

    Noise (if any) corrupts the LR input (``noise_target='lr'``) or the HR
    image before degradation (``'hr'``); scores are always against the clean HR.
    """
    crop = scale if crop is None else crop
    hr = modcrop(hr, scale)
    if noise_target == "hr":
        lr = degrade(add_gaussian_noise(hr, noise_variance, noise_seed), scale)
    elif noise_target == "lr":
        lr = add_gaussian_noise(degrade(hr, scale), noise_variance, noise_seed)
    else:
        raise ValueError(f"noise_target must be 'lr' or 'hr', got {noise_target!r}")
    sr = quantize(upscaler(lr))
    bic = quantize(bicubic_upscale(lr, scale))
    hr_y, sr_y = y_channel(hr), y_channel(sr)
    return ImageScore(
        image=name,
        psnr_db=psnr(hr_y, sr_y, crop),
        ssim=ssim(hr_y, sr_y, crop),
        rcir=rcir(hr, sr, bic, phi or RandomConvFeatures()) if with_rcir else float("nan"),
    )


def evaluate(images: Mapping[str, np.ndarray], upscaler: Upscaler, scale: int, **kw) -> list[ImageScore]:
    return [score_image(img, upscaler, scale, name=name, **kw) for name, img in images.items()]


@dataclass
class NoiseRow:
    variance: float
    image: str
    method: str
    psnr_db: float
    ssim: float


def noise_sweep(images: Mapping[str, np.ndarray], upscalers: Mapping[str, Upscaler], scale: int,
                variances: Sequence[float] = NOISE_VARIANCES, seed: int = 0, crop: int | None = None,
                noise_target: str = "lr") -> list[NoiseRow]:
    """PSNR/SSIM of each method at each noise variance (one shared noise draw per image)."""
    rows = []
    for var in variances:
        for k, (name, img) in enumerate(images.items()):
            for method, up in upscalers.items():
                s = score_image(img, up, scale, crop, noise_variance=var, noise_seed=seed + k,
                                noise_target=noise_target, name=name, with_rcir=False)
                rows.append(NoiseRow(var, name, method, s.psnr_db, s.ssim))
    return rows


ABLATION_STUDIES = ("wdb", "sa", "rd")


def ablation_variants(study: str, base: NetworkConfig, growth_rates: Sequence[int]) -> list[tuple[str, NetworkConfig]]:
    """Named network variants for one module study.

    ``wdb``: plain dense block (DB) vs weighted (WDB) per growth rate;
    ``sa``: without (noSA) and with spatial attention per growth rate;
    ``rd``: plain deconvolution (D) vs residual deconvolution (RD).
    """
    out = []
    if study == "wdb":
        for g in growth_rates:
            out.append((f"DB-{g}", replace(base, growth_rate=g, weighted_dense=False)))
            out.append((f"WDB-{g}", replace(base, growth_rate=g, weighted_dense=True)))
    elif study == "sa":
        for g in growth_rates:
            out.append((f"noSA-{g}", replace(base, growth_rate=g, attention=False)))
            out.append((f"SA-{g}", replace(base, growth_rate=g, attention=True)))
    elif study == "rd":
        c = base.global_bottleneck_channels
        out.append((f"D-C{c}", replace(base, residual_deconv=False)))
        out.append((f"RD-C{c}", replace(base, residual_deconv=True)))
    else:
        raise ValueError(f"unknown study {study!r}; choose from {ABLATION_STUDIES}")
    return out


@dataclass
class AblationResult:
    study: str
    variant: str
    params: int
    psnr_db: float
    ssim: float
    rcir: float
    final_loss: float


def run_ablation(study: str, base: NetworkConfig, growth_rates: Sequence[int], train_images: Sequence[np.ndarray],
                 val_images: Mapping[str, np.ndarray], train_config: TrainConfig, phi=None) -> list[AblationResult]:
    phi = phi or RandomConvFeatures()
    results = []
    for name, cfg in ablation_variants(study, base, growth_rates):
        net = ADRD(cfg)
        report = train(net, train_images, train_config)
        scores = evaluate(val_images, network_upscaler(net), cfg.scale_factor, phi=phi)
        res = AblationResult(
            study, name, net.num_parameters(),
            float(np.mean([s.psnr_db for s in scores])),
            float(np.mean([s.ssim for s in scores])),
            float(np.mean([s.rcir for s in scores])),
            report.losses[-1] if report.losses else float("nan"),
        )
        log.info("%s %s: psnr %.3f ssim %.4f rcir %.4f", study, name, res.psnr_db, res.ssim, res.rcir)
        results.append(res)
    return results


def format_ablation_table(results: Sequence[AblationResult]) -> str:
    """Columns per variant, rows per metric (PSNR, SSIM, plus RCIR for the attention study)."""
    lines = []
    for study in dict.fromkeys(r.study for r in results):
        rows = [r for r in results if r.study == study]
        metrics = [("PSNR", "psnr_db", "{:.2f}"), ("SSIM", "ssim", "{:.4f}")]
        if study == "sa":
            metrics.append(("RCIR", "rcir", "{:.3f}"))
        metrics.append(("Params", "params", "{:d}"))
        width = max(10, *(len(r.variant) + 2 for r in rows))
        lines.append("Index".ljust(8) + "".join(r.variant.rjust(width) for r in rows))
        for label, attr, fmt in metrics:
            lines.append(label.ljust(8) + "".join(fmt.format(getattr(r, attr)).rjust(width) for r in rows))
        lines.append("")
    return "\n".join(lines)
