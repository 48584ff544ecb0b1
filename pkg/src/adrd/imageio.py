"""PNG I/O, bicubic resampling and (optionally tiled) super-resolution inference.

In memory an RGB image is a float ``H x W x 3`` array in ``[0, 1]``.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError
from .tensor import Tensor, no_grad


def read_png(path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            fmt, mode = im.format, im.mode
            if fmt != "PNG":
                raise DataError(f"{path}: only PNG is supported, got {fmt}")
            if mode != "RGB":
                raise DataError(f"{path}: only 8-bit RGB PNG is supported, got mode {mode}")
            arr = np.asarray(im, dtype=np.uint8)
    except DataError:
        raise
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: cannot read image ({exc})") from exc
    return from_uint8(arr)


def write_png(path, image: np.ndarray) -> None:
    arr = image if image.dtype == np.uint8 else to_uint8(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 image, got {arr.shape}")
    Image.fromarray(arr, "RGB").save(Path(path), format="PNG")


def list_pngs(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory}: not a directory")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise DataError(f"{directory}: no PNG images found")
    return files


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float64) / 255.0


def quantize(image: np.ndarray) -> np.ndarray:
    """Clamp to ``[0, 1]`` and snap to the 8-bit grid, as writing a PNG would."""
    return from_uint8(to_uint8(image))


# ---------------------------------------------------------------------------
# bicubic


def cubic_kernel(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))


def resample_matrix(n_in: int, n_out: int, a: float = -0.5, antialias: bool = True) -> np.ndarray:
    """``n_out x n_in`` interpolation matrix for one axis.

    Pixel centres are aligned by area, ``src = (dst + 0.5) * n_in / n_out - 0.5``;
    samples outside the image are clamped to the edge. When shrinking, the
    kernel is stretched by the reduction factor so it also low-pass filters.
    """
    if n_in < 1 or n_out < 1:
        raise ValueError("extents must be >= 1")
    ratio = n_out / n_in
    kscale = min(ratio, 1.0) if antialias else 1.0
    support = 2.0 / kscale
    centers = (np.arange(n_out) + 0.5) / ratio - 0.5
    taps = int(math.ceil(2 * support)) + 2
    left = np.floor(centers - support).astype(np.int64)
    idx = left[:, None] + np.arange(taps)[None, :]
    w = cubic_kernel((centers[:, None] - idx) * kscale, a)
    w /= w.sum(axis=1, keepdims=True)
    m = np.zeros((n_out, n_in))
    rows = np.broadcast_to(np.arange(n_out)[:, None], idx.shape)
    np.add.at(m, (rows, np.clip(idx, 0, n_in - 1)), w)
    return m


def bicubic_resample(image: np.ndarray, out_h: int, out_w: int, a: float = -0.5, antialias: bool = True) -> np.ndarray:
    """Separable bicubic resize of an ``H x W`` or ``H x W x C`` array (values are not clamped)."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    mh = resample_matrix(h, out_h, a, antialias)
    mw = resample_matrix(w, out_w, a, antialias)
    out = np.tensordot(mh, img, axes=(1, 0))  # out_h, W, ...
    out = np.tensordot(mw, out, axes=(1, 1))  # out_w, out_h, ...
    return np.ascontiguousarray(np.swapaxes(out, 0, 1))


def modcrop(image: np.ndarray, scale: int) -> np.ndarray:
    h, w = image.shape[:2]
    return image[: h - h % scale, : w - w % scale]


def degrade(hr: np.ndarray, scale: int) -> np.ndarray:
    """Bicubic-downsample an HR image by ``scale``; the result is clamped to ``[0, 1]``."""
    h, w = hr.shape[:2]
    if h % scale or w % scale:
        raise ValueError(f"HR extents {h}x{w} are not divisible by {scale}")
    return np.clip(bicubic_resample(hr, h // scale, w // scale), 0.0, 1.0)


def bicubic_upscale(lr: np.ndarray, scale: int) -> np.ndarray:
    h, w = lr.shape[:2]
    return np.clip(bicubic_resample(lr, h * scale, w * scale), 0.0, 1.0)


# ---------------------------------------------------------------------------
# inference


def image_to_batch(image: np.ndarray, dtype=np.float32) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(image).transpose(2, 0, 1)[None].astype(dtype))


def batch_to_image(batch: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(batch[0].transpose(1, 2, 0).astype(np.float64))


def super_resolve(net, lr: np.ndarray, tile: int = 0, overlap: int = 8) -> np.ndarray:
    """Run ``net`` on an ``H x W x 3`` LR image; returns the clamped SR image.

    With ``tile > 0`` the LR image is processed in ``tile x tile`` cores, each
    padded by ``overlap`` LR pixels of context that are cropped away after
    upscaling.
    """
    scale = net.config.scale_factor
    h, w = lr.shape[:2]
    if tile <= 0 or (h <= tile and w <= tile):
        with no_grad():
            out = net(Tensor(image_to_batch(lr, net.dtype))).data
        return np.clip(batch_to_image(out), 0.0, 1.0)

    sr = np.zeros((h * scale, w * scale, 3))
    for y0 in range(0, h, tile):
        for x0 in range(0, w, tile):
            y1, x1 = min(y0 + tile, h), min(x0 + tile, w)
            ya, xa = max(y0 - overlap, 0), max(x0 - overlap, 0)
            yb, xb = min(y1 + overlap, h), min(x1 + overlap, w)
            with no_grad():
                out = net(Tensor(image_to_batch(lr[ya:yb, xa:xb], net.dtype))).data
            patch = batch_to_image(out)
            sr[y0 * scale : y1 * scale, x0 * scale : x1 * scale] = patch[
                (y0 - ya) * scale : (y1 - ya) * scale, (x0 - xa) * scale : (x1 - xa) * scale
            ]
    return np.clip(sr, 0.0, 1.0)
