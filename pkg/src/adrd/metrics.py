"""Image quality metrics: Y-channel PSNR and SSIM, RCIR, Gaussian noise injection.

PSNR and SSIM take luminance planes on the 0-255 scale (see :func:`rgb_to_y`).
RCIR and the noise helper take RGB images in ``[0, 1]``.
"""
from __future__ import annotations

import math
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegenerateInputError
from .tensor import conv2d_raw

PEAK = 255.0
NOISE_VARIANCES = (5e-5, 1e-4, 2e-4, 5e-4)


def rgb_to_y(image: np.ndarray) -> np.ndarray:
    """BT.601 studio-swing luma of an ``H x W x 3`` image with values in ``[0, 255]``."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"rgb_to_y expects H x W x 3, got {img.shape}")
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    return (65.481 * r + 128.553 * g + 24.966 * b) / 255.0 + 16.0


def y_channel(image01: np.ndarray) -> np.ndarray:
    """Luma of an RGB image in ``[0, 1]``."""
    return rgb_to_y(np.asarray(image01, dtype=np.float64) * 255.0)


def _crop(a: np.ndarray, b: np.ndarray, border: int) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if border < 0 or 2 * border >= min(a.shape[:2]):
        raise ValueError(f"border crop {border} too large for {a.shape[:2]}")
    if border:
        a = a[border:-border, border:-border]
        b = b[border:-border, border:-border]
    return a, b


def psnr(a: np.ndarray, b: np.ndarray, border_crop: int = 0) -> float:
    """PSNR in dB for peak 255; identical inputs give ``inf``."""
    a, b = _crop(a, b, border_crop)
    d = a - b
    mse = float(np.mean(d * d))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(PEAK**2 / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    rows = sliding_window_view(img, k, axis=0) @ g
    return sliding_window_view(rows, k, axis=1) @ g


def ssim(a: np.ndarray, b: np.ndarray, border_crop: int = 0, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over all full windows (no padding) of two luminance planes."""
    a, b = _crop(a, b, border_crop)
    if a.ndim != 2:
        raise ValueError("ssim expects single-channel planes")
    if min(a.shape) < window:
        raise ValueError(f"image {a.shape} smaller than the {window}x{window} window")
    g = gaussian_window(window, sigma)
    c1 = (k1 * PEAK) ** 2
    c2 = (k2 * PEAK) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


class RandomConvFeatures:
    """Frozen stand-in for a pre-trained feature network.

    ``depth`` stages of 3x3 conv + ReLU + 2x2 max-pool with He-scaled random
    kernels drawn from ``seed``. RCIR values obtained with it are only
    comparable with other values from the same extractor.
    """

    def __init__(self, depth: int = 3, width: int = 16, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.kernels = []
        cin = 3
        for _ in range(depth):
            self.kernels.append(rng.standard_normal((width, cin, 3, 3)) * math.sqrt(2.0 / (cin * 9)))
            cin = width

    def __call__(self, image01: np.ndarray) -> np.ndarray:
        x = np.asarray(image01, dtype=np.float64).transpose(2, 0, 1)[None]
        for k in self.kernels:
            x = np.maximum(conv2d_raw(x, k, 1, 1), 0.0)
            n, c, h, w = x.shape
            if h >= 2 and w >= 2:
                x = x[:, :, : h - h % 2, : w - w % 2].reshape(n, c, h // 2, 2, w // 2, 2).max(axis=(3, 5))
        return x


def mae(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(np.abs(np.asarray(a) - np.asarray(b))))


def rcir(hr: np.ndarray, sr: np.ndarray, bicubic: np.ndarray,
         phi: Callable[[np.ndarray], np.ndarray] | None = None) -> float:
    """Relative content increasing rate ``1 - E(hr, sr) / E(hr, bicubic)``.

    ``E`` is the mean absolute difference of ``phi`` features. Raises
    :class:`DegenerateInputError` when the bicubic image is indistinguishable
    from the HR image under ``phi``.
    """
    if not (np.shape(hr) == np.shape(sr) == np.shape(bicubic)):
        raise ValueError("rcir: hr, sr and bicubic must share a shape")
    phi = phi or RandomConvFeatures()
    f_hr = phi(hr)
    e_bic = mae(f_hr, phi(bicubic))
    if e_bic == 0.0:
        raise DegenerateInputError("rcir undefined: hr and bicubic have identical features")
    e_sr = mae(f_hr, phi(sr))
    return 1.0 - e_sr / e_bic


def add_gaussian_noise(image01: np.ndarray, variance: float, seed: int = 0, clip: bool = True) -> np.ndarray:
    """Add i.i.d. N(0, variance) noise in normalized space, then clamp to ``[0, 1]``.

    The same seed draws the same standard-normal field for every variance, so
    sweeping the variance only rescales the noise.
    """
    if variance < 0:
        raise ValueError(f"variance must be non-negative, got {variance}")
    img = np.asarray(image01, dtype=np.float64)
    if variance == 0:
        return img.copy()
    z = np.random.default_rng(seed).standard_normal(img.shape)
    out = img + math.sqrt(variance) * z
    return np.clip(out, 0.0, 1.0) if clip else out
