"""
Quality metrics and noise robustness
====================================

PSNR and SSIM are measured on the luma channel. RCIR compares SR and bicubic
in a feature space: 1 means the HR features are recovered, 0 means no better
than bicubic. The default feature extractor is a frozen random conv stack, so
RCIR values are only comparable between runs that use the same extractor.
"""
from pathlib import Path

import numpy as np

from adrd.evaluation import bicubic_upscaler, noise_sweep
from adrd.imageio import bicubic_upscale, degrade, quantize, read_png
from adrd.metrics import NOISE_VARIANCES, psnr, rcir, ssim, y_channel

data = Path(__file__).resolve().parent.parent / "tests" / "data"
images = {name: read_png(data / f"{name}.png") for name in ("astronaut", "coffee", "chelsea", "rocket", "hubble")}

hr = images["chelsea"]
bic = quantize(bicubic_upscale(degrade(hr, 4), 4))
print("bicubic on chelsea: PSNR %.2f dB, SSIM %.4f" % (psnr(y_channel(hr), y_channel(bic), 4),
                                                       ssim(y_channel(hr), y_channel(bic), 4)))
print("rcir(hr) =", rcir(hr, hr, bic), " rcir(bicubic) =", rcir(hr, bic, bic))
halfway = 0.5 * hr + 0.5 * bic
print("rcir(halfway) = %.3f" % rcir(hr, halfway, bic))

# bicubic PSNR under increasing Gaussian noise on the LR input
rows = noise_sweep(images, {"bicubic": bicubic_upscaler(4)}, 4, NOISE_VARIANCES)
for var in NOISE_VARIANCES:
    vals = [r.psnr_db for r in rows if r.variance == var]
    print(f"variance {var:<7g} mean PSNR {np.mean(vals):.2f} dB")
