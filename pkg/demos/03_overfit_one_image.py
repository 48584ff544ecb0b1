"""
Overfitting a single image
==========================

A tiny network trained for 500 Adam steps on one 64x64 image should clearly
beat bicubic interpolation on that image. Takes about 15 seconds on one core.
"""
from pathlib import Path

from adrd import ADRD, NetworkConfig, TrainConfig, export_weight_matrices, save_checkpoint, train
from adrd.imageio import bicubic_upscale, degrade, quantize, read_png, super_resolve, write_png
from adrd.metrics import psnr, ssim, y_channel

here = Path(__file__).resolve().parent
hr = read_png(here.parent / "tests" / "data" / "overfit64.png")

net = ADRD(NetworkConfig.tiny())
cfg = TrainConfig(hr_patch_size=64, batch_size=1, initial_lr=2e-3, patches_per_image=1, epochs=500,
                  lr_decay_every=10**6, hflip=False, vflip=False, rotate=False)
report = train(net, [hr], cfg)
print("loss: first %.4f, last %.4f" % (report.losses[0], report.losses[-1]))

lr = degrade(hr, 4)
bic = quantize(bicubic_upscale(lr, 4))
sr = quantize(super_resolve(net, lr))
for name, img in (("bicubic", bic), ("network", sr)):
    y_hr, y = y_channel(hr), y_channel(img)
    print(f"{name:8s} PSNR {psnr(y_hr, y, 4):.2f} dB  SSIM {ssim(y_hr, y, 4):.4f}")

# the edge weights moved away from 1 while training
print("weights of the last dense layer:", [round(w, 4) for w in export_weight_matrices(net)[0][-1]])

out = here / "out"
out.mkdir(exist_ok=True)
write_png(out / "overfit_sr.png", sr)
save_checkpoint(out / "overfit.adrd", net, step=report.final_step)
print("wrote", out / "overfit_sr.png", "and", out / "overfit.adrd")
