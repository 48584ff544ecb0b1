"""
Module ablations at desk scale
==============================

Trains paired variants (plain vs weighted dense blocks, with and without
attention, plain vs residual deconvolution) for a few steps each and prints
one table per study. The numbers are noisy at this scale; the point is the
pipeline. The same runs are available as ``adrd ablate``.
"""
from pathlib import Path

from adrd import NetworkConfig, TrainConfig
from adrd.evaluation import ABLATION_STUDIES, format_ablation_table, run_ablation
from adrd.imageio import read_png

data = Path(__file__).resolve().parent.parent / "tests" / "data"
names = ("astronaut", "coffee", "chelsea", "rocket", "hubble")
train_images = [read_png(data / f"{n}.png") for n in names]
val_images = {n: img for n, img in zip(names, train_images)}

base = NetworkConfig.tiny(dense_layers_per_group=(2, 2))
cfg = TrainConfig(hr_patch_size=32, batch_size=4, initial_lr=2e-3, patches_per_image=4, epochs=10**6,
                  max_steps=60, lr_decay_every=10**6)

results = []
for study in ABLATION_STUDIES:
    results += run_ablation(study, base, [4, 8], train_images, val_images, cfg)
print(format_ablation_table(results))
