"""Grad-CAM on a small trained model, then six-zone severity grading.

The heatmap is upsampled to the input size and blended over the image. The
zone grid splits the frame into upper/middle/lower by left/right, and the
number of hot zones sets the grade.
"""
import sys
from pathlib import Path

import numpy as np

from radnet.data import ArrayDataset
from radnet.gradcam import gradcam, jet, overlay, save_png, zone_grade
from radnet.model import ModelSpec, build
from radnet.optim import train_loop
from radnet.synthetic import blob_dataset

out = Path(sys.argv[1] if len(sys.argv) > 1 else "gradcam_demo")
out.mkdir(exist_ok=True)

x, y = blob_dataset(40, 24, seed=0)
spec = ModelSpec(task="binary", input_size=(24, 24), block_filters=[4, 8], dense_sizes=[8],
                 dropout_conv=0.0, dropout_dense=0.0, precision="f64")
model = build(spec)
train_loop(model, ArrayDataset(x, y, np.float64), ArrayDataset(x[:8], y[:8], np.float64), epochs=40,
           batch_size=40, lr=2e-3)

img = x[1]  # a blob image
heat = gradcam(model, img, target_class=1)
grade = zone_grade(heat)
print("raw max", round(heat.raw_max, 4), "| hot zones", grade.n_zones, "| severity", grade.severity)
save_png(out / "heatmap.png", jet(heat.values))
save_png(out / "overlay.png", overlay(img, heat))
print("wrote", out / "heatmap.png", "and", out / "overlay.png")

# grading on hand-made maps
for n in range(7):
    v = np.zeros((24, 24))
    for z in range(n):
        r, c = divmod(z, 2)
        v[8 * r:8 * r + 8, 12 * c:12 * c + 12] = 1.0
    print(n, "hot zones ->", zone_grade(v).severity)
