"""Grad-CAM heatmaps, jet overlays and six-zone severity grading."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import ArgumentError, ShapeError, SpecError
from .model import Model
from .tensor import bilinear_resize

ZONE_NAMES = (
    "upper_left", "upper_right",
    "middle_left", "middle_right",
    "lower_left", "lower_right",
)


@dataclass
class Heatmap:
    values: np.ndarray  # h x w in [0, 1], input resolution
    raw_max: float      # max of the un-normalized map at feature resolution
    target_class: int
    cam: np.ndarray     # ReLU(sum_k alpha_k A^k) at feature resolution
    weights: np.ndarray  # alpha_k


def _target_gradient(model: Model, target_class: int, dtype) -> np.ndarray:
    n_out = model.spec.n_outputs
    g = np.zeros((1, n_out), dtype=dtype)
    if n_out == 1:
        # single logit z scores class 1; class 0 is scored by -z
        if target_class not in (0, 1):
            raise ArgumentError(f"binary target class must be 0 or 1, got {target_class}")
        g[0, 0] = 1.0 if target_class == 1 else -1.0
    else:
        if not 0 <= target_class < n_out:
            raise ArgumentError(f"target class {target_class} outside [0, {n_out})")
        g[0, target_class] = 1.0
    return g


def gradcam(model: Model, image, target_class=None, layer=None) -> Heatmap:
    """Grad-CAM on the output of the last convolution layer (or ``layer``).

    The class score is the pre-activation logit. With ``target_class=None``
    the predicted class is explained.
    """
    convs = model.conv_indices()
    if not convs:
        raise SpecError("model has no convolution layer")
    k = convs[-1] if layer is None else layer
    if k not in convs:
        raise ArgumentError(f"layer {k} is not a convolution layer")

    x = np.asarray(image, dtype=model.dtype)
    if x.ndim == 3:
        x = x[None]
    if x.shape[0] != 1:
        raise ShapeError("gradcam explains one image at a time")
    model._check_input(x)

    acts = model.run(x, train=False, stop=k + 1)
    logits = model.run(acts, train=False, start=k + 1)
    if target_class is None:
        if logits.shape[1] == 1:
            target_class = int(logits[0, 0] >= 0)
        else:
            target_class = int(np.argmax(logits[0]))
    g = _target_gradient(model, int(target_class), logits.dtype)
    grads = model.backward_from(g, stop=len(model.layers), start=k + 1).input_grad

    A = acts[0].astype(np.float64)
    alpha = grads[0].astype(np.float64).mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(alpha, A, axes=1), 0.0)
    raw_max = float(cam.max())
    return Heatmap(_normalize_to(cam, model.spec.input_size), raw_max, int(target_class), cam, alpha)


def _normalize_to(cam: np.ndarray, size) -> np.ndarray:
    up = bilinear_resize(cam, size)
    peak = up.max()
    if peak <= 0:
        return np.zeros(up.shape, dtype=np.float64)
    return np.clip(up / peak, 0.0, 1.0)


def jet(v: np.ndarray) -> np.ndarray:
    """Piecewise-linear jet colormap; ``h x w`` in [0, 1] -> ``h x w x 3``."""
    v = np.clip(np.asarray(v, dtype=np.float64), 0.0, 1.0)[..., None]
    centers = np.array([3.0, 2.0, 1.0])  # red, green, blue
    return np.clip(1.5 - np.abs(4.0 * v - centers), 0.0, 1.0)


def to_gray_rgb(image) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img.mean(axis=0)
    if img.ndim != 2:
        raise ShapeError(f"expected c x h x w or h x w image, got {np.shape(image)}")
    return np.repeat(np.clip(img, 0.0, 1.0)[..., None], 3, axis=-1)


def overlay(image, heatmap, alpha=0.4) -> np.ndarray:
    """Alpha-blend the jet-coloured heatmap over a grayscale rendering (h x w x 3)."""
    if not 0.0 <= alpha <= 1.0:
        raise ArgumentError(f"alpha must lie in [0, 1], got {alpha}")
    values = heatmap.values if isinstance(heatmap, Heatmap) else np.asarray(heatmap)
    base = to_gray_rgb(image)
    if base.shape[:2] != values.shape:
        raise ArgumentError(f"image {base.shape[:2]} and heatmap {values.shape} differ in size")
    return np.clip((1.0 - alpha) * base + alpha * jet(values), 0.0, 1.0)


def save_png(path, array):
    """Write an ``h x w`` or ``h x w x 3`` array in [0, 1] as an 8-bit PNG."""
    arr = np.round(np.clip(np.asarray(array, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG")


@dataclass
class ZoneGrade:
    zone_flags: tuple
    severity: str
    activation_threshold: float
    area_fraction: float
    zone_fractions: tuple

    @property
    def n_zones(self) -> int:
        return sum(self.zone_flags)

    def to_dict(self) -> dict:
        return {
            "zones": {name: bool(f) for name, f in zip(ZONE_NAMES, self.zone_flags)},
            "zone_hot_fraction": {name: float(v) for name, v in zip(ZONE_NAMES, self.zone_fractions)},
            "affected_zones": self.n_zones,
            "severity": self.severity,
            "activation_threshold": self.activation_threshold,
            "area_fraction": self.area_fraction,
        }


def severity_for(n_zones: int) -> str:
    if n_zones <= 0:
        return "none"
    if n_zones <= 2:
        return "mild"
    if n_zones <= 4:
        return "moderate"
    return "severe"


def zone_bounds(h: int, w: int):
    """Row and column edges of the 3 x 2 grid over an h x w frame."""
    rows = [0, round(h / 3), round(2 * h / 3), h]
    cols = [0, w // 2, w]
    return rows, cols


def zone_grade(heatmap, activation_threshold=0.5, area_fraction=0.05) -> ZoneGrade:
    """Grade severity from how many of the six frame zones are hot.

    A zone (upper/middle/lower x image-left/right) is flagged when at least
    ``area_fraction`` of its pixels exceed ``activation_threshold``.
    """
    values = heatmap.values if isinstance(heatmap, Heatmap) else np.asarray(heatmap, dtype=np.float64)
    if not 0.0 < area_fraction <= 1.0:
        raise ArgumentError(f"area_fraction must lie in (0, 1], got {area_fraction}")
    if values.ndim != 2:
        raise ArgumentError(f"heatmap must be 2-D, got shape {values.shape}")
    h, w = values.shape
    if h <= 3 or w <= 2:
        raise ArgumentError(f"heatmap {h}x{w} is too small for a 3 x 2 zone grid")
    if values.size and (values.min() < 0 or values.max() > 1 + 1e-9):
        raise ArgumentError("heatmap must be normalized to [0, 1]")
    rows, cols = zone_bounds(h, w)
    flags, fracs = [], []
    for r in range(3):
        for c in range(2):
            zone = values[rows[r]:rows[r + 1], cols[c]:cols[c + 1]]
            frac = float(np.mean(zone > activation_threshold))
            fracs.append(frac)
            flags.append(frac >= area_fraction)
    return ZoneGrade(tuple(flags), severity_for(sum(flags)), float(activation_threshold),
                     float(area_fraction), tuple(fracs))
