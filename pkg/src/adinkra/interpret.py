"""Activation heatmaps: capture feature maps, aggregate, normalise, overlay."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .datasets import LabeledImage, bilinear_resize
from .errors import ConfigurationError, PreconditionError
from .model import ModelState, forward

GUTTER = 8
TITLE_BAND = 20

# piecewise-linear jet: (position, value) knots per channel
_JET_KNOTS = (
    ((0.0, 0.0), (0.35, 0.0), (0.66, 1.0), (0.89, 1.0), (1.0, 0.5)),
    ((0.0, 0.0), (0.125, 0.0), (0.375, 1.0), (0.64, 1.0), (0.91, 0.0), (1.0, 0.0)),
    ((0.0, 0.5), (0.11, 1.0), (0.34, 1.0), (0.65, 0.0), (1.0, 0.0)),
)


def _jet_table() -> np.ndarray:
    pos = np.arange(256) / 255.0
    chans = [np.interp(pos, [k[0] for k in knots], [k[1] for k in knots]) for knots in _JET_KNOTS]
    return np.rint(np.stack(chans, axis=1) * 255.0).astype(np.uint8)


JET = _jet_table()
JET.setflags(write=False)


@dataclass
class ActivationCapture:
    tag: str
    maps: np.ndarray  # C x h x w


@dataclass
class Heatmap:
    values: np.ndarray  # S x S in [0, 1]
    tag: str


def capture_tags(model: ModelState) -> list[str]:
    n_conv = len(model.spec.conv_channels)
    return ([f"conv{i}" for i in range(1, n_conv + 1)] + [f"relu{i}" for i in range(1, n_conv + 1)]
            + [f"pool{k}" for k in range(1, len(model.spec.pool_after) + 1)])


def capture(model: ModelState, image, tags: Sequence[str]) -> list[ActivationCapture]:
    """One inference-mode forward pass, returning copies of the maps at ``tags``."""
    allowed = capture_tags(model)
    unknown = [t for t in tags if t not in allowed]
    if unknown:
        raise ConfigurationError(f"unknown layer tag(s) {unknown}; choose from {allowed}")
    x = np.asarray(image, dtype=model.dtype)
    if x.ndim == 3:
        x = x[None]
    if x.shape[0] != 1:
        raise PreconditionError(f"capture takes a single image, got a batch of {x.shape[0]}")
    store = {t: None for t in tags}
    forward(model, x, training=False, capture=store)
    return [ActivationCapture(t, store[t][0]) for t in tags]


def normalize(values: np.ndarray) -> np.ndarray:
    """Min-max to [0, 1]. An all-zero map stays zero; any other constant map becomes 1."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi > lo:
        return (v - lo) / (hi - lo)
    return np.full_like(v, 1.0 if hi > 0 else 0.0)


def heatmap(cap: ActivationCapture, input_size: int) -> Heatmap:
    """Channel mean, ReLU, bilinear upsampling to the input size, min-max."""
    maps = np.asarray(cap.maps, dtype=np.float64)
    if maps.ndim != 3 or maps.size == 0:
        raise PreconditionError(f"capture must be a non-empty C x h x w array, got {maps.shape}")
    agg = np.maximum(maps.mean(axis=0), 0.0)
    return Heatmap(normalize(bilinear_resize(agg, input_size, input_size)), cap.tag)


def colorize(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] values through the 256-entry jet table to uint8 RGB."""
    idx = np.rint(np.clip(values, 0.0, 1.0) * 255.0).astype(np.intp)
    return JET[idx]


def overlay(original: LabeledImage, hm: Heatmap, alpha: float = 0.4) -> np.ndarray:
    """``(1 - alpha) * original + alpha * jet(heatmap)``, rounded and clamped to uint8."""
    if not 0.0 <= alpha <= 1.0:
        raise PreconditionError(f"alpha must be in [0, 1], got {alpha}")
    rgb = original.rgb()
    h, w = rgb.shape[:2]
    values = hm.values if hm.values.shape == (h, w) else bilinear_resize(hm.values, h, w)
    blend = (1.0 - alpha) * rgb.astype(np.float64) + alpha * colorize(values).astype(np.float64)
    return np.clip(np.rint(blend), 0, 255).astype(np.uint8)


def panel_layout(size: int) -> tuple[int, int]:
    """Width and height of a three-panel figure of size x size tiles."""
    return 3 * size + 4 * GUTTER, TITLE_BAND + size + GUTTER


def panel_origins(size: int) -> list[tuple[int, int]]:
    return [(GUTTER + i * (size + GUTTER), TITLE_BAND) for i in range(3)]


def _as_tile(img: np.ndarray, size: int) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim == 2:
        img = colorize(img) if img.dtype != np.uint8 else np.repeat(img[:, :, None], 3, axis=2)
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    if img.shape[:2] != (size, size):
        img = np.clip(np.rint(bilinear_resize(img, size, size)), 0, 255).astype(np.uint8)
    return img.astype(np.uint8)


def render_panel(original, hm, overlaid: np.ndarray, tag: str, path) -> Path:
    """Write original | heatmap | overlay side by side under a title naming the layer.

    ``original`` may be a LabeledImage or an RGB array, ``hm`` a Heatmap or a
    values array; tiles are brought to the overlay's size. The file is written
    to a temporary sibling and renamed, so a failure leaves nothing behind.
    """
    path = Path(path)
    size = overlaid.shape[0]
    if overlaid.ndim != 3 or overlaid.shape[1] != size:
        raise PreconditionError(f"overlay must be a square RGB image, got {overlaid.shape}")
    orig = original.rgb() if isinstance(original, LabeledImage) else original
    values = hm.values if isinstance(hm, Heatmap) else hm
    tiles = [_as_tile(orig, size), _as_tile(colorize(values), size), _as_tile(overlaid, size)]
    width, height = panel_layout(size)
    canvas = np.full((height, width, 3), 255, np.uint8)
    for (x0, y0), tile in zip(panel_origins(size), tiles):
        canvas[y0:y0 + size, x0:x0 + size] = tile
    # draw the title on its own strip so it can never spill onto the tiles
    band = Image.new("RGB", (width, TITLE_BAND), (255, 255, 255))
    ImageDraw.Draw(band).text((GUTTER, 4), tag, fill=(0, 0, 0), font=ImageFont.load_default())
    canvas[:TITLE_BAND] = np.asarray(band)
    im = Image.fromarray(canvas)
    tmp = path.with_name(path.name + ".tmp")
    try:
        im.save(tmp, format="PNG")
        os.replace(tmp, path)
    except OSError:
        tmp.unlink(missing_ok=True)
        raise
    return path
