"""Procedural Adinkra-like symbol set used in place of the real corpus.

Each of the 62 classes is a fixed glyph program: an outer frame (none,
circle, square, diamond) combined with an inner motif built from strokes.
Samples jitter rotation, scale, position, stroke width and colours.
"""

from __future__ import annotations

import math

import numpy as np

from .datasets import Dataset, LabelCatalog, LabeledImage
from .errors import PreconditionError

MAX_CLASSES = 62
_ARC_STEPS = 24


def _polyline(points, closed=False):
    pts = list(points)
    if closed:
        pts.append(pts[0])
    return [("seg", *pts[i], *pts[i + 1]) for i in range(len(pts) - 1)]


def _arc(cx, cy, r, a0, a1, steps=_ARC_STEPS):
    ts = np.linspace(a0, a1, steps + 1)
    return _polyline([(cx + r * math.cos(t), cy + r * math.sin(t)) for t in ts])


def _circle(cx, cy, r):
    return _arc(cx, cy, r, 0.0, 2 * math.pi)


def _regular(n, r, phase):
    return [(r * math.cos(phase + 2 * math.pi * k / n), r * math.sin(phase + 2 * math.pi * k / n))
            for k in range(n)]


FRAMES = {
    "plain": lambda: [],
    "ring": lambda: _circle(0, 0, 0.85),
    "square": lambda: _polyline([(-0.78, -0.78), (0.78, -0.78), (0.78, 0.78), (-0.78, 0.78)], True),
    "diamond": lambda: _polyline([(0, -0.92), (0.92, 0), (0, 0.92), (-0.92, 0)], True),
}


def _spiral():
    ts = np.linspace(0, 4.5 * math.pi, 70)
    rs = 0.05 + 0.45 * ts / ts[-1]
    return _polyline([(r * math.cos(t), r * math.sin(t)) for r, t in zip(rs, ts)])


def _chevron(dy=0.0):
    return _polyline([(-0.45, 0.2 + dy), (0, -0.25 + dy), (0.45, 0.2 + dy)])


MOTIFS = {
    "cross": lambda: _polyline([(-0.5, 0), (0.5, 0)]) + _polyline([(0, -0.5), (0, 0.5)]),
    "saltire": lambda: _polyline([(-0.4, -0.4), (0.4, 0.4)]) + _polyline([(-0.4, 0.4), (0.4, -0.4)]),
    "dot": lambda: [("disk", 0.0, 0.0, 0.16)],
    "small ring": lambda: _circle(0, 0, 0.35),
    "spiral": _spiral,
    "chevron": lambda: _chevron(),
    "double chevron": lambda: _chevron(-0.18) + _chevron(0.18),
    "lattice": lambda: sum((_polyline([(x, -0.5), (x, 0.5)]) for x in (-0.2, 0.2)), [])
    + sum((_polyline([(-0.5, y), (0.5, y)]) for y in (-0.2, 0.2)), []),
    "bars": lambda: sum((_polyline([(-0.45, y), (0.45, y)]) for y in (-0.3, 0.0, 0.3)), []),
    "pillars": lambda: sum((_polyline([(x, -0.45), (x, 0.45)]) for x in (-0.3, 0.0, 0.3)), []),
    "triangle": lambda: _polyline(_regular(3, 0.5, -math.pi / 2), True),
    "star": lambda: sum((_polyline([p, (-p[0], -p[1])]) for p in _regular(6, 0.5, 0)[:3]), []),
    "wave": lambda: _arc(-0.22, 0, 0.22, math.pi, 2 * math.pi) + _arc(0.22, 0, 0.22, math.pi, 0),
    "concentric": lambda: _circle(0, 0, 0.2) + _circle(0, 0, 0.45),
    "ladder": lambda: _polyline([(-0.25, -0.5), (-0.25, 0.5)]) + _polyline([(0.25, -0.5), (0.25, 0.5)])
    + sum((_polyline([(-0.25, y), (0.25, y)]) for y in (-0.3, -0.1, 0.1, 0.3)), []),
    "zigzag": lambda: _polyline([(-0.5, 0.25), (-0.25, -0.25), (0, 0.25), (0.25, -0.25), (0.5, 0.25)]),
}


def glyph_names() -> list[str]:
    names = [f"{m} in {f}" if f != "plain" else m for f in FRAMES for m in MOTIFS]
    return names[:MAX_CLASSES]


def glyph_program(k: int) -> list[tuple]:
    """Stroke primitives of class ``k`` in the unit square [-1, 1]^2."""
    if not 0 <= k < MAX_CLASSES:
        raise PreconditionError(f"glyph index must be in [0, {MAX_CLASSES}), got {k}")
    frame = list(FRAMES)[k // len(MOTIFS)]
    motif = list(MOTIFS)[k % len(MOTIFS)]
    return FRAMES[frame]() + MOTIFS[motif]()


def _split_prims(prims):
    segs = np.array([p[1:] for p in prims if p[0] == "seg"], dtype=np.float64).reshape(-1, 4)
    disks = np.array([p[1:] for p in prims if p[0] == "disk"], dtype=np.float64).reshape(-1, 3)
    return segs, disks


def render(prims, size: int, angle: float = 0.0, scale: float = 1.0,
           shift=(0.0, 0.0), stroke: float = 3.0) -> np.ndarray:
    """Anti-aliased coverage in [0, 1] of the glyph strokes on a size x size grid."""
    segs, disks = _split_prims(prims)
    c, s = math.cos(angle), math.sin(angle)
    half = 0.4 * size * scale
    centre = np.array([size / 2 + shift[0], size / 2 + shift[1]])

    def place(xy):
        x, y = xy[:, 0], xy[:, 1]
        return np.stack([c * x - s * y, s * x + c * y], axis=1) * half + centre

    ys, xs = np.mgrid[0:size, 0:size]
    pix = np.stack([xs.ravel() + 0.5, ys.ravel() + 0.5], axis=1)
    px, py = pix[:, :1], pix[:, 1:]
    d2 = np.full(pix.shape[0], np.inf)
    if len(segs):
        a, b = place(segs[:, :2]), place(segs[:, 2:])
        abx, aby = b[:, 0] - a[:, 0], b[:, 1] - a[:, 1]
        ab2 = np.maximum(abx * abx + aby * aby, 1e-12)
        apx, apy = px - a[:, 0], py - a[:, 1]
        t = np.clip((apx * abx + apy * aby) / ab2, 0.0, 1.0)
        dx, dy = apx - t * abx, apy - t * aby
        d2 = np.minimum(d2, (dx * dx + dy * dy).min(1))
    dist = np.sqrt(d2)
    if len(disks):
        centres = place(disks[:, :2])
        radii = disks[:, 2] * half
        dd = np.hypot(px - centres[:, 0], py - centres[:, 1]) - radii
        dist = np.minimum(dist, np.maximum(dd, 0.0).min(1))
    return np.clip(stroke / 2 + 0.5 - dist, 0.0, 1.0).reshape(size, size)


def synth_sample(k: int, size: int, rng: np.random.Generator) -> np.ndarray:
    angle = math.radians(rng.uniform(-15, 15))
    scale = rng.uniform(0.8, 1.2)
    shift = rng.uniform(-0.1, 0.1, size=2) * size
    stroke = rng.uniform(0.035, 0.07) * size
    cover = render(glyph_program(k), size, angle, scale, shift, stroke)[:, :, None]
    gray = rng.random() < 0.3
    channels = 1 if gray else 3
    bg = rng.uniform(150, 255, size=channels)
    fg = rng.uniform(0, 100, size=channels)
    img = bg + (fg - bg) * cover
    img = img + rng.normal(0, 6, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def synth_generate(num_classes: int = 62, per_class: int = 200, size: int = 64,
                   seed: int = 0) -> Dataset:
    """Render ``per_class`` jittered samples of each of the first ``num_classes`` glyphs.

    Every sample has its own generator seeded from (seed, class, index), so
    the output does not depend on generation order.
    """
    if not 1 <= num_classes <= MAX_CLASSES:
        raise PreconditionError(f"num_classes must be in [1, {MAX_CLASSES}], got {num_classes}")
    if per_class < 1 or size < 8:
        raise PreconditionError("per_class must be >= 1 and size >= 8")
    catalog = LabelCatalog.from_pairs(
        [(f"synth_{k}", f"synthetic symbol {k}") for k in range(num_classes)])
    images = []
    for k in range(num_classes):
        for i in range(per_class):
            rng = np.random.default_rng([seed, k, i])
            images.append(LabeledImage(synth_sample(k, size, rng), k))
    return Dataset(images, catalog)
