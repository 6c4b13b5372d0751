"""Image ingestion, preprocessing, stratified splitting and batched iteration."""

from __future__ import annotations

import logging
import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import CatalogError, InputError, PreconditionError

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
DEFAULT_RATIOS = (0.60, 0.20, 0.20)
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}
CATALOG_NAME = "labels.tsv"


@dataclass
class LabeledImage:
    pixels: np.ndarray  # H x W x C uint8, C in {1, 3}
    label: int
    source_path: Optional[str] = None

    def __post_init__(self):
        if self.pixels.ndim == 2:
            self.pixels = self.pixels[:, :, None]
        if self.pixels.ndim != 3 or self.pixels.shape[2] not in (1, 3):
            raise InputError(f"image must be HxWx1 or HxWx3, got {self.pixels.shape}")
        if self.pixels.dtype != np.uint8:
            raise InputError(f"image pixels must be uint8, got {self.pixels.dtype}")

    def rgb(self) -> np.ndarray:
        p = self.pixels
        return np.repeat(p, 3, axis=2) if p.shape[2] == 1 else p


@dataclass(frozen=True)
class CatalogEntry:
    index: int
    twi_name: str
    english: str


@dataclass
class LabelCatalog:
    entries: list[CatalogEntry]

    def __post_init__(self):
        names = [e.twi_name for e in self.entries]
        if len(set(names)) != len(names):
            raise CatalogError("catalog names must be unique")
        if [e.index for e in self.entries] != list(range(len(self.entries))):
            raise CatalogError("catalog indices must be dense 0..n-1")
        self._by_name = {e.twi_name: e.index for e in self.entries}

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, index: int) -> CatalogEntry:
        return self.entries[index]

    def index_of(self, twi_name: str) -> int:
        try:
            return self._by_name[twi_name]
        except KeyError:
            raise CatalogError(f"{twi_name!r} is not in the label catalog") from None

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[str, str]]) -> "LabelCatalog":
        return cls([CatalogEntry(i, t, e) for i, (t, e) in enumerate(pairs)])

    @classmethod
    def read(cls, path) -> "LabelCatalog":
        """One ``twi_name<TAB>english_meaning`` line per class; line order is the index."""
        pairs = []
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise CatalogError(f"cannot read catalog {path}: {exc}") from exc
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0]:
                raise CatalogError(f"{path}:{lineno}: expected 'twi_name<TAB>meaning'")
            pairs.append((parts[0], parts[1]))
        return cls.from_pairs(pairs)

    def write(self, path) -> None:
        lines = [f"{e.twi_name}\t{e.english}\n" for e in self.entries]
        Path(path).write_text("".join(lines), encoding="utf-8")


@dataclass
class LoadReport:
    loaded: int = 0
    skipped: list[tuple[str, str]] = field(default_factory=list)


@dataclass
class Dataset:
    images: list[LabeledImage]
    catalog: LabelCatalog
    split_assignment: Optional[list[str]] = None
    load_report: Optional[LoadReport] = None

    def __len__(self) -> int:
        return len(self.images)

    @property
    def num_classes(self) -> int:
        return len(self.catalog)

    @property
    def labels(self) -> np.ndarray:
        return np.array([im.label for im in self.images], dtype=np.int64)

    def indices(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise PreconditionError(f"unknown split {split!r}")
        if self.split_assignment is None:
            raise PreconditionError("dataset has not been split")
        return np.array([i for i, s in enumerate(self.split_assignment) if s == split],
                        dtype=np.int64)

    def split_sizes(self) -> dict[str, int]:
        return {s: int(len(self.indices(s))) for s in SPLITS}


def _decode(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        im.load()
        if im.mode in ("L", "I;16", "I", "F", "1"):
            arr = np.asarray(im.convert("L"))
        else:
            arr = np.asarray(im.convert("RGB"))
    return arr


def read_image(path) -> LabeledImage:
    """Decode one PNG/JPEG file; grayscale is replicated to three channels."""
    path = Path(path)
    try:
        arr = _decode(path)
    except FileNotFoundError as exc:
        raise InputError(f"no such image: {path}") from exc
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise InputError(f"cannot decode {path}: {exc}") from exc
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    return LabeledImage(np.ascontiguousarray(arr), -1, str(path))


def load_directory(root, catalog_path=None) -> Dataset:
    """Load ``root/<twi_name>/*.png|*.jpg`` using the catalog for label indices.

    Files are visited in lexicographic order. Files that fail to decode are
    skipped and listed in ``dataset.load_report``.
    """
    root = Path(root)
    if not root.is_dir():
        raise InputError(f"dataset root {root} is not a directory")
    catalog = LabelCatalog.read(catalog_path or root / CATALOG_NAME)
    report = LoadReport()
    images = []
    for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        label = catalog.index_of(class_dir.name)
        for f in sorted(class_dir.iterdir()):
            if f.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            try:
                img = read_image(f)
            except InputError as exc:
                log.warning("skipping %s: %s", f, exc)
                report.skipped.append((str(f), str(exc)))
                continue
            images.append(LabeledImage(img.pixels, label, img.source_path))
            report.loaded += 1
    return Dataset(images, catalog, load_report=report)


def write_directory(data: Dataset, root) -> None:
    """Materialise a dataset in the ``root/<twi_name>/NNNNN.png`` layout plus catalog."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    data.catalog.write(root / CATALOG_NAME)
    counters: dict[int, int] = {}
    for img in data.images:
        k = counters.get(img.label, 0)
        counters[img.label] = k + 1
        d = root / data.catalog[img.label].twi_name
        d.mkdir(exist_ok=True)
        px = img.pixels[:, :, 0] if img.pixels.shape[2] == 1 else img.pixels
        Image.fromarray(px).save(d / f"{k:05d}.png")


def _resize_axis(arr: np.ndarray, out_len: int, axis: int) -> np.ndarray:
    in_len = arr.shape[axis]
    if in_len == out_len:
        return arr
    # half-pixel centres, clamped at the borders
    src = (np.arange(out_len, dtype=np.float64) + 0.5) * (in_len / out_len) - 0.5
    src = np.clip(src, 0, in_len - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, in_len - 1)
    shape = [1] * arr.ndim
    shape[axis] = out_len
    wgt = (src - i0).reshape(shape)
    a0 = np.take(arr, i0, axis=axis)
    a1 = np.take(arr, i1, axis=axis)
    return a0 + wgt * (a1 - a0)


def bilinear_resize(arr: np.ndarray, height: int, width: int) -> np.ndarray:
    """Separable bilinear resize of an H x W (x C) array, returned as float64."""
    out = np.asarray(arr, dtype=np.float64)
    out = _resize_axis(out, height, 0)
    return _resize_axis(out, width, 1)


def preprocess(image: LabeledImage, size: int, dtype=np.float32) -> np.ndarray:
    """Resize to size x size, scale to [0, 1] and return as a 3 x size x size array."""
    px = image.pixels
    if px.shape[0] == 0 or px.shape[1] == 0:
        raise InputError("cannot preprocess a zero-sized image")
    out = bilinear_resize(image.rgb(), size, size) / 255.0
    return np.ascontiguousarray(out.transpose(2, 0, 1), dtype=dtype)


def _allocate(n: int, ratios: Sequence[float]) -> list[int]:
    """Split n items across ratios by largest remainder, then make sure every
    split with a positive ratio gets at least one item when n allows it."""
    exact = [n * r for r in ratios]
    counts = [math.floor(e) for e in exact]
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    wanted = [i for i, r in enumerate(ratios) if r > 0]
    if n >= len(wanted):
        for i in wanted:
            if counts[i] == 0:
                donor = max(wanted, key=lambda j: (counts[j], -j))
                counts[donor] -= 1
                counts[i] += 1
    return counts


def split(data: Dataset, ratios: Sequence[float] = DEFAULT_RATIOS, seed: int = 0) -> Dataset:
    """Stratified train/val/test assignment, deterministic given ``seed``."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1) > 1e-9:
        raise PreconditionError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    labels = data.labels
    assignment = [""] * len(data)
    n_splits = sum(1 for r in ratios if r > 0)
    for cls in range(data.num_classes):
        idx = np.flatnonzero(labels == cls)
        if idx.size == 0:
            continue
        rng = np.random.default_rng([seed, cls])
        idx = idx[rng.permutation(idx.size)]
        if idx.size < n_splits:
            log.warning("class %d has %d images, fewer than %d splits; all go to train",
                        cls, idx.size, n_splits)
            counts = [idx.size, 0, 0]
        else:
            counts = _allocate(idx.size, ratios)
        start = 0
        for name, c in zip(SPLITS, counts):
            for i in idx[start:start + c]:
                assignment[i] = name
            start += c
    return replace(data, split_assignment=assignment)


def _make_batch(data: Dataset, idx: np.ndarray, size: int, dtype):
    x = np.stack([preprocess(data.images[i], size, dtype) for i in idx])
    y = np.array([data.images[i].label for i in idx], dtype=np.int64)
    return x, y


def batches(data: Dataset, split: str, batch: int, shuffle: bool = False, seed: int = 0,
            workers: int = 1, size: Optional[int] = None,
            dtype=np.float32) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(images N x 3 x S x S, labels)`` covering the split once.

    With ``workers > 1`` batches are prepared by a thread pool a few steps
    ahead; they are still yielded in order, so results do not depend on the
    worker count.
    """
    if batch < 1 or workers < 1:
        raise PreconditionError("batch and workers must be >= 1")
    idx = data.indices(split)
    if shuffle:
        idx = idx[np.random.default_rng(seed).permutation(idx.size)]
    if size is None:
        size = data.images[idx[0]].pixels.shape[0] if idx.size else 1
    chunks = [idx[i:i + batch] for i in range(0, idx.size, batch)]
    if workers == 1:
        for c in chunks:
            yield _make_batch(data, c, size, dtype)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        pending: deque = deque()
        it = iter(chunks)
        for c in it:
            pending.append(pool.submit(_make_batch, data, c, size, dtype))
            if len(pending) >= 2 * workers:
                break
        while pending:
            yield pending.popleft().result()
            nxt = next(it, None)
            if nxt is not None:
                pending.append(pool.submit(_make_batch, data, nxt, size, dtype))

