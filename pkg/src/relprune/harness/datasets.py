"""Dataset container, synthetic benchmarks and the ``.nds`` file format."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import DataError

SPLITS = ("train", "val", "test")
NDS_FORMAT = "nds"
NDS_VERSION = 1


@dataclass
class Dataset:
    """Labelled samples with optional train/val/test tags.

    ``samples`` has shape ``(n, C, H, W)`` for images or ``(n, d)`` for
    tabular data. Sample identifiers are row indices.
    """

    samples: np.ndarray
    labels: np.ndarray
    class_names: list = field(default_factory=list)
    splits: Optional[np.ndarray] = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.samples) != len(self.labels):
            raise DataError(f"{len(self.samples)} samples but {len(self.labels)} labels")
        if not self.class_names:
            count = int(self.labels.max()) + 1 if len(self.labels) else 0
            self.class_names = [str(c) for c in range(count)]
        self.class_names = [str(c) for c in self.class_names]
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DataError("labels must lie in [0, class_count)")
        if self.splits is not None:
            self.splits = np.asarray(self.splits, dtype=object)
            if len(self.splits) != len(self.labels):
                raise DataError("split tags do not match sample count")
            unknown = set(self.splits.tolist()) - set(SPLITS)
            if unknown:
                raise DataError(f"unknown split tags {sorted(unknown)}")

    @property
    def class_count(self) -> int:
        return len(self.class_names)

    @property
    def sample_shape(self) -> tuple:
        return tuple(self.samples.shape[1:])

    def __len__(self):
        return len(self.labels)

    def indices(self, split: str) -> np.ndarray:
        if self.splits is None:
            raise DataError("dataset has no split tags; call with_default_splits first")
        return np.flatnonzero(self.splits == split)

    def subset(self, split: str):
        idx = self.indices(split)
        return self.samples[idx], self.labels[idx]

    def with_default_splits(self, seed: int = 0) -> "Dataset":
        """Keep explicit splits, otherwise tag a seeded stratified 80/10/10 split."""
        if self.splits is not None:
            return self
        return Dataset(self.samples, self.labels, self.class_names,
                       stratified_splits(self.labels, seed))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        same_splits = (self.splits is None and other.splits is None) or (
            self.splits is not None and other.splits is not None
            and list(self.splits) == list(other.splits))
        return (self.samples.shape == other.samples.shape
                and np.array_equal(self.samples, other.samples)
                and np.array_equal(self.labels, other.labels)
                and self.class_names == other.class_names and same_splits)


def stratified_splits(labels, seed: int) -> np.ndarray:
    """Per class: shuffle, then 10% val, 10% test (rounded), the rest train."""
    labels = np.asarray(labels)
    tags = np.empty(len(labels), dtype=object)
    rng = np.random.default_rng(seed)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        n_hold = int(round(0.1 * len(idx)))
        tags[idx[:n_hold]] = "val"
        tags[idx[n_hold:2 * n_hold]] = "test"
        tags[idx[2 * n_hold:]] = "train"
    return tags


# -- synthetic benchmarks ----------------------------------------------------

def _pattern(kind, size, rng, jitter):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    c = (size - 1) / 2.0
    dy, dx = rng.integers(-jitter, jitter + 1, size=2) if jitter else (0, 0)
    cy, cx = c + dy, c + dx
    half = max(1.0, size / 8.0)
    r = size / 4.0 + (rng.uniform(-0.5, 0.5) if jitter else 0.0)
    if kind == "hbar":
        return np.abs(yy - cy) <= half
    if kind == "vbar":
        return np.abs(xx - cx) <= half
    dist = np.hypot(yy - cy, xx - cx)
    if kind == "disk":
        return dist <= r
    if kind == "ring":
        return np.abs(dist - 1.5 * r) <= 0.75
    if kind == "cross":
        return (np.abs(yy - cy) <= half / 2) | (np.abs(xx - cx) <= half / 2)
    if kind == "frame":
        cheb = np.maximum(np.abs(yy - cy), np.abs(xx - cx))
        return np.abs(cheb - 1.5 * r) <= 0.75
    if kind == "dots":
        off = size / 4.0
        return ((np.hypot(yy - cy + off, xx - cx + off) <= half)
                | (np.hypot(yy - cy - off, xx - cx - off) <= half))
    if kind == "corner":
        return (yy <= cy - size / 4) & (xx <= cx - size / 4)
    raise ValueError(kind)


PATTERNS = ("hbar", "vbar", "disk", "ring", "cross", "frame", "dots", "corner")


def generate_synthetic(class_count=4, per_class=100, image_size=16, noise=0.1, seed=0,
                       channels=1, jitter=1) -> Dataset:
    """Geometric shape images (one shape per class) plus Gaussian pixel noise.

    Shapes are drawn at intensity 1 on a 0 background with up to ``jitter``
    pixels of positional offset. Classes beyond the built-in pattern list are
    rejected.
    """
    if min(class_count, per_class, image_size, channels) < 1:
        raise ValueError("counts must be positive")
    if class_count > len(PATTERNS):
        raise ValueError(f"at most {len(PATTERNS)} synthetic classes are available")
    rng = np.random.default_rng(seed)
    samples, labels = [], []
    for c in range(class_count):
        for _ in range(per_class):
            img = _pattern(PATTERNS[c], image_size, rng, jitter).astype(np.float64)
            img = np.repeat(img[None], channels, axis=0)
            if noise > 0:
                img = img + rng.normal(0.0, noise, size=img.shape)
            samples.append(img)
            labels.append(c)
    samples = np.stack(samples)
    labels = np.asarray(labels)
    return Dataset(samples, labels, list(PATTERNS[:class_count]),
                   stratified_splits(labels, seed))


def generate_blobs(per_class=500, class_count=2, separation=4.0, spread=0.5, dim=2,
                   seed=0) -> Dataset:
    """Gaussian blobs on a circle of radius ``separation / 2`` (linearly separable for 2 classes)."""
    rng = np.random.default_rng(seed)
    angles = 2 * np.pi * np.arange(class_count) / class_count
    centers = np.zeros((class_count, dim))
    centers[:, 0] = np.cos(angles) * separation / 2
    if dim > 1:
        centers[:, 1] = np.sin(angles) * separation / 2
    centers += 1.0
    samples = np.concatenate([rng.normal(centers[c], spread, size=(per_class, dim))
                              for c in range(class_count)])
    labels = np.repeat(np.arange(class_count), per_class)
    return Dataset(samples, labels, [f"blob{c}" for c in range(class_count)],
                   stratified_splits(labels, seed))


# -- file formats --------------------------------------------------------------

def encode_nds(ds: Dataset) -> bytes:
    header = {
        "format": NDS_FORMAT,
        "version": NDS_VERSION,
        "n": len(ds),
        "sample_shape": list(ds.sample_shape),
        "class_names": ds.class_names,
        "labels": ds.labels.tolist(),
        "splits": None if ds.splits is None else list(ds.splits),
    }
    if len(ds.sample_shape) == 3:
        header["channels"], header["height"], header["width"] = ds.sample_shape
    line = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return line + b"\n" + np.ascontiguousarray(ds.samples, dtype="<f4").tobytes()


def decode_nds(blob: bytes) -> Dataset:
    head, sep, payload = blob.partition(b"\n")
    if not sep:
        raise DataError("dataset file has no header line")
    try:
        h = json.loads(head)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DataError(f"corrupt dataset header: {exc}") from exc
    if not isinstance(h, dict) or h.get("format") != NDS_FORMAT:
        raise DataError("not an nds dataset")
    if h.get("version") != NDS_VERSION:
        raise DataError(f"unsupported dataset version {h.get('version')!r}")
    try:
        shape = (int(h["n"]),) + tuple(int(d) for d in h["sample_shape"])
        count = int(np.prod(shape))
        if len(payload) != 4 * count:
            raise DataError(f"payload holds {len(payload) // 4} floats, header implies {count}")
        samples = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(shape)
        return Dataset(samples, h["labels"], h["class_names"], h.get("splits"))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"malformed dataset header: {exc}") from exc


def save_nds(ds: Dataset, path) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(encode_nds(ds))


def load_nds(path) -> Dataset:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc
    return decode_nds(blob)


def load_csv_dir(path) -> Dataset:
    """Tabular data from ``train.csv``/``val.csv``/``test.csv``.

    Each file has a header row; the last column is the integer label.
    Missing split files are skipped, and at least one must exist.
    """
    rows, labels, tags = [], [], []
    for split in SPLITS:
        fname = os.path.join(path, f"{split}.csv")
        if not os.path.exists(fname):
            continue
        with open(fname, newline="") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            for rec in reader:
                if not rec:
                    continue
                try:
                    rows.append([float(v) for v in rec[:-1]])
                    labels.append(int(rec[-1]))
                except ValueError as exc:
                    raise DataError(f"{fname}: {exc}") from exc
                tags.append(split)
    if not rows:
        raise DataError(f"no CSV splits found in {path}")
    if len({len(r) for r in rows}) != 1:
        raise DataError("CSV rows have differing feature counts")
    return Dataset(np.asarray(rows), np.asarray(labels), splits=np.asarray(tags, dtype=object))
