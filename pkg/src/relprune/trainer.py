"""Supervised training: class-weighted cross-entropy, Adam, step decay, augmentation."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DataError, ShapeMismatchError, TrainingDivergedError
from .harness.datasets import Dataset
from .tensor_net import Network, backward, forward, softmax

log = logging.getLogger(__name__)


@dataclass
class AugmentConfig:
    enable_hflip: bool = True
    enable_vflip: bool = True
    rotation_max_deg: float = 30.0
    crop_scale_min: float = 0.7
    crop_scale_max: float = 1.0
    crop_aspect_min: float = 0.75
    crop_aspect_max: float = 1.33

    def __post_init__(self):
        if not 0.0 <= self.rotation_max_deg <= 30.0:
            raise ConfigError("rotation_max_deg must lie in [0, 30]")
        if not 0.0 < self.crop_scale_min <= self.crop_scale_max <= 1.0:
            raise ConfigError("need 0 < crop_scale_min <= crop_scale_max <= 1")
        if not 0.0 < self.crop_aspect_min <= self.crop_aspect_max:
            raise ConfigError("need 0 < crop_aspect_min <= crop_aspect_max")

    @classmethod
    def none(cls):
        return cls(False, False, 0.0, 1.0, 1.0, 1.0, 1.0)

    @property
    def is_identity(self):
        return self == AugmentConfig.none()


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.001
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 10
    seed: int = 0
    augmentation: AugmentConfig = field(default_factory=AugmentConfig)
    # Adam constants are fixed, not configurable.
    beta1 = 0.9
    beta2 = 0.999
    adam_eps = 1e-8

    def __post_init__(self):
        if isinstance(self.augmentation, dict):
            self.augmentation = _from_dict(AugmentConfig, self.augmentation, "train.augmentation")
        if self.epochs < 0:
            raise ConfigError("train.epochs must be >= 0")
        if self.batch_size < 1 or self.lr_decay_every < 1:
            raise ConfigError("train.batch_size and train.lr_decay_every must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("train.learning_rate must be positive")
        if not 0.0 < self.lr_decay_factor <= 1.0:
            raise ConfigError("train.lr_decay_factor must lie in (0, 1]")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("train.seed must be an unsigned 64-bit integer")

    @classmethod
    def from_dict(cls, d):
        return _from_dict(cls, d, "train")

    def to_dict(self):
        return asdict(self)


def _from_dict(cls, d, section):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(sorted(unknown))}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def compute_class_weights(labels, class_count: int) -> np.ndarray:
    """Inverse-frequency weights ``N / (class_count * n_c)``."""
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) and (labels.min() < 0 or labels.max() >= class_count):
        raise ValueError("label out of range")
    counts = np.bincount(labels, minlength=class_count)
    missing = np.flatnonzero(counts == 0)
    if len(missing):
        raise DataError(f"class {int(missing[0])} has no training samples")
    return len(labels) / (class_count * counts.astype(np.float64))


def weighted_cross_entropy(probs, target: int, weights):
    """Return ``(loss, grad_wrt_logits)`` for one sample."""
    probs = np.asarray(probs, dtype=np.float64)
    if np.any(probs < 0):
        raise ValueError("probabilities must be non-negative")
    if abs(probs.sum() - 1.0) > 1e-6:
        raise ValueError("probabilities must sum to 1")
    w = float(weights[target])
    loss = -w * math.log(max(probs[target], 1e-12))
    grad = probs.copy()
    grad[target] -= 1.0
    return loss, w * grad


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    return config.learning_rate * config.lr_decay_factor ** (epoch // config.lr_decay_every)


def normalization_stats(x):
    """Per-channel mean/std for images, per-feature for flat vectors."""
    axes = (0, 2, 3) if x.ndim == 4 else (0,)
    mean = x.mean(axis=axes)
    std = x.std(axis=axes)
    std = np.where(std > 1e-8, std, 1.0)
    return mean, std


def _augment_one(img, aug: AugmentConfig, rng):
    _, h, w = img.shape
    area = h * w
    ch, cw = float(h), float(w)
    for _ in range(10):
        scale = rng.uniform(aug.crop_scale_min, aug.crop_scale_max)
        ratio = math.exp(rng.uniform(math.log(aug.crop_aspect_min), math.log(aug.crop_aspect_max)))
        tw, th = math.sqrt(area * scale * ratio), math.sqrt(area * scale / ratio)
        if tw <= w and th <= h:
            ch, cw = th, tw
            break
    top = rng.uniform(0.0, h - ch)
    left = rng.uniform(0.0, w - cw)
    theta = math.radians(rng.uniform(-aug.rotation_max_deg, aug.rotation_max_deg))
    fy = -1.0 if aug.enable_vflip and rng.random() < 0.5 else 1.0
    fx = -1.0 if aug.enable_hflip and rng.random() < 0.5 else 1.0
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    mat = rot @ np.diag([ch / h * fy, cw / w * fx])
    centre_out = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    centre_in = np.array([top + ch / 2.0 - 0.5, left + cw / 2.0 - 0.5])
    offset = centre_in - mat @ centre_out
    return np.stack([ndimage.affine_transform(c, mat, offset, order=1, mode="constant", cval=0.0)
                     for c in img])


def augment_batch(x, ids, epoch, config: TrainConfig):
    """Augment raw images; each draw depends only on (seed, epoch, sample id)."""
    aug = config.augmentation
    if x.ndim != 4 or aug.is_identity:
        return x
    return np.stack([_augment_one(img, aug, np.random.default_rng((config.seed, 2, epoch, int(i))))
                     for img, i in zip(x, ids)])


@dataclass
class TrainResult:
    network: Network
    metrics: list


def accuracy(network: Network, x, y, batch=256) -> float:
    if len(y) == 0:
        return float("nan")
    correct = 0
    for s in range(0, len(y), batch):
        logits = forward(network, network.preprocess(x[s:s + batch]), record=False).batch_logits
        correct += int((logits.argmax(axis=1) == y[s:s + batch]).sum())
    return correct / len(y)


def train(network: Network, dataset: Dataset, config: TrainConfig) -> TrainResult:
    """Train a copy of ``network``; the input is left untouched."""
    net = network.copy()
    if dataset.sample_shape != net.input_shape:
        raise ShapeMismatchError(
            f"layer 0: dataset samples {dataset.sample_shape} do not match network input "
            f"{net.input_shape}", 0)
    ds = dataset.with_default_splits(config.seed)
    train_idx = ds.indices("train")
    x_train, y_train = ds.samples[train_idx], ds.labels[train_idx]
    x_val, y_val = ds.subset("val")
    weights = compute_class_weights(y_train, net.class_count)
    mean, std = normalization_stats(x_train)
    net.metadata.update({
        "input_mean": json.dumps(mean.tolist()),
        "input_std": json.dumps(std.tolist()),
        "train_config": json.dumps(config.to_dict(), sort_keys=True),
        "class_weights": json.dumps(weights.tolist()),
    })

    slots = [(layer, name) for layer in net.layers for name in sorted(layer.params)]
    m = [np.zeros_like(layer.params[n]) for layer, n in slots]
    v = [np.zeros_like(layer.params[n]) for layer, n in slots]
    step = 0
    metrics = []
    for epoch in range(config.epochs):
        lr = lr_at_epoch(config, epoch)
        order = np.random.default_rng((config.seed, 1, epoch)).permutation(len(train_idx))
        total, seen = 0.0, 0
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            sel = order[start:start + config.batch_size]
            xb = augment_batch(x_train[sel], train_idx[sel], epoch, config)
            yb = y_train[sel]
            trace = forward(net, net.preprocess(xb))
            logits = trace.batch_logits
            shifted = logits - logits.max(axis=1, keepdims=True)
            logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
            wb = weights[yb]
            losses = -wb * np.maximum(logp[np.arange(len(yb)), yb], math.log(1e-12))
            if not np.all(np.isfinite(losses)):
                raise TrainingDivergedError(epoch, b)
            grad = softmax(logits)
            grad[np.arange(len(yb)), yb] -= 1.0
            grad *= wb[:, None] / len(yb)
            grads = backward(net, trace, grad)
            step += 1
            k = 0
            bc1 = 1 - config.beta1 ** step
            bc2 = 1 - config.beta2 ** step
            for i, layer in enumerate(net.layers):
                for name in sorted(layer.params):
                    g = grads.params[i][name]
                    m[k] = config.beta1 * m[k] + (1 - config.beta1) * g
                    v[k] = config.beta2 * v[k] + (1 - config.beta2) * g * g
                    layer.params[name] = layer.params[name] - lr * (m[k] / bc1) / (
                        np.sqrt(v[k] / bc2) + config.adam_eps)
                    k += 1
            total += float(losses.sum())
            seen += len(yb)
        row = {"epoch": epoch, "lr": lr, "train_loss": total / max(seen, 1),
               "val_accuracy": accuracy(net, x_val, y_val)}
        log.debug("epoch %(epoch)d lr=%(lr)g loss=%(train_loss).4f val=%(val_accuracy).3f", row)
        metrics.append(row)
    return TrainResult(net, metrics)


def write_metrics_csv(metrics, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "lr", "train_loss", "val_accuracy"])
        for row in metrics:
            writer.writerow([row["epoch"], repr(row["lr"]), repr(row["train_loss"]),
                             repr(row["val_accuracy"])])
