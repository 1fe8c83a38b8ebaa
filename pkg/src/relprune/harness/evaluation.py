from __future__ import annotations

import numpy as np

from ..errors import DataError
from ..tensor_net import Network, forward


def predict(network: Network, x, mask=None, batch: int = 256) -> np.ndarray:
    """Argmax class of each raw sample (network preprocessing applied)."""
    out = []
    for s in range(0, len(x), batch):
        tr = forward(network, network.preprocess(x[s:s + batch]), record=False, mask=mask)
        out.append(tr.batch_logits.argmax(axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def evaluate(network: Network, dataset, split: str = "test", mask=None):
    """Return ``(accuracy, per_class_accuracy)`` on one split.

    Classes absent from the split get ``nan`` in the per-class array.
    """
    x, y = dataset.with_default_splits().subset(split)
    if len(y) == 0:
        raise DataError(f"split {split!r} is empty")
    pred = predict(network, x, mask)
    correct = pred == y
    per_class = np.full(dataset.class_count, np.nan)
    for c in range(dataset.class_count):
        sel = y == c
        if sel.any():
            per_class[c] = correct[sel].mean()
    return int(correct.sum()) / len(y), per_class
