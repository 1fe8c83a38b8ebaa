"""``.nnck`` checkpoint files.

Layout: one line of JSON (the manifest) followed by the raw little-endian
float32 payload of every parameter tensor in manifest order.
"""
from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from .errors import FormatVersionError
from .tensor_net import Network, layer_from_spec

FORMAT = "nnck"
VERSION = 1


def encode(network: Network) -> bytes:
    tensors, chunks = [], []
    offset = 0
    for i, name, arr in network.parameters():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        tensors.append({"layer": i, "name": name, "shape": list(arr.shape),
                        "offset": offset, "count": int(arr.size)})
        chunks.append(data)
        offset += len(data)
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "input_shape": list(network.input_shape),
        "class_count": network.class_count,
        "layers": [layer.spec() for layer in network.layers],
        "tensors": tensors,
        "mask": [list(u) for u in sorted(network.mask)] or None,
        "metadata": dict(sorted(network.metadata.items())),
    }
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    return header + b"\n" + b"".join(chunks)


def decode(blob: bytes) -> Network:
    head, sep, payload = blob.partition(b"\n")
    if not sep:
        raise FormatVersionError("checkpoint has no manifest line")
    try:
        manifest = json.loads(head)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatVersionError(f"corrupt checkpoint manifest: {exc}") from exc
    if not isinstance(manifest, dict) or manifest.get("format") != FORMAT:
        raise FormatVersionError("not an nnck checkpoint")
    if manifest.get("version") != VERSION:
        raise FormatVersionError(
            f"unsupported checkpoint version {manifest.get('version')!r} (expected {VERSION})")
    try:
        layers = [layer_from_spec(spec) for spec in manifest["layers"]]
        for t in manifest["tensors"]:
            end = t["offset"] + 4 * t["count"]
            if end > len(payload):
                raise FormatVersionError("checkpoint payload is truncated")
            arr = np.frombuffer(payload[t["offset"]:end], dtype="<f4").astype(np.float64)
            layers[t["layer"]].params[t["name"]] = arr.reshape(t["shape"])
        return Network(layers, manifest["input_shape"], manifest["class_count"],
                       manifest.get("metadata"), manifest.get("mask") or None)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatVersionError):
            raise
        raise FormatVersionError(f"malformed checkpoint: {exc}") from exc


def save(network: Network, path) -> str:
    """Write the checkpoint and return its sha256 digest."""
    blob = encode(network)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(blob)
    return hashlib.sha256(blob).hexdigest()


def load(path) -> Network:
    with open(path, "rb") as fh:
        return decode(fh.read())


def digest(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def round_to_float32(network: Network) -> Network:
    """The network exactly as it would come back from a checkpoint."""
    return decode(encode(network))
