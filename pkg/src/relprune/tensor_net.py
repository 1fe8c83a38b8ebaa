"""Small float64 layer engine: forward, analytic backward and unit masking.

Every array carries a leading batch axis internally. The public entry points
accept either a single sample (shape ``network.input_shape``) or a batch and
report results in the same form they were given.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import MissingTraceError, ShapeMismatchError, UnknownUnitError

LAYER_KINDS = ("dense", "conv2d", "relu", "maxpool2d", "flatten", "softmax")


def _conv_out(size, kernel, stride, pad):
    return (size + 2 * pad - kernel) // stride + 1


class Layer:
    kind = ""
    prunable = False

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}

    def output_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x):
        return x, None

    def backward(self, grad, x, cache):
        return grad, {}

    def spec(self) -> dict:
        return {"kind": self.kind}

    @property
    def units(self) -> int:
        return 0

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.spec().items() if k != "kind")
        return f"{type(self).__name__}({args})"


class Dense(Layer):
    """Fully connected layer; ``weight[i]`` holds the fan-in of output unit i."""

    kind = "dense"
    prunable = True

    def __init__(self, in_units, out_units, weight=None, bias=None):
        super().__init__()
        self.in_units = int(in_units)
        self.out_units = int(out_units)
        w = np.zeros((self.out_units, self.in_units)) if weight is None else weight
        b = np.zeros(self.out_units) if bias is None else bias
        self.params = {
            "weight": np.asarray(w, dtype=np.float64).reshape(self.out_units, self.in_units),
            "bias": np.asarray(b, dtype=np.float64).reshape(self.out_units),
        }

    @property
    def units(self):
        return self.out_units

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.in_units,):
            raise ValueError(f"dense expects ({self.in_units},), got {tuple(in_shape)}")
        return (self.out_units,)

    def forward(self, x):
        return x @ self.params["weight"].T + self.params["bias"], None

    def backward(self, grad, x, cache):
        w = self.params["weight"]
        return grad @ w, {"weight": grad.T @ x, "bias": grad.sum(axis=0)}

    def spec(self):
        return {"kind": self.kind, "in_units": self.in_units, "out_units": self.out_units}


class Conv2d(Layer):
    """2-D cross-correlation with zero padding; one prunable unit per output channel."""

    kind = "conv2d"
    prunable = True

    def __init__(self, in_channels, out_channels, kernel_h, kernel_w=None, stride=1,
                 padding=0, weight=None, bias=None):
        super().__init__()
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel_h = int(kernel_h)
        self.kernel_w = int(kernel_h if kernel_w is None else kernel_w)
        self.stride = int(stride)
        self.padding = int(padding)
        if self.stride < 1 or self.padding < 0:
            raise ValueError("conv2d needs stride >= 1 and padding >= 0")
        shape = (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)
        w = np.zeros(shape) if weight is None else weight
        b = np.zeros(self.out_channels) if bias is None else bias
        self.params = {
            "weight": np.asarray(w, dtype=np.float64).reshape(shape),
            "bias": np.asarray(b, dtype=np.float64).reshape(self.out_channels),
        }

    @property
    def units(self):
        return self.out_channels

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise ValueError(
                f"conv2d expects ({self.in_channels}, H, W), got {tuple(in_shape)}")
        oh = _conv_out(in_shape[1], self.kernel_h, self.stride, self.padding)
        ow = _conv_out(in_shape[2], self.kernel_w, self.stride, self.padding)
        if oh < 1 or ow < 1:
            raise ValueError(f"conv2d output would be empty for input {tuple(in_shape)}")
        return (self.out_channels, oh, ow)

    def im2col(self, x):
        """Patches as ``(batch, out_h * out_w, in_channels * kh * kw)``."""
        p, s = self.padding, self.stride
        if p:
            x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = sliding_window_view(x, (self.kernel_h, self.kernel_w), axis=(2, 3))
        win = win[:, :, ::s, ::s]
        b, c, oh, ow = win.shape[:4]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b, oh * ow, -1)
        return np.ascontiguousarray(cols), (oh, ow)

    def col2im(self, cols, in_shape):
        """Scatter-add patch values back onto an input-shaped array."""
        b = cols.shape[0]
        c, h, w = in_shape
        p, s = self.padding, self.stride
        oh = _conv_out(h, self.kernel_h, s, p)
        ow = _conv_out(w, self.kernel_w, s, p)
        patches = cols.reshape(b, oh, ow, c, self.kernel_h, self.kernel_w)
        out = np.zeros((b, c, h + 2 * p, w + 2 * p))
        for i in range(self.kernel_h):
            for j in range(self.kernel_w):
                out[:, :, i:i + s * oh:s, j:j + s * ow:s] += patches[..., i, j].transpose(0, 3, 1, 2)
        if p:
            out = out[:, :, p:-p, p:-p]
        return out

    def weight_matrix(self):
        return self.params["weight"].reshape(self.out_channels, -1)

    def forward(self, x):
        cols, (oh, ow) = self.im2col(x)
        y = cols @ self.weight_matrix().T + self.params["bias"]
        y = y.transpose(0, 2, 1).reshape(x.shape[0], self.out_channels, oh, ow)
        return y, cols

    def backward(self, grad, x, cache):
        cols = cache if cache is not None else self.im2col(x)[0]
        b = grad.shape[0]
        g = grad.reshape(b, self.out_channels, -1).transpose(0, 2, 1)
        dw = np.einsum("blo,blk->ok", g, cols).reshape(self.params["weight"].shape)
        db = g.sum(axis=(0, 1))
        dx = self.col2im(g @ self.weight_matrix(), x.shape[1:])
        return dx, {"weight": dw, "bias": db}

    def spec(self):
        return {"kind": self.kind, "in_channels": self.in_channels,
                "out_channels": self.out_channels, "kernel_h": self.kernel_h,
                "kernel_w": self.kernel_w, "stride": self.stride, "padding": self.padding}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        return np.maximum(x, 0.0), None

    def backward(self, grad, x, cache):
        return grad * (x > 0), {}


class MaxPool2d(Layer):
    """Max pooling without padding; ties go to the first position in row-major order."""

    kind = "maxpool2d"

    def __init__(self, window, stride=None):
        super().__init__()
        self.window = int(window)
        self.stride = int(window if stride is None else stride)

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ValueError(f"maxpool2d expects (C, H, W), got {tuple(in_shape)}")
        oh = _conv_out(in_shape[1], self.window, self.stride, 0)
        ow = _conv_out(in_shape[2], self.window, self.stride, 0)
        if oh < 1 or ow < 1:
            raise ValueError(f"maxpool2d output would be empty for input {tuple(in_shape)}")
        return (in_shape[0], oh, ow)

    def forward(self, x):
        k, s = self.window, self.stride
        win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        flat = win.reshape(*win.shape[:4], k * k)
        arg = flat.argmax(axis=-1)
        y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        return y, arg

    def route(self, values, arg, in_shape):
        """Send each pooled value to its winning input position."""
        k, s = self.window, self.stride
        oh, ow = arg.shape[2:]
        out = np.zeros((values.shape[0],) + tuple(in_shape))
        for pos in range(k * k):
            i, j = divmod(pos, k)
            out[:, :, i:i + s * oh:s, j:j + s * ow:s] += values * (arg == pos)
        return out

    def backward(self, grad, x, cache):
        if cache is None:
            cache = self.forward(x)[1]
        return self.route(grad, cache, x.shape[1:]), {}

    def spec(self):
        return {"kind": self.kind, "window": self.window, "stride": self.stride}


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), None

    def backward(self, grad, x, cache):
        return grad.reshape(x.shape), {}


class SoftmaxOutput(Layer):
    """Terminal marker: logits pass through, probabilities live on the trace."""

    kind = "softmax"


_LAYER_TYPES = {cls.kind: cls for cls in (Dense, Conv2d, ReLU, MaxPool2d, Flatten, SoftmaxOutput)}


def layer_from_spec(spec: dict) -> Layer:
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind == "softmax-output":
        kind = "softmax"
    if kind not in _LAYER_TYPES:
        raise ValueError(f"unknown layer kind {kind!r}; expected one of {LAYER_KINDS}")
    return _LAYER_TYPES[kind](**spec)


class Network:
    """Ordered layer stack with a fixed input shape and class count.

    ``mask`` is an optional set of ``(layer_index, unit_index)`` pairs that is
    applied on every forward pass (checkpoints exported after pruning carry one).
    """

    def __init__(self, layers, input_shape, class_count, metadata=None, mask=None):
        self.layers: list[Layer] = [
            layer if isinstance(layer, Layer) else layer_from_spec(layer) for layer in layers]
        self.input_shape = tuple(int(d) for d in input_shape)
        self.class_count = int(class_count)
        self.metadata: dict[str, str] = dict(metadata or {})
        self.shapes = self._infer_shapes()
        self.mask = frozenset()
        if mask:
            self.mask = self.check_units(mask)

    def _infer_shapes(self):
        shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            try:
                shapes.append(layer.output_shape(shapes[-1]))
            except ValueError as exc:
                raise ShapeMismatchError(f"layer {i} ({layer.kind}): {exc}", i) from exc
            for name, arr in layer.params.items():
                if not np.all(np.isfinite(arr)):
                    raise ValueError(f"layer {i} {name} has non-finite values")
        if shapes[-1] != (self.class_count,):
            raise ShapeMismatchError(
                f"network output {shapes[-1]} does not match class_count {self.class_count}",
                len(self.layers) - 1)
        return shapes

    @property
    def prunable_layers(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if layer.prunable]

    @property
    def classifier_index(self) -> int:
        return self.prunable_layers[-1]

    def all_units(self) -> list[tuple[int, int]]:
        return [(i, u) for i in self.prunable_layers for u in range(self.layers[i].units)]

    def check_units(self, units) -> frozenset:
        units = frozenset((int(l), int(u)) for l, u in getattr(units, "units", units))
        valid = set(self.all_units())
        bad = units - valid
        if bad:
            raise UnknownUnitError(bad)
        return units

    def copy(self) -> "Network":
        layers = [layer_from_spec(layer.spec()) for layer in self.layers]
        for new, old in zip(layers, self.layers):
            new.params = {k: v.copy() for k, v in old.params.items()}
        return Network(layers, self.input_shape, self.class_count, self.metadata, self.mask)

    def parameters(self):
        """Yield ``(layer_index, name, array)`` in storage order."""
        for i, layer in enumerate(self.layers):
            for name in sorted(layer.params):
                yield i, name, layer.params[name]

    def preprocess(self, x):
        """Apply the input normalization recorded in metadata at training time."""
        x = np.asarray(x, dtype=np.float64)
        if "input_mean" not in self.metadata:
            return x
        mean = np.asarray(json.loads(self.metadata["input_mean"]))
        std = np.asarray(json.loads(self.metadata["input_std"]))
        if len(self.input_shape) == 3:
            mean = mean.reshape(-1, 1, 1)
            std = std.reshape(-1, 1, 1)
        return (x - mean) / std

    def __repr__(self):
        return f"Network(input_shape={self.input_shape}, layers={self.layers!r})"


def _mask_by_layer(units):
    out: dict[int, list[int]] = {}
    for layer, unit in sorted(units):
        out.setdefault(layer, []).append(unit)
    return out


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ForwardTrace:
    """Activations of one forward pass.

    ``inputs[i]``/``outputs[i]`` are batched arrays for layer i; ``single`` tells
    whether the caller passed one sample, in which case the public properties
    drop the batch axis.
    """

    batch_logits: np.ndarray
    batch_probs: np.ndarray
    single: bool
    mask: frozenset = frozenset()
    inputs: Optional[list] = None
    outputs: Optional[list] = None
    caches: Optional[list] = None

    @property
    def recorded(self):
        return self.inputs is not None

    @property
    def logits(self):
        return self.batch_logits[0] if self.single else self.batch_logits

    @property
    def probs(self):
        return self.batch_probs[0] if self.single else self.batch_probs

    def activation(self, layer_index):
        """Output of ``layer_index`` with the caller's batch convention."""
        out = self.outputs[layer_index]
        return out[0] if self.single else out


def _as_batch(network, x):
    x = np.asarray(x, dtype=np.float64)
    shape = network.input_shape
    if x.shape == shape:
        return x[None], True
    if x.ndim == len(shape) + 1 and x.shape[1:] == shape:
        return x, False
    raise ShapeMismatchError(f"layer 0: input shape {x.shape} does not match {shape}", 0)


def forward(network: Network, x, record: bool = True, mask=None) -> ForwardTrace:
    """Run the network; ``mask`` adds to any mask stored on the network."""
    xb, single = _as_batch(network, x)
    units = network.mask
    if mask is not None:
        units = units | network.check_units(mask)
    by_layer = _mask_by_layer(units)
    inputs, outputs, caches = [], [], []
    h = xb
    for i, layer in enumerate(network.layers):
        y, cache = layer.forward(h)
        if i in by_layer:
            y = y.copy()
            y[:, by_layer[i]] = 0.0
        if record:
            inputs.append(h)
            outputs.append(y)
            caches.append(cache)
        h = y
    trace = ForwardTrace(h, softmax(h), single, units)
    if record:
        trace.inputs, trace.outputs, trace.caches = inputs, outputs, caches
    return trace


def masked_forward(network: Network, x, mask, record: bool = True) -> ForwardTrace:
    return forward(network, x, record=record, mask=mask)


@dataclass
class Gradients:
    """Gradients of ``output_grad . logits`` (summed over the batch for parameters)."""

    params: list = field(default_factory=list)
    layer_inputs: list = field(default_factory=list)
    single: bool = False
    logits: Optional[np.ndarray] = None

    @property
    def input(self):
        g = self.layer_inputs[0]
        return g[0] if self.single else g

    def wrt_output(self, layer_index):
        """Per-sample gradient with respect to the (masked) output of a layer."""
        g = self.layer_inputs[layer_index + 1] if layer_index + 1 < len(self.layer_inputs) else self.logits
        return g[0] if self.single else g


def backward(network: Network, trace: ForwardTrace, output_grad) -> Gradients:
    if not trace.recorded:
        raise MissingTraceError("backward needs a trace recorded with record=True")
    batch = trace.batch_logits.shape[0]
    g = np.asarray(output_grad, dtype=np.float64)
    if g.shape == (network.class_count,):
        g = np.broadcast_to(g, (batch, network.class_count))
    if g.shape != (batch, network.class_count):
        raise ShapeMismatchError(
            f"output_grad shape {g.shape} does not match logits {trace.batch_logits.shape}",
            len(network.layers) - 1)
    by_layer = _mask_by_layer(trace.mask)
    grads = Gradients(params=[None] * len(network.layers),
                      layer_inputs=[None] * len(network.layers), single=trace.single)
    grads.logits = g
    for i in range(len(network.layers) - 1, -1, -1):
        if i in by_layer:
            g = g.copy()
            g[:, by_layer[i]] = 0.0
        layer = network.layers[i]
        g, pg = layer.backward(g, trace.inputs[i], trace.caches[i])
        grads.params[i] = pg
        grads.layer_inputs[i] = g
    return grads


def kaiming_uniform_init(network: Network, seed: int) -> Network:
    """Fill weights with U(-sqrt(6/fan_in), sqrt(6/fan_in)) and zero the biases, in place."""
    rng = np.random.default_rng(seed)
    for layer in network.layers:
        if not layer.prunable:
            continue
        w = layer.params["weight"]
        fan_in = int(np.prod(w.shape[1:]))
        bound = np.sqrt(6.0 / fan_in)
        layer.params["weight"] = rng.uniform(-bound, bound, size=w.shape)
        layer.params["bias"] = np.zeros_like(layer.params["bias"])
    return network


def build_mlp(input_dim: int, hidden: Iterable[int], class_count: int, seed=None) -> Network:
    layers: list[Layer] = []
    prev = int(input_dim)
    for width in hidden:
        layers += [Dense(prev, width), ReLU()]
        prev = width
    layers.append(Dense(prev, class_count))
    net = Network(layers, (input_dim,), class_count)
    if seed is not None:
        kaiming_uniform_init(net, seed)
    return net


def build_cnn(input_shape, channels=(8, 16), hidden=(32,), class_count=2, kernel=3,
              pool=2, seed=None) -> Network:
    """conv-relu-pool blocks followed by a dense head."""
    c, h, w = input_shape
    layers: list[Layer] = []
    for out_c in channels:
        layers += [Conv2d(c, out_c, kernel, kernel, stride=1, padding=kernel // 2), ReLU()]
        c = out_c
        if pool and h // pool >= 1 and w // pool >= 1:
            layers.append(MaxPool2d(pool))
            h, w = h // pool, w // pool
    layers.append(Flatten())
    prev = c * h * w
    for width in hidden:
        layers += [Dense(prev, width), ReLU()]
        prev = width
    layers.append(Dense(prev, class_count))
    net = Network(layers, input_shape, class_count)
    if seed is not None:
        kaiming_uniform_init(net, seed)
    return net


def build_from_config(cfg: dict, input_shape, class_count: int, seed=None) -> Network:
    """Build an architecture from a ``model`` config section.

    ``{"kind": "mlp", "hidden": [...]}``, ``{"kind": "cnn", "channels": [...],
    "hidden": [...]}`` or ``{"layers": [layer specs...]}``.
    """
    cfg = dict(cfg or {})
    if "layers" in cfg:
        net = Network(cfg["layers"], input_shape, class_count)
        if seed is not None:
            kaiming_uniform_init(net, seed)
        return net
    kind = cfg.get("kind", "cnn" if len(input_shape) == 3 else "mlp")
    if kind == "mlp":
        dim = int(np.prod(input_shape))
        if len(input_shape) != 1:
            raise ValueError("mlp models need flat inputs")
        return build_mlp(dim, cfg.get("hidden", [32]), class_count, seed)
    if kind == "cnn":
        return build_cnn(tuple(input_shape), tuple(cfg.get("channels", (8, 16))),
                         tuple(cfg.get("hidden", (32,))), class_count,
                         kernel=cfg.get("kernel", 3), pool=cfg.get("pool", 2), seed=seed)
    raise ValueError(f"unknown model kind {kind!r}")


def macs_per_unit(network: Network) -> dict[int, int]:
    """Multiply-accumulates feeding one unit of each prunable layer."""
    out = {}
    for i in network.prunable_layers:
        layer = network.layers[i]
        if layer.kind == "dense":
            out[i] = layer.in_units
        else:
            _, oh, ow = network.shapes[i + 1]
            out[i] = layer.in_channels * layer.kernel_h * layer.kernel_w * oh * ow
    return out
