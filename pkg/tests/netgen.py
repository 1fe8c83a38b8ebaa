"""Seeded random networks shared by the test modules."""
import numpy as np

from relprune.tensor_net import Conv2d, Dense, Flatten, MaxPool2d, Network, ReLU, kaiming_uniform_init


def random_mlp(seed, bias_scale=0.0, dims=None):
    rng = np.random.default_rng(seed)
    dims = dims or [int(rng.integers(2, 7)), int(rng.integers(3, 9)), int(rng.integers(3, 9)),
                    int(rng.integers(2, 5))]
    layers = []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        layers.append(Dense(a, b))
        if i < len(dims) - 2:
            layers.append(ReLU())
    net = kaiming_uniform_init(Network(layers, (dims[0],), dims[-1]), seed)
    _set_biases(net, rng, bias_scale)
    return net


def random_cnn(seed, bias_scale=0.0):
    rng = np.random.default_rng(seed)
    c_in = int(rng.integers(1, 3))
    c1, c2 = int(rng.integers(2, 4)), int(rng.integers(2, 5))
    stride = int(rng.integers(1, 3))
    layers = [Conv2d(c_in, c1, 3, 3, stride=1, padding=1), ReLU(), MaxPool2d(2),
              Conv2d(c1, c2, 2, 3, stride=stride, padding=int(rng.integers(0, 2))), ReLU(),
              Flatten()]
    shape = (c_in, 6, 6)
    for layer in layers:
        shape = layer.output_shape(shape)
    classes = int(rng.integers(2, 4))
    layers += [Dense(shape[0], 5), ReLU(), Dense(5, classes)]
    net = kaiming_uniform_init(Network(layers, (c_in, 6, 6), classes), seed)
    _set_biases(net, rng, bias_scale)
    return net


def random_network(seed, bias_scale=0.0):
    return random_cnn(seed, bias_scale) if seed % 2 else random_mlp(seed, bias_scale)


def _set_biases(net, rng, scale):
    for layer in net.layers:
        if layer.prunable:
            layer.params["bias"] = rng.uniform(-scale, scale, size=layer.params["bias"].shape)


def hand_net():
    """dense(2->2) -> relu -> dense(2->1), all weights one, zero biases."""
    return Network([Dense(2, 2, np.ones((2, 2))), ReLU(), Dense(2, 1, np.ones((1, 2)))], (2,), 1)
