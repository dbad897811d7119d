"""Network presets: LeNet-300-100 ("fc") and the Conv-2/4/6 family."""
from __future__ import annotations

import numpy as np

from .tensor import LayerSpec, conv2d, flatten, infer_shapes, linear, maxpool2d, relu

INPUT_SHAPES = {
    "mnist": (1, 28, 28),
    "cifar10": (3, 32, 32),
}

# Conv blocks: pairs of 3x3 same-padded convolutions, each pair followed by
# a 2x2 max-pool, then a 256-256-10 classifier.
_CONV_WIDTHS = {
    "conv2": (64,),
    "conv4": (64, 128),
    "conv6": (64, 128, 256),
}

ARCHITECTURES = ("fc",) + tuple(_CONV_WIDTHS)


def fc_spec(input_shape=(1, 28, 28), num_classes: int = 10) -> list[LayerSpec]:
    n_in = int(np.prod(input_shape))
    return [flatten(),
            linear(n_in, 300), relu(),
            linear(300, 100), relu(),
            linear(100, num_classes)]


def conv_spec(name: str, input_shape=(1, 28, 28), num_classes: int = 10) -> list[LayerSpec]:
    widths = _CONV_WIDTHS[name]
    channels, h, w = input_shape
    layers: list[LayerSpec] = []
    c_in = channels
    for width in widths:
        layers += [conv2d(c_in, width), relu(), conv2d(width, width), relu(), maxpool2d(2)]
        c_in = width
        h, w = h // 2, w // 2
    layers += [flatten(),
               linear(c_in * h * w, 256), relu(),
               linear(256, 256), relu(),
               linear(256, num_classes)]
    return layers


def get_spec(arch: str, dataset: str = "mnist", num_classes: int = 10) -> list[LayerSpec]:
    if dataset not in INPUT_SHAPES:
        raise ValueError(f"unknown dataset {dataset!r}")
    shape = INPUT_SHAPES[dataset]
    if arch == "fc":
        spec = fc_spec(shape, num_classes)
    elif arch in _CONV_WIDTHS:
        spec = conv_spec(arch, shape, num_classes)
    else:
        raise ValueError(f"unknown architecture {arch!r}")
    infer_shapes(spec, shape)
    return spec


def count_params(spec: list[LayerSpec]) -> int:
    total = 0
    for layer in spec:
        if layer.kind == "linear":
            total += layer.out_features * (layer.in_features + 1)
        elif layer.kind == "conv2d":
            k = layer.kernel_size
            total += layer.out_channels * (layer.in_channels * k * k + 1)
    return total
