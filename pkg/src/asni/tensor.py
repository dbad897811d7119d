"""Dense layers, parameter storage and manual backpropagation on numpy arrays.

Networks are described by a list of :class:`LayerSpec` and evaluated by
:func:`forward` / :func:`loss_and_grad`.  All arithmetic follows the dtype of
the parameters, so a float64 copy of a :class:`ParamStore` gives a 64-bit
shadow evaluation of the same network.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Iterator, Sequence

import numpy as np

DTYPE = np.float32

LAYER_KINDS = ("linear", "conv2d", "relu", "maxpool2d", "flatten")


class ShapeError(ValueError):
    """Raised when layer shapes do not compose or a batch does not fit."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_features: int = 0
    out_features: int = 0
    in_channels: int = 0
    out_channels: int = 0
    kernel_size: int = 0
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    @property
    def has_params(self) -> bool:
        return self.kind in ("linear", "conv2d")

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v or k == "kind"}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(**d)


def linear(n_in: int, n_out: int) -> LayerSpec:
    return LayerSpec("linear", in_features=n_in, out_features=n_out)


def conv2d(c_in: int, c_out: int, k: int = 3, stride: int = 1, padding: int = 1) -> LayerSpec:
    return LayerSpec("conv2d", in_channels=c_in, out_channels=c_out,
                     kernel_size=k, stride=stride, padding=padding)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def maxpool2d(k: int = 2) -> LayerSpec:
    return LayerSpec("maxpool2d", kernel_size=k, stride=k)


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def output_shape(layer: LayerSpec, shape: tuple[int, ...]) -> tuple[int, ...]:
    """Per-sample output shape of ``layer`` for a per-sample input ``shape``."""
    kind = layer.kind
    if kind == "linear":
        if shape != (layer.in_features,):
            raise ShapeError(f"linear expects ({layer.in_features},), got {shape}")
        return (layer.out_features,)
    if kind == "conv2d":
        if len(shape) != 3 or shape[0] != layer.in_channels:
            raise ShapeError(f"conv2d expects ({layer.in_channels}, H, W), got {shape}")
        k, s, p = layer.kernel_size, layer.stride, layer.padding
        h = (shape[1] + 2 * p - k) // s + 1
        w = (shape[2] + 2 * p - k) // s + 1
        if h < 1 or w < 1:
            raise ShapeError(f"conv2d kernel {k} does not fit input {shape}")
        return (layer.out_channels, h, w)
    if kind == "maxpool2d":
        if len(shape) != 3:
            raise ShapeError(f"maxpool2d expects (C, H, W), got {shape}")
        k = layer.kernel_size
        if shape[1] < k or shape[2] < k:
            raise ShapeError(f"maxpool2d window {k} does not fit input {shape}")
        return (shape[0], shape[1] // k, shape[2] // k)
    if kind == "flatten":
        return (int(np.prod(shape)),)
    return shape


def infer_shapes(spec: Sequence[LayerSpec], input_shape: tuple[int, ...]) -> list[tuple[int, ...]]:
    """Shapes after each layer, input first.  Raises naming the offending pair."""
    shapes = [tuple(input_shape)]
    for i, layer in enumerate(spec):
        try:
            shapes.append(output_shape(layer, shapes[-1]))
        except ShapeError as exc:
            prev = "input" if i == 0 else f"layer {i - 1} ({spec[i - 1].kind})"
            raise ShapeError(f"{prev} -> layer {i} ({layer.kind}): {exc}") from None
    return shapes


# ---------------------------------------------------------------------------
# parameter storage
# ---------------------------------------------------------------------------

@dataclass
class ParamEntry:
    name: str
    tensor: np.ndarray
    prunable: bool
    layer_index: int


class ParamStore:
    """Ordered, name-addressed parameter tensors.

    Weight tensors are prunable, bias tensors are not.  The concatenation of
    the prunable tensors in insertion order defines the flat coordinate
    system that masks refer to.
    """

    def __init__(self, entries: Sequence[ParamEntry] = ()):
        self._entries: list[ParamEntry] = []
        self._index: dict[str, int] = {}
        for e in entries:
            self.add(e.name, e.tensor, e.prunable, e.layer_index)

    def add(self, name: str, tensor: np.ndarray, prunable: bool, layer_index: int) -> None:
        if name in self._index:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._index[name] = len(self._entries)
        self._entries.append(ParamEntry(name, tensor, prunable, layer_index))

    def __iter__(self) -> Iterator[ParamEntry]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[self._index[name]].tensor

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        entry = self._entries[self._index[name]]
        if value.shape != entry.tensor.shape:
            raise ShapeError(f"{name}: shape {value.shape} != {entry.tensor.shape}")
        entry.tensor = value

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def entry(self, name: str) -> ParamEntry:
        return self._entries[self._index[name]]

    def names(self) -> list[str]:
        return [e.name for e in self._entries]

    def prunable(self) -> list[ParamEntry]:
        return [e for e in self._entries if e.prunable]

    @property
    def num_prunable(self) -> int:
        return sum(e.tensor.size for e in self._entries if e.prunable)

    @property
    def num_params(self) -> int:
        return sum(e.tensor.size for e in self._entries)

    def flat_prunable(self) -> np.ndarray:
        parts = [e.tensor.ravel() for e in self.prunable()]
        if not parts:
            return np.zeros(0, dtype=DTYPE)
        return np.concatenate(parts)

    def copy(self, dtype=None) -> "ParamStore":
        out = ParamStore()
        for e in self._entries:
            t = e.tensor.copy() if dtype is None else e.tensor.astype(dtype)
            out.add(e.name, t, e.prunable, e.layer_index)
        return out

    def zeros_like(self) -> "ParamStore":
        out = ParamStore()
        for e in self._entries:
            out.add(e.name, np.zeros_like(e.tensor), e.prunable, e.layer_index)
        return out

    def equals(self, other: "ParamStore") -> bool:
        """Bit-exact equality of names, flags and tensor contents."""
        if self.names() != other.names():
            return False
        for a, b in zip(self, other):
            if (a.prunable != b.prunable or a.tensor.dtype != b.tensor.dtype
                    or a.tensor.shape != b.tensor.shape
                    or a.tensor.tobytes() != b.tensor.tobytes()):
                return False
        return True


def build_network(spec: Sequence[LayerSpec], seed: int,
                  input_shape: tuple[int, ...] | None = None) -> ParamStore:
    """Kaiming-normal weights (std = sqrt(2 / fan_in)) and zero biases."""
    if input_shape is not None:
        infer_shapes(spec, input_shape)
    else:
        _check_adjacent(spec)
    rng = np.random.default_rng(seed)
    params = ParamStore()
    for i, layer in enumerate(spec):
        if layer.kind == "linear":
            shape = (layer.out_features, layer.in_features)
            fan_in = layer.in_features
            n_out = layer.out_features
        elif layer.kind == "conv2d":
            k = layer.kernel_size
            shape = (layer.out_channels, layer.in_channels, k, k)
            fan_in = layer.in_channels * k * k
            n_out = layer.out_channels
        else:
            continue
        std = np.sqrt(2.0 / fan_in)
        w = (rng.standard_normal(shape) * std).astype(DTYPE)
        params.add(f"layer{i}.weight", w, True, i)
        params.add(f"layer{i}.bias", np.zeros(n_out, dtype=DTYPE), False, i)
    return params


def _check_adjacent(spec: Sequence[LayerSpec]) -> None:
    # Without an input shape only channel/feature counts of parametrised
    # neighbours can be checked.
    last = None
    for i, layer in enumerate(spec):
        if not layer.has_params:
            if layer.kind == "flatten":
                last = None
            continue
        n_in = layer.in_features if layer.kind == "linear" else layer.in_channels
        if last is not None:
            j, prev = last
            n_prev = prev.out_features if prev.kind == "linear" else prev.out_channels
            if n_prev != n_in or (prev.kind == "linear") != (layer.kind == "linear"):
                raise ShapeError(
                    f"layer {j} ({prev.kind}, out={n_prev}) -> layer {i} ({layer.kind}, in={n_in})")
        last = (i, layer)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _im2col(x: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    """Rows are output pixels (b, oh, ow); columns are ordered (kh, kw, c)."""
    b, c, h, w = x.shape
    xt = np.zeros((b, h + 2 * padding, w + 2 * padding, c), dtype=x.dtype)
    xt[:, padding:padding + h, padding:padding + w, :] = x.transpose(0, 2, 3, 1)
    oh = (h + 2 * padding - k) // stride + 1
    ow = (w + 2 * padding - k) // stride + 1
    cols = np.empty((b, oh, ow, k, k, c), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = xt[:, i:i + stride * oh:stride, j:j + stride * ow:stride, :]
    return cols.reshape(b * oh * ow, k * k * c)


def _col2im(dcols: np.ndarray, x_shape: tuple[int, ...], out_hw: tuple[int, int],
            k: int, stride: int, padding: int) -> np.ndarray:
    b, c, h, w = x_shape
    oh, ow = out_hw
    d = dcols.reshape(b, oh, ow, k, k, c)
    dx = np.zeros((b, h + 2 * padding, w + 2 * padding, c), dtype=dcols.dtype)
    for i in range(k):
        for j in range(k):
            dx[:, i:i + stride * oh:stride, j:j + stride * ow:stride, :] += d[:, :, :, i, j, :]
    return np.ascontiguousarray(dx[:, padding:padding + h, padding:padding + w, :].transpose(0, 3, 1, 2))


def _conv_matrix(w: np.ndarray) -> np.ndarray:
    # (out, c, kh, kw) -> (out, kh*kw*c), matching the column order of _im2col
    return w.transpose(0, 2, 3, 1).reshape(w.shape[0], -1)


def _layer_forward(layer: LayerSpec, idx: int, params: ParamStore, x: np.ndarray):
    kind = layer.kind
    if kind == "linear":
        w = params[f"layer{idx}.weight"]
        b = params[f"layer{idx}.bias"]
        return x @ w.T + b, x
    if kind == "conv2d":
        w = params[f"layer{idx}.weight"]
        b = params[f"layer{idx}.bias"]
        k, s, p = layer.kernel_size, layer.stride, layer.padding
        cols = _im2col(x, k, s, p)
        bsz = x.shape[0]
        oh = (x.shape[2] + 2 * p - k) // s + 1
        ow = (x.shape[3] + 2 * p - k) // s + 1
        out = cols @ _conv_matrix(w).T + b
        out = out.reshape(bsz, oh, ow, -1).transpose(0, 3, 1, 2)
        return out, (cols, x.shape, (oh, ow))
    if kind == "relu":
        return np.maximum(x, 0), x > 0
    if kind == "maxpool2d":
        k = layer.kernel_size
        bsz, c, h, w = x.shape
        oh, ow = h // k, w // k
        xc = x[:, :, :oh * k, :ow * k]
        win = xc.reshape(bsz, c, oh, k, ow, k).transpose(0, 1, 2, 4, 3, 5).reshape(bsz, c, oh, ow, k * k)
        arg = win.argmax(axis=-1)
        out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
        return out, (arg, x.shape)
    # flatten
    return x.reshape(x.shape[0], -1), x.shape


def _layer_backward(layer: LayerSpec, idx: int, params: ParamStore, cache, dout: np.ndarray,
                    grads: dict[str, np.ndarray], need_dx: bool):
    kind = layer.kind
    if kind == "linear":
        x = cache
        w = params[f"layer{idx}.weight"]
        grads[f"layer{idx}.weight"] = dout.T @ x
        grads[f"layer{idx}.bias"] = dout.sum(axis=0)
        return dout @ w if need_dx else None
    if kind == "conv2d":
        cols, x_shape, (oh, ow) = cache
        w = params[f"layer{idx}.weight"]
        d = dout.transpose(0, 2, 3, 1).reshape(-1, w.shape[0])
        co, ci, kh, kw = w.shape
        grads[f"layer{idx}.weight"] = np.ascontiguousarray(
            (d.T @ cols).reshape(co, kh, kw, ci).transpose(0, 3, 1, 2))
        grads[f"layer{idx}.bias"] = d.sum(axis=0)
        if not need_dx:
            return None
        dcols = d @ _conv_matrix(w)
        return _col2im(dcols, x_shape, (oh, ow), layer.kernel_size, layer.stride, layer.padding)
    if kind == "relu":
        return dout * cache
    if kind == "maxpool2d":
        arg, x_shape = cache
        k = layer.kernel_size
        bsz, c, h, w = x_shape
        oh, ow = dout.shape[2], dout.shape[3]
        dwin = np.zeros((bsz, c, oh, ow, k * k), dtype=dout.dtype)
        np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
        dx = np.zeros(x_shape, dtype=dout.dtype)
        dx[:, :, :oh * k, :ow * k] = (
            dwin.reshape(bsz, c, oh, ow, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(bsz, c, oh * k, ow * k))
        return dx
    return dout.reshape(cache)


def _run_forward(params: ParamStore, spec: Sequence[LayerSpec], inputs: np.ndarray, keep: bool):
    x = np.asarray(inputs)
    dtype = params.prunable()[0].tensor.dtype if len(params) else DTYPE
    if x.dtype != dtype:
        x = x.astype(dtype)
    caches = []
    for i, layer in enumerate(spec):
        try:
            x, cache = _layer_forward(layer, i, params, x)
        except (ValueError, KeyError) as exc:
            raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
        if keep:
            caches.append(cache)
    return x, caches


def _check_batch(spec: Sequence[LayerSpec], inputs: np.ndarray) -> None:
    if inputs.ndim < 2 or inputs.shape[0] < 1:
        raise ShapeError(f"batch inputs must be (B, ...), got {inputs.shape}")
    infer_shapes(spec, tuple(inputs.shape[1:]))


def forward(params: ParamStore, spec: Sequence[LayerSpec], inputs: np.ndarray) -> np.ndarray:
    """Logits of shape (B, C)."""
    inputs = np.asarray(inputs)
    _check_batch(spec, inputs)
    logits, _ = _run_forward(params, spec, inputs, keep=False)
    return logits


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} != ({n},)")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"label out of range [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(denom)
    rows = np.arange(n)
    loss = -log_probs[rows, labels].mean()
    dlogits = exp / denom
    dlogits[rows, labels] -= 1
    dlogits /= n
    return float(loss), dlogits


def loss_and_grad(params: ParamStore, spec: Sequence[LayerSpec], inputs: np.ndarray,
                  labels: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    inputs = np.asarray(inputs)
    _check_batch(spec, inputs)
    logits, caches = _run_forward(params, spec, inputs, keep=True)
    loss, dout = softmax_cross_entropy(logits, labels)
    dout = dout.astype(logits.dtype, copy=False)
    grads: dict[str, np.ndarray] = {}
    first_param = next((i for i, l in enumerate(spec) if l.has_params), len(spec))
    for i in range(len(spec) - 1, -1, -1):
        dout = _layer_backward(spec[i], i, params, caches[i], dout, grads, need_dx=i > first_param)
        if dout is None:
            break
    return loss, grads


def predict(params: ParamStore, spec: Sequence[LayerSpec], inputs: np.ndarray,
            batch_size: int = 1000) -> np.ndarray:
    """Argmax class per sample; ties go to the lowest class index."""
    out = []
    for start in range(0, len(inputs), batch_size):
        logits = forward(params, spec, inputs[start:start + batch_size])
        out.append(logits.argmax(axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def accuracy(params: ParamStore, spec: Sequence[LayerSpec], inputs: np.ndarray,
             labels: np.ndarray) -> float:
    pred = predict(params, spec, inputs)
    return float((pred == np.asarray(labels)).mean())
