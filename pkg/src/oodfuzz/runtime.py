"""Minimal feed-forward runtime with per-neuron activation capture.

Supported layers: dense, conv2d (valid padding), maxpool2x2, flatten, relu.
The last layer's outputs are the logits; softmax is applied by scorers and
the loss, never as a stored layer.

Coverage neurons are enumerated per parameterized layer: one neuron per
output unit for dense, one per output channel for conv2d (its value is the
spatial mean of the channel map).  A neuron's value is read after the
immediately following relu when present, so it is the value the next layer
actually consumes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import ClassVar, Union

import numpy as np

from .errors import CapabilityError, ShapeError, UsageError


@dataclass
class Dense:
    kind: ClassVar[str] = "dense"
    weights: np.ndarray  # (out, in), row-major over output units
    bias: np.ndarray  # (out,)


@dataclass
class Conv2d:
    kind: ClassVar[str] = "conv2d"
    weights: np.ndarray  # (out_channels, in_channels, k, k)
    bias: np.ndarray  # (out_channels,)
    stride: int = 1


@dataclass
class Relu:
    kind: ClassVar[str] = "relu"


@dataclass
class MaxPool2x2:
    kind: ClassVar[str] = "maxpool2x2"


@dataclass
class Flatten:
    kind: ClassVar[str] = "flatten"


Layer = Union[Dense, Conv2d, Relu, MaxPool2x2, Flatten]


def _layer_out_shape(layer: Layer, in_shape: tuple[int, ...], index: int) -> tuple[int, ...]:
    """Shape of `layer`'s output given its input shape, or ShapeError."""
    if isinstance(layer, Dense):
        out_n, in_n = layer.weights.shape
        if in_shape != (in_n,):
            raise ShapeError(
                f"layer {index} (dense) expects flat input of size {in_n}, got {in_shape}"
            )
        if layer.bias.shape != (out_n,):
            raise ShapeError(
                f"layer {index} (dense) bias has shape {layer.bias.shape}, expected ({out_n},)"
            )
        return (out_n,)
    if isinstance(layer, Conv2d):
        if len(in_shape) != 3:
            raise ShapeError(f"layer {index} (conv2d) expects HxWxC input, got {in_shape}")
        h, w, c = in_shape
        out_c, in_c, k, k2 = layer.weights.shape
        if k != k2:
            raise ShapeError(f"layer {index} (conv2d) kernel must be square, got {k}x{k2}")
        if layer.bias.shape != (out_c,):
            raise ShapeError(
                f"layer {index} (conv2d) bias has shape {layer.bias.shape}, expected ({out_c},)"
            )
        if c != in_c:
            raise ShapeError(f"layer {index} (conv2d) expects {in_c} channels, got {c}")
        if h < k or w < k:
            raise ShapeError(f"layer {index} (conv2d) kernel {k} larger than input {h}x{w}")
        s = layer.stride
        if s < 1:
            raise ShapeError(f"layer {index} (conv2d) stride must be >= 1")
        return ((h - k) // s + 1, (w - k) // s + 1, out_c)
    if isinstance(layer, MaxPool2x2):
        if len(in_shape) != 3:
            raise ShapeError(f"layer {index} (maxpool2x2) expects HxWxC input, got {in_shape}")
        h, w, c = in_shape
        if h < 2 or w < 2:
            raise ShapeError(f"layer {index} (maxpool2x2) input {h}x{w} too small")
        return (h // 2, w // 2, c)
    if isinstance(layer, Flatten):
        return (int(np.prod(in_shape)),)
    if isinstance(layer, Relu):
        return in_shape
    raise ShapeError(f"layer {index} has unknown kind {type(layer).__name__}")


@dataclass
class Network:
    """Ordered layer list; validated by shape propagation at construction."""

    layers: list[Layer]
    input_shape: tuple[int, ...]
    class_count: int

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        if not self.layers:
            raise ShapeError("network has no layers")
        shapes = []
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            shape = _layer_out_shape(layer, shape, i)
            shapes.append(shape)
        if shapes[-1] != (self.class_count,):
            raise ShapeError(
                f"last layer produces shape {shapes[-1]}, expected ({self.class_count},) logits"
            )
        self.layer_shapes = shapes
        groups = []
        offset = 0
        for i, layer in enumerate(self.layers):
            if isinstance(layer, (Dense, Conv2d)):
                n = int(layer.weights.shape[0])
                groups.append((i, offset, n))
                offset += n
        # (layer index, neuron offset, neuron count) per parameterized layer
        self.neuron_groups = groups
        self.neuron_count = offset
        self.layer_sizes = tuple(n for _, _, n in groups)

    @property
    def dtype(self):
        for layer in self.layers:
            if isinstance(layer, (Dense, Conv2d)):
                return layer.weights.dtype
        return np.dtype(np.float32)

    def copy(self) -> "Network":
        layers = []
        for layer in self.layers:
            if isinstance(layer, Dense):
                layers.append(Dense(layer.weights.copy(), layer.bias.copy()))
            elif isinstance(layer, Conv2d):
                layers.append(Conv2d(layer.weights.copy(), layer.bias.copy(), layer.stride))
            else:
                layers.append(type(layer)())
        return Network(layers, self.input_shape, self.class_count)


@dataclass
class ActivationTrace:
    """Everything coverage and OOD analysis need about one forward pass."""

    neuron_values: np.ndarray  # (neuron_count,)
    logits: np.ndarray  # (class_count,)
    penultimate: np.ndarray  # input to the final layer, flattened
    predicted_class: int
    layer_sizes: tuple[int, ...]  # neuron count per contributing layer


@dataclass
class TraceBatch:
    """Array-of-structs view over many traces (batch axis first)."""

    neuron_values: np.ndarray
    logits: np.ndarray
    penultimate: np.ndarray
    predicted_class: np.ndarray
    layer_sizes: tuple[int, ...]

    def __len__(self) -> int:
        return self.logits.shape[0]

    def __getitem__(self, i: int) -> ActivationTrace:
        return ActivationTrace(
            neuron_values=self.neuron_values[i],
            logits=self.logits[i],
            penultimate=self.penultimate[i],
            predicted_class=int(self.predicted_class[i]),
            layer_sizes=self.layer_sizes,
        )


def _apply_layer(layer: Layer, x: np.ndarray) -> np.ndarray:
    if isinstance(layer, Dense):
        return x @ layer.weights.T + layer.bias
    if isinstance(layer, Conv2d):
        k = layer.weights.shape[2]
        win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
        win = win[:, :: layer.stride, :: layer.stride]
        out = np.einsum("nhwcij,ocij->nhwo", win, layer.weights, optimize=True)
        return out + layer.bias
    if isinstance(layer, Relu):
        return np.maximum(x, 0)
    if isinstance(layer, MaxPool2x2):
        n, h, w, c = x.shape
        h2, w2 = h // 2, w // 2
        cropped = x[:, : h2 * 2, : w2 * 2, :]
        return cropped.reshape(n, h2, 2, w2, 2, c).max(axis=(2, 4))
    if isinstance(layer, Flatten):
        return x.reshape(x.shape[0], -1)
    raise ShapeError(f"unknown layer kind {type(layer).__name__}")


def forward_trace_batch(net: Network, inputs: np.ndarray) -> TraceBatch:
    """Run a batch of inputs through `net`, capturing neuron values.

    `inputs` has shape (N, *net.input_shape) with values in [0, 1].
    """
    inputs = np.asarray(inputs)
    if inputs.shape[1:] != net.input_shape:
        raise ShapeError(
            f"input shape {inputs.shape[1:]} does not match network input {net.input_shape}"
        )
    x = inputs.astype(net.dtype, copy=False)
    outs = []
    a = x
    for layer in net.layers:
        a = _apply_layer(layer, a)
        outs.append(a)

    pieces = []
    for i, offset, n in net.neuron_groups:
        nxt = net.layers[i + 1] if i + 1 < len(net.layers) else None
        src = outs[i + 1] if isinstance(nxt, Relu) else outs[i]
        if isinstance(net.layers[i], Conv2d):
            # float64 accumulation keeps the mean of a constant map exact
            pieces.append(src.mean(axis=(1, 2), dtype=np.float64).astype(net.dtype))
        else:
            pieces.append(src)
    neuron_values = (
        np.concatenate(pieces, axis=1)
        if pieces
        else np.zeros((x.shape[0], 0), dtype=net.dtype)
    )

    logits = outs[-1]
    penultimate = outs[-2] if len(outs) >= 2 else x
    penultimate = penultimate.reshape(penultimate.shape[0], -1)
    return TraceBatch(
        neuron_values=neuron_values,
        logits=logits,
        penultimate=penultimate,
        predicted_class=np.argmax(logits, axis=1),
        layer_sizes=net.layer_sizes,
    )


def forward_trace(net: Network, input_: np.ndarray) -> ActivationTrace:
    """Single-input forward pass; see forward_trace_batch."""
    input_ = np.asarray(input_)
    if input_.shape != net.input_shape:
        raise ShapeError(
            f"input shape {input_.shape} does not match network input {net.input_shape}"
        )
    return forward_trace_batch(net, input_[None])[0]


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Numerically stable softmax over the last axis, in float64."""
    if temperature <= 0:
        raise UsageError(f"softmax temperature must be positive, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


TRAINABLE_LAYERS = (Dense, Relu, Flatten)


def check_trainable(net: Network) -> None:
    """Raise CapabilityError unless `net` is in the dense/relu/flatten subset."""
    for i, layer in enumerate(net.layers):
        if not isinstance(layer, TRAINABLE_LAYERS):
            raise CapabilityError(
                f"layer {i} ({layer.kind}) is not trainable; only dense, relu and "
                f"flatten networks support gradients"
            )


def backward(
    net: Network,
    inputs: np.ndarray,
    labels: np.ndarray | int | None = None,
    target_probs: np.ndarray | None = None,
):
    """Gradients of the mean cross-entropy loss for the trainable subset.

    Exactly one of `labels` (integer class targets) or `target_probs`
    (explicit target distributions, used for the uniform-target outlier
    loss) must be given.  Returns (loss, grads) where grads is a list
    parallel to net.layers holding (d_weights, d_bias) for dense layers and
    None elsewhere.  Gradients are averaged over the batch.
    """
    check_trainable(net)
    if (labels is None) == (target_probs is None):
        raise UsageError("pass exactly one of labels or target_probs")

    inputs = np.asarray(inputs)
    if inputs.shape == net.input_shape:
        inputs = inputs[None]
    if inputs.shape[1:] != net.input_shape:
        raise ShapeError(
            f"input shape {inputs.shape[1:]} does not match network input {net.input_shape}"
        )
    x = inputs.astype(net.dtype, copy=False)
    n = x.shape[0]

    acts = [x]
    for layer in net.layers:
        acts.append(_apply_layer(layer, acts[-1]))
    logits = acts[-1]

    if target_probs is None:
        labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
        if labels.shape != (n,):
            raise ShapeError(f"labels shape {labels.shape} does not match batch size {n}")
        if labels.min() < 0 or labels.max() >= net.class_count:
            raise UsageError("label outside [0, class_count)")
        targets = np.zeros((n, net.class_count), dtype=net.dtype)
        targets[np.arange(n), labels] = 1
    else:
        targets = np.asarray(target_probs, dtype=net.dtype)
        if targets.shape != (n, net.class_count):
            raise ShapeError(f"target_probs shape {targets.shape} != ({n}, {net.class_count})")

    log_p = _log_softmax(logits)
    loss = float(-(targets * log_p).sum() / n)

    probs = np.exp(log_p)
    delta = (probs - targets) / n  # d loss / d logits
    grads: list[tuple[np.ndarray, np.ndarray] | None] = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        a_in = acts[i]
        if isinstance(layer, Dense):
            grads[i] = (delta.T @ a_in, delta.sum(axis=0))
            delta = delta @ layer.weights
        elif isinstance(layer, Relu):
            delta = delta * (acts[i + 1] > 0)
        elif isinstance(layer, Flatten):
            delta = delta.reshape(a_in.shape)
    return loss, grads
