"""Layer descriptors, the feed-forward CNN container, and its gradients.

A model is an ordered list of layer descriptors plus one (weight, bias) pair
per parametric layer.  The architecture is validated once at construction by
walking the shape chain; there is deliberately no batch-normalization layer
kind (spike encoding has zero-mean inputs nowhere, so the pipeline excludes
it by design).
"""

from dataclasses import dataclass
from typing import Optional
import hashlib

import numpy as np

from . import kernels
from .errors import InvalidArgumentError
from .kernels import LayerGrads


@dataclass(frozen=True)
class Conv2d:
    out_channels: int
    in_channels: int
    kernel_size: int
    stride: int = 1
    padding: int = 0


@dataclass(frozen=True)
class AvgPool2d:
    k: int


@dataclass(frozen=True)
class Linear:
    out_features: int
    in_features: int


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class Dropout:
    rate: float


LayerSpec = Conv2d | AvgPool2d | Linear | ReLU | Dropout


def layer_output_shape(layer: LayerSpec, shape):
    """Shape after `layer` given input `shape` (C,H,W) or (F,)."""
    if isinstance(layer, Conv2d):
        if len(shape) != 3:
            raise InvalidArgumentError(f"conv layer fed a non-image shape {shape}")
        c, h, w = shape
        if c != layer.in_channels:
            raise InvalidArgumentError(
                f"conv expects {layer.in_channels} channels, got {c}"
            )
        ho = (h + 2 * layer.padding - layer.kernel_size) // layer.stride + 1
        wo = (w + 2 * layer.padding - layer.kernel_size) // layer.stride + 1
        if ho < 1 or wo < 1:
            raise InvalidArgumentError(f"conv kernel does not fit {h}x{w}")
        return (layer.out_channels, ho, wo)
    if isinstance(layer, AvgPool2d):
        c, h, w = shape
        if h % layer.k or w % layer.k:
            raise InvalidArgumentError(
                f"pool k={layer.k} does not divide spatial size {h}x{w}"
            )
        return (c, h // layer.k, w // layer.k)
    if isinstance(layer, Linear):
        flat = int(np.prod(shape))
        if flat != layer.in_features:
            raise InvalidArgumentError(
                f"linear expects {layer.in_features} features, got {flat} from {shape}"
            )
        return (layer.out_features,)
    if isinstance(layer, (ReLU, Dropout)):
        if isinstance(layer, Dropout) and not 0.0 <= layer.rate < 1.0:
            raise InvalidArgumentError(f"dropout rate {layer.rate} not in [0,1)")
        return shape
    raise InvalidArgumentError(f"unknown layer kind {layer!r}")


class AnnModel:
    """Ordered layers + weights; immutable once trained (treat as read-only).

    weights[i] is (weight, bias) when layers[i] is parametric, else None.
    """

    def __init__(self, layers, weights, input_shape):
        self.layers = list(layers)
        self.weights = list(weights)
        self.input_shape = tuple(input_shape)
        if len(self.layers) != len(self.weights):
            raise InvalidArgumentError("layers and weights lists differ in length")
        shape = self.input_shape
        self.layer_shapes = []
        for i, (layer, wb) in enumerate(zip(self.layers, self.weights)):
            parametric = isinstance(layer, (Conv2d, Linear))
            if parametric != (wb is not None):
                raise InvalidArgumentError(
                    f"layer {i} ({type(layer).__name__}) weight presence mismatch"
                )
            if isinstance(layer, Conv2d):
                w, b = wb
                exp = (layer.out_channels, layer.in_channels,
                       layer.kernel_size, layer.kernel_size)
                if w.shape != exp or b.shape != (layer.out_channels,):
                    raise InvalidArgumentError(
                        f"layer {i}: conv weight shape {w.shape} != {exp}"
                    )
            if isinstance(layer, Linear):
                w, b = wb
                exp = (layer.out_features, layer.in_features)
                if w.shape != exp or b.shape != (layer.out_features,):
                    raise InvalidArgumentError(
                        f"layer {i}: linear weight shape {w.shape} != {exp}"
                    )
            shape = layer_output_shape(layer, shape)
            self.layer_shapes.append(shape)
        if not (self.layers and isinstance(self.layers[-1], Linear)):
            raise InvalidArgumentError("final layer must be linear (logit head)")
        self.class_count = self.layers[-1].out_features

    def copy(self) -> "AnnModel":
        weights = [None if wb is None else (wb[0].copy(), wb[1].copy())
                   for wb in self.weights]
        return AnnModel(self.layers, weights, self.input_shape)

    def parametric_indices(self):
        return [i for i, l in enumerate(self.layers) if isinstance(l, (Conv2d, Linear))]

    def relu_indices(self):
        return [i for i, l in enumerate(self.layers) if isinstance(l, ReLU)]

    def final_linear(self):
        return self.weights[-1]

    def weights_checksum(self) -> str:
        """SHA-256 over every weight/bias payload, for tamper checks."""
        h = hashlib.sha256()
        for wb in self.weights:
            if wb is not None:
                h.update(np.ascontiguousarray(wb[0]).tobytes())
                h.update(np.ascontiguousarray(wb[1]).tobytes())
        return h.hexdigest()


def default_arch(input_shape=(1, 28, 28), class_count=10,
                 conv_channels=(32, 32, 64), fc_units=256, dropout=0.2):
    """The desk-scale CNN: 3 conv blocks with average pooling, 2 linear layers.

    conv(c0,3,pad1)-ReLU-conv(c1,3,pad1)-ReLU-pool2-drop-
    conv(c2,3,pad1)-ReLU-pool2-drop-linear(fc)-ReLU-drop-linear(C)
    """
    cin, h, w = input_shape
    c0, c1, c2 = conv_channels
    layers = [
        Conv2d(c0, cin, 3, 1, 1), ReLU(),
        Conv2d(c1, c0, 3, 1, 1), ReLU(),
        AvgPool2d(2), Dropout(dropout),
        Conv2d(c2, c1, 3, 1, 1), ReLU(),
        AvgPool2d(2), Dropout(dropout),
        Linear(fc_units, c2 * (h // 4) * (w // 4)), ReLU(), Dropout(dropout),
        Linear(class_count, fc_units),
    ]
    return layers


def init_model(layers, input_shape, rng: np.random.Generator) -> AnnModel:
    """He-initialized weights, zero biases."""
    weights = []
    for layer in layers:
        if isinstance(layer, Conv2d):
            fan_in = layer.in_channels * layer.kernel_size ** 2
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in),
                           (layer.out_channels, layer.in_channels,
                            layer.kernel_size, layer.kernel_size))
            weights.append((w, np.zeros(layer.out_channels)))
        elif isinstance(layer, Linear):
            w = rng.normal(0.0, np.sqrt(2.0 / layer.in_features),
                           (layer.out_features, layer.in_features))
            weights.append((w, np.zeros(layer.out_features)))
        else:
            weights.append(None)
    return AnnModel(layers, weights, input_shape)


def _dropout_mask(shape, rate, rng):
    """Inverted-dropout scale mask: 0 with probability rate, else 1/(1-rate)."""
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


class ForwardTrace:
    """Per-layer inputs (and dropout masks) captured for the backward pass."""

    def __init__(self):
        self.inputs = []         # input seen by each layer (pre-flatten view)
        self.masks = {}          # layer index -> dropout mask


def forward_trace(model: AnnModel, x: np.ndarray, train_mode: bool = False,
                  rng: Optional[np.random.Generator] = None):
    """Run the network, recording what the backward pass needs.

    Returns (logits, trace, activations) where activations[i] is layer i's
    output (the capture list of ann_forward).
    """
    if x.ndim != 4 or x.shape[1:] != model.input_shape:
        raise InvalidArgumentError(
            f"input shape {x.shape} does not match model input {model.input_shape}"
        )
    if train_mode and rng is None and any(
            isinstance(l, Dropout) and l.rate > 0 for l in model.layers):
        raise InvalidArgumentError("train_mode with dropout requires an rng")
    trace = ForwardTrace()
    activations = []
    a = x
    for i, layer in enumerate(model.layers):
        if isinstance(layer, Linear) and a.ndim > 2:
            a = a.reshape(a.shape[0], -1)
        trace.inputs.append(a)
        if isinstance(layer, Conv2d):
            w, b = model.weights[i]
            a = kernels.conv2d_forward(a, w, b, layer.stride, layer.padding)
        elif isinstance(layer, Linear):
            w, b = model.weights[i]
            a = kernels.linear_forward(a, w, b)
        elif isinstance(layer, AvgPool2d):
            a = kernels.avgpool2d_forward(a, layer.k)
        elif isinstance(layer, ReLU):
            a = kernels.relu_forward(a)
        elif isinstance(layer, Dropout):
            if train_mode and layer.rate > 0.0:
                mask = _dropout_mask(a.shape, layer.rate, rng)
                trace.masks[i] = mask
                a = a * mask
            # eval mode: inverted dropout is the identity
        activations.append(a)
    return a, trace, activations


def ann_forward(model: AnnModel, x: np.ndarray, train_mode: bool = False,
                capture: bool = False, rng: Optional[np.random.Generator] = None):
    """Pre-softmax logits; optionally the post-activation tensor of each layer."""
    logits, _, activations = forward_trace(model, x, train_mode, rng)
    return (logits, activations) if capture else (logits, None)


def ann_backward(model: AnnModel, trace: ForwardTrace, d_logits: np.ndarray):
    """Backpropagate d_logits through a recorded forward pass.

    Returns (grads, d_input): grads[i] is a LayerGrads for parametric layer i,
    None elsewhere.
    """
    grads = [None] * len(model.layers)
    d = d_logits
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        a = trace.inputs[i]
        if isinstance(layer, Linear):
            g = kernels.linear_backward(a, model.weights[i][0], d)
            grads[i] = g
            d = g.d_input
        elif isinstance(layer, Conv2d):
            if d.ndim == 2:
                d = d.reshape((d.shape[0],) + model.layer_shapes[i])
            g = kernels.conv2d_backward(a, model.weights[i][0], d,
                                        layer.stride, layer.padding)
            grads[i] = g
            d = g.d_input
        elif isinstance(layer, AvgPool2d):
            if d.ndim == 2:
                d = d.reshape((d.shape[0],) + model.layer_shapes[i])
            d = kernels.avgpool2d_backward(d, layer.k)
        elif isinstance(layer, ReLU):
            if d.ndim != a.ndim:
                d = d.reshape(a.shape)
            d = kernels.relu_backward(a, d)
        elif isinstance(layer, Dropout):
            if i in trace.masks:
                mask = trace.masks[i]
                if d.ndim != mask.ndim:
                    d = d.reshape(mask.shape)
                d = d * mask
        # reshape back to the image view if the layer below is spatial
        if i > 0 and d.ndim == 2 and len(model.layer_shapes[i - 1]) == 3:
            d = d.reshape((d.shape[0],) + model.layer_shapes[i - 1])
    return grads, d


def ann_input_gradient(model: AnnModel, x: np.ndarray, class_index: int) -> np.ndarray:
    """Exact gradient of the pre-softmax logit y_c w.r.t. the input pixels.

    Dropout is inactive; for batched input each sample gets the gradient of
    its own y_c (no batch averaging).
    """
    if not 0 <= class_index < model.class_count:
        raise InvalidArgumentError(
            f"class index {class_index} outside [0, {model.class_count})"
        )
    logits, trace, _ = forward_trace(model, x, train_mode=False)
    d_logits = np.zeros_like(logits)
    d_logits[:, class_index] = 1.0
    _, d_input = ann_backward(model, trace, d_logits)
    return d_input
