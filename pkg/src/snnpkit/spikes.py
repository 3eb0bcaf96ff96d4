"""Poisson rate coding, LIF dynamics, and the time-stepped SNN forward pass.

Dynamics per neuron and step (all spiking layers):

    u' = leak * u + input_current
    spike where u' > threshold          (strict inequality)
    u' -= threshold * spike             (soft reset)

The output layer is different by construction: it integrates input current
with no leak and never fires, and its membrane after the last step is the
logit vector.  Dropout, when active, uses one mask per image held fixed
across all time-steps.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .errors import InvalidArgumentError, ModelNotConvertedError
from .model import AnnModel, AvgPool2d, Conv2d, Dropout, Linear, ReLU
from .rng import CounterRng, derive_seed


@dataclass
class SnnModel:
    """ANN structure + per-spiking-layer firing thresholds + LIF parameters."""

    ann: AnnModel
    thresholds: Optional[list] = None   # one per ReLU site, in network order
    leak: float = 1.0
    timesteps: int = 50

    def __post_init__(self):
        if not 0.0 < self.leak <= 1.0:
            raise InvalidArgumentError(f"leak {self.leak} not in (0, 1]")
        if self.timesteps < 1:
            raise InvalidArgumentError("timesteps must be >= 1")
        if self.thresholds is not None:
            sites = len(self.ann.relu_indices())
            if len(self.thresholds) != sites:
                raise InvalidArgumentError(
                    f"{len(self.thresholds)} thresholds for {sites} spiking layers"
                )
            if any(t <= 0 for t in self.thresholds):
                raise InvalidArgumentError("thresholds must be positive")

    @property
    def converted(self) -> bool:
        return self.thresholds is not None

    def copy(self) -> "SnnModel":
        th = None if self.thresholds is None else list(self.thresholds)
        return SnnModel(self.ann.copy(), th, self.leak, self.timesteps)


@dataclass
class SpikeStats:
    """Spike totals per layer: index 0 is the Poisson encoder, then one entry
    per LIF site.  neuron counts include the sample dimension, so
    rate = spikes / (neurons * timesteps) stays in [0, 1]."""

    names: list
    spike_counts: np.ndarray
    neuron_counts: np.ndarray
    timesteps: int
    samples: int

    def merge(self, other: "SpikeStats") -> "SpikeStats":
        if self.timesteps != other.timesteps or self.names != other.names:
            raise InvalidArgumentError("cannot merge stats from different runs")
        return SpikeStats(self.names,
                          self.spike_counts + other.spike_counts,
                          self.neuron_counts + other.neuron_counts,
                          self.timesteps, self.samples + other.samples)


def spike_rate(stats: SpikeStats) -> np.ndarray:
    """Per-layer average firing probability: spikes / (neurons * T)."""
    return stats.spike_counts / (stats.neuron_counts * stats.timesteps)


def format_spike_stats(stats: SpikeStats) -> str:
    """Plain-text table: layer index, name, neurons, spikes, rate."""
    rates = spike_rate(stats)
    lines = ["layer  name     neurons      spikes        rate"]
    for i, name in enumerate(stats.names):
        lines.append(f"{i:5d}  {name:<7s} {stats.neuron_counts[i]:>9d} "
                     f"{stats.spike_counts[i]:>11.0f}  {rates[i]:10.6f}")
    lines.append(f"timesteps={stats.timesteps} samples={stats.samples}")
    return "\n".join(lines)


def poisson_encode(image: np.ndarray, t: int, rng: CounterRng) -> np.ndarray:
    """Bernoulli spikes: pixel p fires at step t iff u(seed, p, t) < intensity.

    The draw is counter-based, so the spike at (p, t) does not depend on any
    other pixel or step having been sampled.
    """
    if image.min() < 0.0 or image.max() > 1.0:
        raise InvalidArgumentError(
            f"pixel intensities must lie in [0,1], got "
            f"{image.min():.4g}..{image.max():.4g}"
        )
    flat = image.reshape(-1)
    u = rng.uniform(flat.size, step=t)
    return (u < flat).astype(np.float64).reshape(image.shape)


def lif_step(membrane: np.ndarray, input_current: np.ndarray,
             threshold: float, leak: float):
    """One LIF update; returns (spikes, new_membrane) with soft reset applied."""
    if threshold <= 0:
        raise InvalidArgumentError("threshold must be positive")
    if not 0.0 < leak <= 1.0:
        raise InvalidArgumentError(f"leak {leak} not in (0, 1]")
    u = leak * membrane + input_current
    spikes = (u > threshold).astype(np.float64)
    return spikes, u - threshold * spikes


@dataclass
class SnnTrace:
    """Unrolled forward states needed by backpropagation through time.

    membranes hold the pre-reset potential u^t (the surrogate's argument);
    spikes are stored compactly as uint8.
    """

    input_spikes: np.ndarray          # (T, N, C, H, W) uint8
    membranes: list = field(default_factory=list)   # per site: (T, N, ...) f64
    spikes: list = field(default_factory=list)      # per site: (T, N, ...) u8
    dropout_masks: dict = field(default_factory=dict)  # layer idx -> (N, ...) f64
    timesteps: int = 0


def _site_shapes(model: SnnModel, n: int):
    shapes = []
    for idx in model.ann.relu_indices():
        shapes.append((n,) + model.ann.layer_shapes[idx])
    return shapes


def snn_forward(model: SnnModel, images: np.ndarray, seed: int,
                capture: bool = False, timesteps: Optional[int] = None,
                train_mode: bool = False,
                rng: Optional[np.random.Generator] = None,
                stream_offset: int = 0, stream_ids=None):
    """Simulate T steps of the converted network on a batch of images.

    Returns (logits, stats, trace); trace is None unless capture is set.
    Poisson draws for sample i are keyed by stream (stream_offset + i), or by
    stream_ids[i] when given, so results are independent of batch partitioning.
    """
    if not model.converted:
        raise ModelNotConvertedError(
            "thresholds are unset; run threshold balancing first"
        )
    T = model.timesteps if timesteps is None else timesteps
    if T < 1:
        raise InvalidArgumentError("timesteps must be >= 1")
    if images.ndim == 3:
        images = images[None]
    if images.shape[1:] != model.ann.input_shape:
        raise InvalidArgumentError(
            f"image shape {images.shape[1:]} != model input {model.ann.input_shape}"
        )
    if images.min() < 0.0 or images.max() > 1.0:
        raise InvalidArgumentError("pixel intensities must lie in [0,1]")

    ann = model.ann
    n = images.shape[0]
    relu_idx = ann.relu_indices()
    site_of = {idx: s for s, idx in enumerate(relu_idx)}
    membranes = [np.zeros(shape) for shape in _site_shapes(model, n)]
    out_membrane = np.zeros((n, ann.class_count))

    masks = {}
    if train_mode:
        for i, layer in enumerate(ann.layers):
            if isinstance(layer, Dropout) and layer.rate > 0.0:
                if rng is None:
                    raise InvalidArgumentError(
                        "train_mode with dropout requires an rng")
                shape = (n,) + ann.layer_shapes[i]
                keep = rng.random(shape) >= layer.rate
                masks[i] = keep / (1.0 - layer.rate)

    trace = None
    if capture:
        trace = SnnTrace(
            input_spikes=np.zeros((T,) + images.shape, dtype=np.uint8),
            membranes=[np.zeros((T,) + m.shape) for m in membranes],
            spikes=[np.zeros((T,) + m.shape, dtype=np.uint8) for m in membranes],
            dropout_masks=masks,
            timesteps=T,
        )

    spike_counts = np.zeros(1 + len(relu_idx))
    flat_images = images.reshape(n, -1)
    pix = flat_images.shape[1]
    if stream_ids is None:
        stream_ids = [stream_offset + i for i in range(n)]
    elif len(stream_ids) != n:
        raise InvalidArgumentError("stream_ids length must match batch size")
    streams = [CounterRng(seed, s) for s in stream_ids]

    for t in range(1, T + 1):
        u = np.empty((n, pix))
        for i, s in enumerate(streams):
            u[i] = s.uniform(pix, step=t)
        a = (u < flat_images).astype(np.float64).reshape(images.shape)
        spike_counts[0] += a.sum()
        if capture:
            trace.input_spikes[t - 1] = a.astype(np.uint8)
        for i, layer in enumerate(ann.layers):
            if isinstance(layer, Linear) and a.ndim > 2:
                a = a.reshape(n, -1)
            if isinstance(layer, Conv2d):
                w, b = ann.weights[i]
                a = kernels.conv2d_forward(a, w, b, layer.stride, layer.padding)
            elif isinstance(layer, Linear):
                w, b = ann.weights[i]
                a = kernels.linear_forward(a, w, b)
                if i == len(ann.layers) - 1:
                    out_membrane += a   # output layer: integrate, no leak, no fire
            elif isinstance(layer, AvgPool2d):
                a = kernels.avgpool2d_forward(a, layer.k)
            elif isinstance(layer, Dropout):
                if i in masks:
                    a = a * masks[i]
            elif isinstance(layer, ReLU):
                s = site_of[i]
                theta = model.thresholds[s]
                u_new = model.leak * membranes[s] + a
                spikes = (u_new > theta).astype(np.float64)
                membranes[s] = u_new - theta * spikes
                if capture:
                    trace.membranes[s][t - 1] = u_new
                    trace.spikes[s][t - 1] = spikes.astype(np.uint8)
                spike_counts[1 + s] += spikes.sum()
                a = spikes

    neuron_counts = np.array(
        [flat_images.size] + [int(np.prod(shape)) for shape in _site_shapes(model, n)]
    )
    names = ["input"] + [f"lif{j + 1}" for j in range(len(relu_idx))]
    stats = SpikeStats(names, spike_counts, neuron_counts, T, n)
    return out_membrane, stats, trace


def snn_eval(model: SnnModel, images: np.ndarray, labels: np.ndarray,
             seed: int, timesteps: Optional[int] = None, batch: int = 24,
             collect_stats: bool = False):
    """Accuracy of the SNN over a labeled set, chunked; optional merged stats."""
    hits = 0
    total_stats = None
    for i in range(0, len(images), batch):
        logits, stats, _ = snn_forward(model, images[i:i + batch], seed,
                                       timesteps=timesteps, stream_offset=i)
        hits += int((logits.argmax(1) == labels[i:i + batch]).sum())
        if collect_stats:
            total_stats = stats if total_stats is None else total_stats.merge(stats)
    return hits / len(images), total_stats


def training_stream(seed: int, epoch: int, sample_index: int) -> int:
    """Poisson stream id for (epoch, sample): fresh spike trains every epoch."""
    return derive_seed(seed, epoch, sample_index)
