"""Dense forward/backward kernels for every layer the pipeline uses.

Conventions, fixed package-wide:
  * arrays are float64, C-contiguous, NCHW for images, OIHW for conv weights;
  * convolution is cross-correlation (no kernel flip);
  * every backward returns the exact gradient of sum(d_output * forward(...))
    with respect to its operands.

Convolutions run as im2col + GEMM; the column <-> image transforms walk the
k*k kernel taps with strided slices, which keeps both directions as a handful
of vectorized copies for any stride.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, NumericalError


@dataclass
class LayerGrads:
    """Gradients of one parametric layer: weight, bias, and input cotangents."""

    d_weight: np.ndarray
    d_bias: np.ndarray
    d_input: np.ndarray


def _require_finite(name: str, arr: np.ndarray) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NumericalError(f"{name} produced non-finite values")
    return arr


def _check_4d(name, arr):
    if arr.ndim != 4:
        raise InvalidArgumentError(f"{name} must be 4-D NCHW, got shape {arr.shape}")


def _conv_out_hw(h, w, k, stride, padding):
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    if ho < 1 or wo < 1:
        raise InvalidArgumentError(
            f"kernel {k} with stride {stride}, padding {padding} does not fit "
            f"a {h}x{w} input"
        )
    return ho, wo


def im2col(x: np.ndarray, k: int, stride: int, padding: int):
    """Unfold NCHW into (N, C*k*k, H'*W') patch columns."""
    n, c, h, w = x.shape
    ho, wo = _conv_out_hw(h, w, k, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((n, c, k, k, ho, wo))
    for ki in range(k):
        for kj in range(k):
            cols[:, :, ki, kj] = x[:, :, ki:ki + stride * ho:stride,
                                   kj:kj + stride * wo:stride]
    return cols.reshape(n, c * k * k, ho * wo), ho, wo


def col2im(dcols: np.ndarray, x_shape, k: int, stride: int, padding: int) -> np.ndarray:
    """Adjoint of im2col: scatter-add patch columns back into NCHW."""
    n, c, h, w = x_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    dx = np.zeros((n, c, hp, wp))
    dcols = dcols.reshape(n, c, k, k, ho, wo)
    for ki in range(k):
        for kj in range(k):
            dx[:, :, ki:ki + stride * ho:stride,
               kj:kj + stride * wo:stride] += dcols[:, :, ki, kj]
    if padding:
        dx = dx[:, :, padding:padding + h, padding:padding + w]
    return dx


def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray,
                   stride: int = 1, padding: int = 0) -> np.ndarray:
    """Cross-correlate NCHW input with OIHW weight; output N x O x H' x W'."""
    _check_4d("input", x)
    _check_4d("weight", weight)
    o, ci, k, k2 = weight.shape
    if k != k2:
        raise InvalidArgumentError(f"non-square kernel {k}x{k2}")
    if x.shape[1] != ci:
        raise InvalidArgumentError(
            f"input has {x.shape[1]} channels, weight expects {ci}"
        )
    if bias.shape != (o,):
        raise InvalidArgumentError(f"bias shape {bias.shape} != ({o},)")
    if stride < 1 or padding < 0:
        raise InvalidArgumentError("stride must be >= 1 and padding >= 0")
    cols, ho, wo = im2col(x, k, stride, padding)
    out = np.matmul(weight.reshape(o, -1), cols) + bias[:, None]
    return _require_finite("conv2d_forward", out.reshape(x.shape[0], o, ho, wo))


def conv2d_backward(x: np.ndarray, weight: np.ndarray, d_output: np.ndarray,
                    stride: int = 1, padding: int = 0) -> LayerGrads:
    """Gradients of sum(d_output * conv2d_forward(x, weight, bias))."""
    _check_4d("d_output", d_output)
    o, ci, k, _ = weight.shape
    ho, wo = _conv_out_hw(x.shape[2], x.shape[3], k, stride, padding)
    if d_output.shape != (x.shape[0], o, ho, wo):
        raise InvalidArgumentError(
            f"d_output shape {d_output.shape} != expected {(x.shape[0], o, ho, wo)}"
        )
    n = x.shape[0]
    cols, _, _ = im2col(x, k, stride, padding)
    dmat = d_output.reshape(n, o, ho * wo)
    # single GEMM over the batch: (O, N*P) @ (N*P, C*k*k)
    d_weight = np.matmul(
        dmat.transpose(1, 0, 2).reshape(o, -1),
        cols.transpose(0, 2, 1).reshape(n * ho * wo, -1),
    ).reshape(weight.shape)
    d_bias = dmat.sum(axis=(0, 2))
    dcols = np.matmul(weight.reshape(o, -1).T, dmat)
    d_input = col2im(dcols, x.shape, k, stride, padding)
    _require_finite("conv2d_backward", d_weight)
    _require_finite("conv2d_backward", d_input)
    return LayerGrads(d_weight, d_bias, d_input)


def conv2d_input_backward(weight: np.ndarray, d_output: np.ndarray, x_shape,
                          stride: int = 1, padding: int = 0) -> np.ndarray:
    """Input cotangent only (the transposed convolution / deconvolution)."""
    n, o = d_output.shape[:2]
    k = weight.shape[2]
    dcols = np.matmul(weight.reshape(o, -1).T, d_output.reshape(n, o, -1))
    return col2im(dcols, x_shape, k, stride, padding)


def linear_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """out[n, c] = bias[c] + sum_f weight[c, f] * x[n, f]."""
    if x.ndim != 2 or weight.ndim != 2:
        raise InvalidArgumentError("linear_forward expects 2-D input and weight")
    if x.shape[1] != weight.shape[1]:
        raise InvalidArgumentError(
            f"input features {x.shape[1]} != weight features {weight.shape[1]}"
        )
    if bias.shape != (weight.shape[0],):
        raise InvalidArgumentError(f"bias shape {bias.shape} != ({weight.shape[0]},)")
    return _require_finite("linear_forward", x @ weight.T + bias)


def linear_backward(x: np.ndarray, weight: np.ndarray, d_output: np.ndarray) -> LayerGrads:
    if d_output.shape != (x.shape[0], weight.shape[0]):
        raise InvalidArgumentError(
            f"d_output shape {d_output.shape} != {(x.shape[0], weight.shape[0])}"
        )
    d_weight = d_output.T @ x
    d_bias = d_output.sum(axis=0)
    d_input = d_output @ weight
    _require_finite("linear_backward", d_weight)
    _require_finite("linear_backward", d_input)
    return LayerGrads(d_weight, d_bias, d_input)


def avgpool2d_forward(x: np.ndarray, k: int) -> np.ndarray:
    """Average every non-overlapping k x k window."""
    _check_4d("input", x)
    n, c, h, w = x.shape
    if k < 1:
        raise InvalidArgumentError("pool size must be >= 1")
    if h % k or w % k:
        raise InvalidArgumentError(f"spatial size {h}x{w} not divisible by k={k}")
    return x.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))


def avgpool2d_backward(d_output: np.ndarray, k: int) -> np.ndarray:
    """Spread each output cotangent uniformly over its k x k window."""
    _check_4d("d_output", d_output)
    return np.repeat(np.repeat(d_output, k, axis=2), k, axis=3) / (k * k)


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, d_output: np.ndarray) -> np.ndarray:
    if x.shape != d_output.shape:
        raise InvalidArgumentError(
            f"d_output shape {d_output.shape} != input shape {x.shape}"
        )
    return np.where(x > 0.0, d_output, 0.0)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, shift-stabilized."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def check_soft_labels(targets: np.ndarray, atol: float = 1e-6) -> None:
    """Every target row must be a probability vector."""
    sums = targets.sum(axis=1)
    if not np.allclose(sums, 1.0, atol=atol) or (targets < 0).any():
        raise InvalidArgumentError(
            "target rows must be non-negative and sum to 1 "
            f"(row sums ranged {sums.min():.3g}..{sums.max():.3g})"
        )


def softmax_ce(logits: np.ndarray, targets: np.ndarray):
    """Mean cross-entropy against soft targets.

    Returns (loss, d_logits); d_logits[n] = (softmax(logits)[n] - targets[n]) / N,
    the batch-averaged softmax-minus-target rule.
    """
    if logits.shape != targets.shape:
        raise InvalidArgumentError(
            f"logits shape {logits.shape} != targets shape {targets.shape}"
        )
    check_soft_labels(targets)
    n = logits.shape[0]
    logp = log_softmax(logits)
    loss = float(-(targets * logp).sum() / n)
    if not np.isfinite(loss):
        raise NumericalError("cross-entropy loss is non-finite")
    d_logits = (np.exp(logp) - targets) / n
    return loss, d_logits


def gaussian_blur3(x: np.ndarray, sigma: float = 0.8) -> np.ndarray:
    """3x3 Gaussian blur with reflect padding on NCHW images."""
    _check_4d("input", x)
    if sigma <= 0:
        raise InvalidArgumentError("sigma must be positive")
    ax = np.array([-1.0, 0.0, 1.0])
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    kern = np.outer(g, g)
    kern /= kern.sum()
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="reflect")
    out = np.zeros_like(x)
    h, w = x.shape[2], x.shape[3]
    for i in range(3):
        for j in range(3):
            out += kern[i, j] * xp[:, :, i:i + h, j:j + w]
    return out
