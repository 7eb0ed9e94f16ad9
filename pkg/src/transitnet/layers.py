"""Forward and backward passes for every primitive layer.

Each forward returns ``(output, ctx)`` where ``ctx`` carries exactly what
the matching backward needs; pass ``save_ctx=False`` (inference) to skip
saving.  Backwards return the input gradient plus parameter gradients
where the layer has parameters.  Convolution exists twice: an im2col
production path and a naive sliding-window reference that the test suite
holds it to.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import DataError, ParameterError, ShapeError, UsageError
from .tensor import Rng, Tensor, matmul

MODE_TRAINING = "training"
MODE_INFERENCE = "inference"


# ---------------------------------------------------------------------------
# layer specs


@dataclass(frozen=True)
class Conv2DSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: Optional[int] = None  # None selects same-style (kernel-1)//2
    has_bias: bool = True

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ParameterError(f"conv kernel must be odd and >= 1, got {self.kernel}")
        if self.stride < 1:
            raise ParameterError(f"conv stride must be >= 1, got {self.stride}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ParameterError("conv channel counts must be >= 1")
        if self.padding is not None and self.padding < 0:
            raise ParameterError(f"conv padding must be >= 0, got {self.padding}")

    @property
    def pad(self) -> int:
        return (self.kernel - 1) // 2 if self.padding is None else self.padding


@dataclass(frozen=True)
class MaxPoolSpec:
    kernel: int
    stride: int
    padding: int = 0

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1:
            raise ParameterError("maxpool kernel and stride must be >= 1")
        if not 0 <= self.padding <= self.kernel - 1:
            raise ParameterError(
                f"maxpool padding must lie in [0, kernel-1], got {self.padding}"
            )


@dataclass
class BatchNormState:
    """Per-channel affine parameters plus running statistics.

    The arrays are shared with the owning parameter store, so in-place
    updates of the running statistics during training are visible there.
    """

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5
    mode: str = MODE_TRAINING

    def __post_init__(self):
        if not 0.0 < self.momentum < 1.0:
            raise ParameterError(f"batchnorm momentum must be in (0,1), got {self.momentum}")
        if self.eps <= 0:
            raise ParameterError(f"batchnorm eps must be > 0, got {self.eps}")


@dataclass(frozen=True)
class DropoutSpec:
    p: float

    def __post_init__(self):
        if not 0.0 <= self.p < 1.0:
            raise ParameterError(f"dropout probability must be in [0,1), got {self.p}")


@dataclass(frozen=True)
class LrnSpec:
    depth: int = 5
    k: float = 2.0
    alpha: float = 1e-4
    beta: float = 0.75

    def __post_init__(self):
        if self.depth < 1 or self.depth % 2 == 0:
            raise ParameterError(f"lrn depth must be odd and >= 1, got {self.depth}")
        if self.k <= 0 or self.alpha < 0 or self.beta <= 0:
            raise ParameterError("lrn constants must satisfy k>0, alpha>=0, beta>0")


def conv_out_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


# ---------------------------------------------------------------------------
# convolution


class ConvCtx(NamedTuple):
    cols: np.ndarray
    weights: np.ndarray
    x_shape: tuple
    out_hw: tuple
    spec: Conv2DSpec


def _im2col(x: Tensor, kernel: int, stride: int, padding: int, out_h: int, out_w: int) -> np.ndarray:
    n, c, _, _ = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((c, kernel, kernel, n, out_h, out_w), dtype=np.float64)
    for u in range(kernel):
        for v in range(kernel):
            patch = xp[:, :, u:u + stride * out_h:stride, v:v + stride * out_w:stride]
            cols[:, u, v] = patch.transpose(1, 0, 2, 3)
    return cols.reshape(c * kernel * kernel, n * out_h * out_w)


def _col2im(gcols: np.ndarray, x_shape: tuple, kernel: int, stride: int, padding: int,
            out_h: int, out_w: int) -> np.ndarray:
    n, c, h, w = x_shape
    gxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=np.float64)
    g6 = gcols.reshape(c, kernel, kernel, n, out_h, out_w)
    for u in range(kernel):
        for v in range(kernel):
            gxp[:, :, u:u + stride * out_h:stride, v:v + stride * out_w:stride] += (
                g6[:, u, v].transpose(1, 0, 2, 3)
            )
    return gxp[:, :, padding:padding + h, padding:padding + w]


def _check_conv_args(x: Tensor, weights: np.ndarray, bias, spec: Conv2DSpec):
    n, c, h, w = x.shape
    if c != spec.in_channels:
        raise ShapeError(f"conv expects {spec.in_channels} input channels, got {c}")
    expect_w = (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel)
    if weights.shape != expect_w:
        raise ShapeError(f"conv weights shaped {weights.shape}, expected {expect_w}")
    if spec.has_bias and (bias is None or bias.shape != (spec.out_channels,)):
        raise ShapeError("conv bias must be a vector of length out_channels")
    out_h = conv_out_size(h, spec.kernel, spec.stride, spec.pad)
    out_w = conv_out_size(w, spec.kernel, spec.stride, spec.pad)
    if out_h < 1 or out_w < 1:
        raise ShapeError(
            f"conv output size {out_h}x{out_w} is non-positive for input {h}x{w} "
            f"with kernel {spec.kernel}, stride {spec.stride}, padding {spec.pad}"
        )
    return out_h, out_w


def conv2d_forward(x: Tensor, weights: np.ndarray, bias: Optional[np.ndarray],
                   spec: Conv2DSpec, save_ctx: bool = True):
    """im2col + matmul convolution, the production path."""
    out_h, out_w = _check_conv_args(x, weights, bias, spec)
    n = x.shape[0]
    f = spec.out_channels
    cols = _im2col(x, spec.kernel, spec.stride, spec.pad, out_h, out_w)
    flat = matmul(weights.reshape(f, -1), cols)
    if spec.has_bias:
        flat = flat + bias[:, None]
    y = flat.reshape(f, n, out_h, out_w).transpose(1, 0, 2, 3)
    ctx = ConvCtx(cols, weights, x.shape, (out_h, out_w), spec) if save_ctx else None
    return y, ctx


def conv2d_backward(ctx: ConvCtx, grad_out: Tensor):
    """Gradients for input, weights, and bias from the saved im2col matrix."""
    if ctx is None:
        raise UsageError("conv backward requires a saved forward context")
    spec = ctx.spec
    f = spec.out_channels
    gyr = grad_out.transpose(1, 0, 2, 3).reshape(f, -1)
    grad_w = matmul(gyr, ctx.cols.T).reshape(ctx.weights.shape)
    grad_b = grad_out.sum(axis=(0, 2, 3)) if spec.has_bias else None
    gcols = matmul(ctx.weights.reshape(f, -1).T, gyr)
    grad_x = _col2im(gcols, ctx.x_shape, spec.kernel, spec.stride, spec.pad, *ctx.out_hw)
    return grad_x, grad_w, grad_b


def conv2d_forward_naive(x: Tensor, weights: np.ndarray, bias: Optional[np.ndarray],
                         spec: Conv2DSpec) -> Tensor:
    """Reference sliding-window convolution; slow, kept as the oracle the
    im2col path is tested against."""
    out_h, out_w = _check_conv_args(x, weights, bias, spec)
    n = x.shape[0]
    h, w = x.shape[2], x.shape[3]
    k, s, p = spec.kernel, spec.stride, spec.pad
    y = np.zeros((n, spec.out_channels, out_h, out_w), dtype=np.float64)
    for bi in range(n):
        for f in range(spec.out_channels):
            for i in range(out_h):
                for j in range(out_w):
                    acc = bias[f] if spec.has_bias else 0.0
                    for c in range(spec.in_channels):
                        for u in range(k):
                            for v in range(k):
                                row = i * s - p + u
                                col = j * s - p + v
                                if 0 <= row < h and 0 <= col < w:
                                    acc += x[bi, c, row, col] * weights[f, c, u, v]
                    y[bi, f, i, j] = acc
    return y


# ---------------------------------------------------------------------------
# pooling


class MaxPoolCtx(NamedTuple):
    argmax: np.ndarray
    x_shape: tuple
    out_hw: tuple
    spec: MaxPoolSpec


def maxpool_forward(x: Tensor, spec: MaxPoolSpec, save_ctx: bool = True):
    """Windowed max with the winning position recorded for backward.

    Ties go to the first window cell in row-major scan order.  Padding is
    filled with -inf; the padding <= kernel-1 bound guarantees every
    window still sees at least one real cell.
    """
    n, c, h, w = x.shape
    k, s, p = spec.kernel, spec.stride, spec.padding
    out_h = conv_out_size(h, k, s, p)
    out_w = conv_out_size(w, k, s, p)
    if out_h < 1 or out_w < 1:
        raise ShapeError(
            f"maxpool window {k}x{k} larger than padded input {h + 2 * p}x{w + 2 * p}"
        )
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=-np.inf)
    windows = np.empty((k * k, n, c, out_h, out_w), dtype=np.float64)
    for u in range(k):
        for v in range(k):
            windows[u * k + v] = xp[:, :, u:u + s * out_h:s, v:v + s * out_w:s]
    argmax = np.argmax(windows, axis=0)
    y = np.take_along_axis(windows, argmax[None], axis=0)[0]
    ctx = MaxPoolCtx(argmax, x.shape, (out_h, out_w), spec) if save_ctx else None
    return y, ctx


def maxpool_backward(ctx: MaxPoolCtx, grad_out: Tensor) -> Tensor:
    if ctx is None:
        raise UsageError("maxpool backward requires a saved forward context")
    n, c, h, w = ctx.x_shape
    k, s, p = ctx.spec.kernel, ctx.spec.stride, ctx.spec.padding
    out_h, out_w = ctx.out_hw
    gxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=np.float64)
    for u in range(k):
        for v in range(k):
            contribution = np.where(ctx.argmax == u * k + v, grad_out, 0.0)
            gxp[:, :, u:u + s * out_h:s, v:v + s * out_w:s] += contribution
    return gxp[:, :, p:p + h, p:p + w]


class GapCtx(NamedTuple):
    x_shape: tuple


def global_avg_pool(x: Tensor, save_ctx: bool = True):
    """Collapse each feature map to its spatial mean, one scalar per channel."""
    y = x.mean(axis=(2, 3), keepdims=True)
    return y, (GapCtx(x.shape) if save_ctx else None)


def global_avg_pool_backward(ctx: GapCtx, grad_out: Tensor) -> Tensor:
    if ctx is None:
        raise UsageError("gap backward requires a saved forward context")
    _, _, h, w = ctx.x_shape
    return np.broadcast_to(grad_out / (h * w), ctx.x_shape).copy()


# ---------------------------------------------------------------------------
# batch normalization


class BatchNormCtx(NamedTuple):
    x_hat: np.ndarray
    inv_std: np.ndarray  # per channel, 1/sqrt(var+eps)
    gamma: np.ndarray


def batchnorm2d_forward(x: Tensor, state: BatchNormState, save_ctx: bool = True):
    """Per-channel normalization over (N, H, W).

    Training mode uses batch statistics and folds them into the running
    averages (``running = m*running + (1-m)*batch``); inference mode
    normalizes with the running statistics and leaves them untouched.
    """
    n, c, _, _ = x.shape
    if state.gamma.shape != (c,) or state.beta.shape != (c,):
        raise ShapeError(f"batchnorm parameters sized for {state.gamma.shape[0]} channels, input has {c}")
    if state.mode == MODE_TRAINING:
        if n < 2:
            raise UsageError("batchnorm training mode needs batch size >= 2")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        state.running_mean[:] = state.momentum * state.running_mean + (1 - state.momentum) * mean
        state.running_var[:] = state.momentum * state.running_var + (1 - state.momentum) * var
    elif state.mode == MODE_INFERENCE:
        mean = state.running_mean
        var = state.running_var
    else:
        raise UsageError(f"unknown batchnorm mode {state.mode!r}")
    inv_std = 1.0 / np.sqrt(var + state.eps)
    x_hat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    y = state.gamma[None, :, None, None] * x_hat + state.beta[None, :, None, None]
    ctx = BatchNormCtx(x_hat, inv_std, state.gamma) if save_ctx and state.mode == MODE_TRAINING else None
    return y, ctx


def batchnorm2d_backward(ctx: BatchNormCtx, grad_out: Tensor):
    """Training-mode gradient, differentiated through the batch statistics."""
    if ctx is None:
        raise UsageError("batchnorm backward requires a training-mode forward context")
    n, c, h, w = grad_out.shape
    m = n * h * w
    grad_gamma = (grad_out * ctx.x_hat).sum(axis=(0, 2, 3))
    grad_beta = grad_out.sum(axis=(0, 2, 3))
    g_hat = grad_out * ctx.gamma[None, :, None, None]
    sum_g = g_hat.sum(axis=(0, 2, 3), keepdims=True)
    sum_gx = (g_hat * ctx.x_hat).sum(axis=(0, 2, 3), keepdims=True)
    grad_x = (ctx.inv_std[None, :, None, None] / m) * (m * g_hat - sum_g - ctx.x_hat * sum_gx)
    return grad_x, grad_gamma, grad_beta


# ---------------------------------------------------------------------------
# dropout


class DropoutCtx(NamedTuple):
    mask: np.ndarray
    scale: float


def dropout_forward(x: Tensor, spec: DropoutSpec, mode: str, rng: Optional[Rng] = None,
                    save_ctx: bool = True):
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p).

    Inference mode is the identity and consumes no randomness.
    """
    if mode == MODE_INFERENCE or spec.p == 0.0:
        return x, (DropoutCtx(np.ones(0), 1.0) if save_ctx else None)
    if rng is None:
        raise UsageError("dropout training mode needs an rng")
    keep = rng.uniform(x.size).reshape(x.shape) >= spec.p
    scale = 1.0 / (1.0 - spec.p)
    y = np.where(keep, x * scale, 0.0)
    return y, (DropoutCtx(keep, scale) if save_ctx else None)


def dropout_backward(ctx: DropoutCtx, grad_out: Tensor) -> Tensor:
    if ctx is None:
        raise UsageError("dropout backward requires a saved forward context")
    if ctx.mask.size == 0:  # identity forward (p=0 or inference)
        return grad_out
    return np.where(ctx.mask, grad_out * ctx.scale, 0.0)


# ---------------------------------------------------------------------------
# local response normalization (cross-channel)


class LrnCtx(NamedTuple):
    x: np.ndarray
    energy: np.ndarray
    spec: LrnSpec


def _channel_window_sum(values: np.ndarray, depth: int) -> np.ndarray:
    half = depth // 2
    c = values.shape[1]
    acc = values.copy()
    for off in range(1, min(half, c - 1) + 1):
        acc[:, :c - off] += values[:, off:]
        acc[:, off:] += values[:, :c - off]
    return acc


def lrn_forward(x: Tensor, spec: LrnSpec, save_ctx: bool = True):
    """b = a * (k + alpha * sum of a^2 over nearby channels)^(-beta)."""
    energy = spec.k + spec.alpha * _channel_window_sum(x * x, spec.depth)
    y = x * energy ** (-spec.beta)
    return y, (LrnCtx(x, energy, spec) if save_ctx else None)


def lrn_backward(ctx: LrnCtx, grad_out: Tensor) -> Tensor:
    if ctx is None:
        raise UsageError("lrn backward requires a saved forward context")
    spec = ctx.spec
    scaled = grad_out * ctx.x * ctx.energy ** (-spec.beta - 1.0)
    window = _channel_window_sum(scaled, spec.depth)
    return grad_out * ctx.energy ** (-spec.beta) - 2.0 * spec.alpha * spec.beta * ctx.x * window


# ---------------------------------------------------------------------------
# dense / activation / loss


class DenseCtx(NamedTuple):
    x2: np.ndarray
    weights: np.ndarray
    x_shape: tuple
    has_bias: bool


def dense_forward(x: Tensor, weights: np.ndarray, bias: Optional[np.ndarray],
                  save_ctx: bool = True):
    """Affine layer; the input is flattened per sample to match the weight rows."""
    n = x.shape[0]
    x2 = x.reshape(n, -1)
    if x2.shape[1] != weights.shape[0]:
        raise ShapeError(
            f"dense input length {x2.shape[1]} does not match weight rows {weights.shape[0]}"
        )
    y = matmul(x2, weights)
    if bias is not None:
        y = y + bias
    y = y.reshape(n, weights.shape[1], 1, 1)
    ctx = DenseCtx(x2, weights, x.shape, bias is not None) if save_ctx else None
    return y, ctx


def dense_backward(ctx: DenseCtx, grad_out: Tensor):
    if ctx is None:
        raise UsageError("dense backward requires a saved forward context")
    g2 = grad_out.reshape(grad_out.shape[0], -1)
    grad_x = matmul(g2, ctx.weights.T).reshape(ctx.x_shape)
    grad_w = matmul(ctx.x2.T, g2)
    grad_b = g2.sum(axis=0) if ctx.has_bias else None
    return grad_x, grad_w, grad_b


class ReluCtx(NamedTuple):
    positive: np.ndarray


def relu(x: Tensor, save_ctx: bool = True):
    """Elementwise max(0, x); the gradient at exactly 0 is defined as 0."""
    positive = x > 0
    return np.where(positive, x, 0.0), (ReluCtx(positive) if save_ctx else None)


def relu_backward(ctx: ReluCtx, grad_out: Tensor) -> Tensor:
    if ctx is None:
        raise UsageError("relu backward requires a saved forward context")
    return np.where(ctx.positive, grad_out, 0.0)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy of row-stabilized softmax.

    Returns (loss, probabilities, logits gradient); the gradient is
    (prob - onehot) / N, ready to seed backpropagation.
    """
    if logits.ndim == 4:
        logits = logits.reshape(logits.shape[0], -1)
    n, k = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise DataError(f"label out of range [0,{k}): {labels.min()}..{labels.max()}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    probs = exp / total
    log_probs = shifted - np.log(total)
    loss = -log_probs[np.arange(n), labels].mean()
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, probs, grad


# ---------------------------------------------------------------------------
# concat / flatten


class ConcatCtx(NamedTuple):
    spans: tuple


def concat_channels(xs: Sequence[Tensor], save_ctx: bool = True):
    """Stack inputs along the channel axis, in argument order."""
    if not xs:
        raise ShapeError("concat needs at least one input")
    first = xs[0]
    for x in xs[1:]:
        if x.shape[0] != first.shape[0] or x.shape[2:] != first.shape[2:]:
            raise ShapeError(
                f"concat inputs disagree on batch/spatial dims: "
                f"{first.shape} vs {x.shape}"
            )
    y = np.concatenate(xs, axis=1)
    spans = tuple(x.shape[1] for x in xs)
    return y, (ConcatCtx(spans) if save_ctx else None)


def concat_backward(ctx: ConcatCtx, grad_out: Tensor):
    if ctx is None:
        raise UsageError("concat backward requires a saved forward context")
    grads = []
    start = 0
    for span in ctx.spans:
        grads.append(grad_out[:, start:start + span])
        start += span
    return grads


class FlattenCtx(NamedTuple):
    x_shape: tuple


def flatten_forward(x: Tensor, save_ctx: bool = True):
    n = x.shape[0]
    y = x.reshape(n, -1, 1, 1)
    return y, (FlattenCtx(x.shape) if save_ctx else None)


def flatten_backward(ctx: FlattenCtx, grad_out: Tensor) -> Tensor:
    if ctx is None:
        raise UsageError("flatten backward requires a saved forward context")
    return grad_out.reshape(ctx.x_shape)


# ---------------------------------------------------------------------------
# finite differences, the oracle every backward is held against


def finite_difference_grad(f, x: Tensor, step: float = 1e-5) -> Tensor:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if step <= 0:
        raise ParameterError(f"finite difference step must be > 0, got {step}")
    probe = np.array(x, dtype=np.float64)  # fresh contiguous copy, safe to perturb
    grad = np.zeros_like(probe)
    flat = probe.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        upper = f(probe)
        flat[i] = original - step
        lower = f(probe)
        flat[i] = original
        gflat[i] = (upper - lower) / (2.0 * step)
    return grad


_BACKWARD = {
    "conv": lambda ctx, g: conv2d_backward(ctx, g),
    "maxpool": lambda ctx, g: maxpool_backward(ctx, g),
    "gap": lambda ctx, g: global_avg_pool_backward(ctx, g),
    "batchnorm": lambda ctx, g: batchnorm2d_backward(ctx, g),
    "dropout": lambda ctx, g: dropout_backward(ctx, g),
    "lrn": lambda ctx, g: lrn_backward(ctx, g),
    "dense": lambda ctx, g: dense_backward(ctx, g),
    "relu": lambda ctx, g: relu_backward(ctx, g),
    "concat": lambda ctx, g: concat_backward(ctx, g),
    "flatten": lambda ctx, g: flatten_backward(ctx, g),
}


def layer_backward(kind: str, ctx, grad_out):
    """Dispatch the backward rule for a layer kind on its saved context."""
    if kind not in _BACKWARD:
        raise UsageError(f"no backward rule for layer kind {kind!r}")
    if ctx is None:
        raise UsageError(f"{kind} backward called without a saved forward context")
    return _BACKWARD[kind](ctx, grad_out)
