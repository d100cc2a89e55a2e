"""
Forward and backward kernels for the layers of the classifier:
valid 2-D convolution, ReLU, 2x2 max pooling, flatten and the logit head.

Every kernel accepts a single image [C, H, W] or a batch [N, C, H, W] and
computes in the dtype of its inputs, so the same code runs in float32 for
training and in float64 for gradient checks.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.modules.tensor import ensure_finite
from src.utils.errors import ShapeMismatchError, TensorError

POOL_WINDOW = 2


@dataclass
class ConvSpec:
    """Weights [out, in, kh, kw] and bias [out] of one convolution, stride 1, no padding."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ShapeMismatchError(f"conv weights must be rank 4, got shape {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeMismatchError(
                f"conv bias shape {self.bias.shape} does not match {self.weights.shape[0]} output channels"
            )

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel_h(self) -> int:
        return self.weights.shape[2]

    @property
    def kernel_w(self) -> int:
        return self.weights.shape[3]


class ConvTrace(NamedTuple):
    """What conv2d_backward needs from the forward call."""

    input: np.ndarray
    spec: ConvSpec


@dataclass
class PoolTrace:
    """
    Argmax positions of a 2x2 pooling call.

    ``argmax`` holds, per output cell, the flat index 0..3 of the winner
    inside its window (row-major: top-left, top-right, bottom-left,
    bottom-right).
    """

    argmax: np.ndarray
    input_shape: Tuple[int, ...]
    single: bool


def _as_batch(x: np.ndarray, what: str) -> Tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeMismatchError(f"{what} expects [C,H,W] or [N,C,H,W], got shape {x.shape}")


def _conv_output_shape(x: np.ndarray, spec: ConvSpec) -> Tuple[int, int, int, int]:
    n, c, h, w = x.shape
    if c != spec.in_channels:
        raise ShapeMismatchError(f"input has {c} channels, kernel expects {spec.in_channels}")
    if h < spec.kernel_h or w < spec.kernel_w:
        raise ShapeMismatchError(
            f"input {h}x{w} is smaller than kernel {spec.kernel_h}x{spec.kernel_w}"
        )
    return n, spec.out_channels, h - spec.kernel_h + 1, w - spec.kernel_w + 1


def conv2d_forward(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """
    Valid cross-correlation with stride 1.

    out[o, y, x] = bias[o] + sum_{c,i,j} input[c, y+i, x+j] * weights[o, c, i, j]

    The sliding windows are a strided view of the input and the sum is one
    tensordot over (channel, kernel row, kernel column).
    """
    xb, single = _as_batch(x, "conv2d_forward")
    _conv_output_shape(xb, spec)

    windows = sliding_window_view(xb, (spec.kernel_h, spec.kernel_w), axis=(2, 3))
    out = np.tensordot(windows, spec.weights, axes=([1, 4, 5], [1, 2, 3]))
    out = out.transpose(0, 3, 1, 2) + spec.bias[None, :, None, None]
    out = np.ascontiguousarray(out)
    ensure_finite(out, "convolution output")
    return out[0] if single else out


def conv2d_backward(trace: ConvTrace, upstream: np.ndarray,
                    input_grad: bool = True) -> Tuple[Optional[np.ndarray], np.ndarray, np.ndarray]:
    """
    Gradients of conv2d_forward.

    Args:
        trace: Input and spec of the forward call
        upstream: Gradient of the forward output
        input_grad: Skip the input gradient when False (first layer)

    Returns:
        (input_grad, weight_grad, bias_grad)
    """
    xb, single = _as_batch(trace.input, "conv2d_backward")
    spec = trace.spec
    gb = upstream[None] if single and upstream.ndim == 3 else upstream
    expected = _conv_output_shape(xb, spec)
    if gb.shape != expected:
        raise ShapeMismatchError(f"upstream gradient shape {gb.shape} does not match output {expected}")

    kh, kw = spec.kernel_h, spec.kernel_w
    _, _, out_h, out_w = expected

    bias_grad = gb.sum(axis=(0, 2, 3))
    windows = sliding_window_view(xb, (kh, kw), axis=(2, 3))
    weight_grad = np.tensordot(gb, windows, axes=([0, 2, 3], [0, 2, 3]))

    dx = None
    if input_grad:
        dx = np.zeros_like(xb, dtype=np.result_type(xb, gb, spec.weights))
        for i in range(kh):
            for j in range(kw):
                contribution = np.tensordot(gb, spec.weights[:, :, i, j], axes=([1], [0]))
                dx[:, :, i:i + out_h, j:j + out_w] += contribution.transpose(0, 3, 1, 2)
        if single:
            dx = dx[0]

    return dx, weight_grad, bias_grad


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Pass g where x > 0; the subgradient at exactly 0 is 0."""
    if x.shape != g.shape:
        raise ShapeMismatchError(f"gradient shape {g.shape} does not match input {x.shape}")
    return np.where(x > 0, g, np.zeros_like(g))


def maxpool2x2_forward(x: np.ndarray) -> Tuple[np.ndarray, PoolTrace]:
    """
    Non-overlapping 2x2 max pooling, stride 2.

    An odd trailing row or column is dropped. Ties go to the lowest flat
    index inside the window.
    """
    xb, single = _as_batch(x, "maxpool2x2_forward")
    n, c, h, w = xb.shape
    if h < POOL_WINDOW or w < POOL_WINDOW:
        raise ShapeMismatchError(f"pooling needs at least 2x2 input, got {h}x{w}")

    out_h, out_w = h // POOL_WINDOW, w // POOL_WINDOW
    cropped = xb[:, :, :out_h * POOL_WINDOW, :out_w * POOL_WINDOW]
    windows = (
        cropped.reshape(n, c, out_h, POOL_WINDOW, out_w, POOL_WINDOW)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, out_h, out_w, POOL_WINDOW * POOL_WINDOW)
    )
    # argmax returns the first maximum, which is the lowest flat index.
    argmax = windows.argmax(axis=-1).astype(np.uint8)
    out = np.take_along_axis(windows, argmax[..., None].astype(np.intp), axis=-1)[..., 0]

    trace = PoolTrace(argmax=argmax, input_shape=xb.shape, single=single)
    return (out[0] if single else out), trace


def maxpool2x2_backward(trace: PoolTrace, g: np.ndarray) -> np.ndarray:
    """Route the upstream gradient to the argmax positions; everything else is 0."""
    gb = g[None] if trace.single and g.ndim == 3 else g
    if gb.shape != trace.argmax.shape:
        raise ShapeMismatchError(
            f"gradient shape {gb.shape} does not match the pooling trace {trace.argmax.shape}"
        )

    n, c, out_h, out_w = gb.shape
    windows = np.zeros((n, c, out_h, out_w, POOL_WINDOW * POOL_WINDOW), dtype=gb.dtype)
    np.put_along_axis(windows, trace.argmax[..., None].astype(np.intp), gb[..., None], axis=-1)

    routed = (
        windows.reshape(n, c, out_h, out_w, POOL_WINDOW, POOL_WINDOW)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, out_h * POOL_WINDOW, out_w * POOL_WINDOW)
    )
    dx = np.zeros(trace.input_shape, dtype=gb.dtype)
    dx[:, :, :out_h * POOL_WINDOW, :out_w * POOL_WINDOW] = routed
    return dx[0] if trace.single else dx


def flatten(x: np.ndarray) -> np.ndarray:
    """[C,H,W] → [C*H*W], or [N,C,H,W] → [N, C*H*W], row-major."""
    if x.ndim == 3:
        return x.reshape(-1)
    if x.ndim == 4:
        return x.reshape(x.shape[0], -1)
    raise ShapeMismatchError(f"flatten expects rank 3 or 4, got shape {x.shape}")


def unflatten(v: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    """Inverse of flatten, used to reshape gradients."""
    shape = tuple(shape)
    if v.size != int(np.prod(shape)):
        raise ShapeMismatchError(f"{v.size} values cannot be reshaped to {shape}")
    return v.reshape(shape)


def logit_head_forward(v: np.ndarray, w: np.ndarray, b: np.ndarray) -> Union[float, np.ndarray]:
    """z = w·v + b, for one feature vector [D] or a batch [N, D]."""
    if w.ndim != 1 or b.shape != (1,):
        raise ShapeMismatchError(f"head expects w [D] and b [1], got {w.shape} and {b.shape}")
    if v.shape[-1] != w.shape[0]:
        raise ShapeMismatchError(f"feature length {v.shape[-1]} does not match head length {w.shape[0]}")
    z = v @ w + b[0]
    ensure_finite(np.asarray(z), "logit")
    return float(z) if v.ndim == 1 else z


def logit_head_backward(v: np.ndarray, w: np.ndarray,
                        g: Union[float, np.ndarray]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Gradients of the logit head.

    Returns:
        (v_grad, w_grad, b_grad) with b_grad of shape [1]
    """
    if v.ndim == 1:
        g = np.asarray(g, dtype=v.dtype).reshape(())
        return g * w, g * v, np.array([g], dtype=v.dtype)
    g = np.asarray(g)
    if g.shape != (v.shape[0],):
        raise ShapeMismatchError(f"gradient shape {g.shape} does not match batch of {v.shape[0]}")
    v_grad = g[:, None] * w[None, :]
    w_grad = g @ v
    b_grad = np.array([g.sum()], dtype=w_grad.dtype)
    return v_grad, w_grad, b_grad


def sigmoid(z: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """
    Logistic function from e = exp(-|z|): 1 / (1 + e) for z >= 0, e / (1 + e) below.

    The exponent is never positive, so nothing overflows, and the negative
    tail keeps its tiny values down to the dtype's smallest subnormal.
    """
    if np.isscalar(z):
        if not np.isfinite(z):
            raise TensorError(f"sigmoid input {z} is not finite")
        e = float(np.exp(-abs(z)))
        return 1.0 / (1.0 + e) if z >= 0 else e / (1.0 + e)
    z = np.asarray(z)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1 / (1 + e), e / (1 + e))
