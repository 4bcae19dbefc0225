"""
Stateless layer kernels.

Every forward/backward pair here is hand-adjointed and works on NCHW numpy
arrays of any float dtype. Products are issued per sample, and when
Constants.F64_ACCUMULATE is on every reduction accumulates in float64 and
casts back to the storage dtype.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..config import get_config
from ..errors import ConfigurationError, NumericalError, StructuralError, UsageError
from .params import LayerParams


def _acc(dtype: np.dtype) -> np.dtype:
    return np.dtype(np.float64) if get_config().F64_ACCUMULATE else np.dtype(dtype)


def _matmul(a: np.ndarray, b: np.ndarray, out_dtype: np.dtype) -> np.ndarray:
    acc = _acc(out_dtype)
    return np.matmul(a.astype(acc, copy=False), b.astype(acc, copy=False)).astype(
        out_dtype, copy=False
    )


def _require_cache(cached: Optional[np.ndarray], op: str) -> np.ndarray:
    if cached is None:
        raise UsageError(f"{op} called before forward: no cached input")
    return cached


def _require_4d(x: np.ndarray, op: str) -> None:
    if x.ndim != 4:
        raise StructuralError(f"{op} expects an [N,C,H,W] tensor, got shape {x.shape}")


def check_finite(name: str, x: np.ndarray) -> np.ndarray:
    """Raise NumericalError if `x` holds NaN or Inf."""
    if not np.isfinite(x).all():
        raise NumericalError(f"{name} contains NaN or Inf")
    return x


def output_extent(size: int, kernel: int, stride: int, pad: int) -> int:
    """floor((size + 2*pad - kernel) / stride) + 1, validating the configuration."""
    if stride < 1:
        raise StructuralError(f"stride must be >= 1, got {stride}")
    if pad < 0:
        raise StructuralError(f"pad must be >= 0, got {pad}")
    if kernel < 1 or kernel > size + 2 * pad:
        raise StructuralError(
            f"kernel extent {kernel} does not fit input extent {size} with pad {pad}"
        )
    return (size + 2 * pad - kernel) // stride + 1


def _pad_spatial(x: np.ndarray, pad: int, value: float = 0.0) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(
        x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="constant", constant_values=value
    )


def _windows(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    """Read-only view of shape (N, C, Ho, Wo, k, k)."""
    return sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]


def im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """Unfold receptive fields into columns of shape (N, C*k*k, Ho*Wo)."""
    n, c, h, w = x.shape
    ho = output_extent(h, k, stride, pad)
    wo = output_extent(w, k, stride, pad)
    win = _windows(_pad_spatial(x, pad), k, stride)
    return win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * k * k, ho * wo)


def col2im(
    cols: np.ndarray, x_shape: Tuple[int, ...], k: int, stride: int, pad: int
) -> np.ndarray:
    """Scatter-add columns back to an (N, C, H, W) image (adjoint of im2col)."""
    n, c, h, w = x_shape
    ho = output_extent(h, k, stride, pad)
    wo = output_extent(w, k, stride, pad)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    cols = cols.reshape(n, c, k, k, ho, wo)
    for i in range(k):
        i_end = i + stride * ho
        for j in range(k):
            j_end = j + stride * wo
            out[:, :, i:i_end:stride, j:j_end:stride] += cols[:, :, i, j]
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(out)


# --------------------------------------------------------------------------
# Convolution
# --------------------------------------------------------------------------

def _check_conv(x: np.ndarray, params: LayerParams) -> int:
    _require_4d(x, "conv2d")
    w = params.weights
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise StructuralError(f"conv2d kernel must be [Cout,Cin,k,k], got {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise StructuralError(
            f"conv2d input shape {tuple(x.shape)} has {x.shape[1]} channels but "
            f"kernel shape {tuple(w.shape)} expects {w.shape[1]}"
        )
    return int(w.shape[2])


def conv2d_forward_cols(
    x: np.ndarray, params: LayerParams, stride: int = 1, pad: int = 0
) -> Tuple[np.ndarray, np.ndarray]:
    """conv2d_forward that also returns the im2col columns for reuse in backward."""
    k = _check_conv(x, params)
    n, _, h, w = x.shape
    ho = output_extent(h, k, stride, pad)
    wo = output_extent(w, k, stride, pad)
    cols = im2col(x, k, stride, pad)
    cout = params.weights.shape[0]
    out = _matmul(params.weights.reshape(cout, -1), cols, x.dtype)
    out += params.bias.astype(x.dtype, copy=False)[None, :, None]
    return out.reshape(n, cout, ho, wo), cols


def conv2d_forward(
    x: np.ndarray, params: LayerParams, stride: int = 1, pad: int = 0
) -> np.ndarray:
    """Cross-correlation with zero padding: [N,Cin,H,W] -> [N,Cout,Ho,Wo]."""
    return conv2d_forward_cols(x, params, stride, pad)[0]


def conv2d_backward(
    grad_out: np.ndarray,
    cached_input: Optional[np.ndarray],
    params: LayerParams,
    stride: int = 1,
    pad: int = 0,
    cols: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Return dL/dinput and accumulate dL/dweights, dL/dbias into `params`."""
    x = _require_cache(cached_input, "conv2d_backward")
    k = _check_conv(x, params)
    n, _, h, w = x.shape
    cout = params.weights.shape[0]
    expected = (n, cout, output_extent(h, k, stride, pad), output_extent(w, k, stride, pad))
    if tuple(grad_out.shape) != expected:
        raise StructuralError(
            f"conv2d grad_out shape {tuple(grad_out.shape)} != forward output shape {expected}"
        )
    if cols is None:
        cols = im2col(x, k, stride, pad)

    acc = _acc(x.dtype)
    g = grad_out.reshape(n, cout, -1)
    grad_w = np.tensordot(g.astype(acc, copy=False), cols.astype(acc, copy=False),
                          axes=([0, 2], [0, 2]))
    params.grad_weights += grad_w.reshape(params.weights.shape).astype(params.weights.dtype)
    params.grad_bias += g.sum(axis=(0, 2), dtype=acc).astype(params.bias.dtype)

    dcols = _matmul(params.weights.reshape(cout, -1).T, g, x.dtype)
    return col2im(dcols, x.shape, k, stride, pad)


# --------------------------------------------------------------------------
# Max pooling
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ArgmaxMap:
    """Winning flat (row-major, unpadded) index of every pooling window."""
    indices: np.ndarray
    input_shape: Tuple[int, int, int, int]


def maxpool_forward(
    x: np.ndarray, window: int, stride: int, pad: int = 0
) -> Tuple[np.ndarray, ArgmaxMap]:
    """Max over each window; ties resolve to the lowest row-major index.

    Windows that would cross the far border are dropped. Padding, when used,
    is -inf and can never win.
    """
    _require_4d(x, "maxpool")
    if window < 1 or stride < 1:
        raise StructuralError(f"maxpool window and stride must be >= 1, got {window}, {stride}")
    n, c, h, w = x.shape
    if window > h + 2 * pad or window > w + 2 * pad:
        raise StructuralError(
            f"maxpool window {window} larger than spatial extent {h}x{w} (pad {pad})"
        )
    ho = output_extent(h, window, stride, pad)
    wo = output_extent(w, window, stride, pad)
    win = _windows(_pad_spatial(x, pad, -np.inf), window, stride).reshape(
        n, c, ho, wo, window * window
    )
    local = win.argmax(axis=-1)
    out = np.take_along_axis(win, local[..., None], axis=-1)[..., 0]

    rows = np.arange(ho)[:, None] * stride + local // window - pad
    cols = np.arange(wo)[None, :] * stride + local % window - pad
    indices = (rows * w + cols).astype(np.int64)
    return np.ascontiguousarray(out), ArgmaxMap(indices, (n, c, h, w))


def maxpool_backward(grad_out: np.ndarray, argmax: ArgmaxMap) -> np.ndarray:
    """Route each gradient element to its window's winning input position."""
    if tuple(grad_out.shape) != tuple(argmax.indices.shape):
        raise StructuralError(
            f"maxpool grad_out shape {tuple(grad_out.shape)} != argmax map shape "
            f"{tuple(argmax.indices.shape)}"
        )
    n, c, h, w = argmax.input_shape
    plane = h * w
    offsets = (np.arange(n * c, dtype=np.int64) * plane).reshape(n, c, 1, 1)
    flat = np.bincount(
        (argmax.indices + offsets).ravel(),
        weights=grad_out.ravel().astype(np.float64),
        minlength=n * c * plane,
    )
    return flat.reshape(n, c, h, w).astype(grad_out.dtype)


# --------------------------------------------------------------------------
# Elementwise and normalization
# --------------------------------------------------------------------------

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def relu_backward(grad_out: np.ndarray, cached_input: Optional[np.ndarray]) -> np.ndarray:
    # derivative at exactly 0 is 0
    x = _require_cache(cached_input, "relu_backward")
    return grad_out * (x > 0)


def _channel_window_sum(a: np.ndarray, radius: int) -> np.ndarray:
    c = a.shape[1]
    padded = np.pad(a, ((0, 0), (radius, radius), (0, 0), (0, 0)))
    total = np.zeros_like(a)
    for offset in range(2 * radius + 1):
        total += padded[:, offset:offset + c]
    return total


def _lrn_scale(x: np.ndarray, depth_radius: int, k: float, alpha: float) -> np.ndarray:
    xa = x.astype(_acc(x.dtype), copy=False)
    return k + alpha * _channel_window_sum(xa * xa, depth_radius)


def lrn_forward(
    x: np.ndarray,
    depth_radius: int = 2,
    k: float = 2.0,
    alpha: float = 1e-4,
    beta: float = 0.75,
) -> np.ndarray:
    """Cross-channel local response normalization.

    b_c = a_c / (k + alpha * sum_{c' in [c-r, c+r]} a_c'^2) ** beta
    """
    _require_4d(x, "lrn")
    scale = _lrn_scale(x, depth_radius, k, alpha)
    return (x * scale ** -beta).astype(x.dtype)


def lrn_backward(
    grad_out: np.ndarray,
    cached_input: Optional[np.ndarray],
    depth_radius: int = 2,
    k: float = 2.0,
    alpha: float = 1e-4,
    beta: float = 0.75,
) -> np.ndarray:
    x = _require_cache(cached_input, "lrn_backward")
    scale = _lrn_scale(x, depth_radius, k, alpha)
    xa = x.astype(scale.dtype, copy=False)
    g = grad_out.astype(scale.dtype, copy=False)
    cross = _channel_window_sum(g * xa * scale ** (-beta - 1.0), depth_radius)
    grad_in = g * scale ** -beta - 2.0 * alpha * beta * xa * cross
    return grad_in.astype(x.dtype)


# --------------------------------------------------------------------------
# Fully connected
# --------------------------------------------------------------------------

def _check_fc(x: np.ndarray, params: LayerParams) -> None:
    if x.ndim != 2:
        raise StructuralError(f"fully_connected expects [N,D] input, got shape {x.shape}")
    if params.weights.ndim != 2 or x.shape[1] != params.weights.shape[1]:
        raise StructuralError(
            f"fully_connected input width {x.shape[1]} does not match weight shape "
            f"{tuple(params.weights.shape)}"
        )


def fully_connected_forward(x: np.ndarray, params: LayerParams) -> np.ndarray:
    """out = x @ W.T + bias, one product per sample."""
    _check_fc(x, params)
    out = _matmul(x[:, None, :], params.weights.T, x.dtype)[:, 0, :]
    return out + params.bias.astype(x.dtype, copy=False)


def fully_connected_backward(
    grad_out: np.ndarray, cached_input: Optional[np.ndarray], params: LayerParams
) -> np.ndarray:
    x = _require_cache(cached_input, "fully_connected_backward")
    _check_fc(x, params)
    if grad_out.shape != (x.shape[0], params.weights.shape[0]):
        raise StructuralError(
            f"fully_connected grad_out shape {grad_out.shape} != "
            f"{(x.shape[0], params.weights.shape[0])}"
        )
    acc = _acc(x.dtype)
    params.grad_weights += _matmul(grad_out.T, x, acc).astype(params.weights.dtype)
    params.grad_bias += grad_out.sum(axis=0, dtype=acc).astype(params.bias.dtype)
    return _matmul(grad_out, params.weights, x.dtype)


# --------------------------------------------------------------------------
# Dropout
# --------------------------------------------------------------------------

def dropout(
    x: np.ndarray,
    rate: float,
    training: bool,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Inverted dropout. Returns (output, mask); mask is None when it is the identity."""
    if not (0.0 <= rate < 1.0):
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x, None
    if rng is None:
        raise UsageError("dropout in training mode needs an rng")
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - rate))
    return x * mask, mask


def dropout_backward(grad_out: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    return grad_out if mask is None else grad_out * mask


# --------------------------------------------------------------------------
# Channel concatenation and global average pooling
# --------------------------------------------------------------------------

def concat_channels(inputs: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenate [N,Ci,H,W] tensors along channels, in argument order."""
    if not inputs:
        raise StructuralError("concat_channels needs at least one input")
    ref = inputs[0]
    _require_4d(ref, "concat_channels")
    for i, x in enumerate(inputs[1:], start=1):
        _require_4d(x, "concat_channels")
        if (x.shape[0], x.shape[2], x.shape[3]) != (ref.shape[0], ref.shape[2], ref.shape[3]):
            raise StructuralError(
                f"concat_channels branch {i} has shape {tuple(x.shape)}, "
                f"incompatible with branch 0 shape {tuple(ref.shape)}"
            )
    if len(inputs) == 1:
        return ref
    return np.concatenate(inputs, axis=1)


def split_channels(grad_out: np.ndarray, sizes: Sequence[int]) -> List[np.ndarray]:
    """Adjoint of concat_channels: slice grad_out back into per-branch gradients."""
    if sum(sizes) != grad_out.shape[1]:
        raise StructuralError(
            f"split sizes {list(sizes)} do not sum to {grad_out.shape[1]} channels"
        )
    bounds = np.cumsum(sizes)[:-1]
    return [np.ascontiguousarray(part) for part in np.split(grad_out, bounds, axis=1)]


def global_avg_pool_forward(x: np.ndarray) -> np.ndarray:
    """[N,C,H,W] -> [N,C] spatial mean."""
    _require_4d(x, "global_avg_pool")
    return x.mean(axis=(2, 3), dtype=_acc(x.dtype)).astype(x.dtype)


def global_avg_pool_backward(
    grad_out: np.ndarray, input_shape: Tuple[int, int, int, int]
) -> np.ndarray:
    n, c, h, w = input_shape
    if grad_out.shape != (n, c):
        raise StructuralError(
            f"global_avg_pool grad_out shape {grad_out.shape} != {(n, c)}"
        )
    scaled = grad_out / grad_out.dtype.type(h * w)
    return np.broadcast_to(scaled[:, :, None, None], input_shape).copy()
