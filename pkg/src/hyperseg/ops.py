"""Dense float64 conv-net primitives with exact adjoints.

All operations are pure functions on numpy arrays: identical inputs give
bit-identical outputs, nothing is cached or mutated.  Convolution follows the
deep-learning convention (cross-correlation, no kernel flip).  Inputs may be
a single image ``(C, H, W)`` or a batch ``(N, C, H, W)``; gradients are
computed by the ``*_backward`` functions rather than a tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ConvSpec",
    "NumericalError",
    "conv2d",
    "conv2d_backward",
    "relu",
    "relu_backward",
    "maxpool2",
    "maxpool2_backward",
]


class NumericalError(RuntimeError):
    """A non-finite value or failed numeric check aborted the computation."""


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_size: int
    padding: int = 0
    stride: int = 1

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be a positive odd integer, got {self.kernel_size}")
        if self.padding < 0:
            raise ValueError(f"padding must be non-negative, got {self.padding}")
        if self.stride < 1:
            raise ValueError(f"stride must be positive, got {self.stride}")

    def out_extent(self, extent: int) -> int:
        out = (extent + 2 * self.padding - self.kernel_size) // self.stride + 1
        if out < 1:
            raise ValueError(
                f"spatial extent {extent} too small for kernel {self.kernel_size} "
                f"with padding {self.padding} and stride {self.stride}"
            )
        return out


def _as_batch(x: np.ndarray, name: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"{name} must be (C,H,W) or (N,C,H,W), got ndim={x.ndim}")


def _check_conv_args(x, w, b, spec):
    n, c, h, wd = x.shape
    if w.shape != (spec.out_channels, spec.in_channels, spec.kernel_size, spec.kernel_size):
        raise ValueError(
            f"weights shape {w.shape} does not match spec "
            f"({spec.out_channels},{spec.in_channels},{spec.kernel_size},{spec.kernel_size})"
        )
    if c != spec.in_channels:
        raise ValueError(f"input channel dim is {c}, spec expects in_channels={spec.in_channels}")
    if b.shape != (spec.out_channels,):
        raise ValueError(f"bias shape {b.shape} does not match out_channels={spec.out_channels}")
    return n, h, wd


def _im2col(x: np.ndarray, spec: ConvSpec) -> tuple[np.ndarray, tuple[int, int]]:
    """Extract sliding patches: (N, Ho*Wo, C*k*k) plus output extents."""
    k, p, s = spec.kernel_size, spec.padding, spec.stride
    if p:
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    n, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho * wo, c * k * k)
    return cols, (ho, wo)


def _corr(xb: np.ndarray, weights: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Batched cross-correlation without bias: (N,C,H,W) -> (N,O,Ho,Wo)."""
    n = xb.shape[0]
    cols, (ho, wo) = _im2col(xb, spec)
    wm = weights.reshape(spec.out_channels, -1)
    out = cols.reshape(n * ho * wo, -1) @ wm.T
    return np.ascontiguousarray(out.reshape(n, ho, wo, spec.out_channels).transpose(0, 3, 1, 2))


def conv2d(x: np.ndarray, weights: np.ndarray, bias: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Zero-padded cross-correlation of ``x`` with ``weights`` plus ``bias``."""
    xb, squeeze = _as_batch(x, "input")
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    _check_conv_args(xb, weights, bias, spec)
    out = _corr(xb, weights, spec) + bias[None, :, None, None]
    return out[0] if squeeze else out


def conv2d_backward(
    grad_out: np.ndarray, x: np.ndarray, weights: np.ndarray, spec: ConvSpec
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Adjoints of :func:`conv2d` w.r.t. input, weights, and bias."""
    xb, squeeze = _as_batch(x, "input")
    gb, gsq = _as_batch(grad_out, "grad_out")
    if gsq != squeeze:
        raise ValueError("grad_out and input must both be batched or both single-image")
    weights = np.asarray(weights, dtype=np.float64)
    n, c, h, wd = xb.shape
    k, p, s = spec.kernel_size, spec.padding, spec.stride
    ho, wo = spec.out_extent(h), spec.out_extent(wd)
    if gb.shape != (n, spec.out_channels, ho, wo):
        raise ValueError(
            f"grad_out shape {gb.shape} does not match forward output "
            f"({n},{spec.out_channels},{ho},{wo})"
        )

    gm = np.ascontiguousarray(gb.transpose(0, 2, 3, 1)).reshape(n * ho * wo, spec.out_channels)
    grad_bias = gm.sum(axis=0)

    cols, _ = _im2col(xb, spec)
    flat_cols = cols.reshape(n * ho * wo, -1)
    grad_weights = (gm.T @ flat_cols).reshape(weights.shape)

    if s == 1 and p <= k - 1:
        # input gradient of a stride-1 correlation is itself a correlation
        # with spatially flipped, channel-transposed weights
        w_flip = np.ascontiguousarray(weights[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        grad_x = _corr(gb, w_flip, ConvSpec(spec.out_channels, c, k, padding=k - 1 - p))
    else:
        wm = weights.reshape(spec.out_channels, -1)
        gcols = (gm @ wm).reshape(n, ho, wo, c, k, k)
        gxp = np.zeros((n, h + 2 * p, wd + 2 * p, c))
        for a in range(k):
            for b_ in range(k):
                gxp[:, a : a + ho * s : s, b_ : b_ + wo * s : s, :] += gcols[:, :, :, :, a, b_]
        grad_x = np.ascontiguousarray(gxp[:, p : p + h, p : p + wd, :].transpose(0, 3, 1, 2))
    if squeeze:
        return grad_x[0], grad_weights, grad_bias
    return grad_x, grad_weights, grad_bias


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Pass gradient where x > 0; the kink at exactly 0 routes zero."""
    return np.asarray(grad_out, dtype=np.float64) * (np.asarray(x) > 0.0)


def _pool_cells(x: np.ndarray) -> tuple[np.ndarray, ...]:
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 needs even spatial extents, got H={h}, W={w}")
    # the four cells of every 2x2 window, in row-major order
    return x[..., 0::2, 0::2], x[..., 0::2, 1::2], x[..., 1::2, 0::2], x[..., 1::2, 1::2]


def maxpool2(x: np.ndarray) -> np.ndarray:
    """2x2 non-overlapping max pooling."""
    xb, squeeze = _as_batch(x, "input")
    a, b, c, d = _pool_cells(xb)
    out = np.maximum(np.maximum(a, b), np.maximum(c, d))
    return out[0] if squeeze else out


def maxpool2_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Route gradient to the argmax cell; ties go to the first cell in row-major order."""
    xb, squeeze = _as_batch(x, "input")
    gb, gsq = _as_batch(grad_out, "grad_out")
    if gsq != squeeze:
        raise ValueError("grad_out and input must both be batched or both single-image")
    cells = _pool_cells(xb)
    m = np.maximum(np.maximum(cells[0], cells[1]), np.maximum(cells[2], cells[3]))
    if gb.shape != m.shape:
        raise ValueError(f"grad_out shape {gb.shape} does not match pooled shape {m.shape}")
    gx = np.zeros_like(xb)
    targets = (gx[:, :, 0::2, 0::2], gx[:, :, 0::2, 1::2], gx[:, :, 1::2, 0::2], gx[:, :, 1::2, 1::2])
    taken = np.zeros(m.shape, dtype=bool)
    for cell, target in zip(cells, targets):
        hit = (cell == m) & ~taken
        target += np.where(hit, gb, 0.0)
        taken |= hit
    return gx[0] if squeeze else gx
