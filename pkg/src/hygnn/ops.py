"""Differentiable building blocks: convolutions, resizing, pooling, gates, losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DTYPE, Tensor, TensorError, apply_op, as_tensor


@dataclass
class ConvParams:
    kernel: Tensor  # [out, in, kh, kw]
    bias: Tensor  # [out]
    stride: int = 1
    padding: int = 0
    dilation: int = 1

    def __post_init__(self):
        kh, kw = self.kernel.shape[2:]
        if kh % 2 == 0 or kw % 2 == 0:
            raise TensorError(f"kernel sizes must be odd, got {kh}x{kw}")
        if self.bias.shape != (self.kernel.shape[0],):
            raise TensorError("bias length must equal out_channels")

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    def named_parameters(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.kernel", self.kernel
        yield f"{prefix}.bias", self.bias


@dataclass
class ConvGruParams:
    """Reset, update and candidate convolutions over concat([state, input])."""

    reset: ConvParams
    update: ConvParams
    candidate: ConvParams

    def named_parameters(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for name in ("reset", "update", "candidate"):
            yield from getattr(self, name).named_parameters(f"{prefix}.{name}")


def init_conv(
    rng: np.random.Generator,
    in_ch: int,
    out_ch: int,
    k: int = 3,
    dilation: int = 1,
    stride: int = 1,
    gain: float = 1.0,
) -> ConvParams:
    """Fan-in scaled normal kernel, zero bias, "same" padding."""
    std = gain * np.sqrt(2.0 / (in_ch * k * k))
    kernel = Tensor(rng.normal(0.0, std, size=(out_ch, in_ch, k, k)), grad_tracked=True)
    bias = Tensor(np.zeros(out_ch), grad_tracked=True)
    return ConvParams(kernel, bias, stride=stride, padding=dilation * (k - 1) // 2, dilation=dilation)


def init_conv_gru(rng: np.random.Generator, channels: int, k: int = 3) -> ConvGruParams:
    return ConvGruParams(
        reset=init_conv(rng, 2 * channels, channels, k, gain=0.5),
        update=init_conv(rng, 2 * channels, channels, k, gain=0.5),
        candidate=init_conv(rng, 2 * channels, channels, k, gain=0.5),
    )


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------


def _conv_out_size(n: int, k: int, padding: int, dilation: int, stride: int) -> int:
    return (n + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def conv2d(x: Tensor, params: ConvParams) -> Tensor:
    """Dilated 2-D cross-correlation plus per-channel bias, NCHW layout."""
    w, b = params.kernel, params.bias
    s, p, d = params.stride, params.padding, params.dilation
    if x.ndim != 4:
        raise TensorError(f"conv2d expects [B,C,H,W], got {list(x.shape)}")
    B, C, H, W = x.shape
    O, Cin, kh, kw = w.shape
    if C != Cin:
        raise TensorError(f"conv2d channel mismatch: input has {C}, kernel expects {Cin}")
    Ho = _conv_out_size(H, kh, p, d, s)
    Wo = _conv_out_size(W, kw, p, d, s)
    if Ho < 1 or Wo < 1:
        raise TensorError(f"conv2d output size {Ho}x{Wo} is not positive")

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    span_h, span_w = d * (kh - 1) + 1, d * (kw - 1) + 1
    win = sliding_window_view(xp, (span_h, span_w), axis=(2, 3))
    win = win[:, :, : s * (Ho - 1) + 1 : s, : s * (Wo - 1) + 1 : s, ::d, ::d]  # B,C,Ho,Wo,kh,kw
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    wmat = w.data.reshape(O, C * kh * kw)
    out = (cols @ wmat.T).reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2) + b.data[None, :, None, None]

    def back(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
        gw = (gmat.T @ cols).reshape(w.shape)
        gb = g.sum(axis=(0, 2, 3))
        gx = None
        if x.grad_tracked:
            dcols = (gmat @ wmat).reshape(B, Ho, Wo, C, kh, kw).transpose(0, 3, 1, 2, 4, 5)
            gxp = np.zeros(xp.shape, dtype=DTYPE)
            for i in range(kh):
                for j in range(kw):
                    gxp[
                        :, :,
                        i * d : i * d + s * (Ho - 1) + 1 : s,
                        j * d : j * d + s * (Wo - 1) + 1 : s,
                    ] += dcols[..., i, j]
            gx = gxp[:, :, p : p + H, p : p + W] if p else gxp
        return gx, gw, gb

    return apply_op(np.ascontiguousarray(out), (x, w, b), back)


def max_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pooling; ties route the gradient to the first maximum."""
    B, C, H, W = x.shape
    if H % size or W % size:
        raise TensorError(f"max_pool2d needs spatial dims divisible by {size}, got {H}x{W}")
    Ho, Wo = H // size, W // size
    blocks = x.data.reshape(B, C, Ho, size, Wo, size).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(B, C, Ho, Wo, size * size)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def back(g):
        gb = np.zeros(blocks.shape, dtype=DTYPE)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(B, C, Ho, Wo, size, size).transpose(0, 1, 2, 4, 3, 5)
        return (gb.reshape(B, C, H, W),)

    return apply_op(out, (x,), back)


# ---------------------------------------------------------------------------
# Elementwise nonlinearities
# ---------------------------------------------------------------------------


def sigmoid(x: Tensor) -> Tensor:
    # tanh form never overflows, unlike 1/(1+exp(-x)) for large negative x
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return apply_op(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return apply_op(y, (x,), lambda g: (g * (1.0 - y * y),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return apply_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# Separable linear resampling (resize and adaptive pooling)
# ---------------------------------------------------------------------------


def interp_matrix(n_in: int, n_out: int, align_corners: bool = True) -> np.ndarray:
    """Row o holds the 1-D linear interpolation weights of output sample o."""
    m = np.zeros((n_out, n_in), dtype=DTYPE)
    for o in range(n_out):
        if align_corners:
            src = 0.0 if n_out == 1 else o * (n_in - 1) / (n_out - 1)
        else:
            src = (o + 0.5) * n_in / n_out - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        m[o, lo] += 1.0 - frac
        if frac > 0.0:
            m[o, hi] += frac
    return m


def pool_matrix(n_in: int, bins: int) -> np.ndarray:
    """Adaptive average pooling weights: bin i averages [floor(i n/b), ceil((i+1) n/b))."""
    m = np.zeros((bins, n_in), dtype=DTYPE)
    for i in range(bins):
        start = (i * n_in) // bins
        stop = -((-(i + 1) * n_in) // bins)
        m[i, start:stop] = 1.0 / (stop - start)
    return m


def separable_linear(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """out[b,c] = rows @ x[b,c] @ cols.T"""
    if x.ndim != 4:
        raise TensorError(f"expected [B,C,H,W], got {list(x.shape)}")
    out = rows @ x.data @ cols.T
    return apply_op(out, (x,), lambda g: (rows.T @ g @ cols,))


def bilinear_resize(x: Tensor, out_h: int, out_w: int, align_corners: bool = True) -> Tensor:
    if out_h < 1 or out_w < 1:
        raise TensorError(f"target size must be positive, got {out_h}x{out_w}")
    H, W = x.shape[2:]
    return separable_linear(
        x, interp_matrix(H, out_h, align_corners), interp_matrix(W, out_w, align_corners)
    )


def adaptive_avg_pool(x: Tensor, bins: int) -> Tensor:
    H, W = x.shape[2:]
    if bins < 1 or bins > min(H, W):
        raise TensorError(f"bins={bins} must lie in [1, {min(H, W)}]")
    return separable_linear(x, pool_matrix(H, bins), pool_matrix(W, bins))


def pyramid_pool(x: Tensor, bins: int) -> Tensor:
    """Average-pool onto a bins x bins grid, then upsample back to H x W.

    Upsampling uses half-pixel-centred bilinear weights, which keep each
    channel's mean unchanged whenever ``bins`` divides H and W.
    """
    H, W = x.shape[2:]
    pooled = adaptive_avg_pool(x, bins)
    return bilinear_resize(pooled, H, W, align_corners=False)


# ---------------------------------------------------------------------------
# Channel plumbing, recurrent update, dynamic filters
# ---------------------------------------------------------------------------


def concat_channels(inputs: Sequence[Tensor]) -> Tensor:
    inputs = list(inputs)
    if not inputs:
        raise TensorError("concat_channels needs at least one input")
    B, _, H, W = inputs[0].shape
    for t in inputs:
        if t.ndim != 4 or t.shape[0] != B or t.shape[2:] != (H, W):
            raise TensorError("concat_channels inputs must share batch and spatial size")
    if len(inputs) == 1:
        return inputs[0]
    bounds = np.cumsum([t.shape[1] for t in inputs])[:-1]
    out = np.concatenate([t.data for t in inputs], axis=1)
    return apply_op(out, tuple(inputs), lambda g: tuple(np.split(g, bounds, axis=1)))


def conv_gru_step(state: Tensor, inp: Tensor, params: ConvGruParams) -> Tensor:
    if state.shape != inp.shape:
        raise TensorError(f"GRU state {list(state.shape)} and input {list(inp.shape)} differ")
    both = concat_channels([state, inp])
    z = sigmoid(conv2d(both, params.update))
    r = sigmoid(conv2d(both, params.reset))
    cand = tanh(conv2d(concat_channels([r * state, inp]), params.candidate))
    return (1.0 - z) * state + z * cand


def dynamic_conv(x: Tensor, kernel: Tensor) -> Tensor:
    """Per-sample 1x1 convolution: out[b, o] = sum_c kernel[b, o, c] * x[b, c]."""
    B, C = x.shape[:2]
    if kernel.ndim != 5 or kernel.shape[0] != B:
        raise TensorError(f"kernel batch {list(kernel.shape)} does not match input batch {B}")
    if kernel.shape[1:] != (C, C, 1, 1):
        raise TensorError(f"dynamic kernel must be [B,{C},{C},1,1], got {list(kernel.shape)}")
    k = kernel.data[:, :, :, 0, 0]
    out = np.einsum("boc,bchw->bohw", k, x.data)

    def back(g):
        gx = np.einsum("boc,bohw->bchw", k, g)
        gk = np.einsum("bohw,bchw->boc", g, x.data)[:, :, :, None, None]
        return gx, gk

    return apply_op(out, (x, kernel), back)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x [B, in] @ weight [in, out] + bias [out]."""
    return x @ weight + bias


def global_avg_pool(x: Tensor) -> Tensor:
    """[B,C,H,W] -> [B,C]"""
    return x.mean(axis=(2, 3))


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


def mse_loss(pred: Tensor, target, reduction: str = "mean") -> Tensor:
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise TensorError(f"mse_loss shapes differ: {list(pred.shape)} vs {list(target.shape)}")
    if target.grad_tracked:
        raise TensorError("mse_loss target must not be grad-tracked")
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    diff = pred.data - target.data
    scale = 1.0 / diff.size if reduction == "mean" else 1.0
    value = np.array([np.sum(diff * diff) * scale])
    return apply_op(value, (pred,), lambda g: (g[0] * 2.0 * scale * diff,))
