"""Network primitives built on :mod:`prix.tensor.tensor`.

Fused ops (softmax, layer_norm, conv2d, resize2d) carry hand-written
backward passes; losses are composed from differentiable pieces.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import DomainError
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import (
    ShapeError,
    Tensor,
    _make,
    concat,
    exp,
    mean,
    power,
    resolve_dtype,
    tabs,
    tsum,
)


# ---------------------------------------------------------------- creation


def _check_shape(shape) -> tuple:
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise ShapeError(f"all dims must be >= 1, got {shape}")
    return shape


def create(shape, init: str = "zeros", seed: int | None = None, dtype=None,
           requires_grad: bool = False, low: float = -1.0, high: float = 1.0,
           std: float = 1.0) -> Tensor:
    shape = _check_shape(shape)
    dt = resolve_dtype(dtype)
    if init == "zeros":
        data = np.zeros(shape, dtype=dt)
    elif init == "ones":
        data = np.ones(shape, dtype=dt)
    elif init in ("uniform", "gaussian"):
        if seed is None:
            raise ValueError(f"{init} init needs a seed")
        rng = np.random.default_rng(seed)
        if init == "uniform":
            data = rng.uniform(low, high, size=shape)
        else:
            data = rng.normal(0.0, std, size=shape)
        data = data.astype(dt)
    else:
        raise ValueError(f"unknown init {init!r}")
    return Tensor(data, requires_grad=requires_grad, dtype=dt)


def zeros(shape, dtype=None, requires_grad=False) -> Tensor:
    return create(shape, "zeros", dtype=dtype, requires_grad=requires_grad)


def ones(shape, dtype=None, requires_grad=False) -> Tensor:
    return create(shape, "ones", dtype=dtype, requires_grad=requires_grad)


def gaussian(shape, seed: int, dtype=None, requires_grad=False, std: float = 1.0) -> Tensor:
    return create(shape, "gaussian", seed=seed, dtype=dtype, requires_grad=requires_grad, std=std)


def uniform(shape, seed: int, low=-1.0, high=1.0, dtype=None, requires_grad=False) -> Tensor:
    return create(shape, "uniform", seed=seed, dtype=dtype, requires_grad=requires_grad, low=low, high=high)


# -------------------------------------------------------------- primitives


def _axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"axis {axis} invalid for rank {x.ndim}")
    return axis % x.ndim


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _axis(x, axis)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _axis(x, axis)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    soft = np.exp(out)

    def backward(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), backward)


def layer_norm(x: Tensor, weight: Tensor | None = None, bias: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply the optional affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g):
        return (inv * (g - g.mean(axis=-1, keepdims=True)
                       - xhat * (g * xhat).mean(axis=-1, keepdims=True)),)

    out = _make(xhat.astype(x.dtype, copy=False), (x,), backward)
    if weight is not None:
        out = out * weight
    if bias is not None:
        out = out + bias
    return out


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as [in, out]."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear expects last dim {weight.shape[0]}, got {x.shape}")
    out = x @ weight
    if bias is not None:
        out = out + bias
    return out


def dropout(x: Tensor, p: float, rng: np.random.Generator | int | None = None,
            train: bool = True) -> Tensor:
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout p must lie in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return _make(x.data * mask, (x,), lambda g: (g * mask,))


# ------------------------------------------------------------ convolution


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> tuple[np.ndarray, int, int]:
    B, C, Hp, Wp = xp.shape
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    if kh == 1 and kw == 1:
        xs = xp[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
        return np.ascontiguousarray(xs.transpose(0, 2, 3, 1)).reshape(-1, C), Ho, Wo
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * Ho * Wo, C * kh * kw)
    return cols, Ho, Wo


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """2-D cross-correlation over [B, C, H, W] via im2col."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d expects x [B,C,H,W] and weight [O,C,kh,kw]")
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    B, C, H, W = x.shape
    O, Cw, kh, kw = weight.shape
    if C != Cw:
        raise ShapeError(f"conv2d channel mismatch: input {C}, kernel {Cw}")
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if kh > Hp or kw > Wp:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    p = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    cols, Ho, Wo = _im2col(xp, kh, kw, stride)
    wmat = weight.data.reshape(O, -1)
    out = (cols @ wmat.T).reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, O, 1, 1)
    out = np.ascontiguousarray(out)

    def backward(g):
        gx = gw = gb = None
        if weight.requires_grad:
            gm = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, O)
            gw = (gm.T @ cols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            # input gradient = full correlation of the (dilated) output gradient
            # with the spatially flipped, channel-swapped kernel
            if stride > 1:
                gd = np.zeros((B, O, (Ho - 1) * stride + 1, (Wo - 1) * stride + 1), dtype=g.dtype)
                gd[:, :, ::stride, ::stride] = g
            else:
                gd = g
            ph, pw = kh - 1 - p, kw - 1 - p
            extra_h = H - (gd.shape[2] + kh - 1 - 2 * p)
            extra_w = W - (gd.shape[3] + kw - 1 - 2 * p)
            gd = np.pad(gd, ((0, 0), (0, 0), (ph, ph + extra_h), (pw, pw + extra_w)))
            wf = np.ascontiguousarray(weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)).reshape(C, -1)
            gcols, _, _ = _im2col(gd, kh, kw, 1)
            gx = np.ascontiguousarray((gcols @ wf.T).reshape(B, H, W, C).transpose(0, 3, 1, 2))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, backward)


# --------------------------------------------------------- pooling/resize


def resize_matrix(n_in: int, n_out: int, mode: str) -> np.ndarray:
    """Row-stochastic [n_out, n_in] matrix implementing one resize axis."""
    if n_in < 1 or n_out < 1:
        raise ShapeError("resize sizes must be >= 1")
    m = np.zeros((n_out, n_in), dtype=np.float64)
    if mode == "adaptive_avg":
        for o in range(n_out):
            start = (o * n_in) // n_out
            end = -((-(o + 1) * n_in) // n_out)
            m[o, start:end] = 1.0 / (end - start)
    elif mode == "upsample_bilinear":
        scale = n_in / n_out
        for o in range(n_out):
            src = max((o + 0.5) * scale - 0.5, 0.0)
            i0 = min(int(np.floor(src)), n_in - 1)
            i1 = min(i0 + 1, n_in - 1)
            lam = src - i0
            m[o, i0] += 1.0 - lam
            m[o, i1] += lam
    elif mode == "upsample_nearest":
        for o in range(n_out):
            m[o, min(int(np.floor(o * n_in / n_out)), n_in - 1)] = 1.0
    else:
        raise ValueError(f"unknown resize mode {mode!r}")
    return m


def resize2d(x: Tensor, mh: np.ndarray, mw: np.ndarray) -> Tensor:
    """Separable linear resize: ``out = mh @ x @ mw.T`` on the last two axes."""
    mh = mh.astype(x.dtype, copy=False)
    mw = mw.astype(x.dtype, copy=False)
    out = np.matmul(np.matmul(mh, x.data), mw.T)
    return _make(out, (x,), lambda g: (np.matmul(np.matmul(mh.T, g), mw),))


def pool_resize(x: Tensor, mode: str, out_hw: Sequence[int]) -> Tensor:
    if x.ndim != 4:
        raise ShapeError("pool_resize expects [B,C,H,W]")
    oh, ow = int(out_hw[0]), int(out_hw[1])
    if oh < 1 or ow < 1:
        raise ShapeError(f"output size must be >= 1x1, got {out_hw}")
    H, W = x.shape[2:]
    if (oh, ow) == (H, W):
        return x
    return resize2d(x, resize_matrix(H, oh, mode), resize_matrix(W, ow, mode))


def adaptive_avg_pool(x: Tensor, out_hw) -> Tensor:
    return pool_resize(x, "adaptive_avg", out_hw)


def upsample(x: Tensor, out_hw, mode: str = "bilinear") -> Tensor:
    return pool_resize(x, "upsample_" + mode, out_hw)


# ------------------------------------------------------------------ losses


def _one_hot(target: np.ndarray, num_classes: int, axis: int, ndim: int, dtype) -> np.ndarray:
    target = np.asarray(target)
    if target.dtype.kind not in "iu":
        raise DomainError("class targets must be integers")
    if target.size and (target.min() < 0 or target.max() >= num_classes):
        raise DomainError(f"class index out of range [0, {num_classes})")
    oh = np.eye(num_classes, dtype=dtype)[target]
    return np.moveaxis(oh, -1, axis % ndim)


def l1_loss(pred: Tensor, target) -> Tensor:
    target = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ShapeError(f"l1 shape mismatch {pred.shape} vs {target.shape}")
    return mean(tabs(pred - target))


def cross_entropy(logits: Tensor, target, axis: int = -1) -> Tensor:
    """Mean negative log-likelihood of integer ``target`` under softmax(logits)."""
    axis = _axis(logits, axis)
    onehot = _one_hot(target, logits.shape[axis], axis, logits.ndim, logits.dtype)
    logp = log_softmax(logits, axis)
    return -mean(tsum(logp * onehot, axis=axis))


def focal_loss(logits: Tensor, target, gamma: float = 2.0, alpha=1.0, axis: int = -1) -> Tensor:
    """Softmax focal loss ``-alpha_t (1 - p_t)^gamma log p_t``, averaged.

    ``alpha`` is a scalar or a per-class sequence. ``gamma=0, alpha=1``
    reduces to :func:`cross_entropy`.
    """
    axis = _axis(logits, axis)
    target = np.asarray(target)
    onehot = _one_hot(target, logits.shape[axis], axis, logits.ndim, logits.dtype)
    logp_t = tsum(log_softmax(logits, axis) * onehot, axis=axis)
    weight = power(1.0 - exp(logp_t), gamma)
    if np.ndim(alpha) == 0:
        alpha_t = float(alpha)
    else:
        alpha_t = np.asarray(alpha, dtype=logits.dtype)[target]
    return -mean(weight * logp_t * alpha_t)


def binary_focal_loss(logit: Tensor, target, gamma: float = 2.0, alpha: float = 0.25) -> Tensor:
    """Focal loss on single existence logits; ``alpha`` weights the positive class."""
    zeros_ = Tensor(np.zeros(logit.shape + (1,), dtype=logit.dtype))
    logits2 = concat([zeros_, logit.reshape(logit.shape + (1,))], axis=-1)
    return focal_loss(logits2, np.asarray(target, dtype=np.int64), gamma, (1.0 - alpha, alpha))
