"""Differentiable layer operations on channels-last volumes.

Volumes are laid out as ``(N, W, H, D, C)``; every op also accepts a single
unbatched ``(W, H, D, C)`` volume and returns an unbatched result.
"""
from __future__ import annotations

from contextlib import contextmanager
from typing import Iterator, List, Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from symreg.autodiff.tensor import Tensor, as_tensor
from symreg.errors import ConfigError, DimensionError

MODES = ("train", "mc", "eval")

_decision_log: Optional[List[np.ndarray]] = None


@contextmanager
def record_decisions() -> Iterator[List[np.ndarray]]:
    """Collect the discrete choices (ReLU gates, pool argmaxes, clip gates)
    made by ops inside the block, in execution order."""
    global _decision_log
    prev, _decision_log = _decision_log, []
    try:
        yield _decision_log
    finally:
        _decision_log = prev


def note_decision(choice: np.ndarray) -> None:
    if _decision_log is not None:
        _decision_log.append(np.array(choice, copy=True))


def _batched(x: Tensor, op: str):
    if x.ndim == 4:
        return x.reshape((1,) + x.shape), True
    if x.ndim != 5:
        raise DimensionError(f"{op} expects (N, W, H, D, C) or (W, H, D, C), got shape {x.shape}")
    return x, False


def _im2col(xp: np.ndarray, k: int, stride: int = 1) -> np.ndarray:
    """Rows of ``k**3 * C`` window values, one per output voxel of padded ``xp``."""
    win = sliding_window_view(xp, (k, k, k), axis=(1, 2, 3))[:, ::stride, ::stride, ::stride]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 3, 5, 6, 7, 4)).reshape(-1, k * k * k * xp.shape[-1])


def conv3d(x: Tensor, kernels: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
           zero_pad: bool = True) -> Tensor:
    """3D cross-correlation with cubic odd kernels of shape ``(k, k, k, Cin, Cout)``."""
    x, squeeze = _batched(x, "conv3d")
    kernels = as_tensor(kernels, x.dtype)
    kshape = kernels.shape
    if len(kshape) != 5 or not (kshape[0] == kshape[1] == kshape[2]) or kshape[0] % 2 == 0:
        raise DimensionError(f"conv3d kernels must be (k, k, k, Cin, Cout) with odd k, got {kshape}"
                             f" for input {x.shape}")
    if kshape[3] != x.shape[-1]:
        raise DimensionError(f"conv3d channel mismatch: input {x.shape} vs kernels {kshape}")
    if stride < 1:
        raise DimensionError(f"conv3d stride must be >= 1, got {stride}")
    k, cin, cout = kshape[0], kshape[3], kshape[4]
    pad = k // 2 if zero_pad else 0
    n = x.shape[0]
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (pad, pad), (0, 0))) if pad else x.data
    if any(e < k for e in xp.shape[1:4]):
        raise DimensionError(f"conv3d input {x.shape} smaller than kernels {kshape}")
    out_sp = tuple((e - k) // stride + 1 for e in xp.shape[1:4])
    cols = _im2col(xp, k, stride)
    kmat = kernels.data.reshape(k * k * k * cin, cout)
    out = cols @ kmat
    if bias is not None:
        out += bias.data
    out = out.reshape((n,) + out_sp + (cout,))
    parents = (x, kernels) if bias is None else (x, kernels, bias)

    def backward(g):
        g2 = g.reshape(-1, cout)
        dk = (cols.T @ g2).reshape(kshape) if kernels.requires_grad else None
        dx = None
        if x.requires_grad:
            if stride == 1:
                # full correlation with the flipped, channel-swapped kernel
                flipped = kernels.data[::-1, ::-1, ::-1].transpose(0, 1, 2, 4, 3)
                gp = np.pad(g, ((0, 0), (k - 1 - pad,) * 2, (k - 1 - pad,) * 2, (k - 1 - pad,) * 2, (0, 0)))
                gcols = _im2col(gp, k)
                dx = (gcols @ flipped.reshape(k * k * k * cout, cin)).reshape(x.shape)
            else:
                dcols = (g2 @ kmat.T).reshape((n,) + out_sp + (k, k, k, cin))
                dxp = np.zeros(xp.shape, dtype=xp.dtype)
                ew, eh, ed = (stride * (e - 1) + 1 for e in out_sp)
                for i in range(k):
                    for j in range(k):
                        for l in range(k):
                            dxp[:, i:i + ew:stride, j:j + eh:stride, l:l + ed:stride, :] += dcols[:, :, :, :, i, j, l, :]
                dx = dxp[:, pad:xp.shape[1] - pad, pad:xp.shape[2] - pad, pad:xp.shape[3] - pad, :] if pad else dxp
        if bias is None:
            return dx, dk
        return dx, dk, g2.sum(axis=0)

    result = Tensor.from_op(out, parents, backward, "conv3d")
    return result.reshape(result.shape[1:]) if squeeze else result


def _triple(v) -> tuple:
    if isinstance(v, (int, np.integer)):
        return (int(v),) * 3
    v = tuple(int(e) for e in v)
    if len(v) != 3:
        raise DimensionError(f"expected an int or 3-tuple, got {v}")
    return v


def maxpool3d(x: Tensor, window: Union[int, Sequence[int]] = 2,
              stride: Union[int, Sequence[int], None] = None) -> Tensor:
    """Max pooling; trailing partial windows are dropped (floor rule).

    ``window`` and ``stride`` may be per-axis triples.  The backward pass
    routes each output gradient to the first argmax of its window.
    """
    x, squeeze = _batched(x, "maxpool3d")
    win = _triple(window)
    st = win if stride is None else _triple(stride)
    spatial = x.shape[1:4]
    if all(w > e for w, e in zip(win, spatial)):
        raise DimensionError(f"maxpool3d window {win} larger than every spatial extent of {x.shape}")
    if any(w > e for w, e in zip(win, spatial)):
        raise DimensionError(f"maxpool3d window {win} exceeds a spatial extent of {x.shape}")
    out_sp = tuple((e - w) // s + 1 for e, w, s in zip(spatial, win, st))
    n, c = x.shape[0], x.shape[-1]
    wsize = win[0] * win[1] * win[2]
    xd = x.data

    if win == st:
        used = tuple(o * w for o, w in zip(out_sp, win))
        crop = xd[:, :used[0], :used[1], :used[2], :]
        blocks = crop.reshape(n, out_sp[0], win[0], out_sp[1], win[1], out_sp[2], win[2], c)
        blocks = blocks.transpose(0, 1, 3, 5, 7, 2, 4, 6).reshape(n, *out_sp, c, wsize)
        arg = blocks.argmax(axis=-1)
        note_decision(arg)
        out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

        def backward(g):
            onehot = np.zeros((n, *out_sp, c, wsize), dtype=g.dtype)
            np.put_along_axis(onehot, arg[..., None], g[..., None], axis=-1)
            onehot = onehot.reshape(n, *out_sp, c, *win).transpose(0, 1, 5, 2, 6, 3, 7, 4)
            dx = np.zeros(xd.shape, dtype=g.dtype)
            dx[:, :used[0], :used[1], :used[2], :] = onehot.reshape(n, *used, c)
            return (dx,)
    else:
        view = sliding_window_view(xd, win, axis=(1, 2, 3))[:, ::st[0], ::st[1], ::st[2]]
        flat = view.reshape(n, *out_sp, c, wsize)
        arg = flat.argmax(axis=-1)
        note_decision(arg)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

        def backward(g):
            ax, ay, az = np.unravel_index(arg, win)
            nn, ow, oh, od, cc = np.indices(arg.shape, sparse=False)
            dx = np.zeros(xd.shape, dtype=g.dtype)
            np.add.at(dx, (nn, ow * st[0] + ax, oh * st[1] + ay, od * st[2] + az, cc), g)
            return (dx,)

    result = Tensor.from_op(out, (x,), backward, "maxpool3d")
    return result.reshape(result.shape[1:]) if squeeze else result


def dense(x: Tensor, weights: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map ``x @ weights + bias`` for ``x`` of shape (n,) or (N, n)."""
    weights = as_tensor(weights, x.dtype)
    if weights.ndim != 2 or x.shape[-1] != weights.shape[0]:
        raise DimensionError(f"dense input {x.shape} does not match weights {weights.shape}")
    if bias is not None and bias.shape != (weights.shape[1],):
        raise DimensionError(f"dense bias {bias.shape} does not match weights {weights.shape}")
    xd, wd = x.data, weights.data
    out = xd @ wd
    if bias is not None:
        out = out + bias.data
    parents = (x, weights) if bias is None else (x, weights, bias)

    def backward(g):
        dx = g @ wd.T
        if xd.ndim == 1:
            dw = np.outer(xd, g)
            db = g
        else:
            dw = xd.T @ g
            db = g.sum(axis=0)
        return (dx, dw) if bias is None else (dx, dw, db)

    return Tensor.from_op(out, parents, backward, "dense")


def relu(x: Tensor) -> Tensor:
    # subgradient at exactly 0 is 0
    mask = x.data > 0
    note_decision(mask)
    return Tensor.from_op(np.where(mask, x.data, 0.0).astype(x.dtype, copy=False), (x,),
                          lambda g: (g * mask,), "relu")


def check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    return mode


def check_rate(rate: float) -> float:
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must satisfy 0 <= rate < 1, got {rate}")
    return float(rate)


def dropout(x: Tensor, rate: float, mode: str = "train",
            rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)``.

    ``eval`` mode and ``rate == 0`` return ``x`` unchanged.  ``train`` and
    ``mc`` draw a fresh Bernoulli mask from ``rng`` on every call.
    """
    check_rate(rate)
    check_mode(mode)
    if mode == "eval" or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in train/mc mode needs an rng")
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) * (1.0 / (1.0 - rate))
    return Tensor.from_op(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


def flatten(x: Tensor) -> Tensor:
    """Flatten all axes after the batch axis."""
    return x.reshape(x.shape[0], -1)


def lateral_flip_volume(x: Tensor) -> Tensor:
    """Reverse the lateral (W) axis of a batched ``(N, W, H, D, C)`` volume."""
    return Tensor.from_op(x.data[:, ::-1].copy(), (x,), lambda g: (g[:, ::-1].copy(),), "flip")
