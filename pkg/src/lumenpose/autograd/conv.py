"""N-d cross-correlation (2D and 3D) with groups, via im2col + batched matmul."""
from __future__ import annotations

import itertools

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, _result, as_tensor, reshape, transpose


def _tuple(v, n: int, name: str) -> tuple:
    if isinstance(v, (int, np.integer)):
        return (int(v),) * n
    v = tuple(int(i) for i in v)
    if len(v) != n:
        raise ShapeError(f"{name} must have {n} entries, got {v}")
    return v


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv_nd(x, w, b=None, stride=1, padding=0, groups: int = 1) -> Tensor:
    """Cross-correlate ``x`` (N, C, *S) with ``w`` (O, C/groups, *K).

    Output spatial size per dim is ``floor((S + 2p - k) / stride) + 1``.
    """
    x, w = as_tensor(x), as_tensor(w)
    nd = w.ndim - 2
    if nd not in (2, 3) or x.ndim != nd + 2:
        raise ShapeError(f"conv: input {x.shape} and kernel {w.shape} are not a 2D/3D pair")
    n, c = x.shape[:2]
    o, cg = w.shape[:2]
    ksize = w.shape[2:]
    stride = _tuple(stride, nd, "stride")
    padding = _tuple(padding, nd, "padding")
    if groups < 1 or c % groups or o % groups:
        raise ShapeError(f"conv: channels in={c} out={o} not divisible by groups={groups}")
    if cg != c // groups:
        raise ShapeError(f"conv: input {x.shape} has {c} channels but kernel {w.shape} expects {cg * groups}")
    padded = tuple(s + 2 * p for s, p in zip(x.shape[2:], padding))
    if any(k > s for k, s in zip(ksize, padded)) or any(s < 1 for s in stride):
        raise ShapeError(f"conv: kernel {ksize} larger than padded input {padded} or bad stride {stride}")
    out_sp = tuple(conv_output_size(s, k, st, p) for s, k, st, p in zip(x.shape[2:], ksize, stride, padding))
    og = o // groups
    kprod = int(np.prod(ksize))
    m = n * int(np.prod(out_sp))

    xp = np.pad(x.data, ((0, 0), (0, 0)) + tuple((p, p) for p in padding)) if any(padding) else x.data
    win = sliding_window_view(xp, ksize, axis=tuple(range(2, 2 + nd)))
    win = win[(slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)]
    # (N, C, *out, *K) -> (N, *out, C, *K) -> (M, G, Cg*K) -> (G, M, Cg*K)
    perm = (0,) + tuple(range(2, 2 + nd)) + (1,) + tuple(range(2 + nd, 2 + 2 * nd))
    cols = np.ascontiguousarray(win.transpose(perm)).reshape(m, groups, cg * kprod).transpose(1, 0, 2)
    wm = w.data.reshape(groups, og, cg * kprod)
    out = np.matmul(cols, wm.transpose(0, 2, 1))  # (G, M, Og)
    out = out.transpose(1, 0, 2).reshape((n,) + out_sp + (o,))
    out = np.moveaxis(out, -1, 1)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (o,):
            raise ShapeError(f"conv: bias shape {b.shape} does not match {o} output channels")
        out = out + b.data.reshape((1, o) + (1,) * nd)
    out = np.ascontiguousarray(out)

    def backward(g):
        gm = np.moveaxis(g, 1, -1).reshape(m, groups, og).transpose(1, 0, 2)  # (G, M, Og)
        gw = None
        if w.requires_grad:
            gw = np.matmul(gm.transpose(0, 2, 1), cols).reshape(w.shape)
        gx = None
        if x.requires_grad:
            dcols = np.matmul(gm, wm)  # (G, M, Cg*K)
            dcols = dcols.transpose(1, 0, 2).reshape((n,) + out_sp + (c,) + ksize)
            # back to (N, C, *out, *K)
            inv = (0, nd + 1) + tuple(range(1, nd + 1)) + tuple(range(nd + 2, 2 * nd + 2))
            dcols = dcols.transpose(inv)
            gxp = np.zeros(xp.shape, dtype=x.dtype)
            for koff in itertools.product(*(range(k) for k in ksize)):
                dst = (slice(None), slice(None)) + tuple(
                    slice(k, k + st * (osz - 1) + 1, st) for k, st, osz in zip(koff, stride, out_sp)
                )
                gxp[dst] += dcols[(Ellipsis,) + koff]
            crop = (slice(None), slice(None)) + tuple(
                slice(p, p + s) for p, s in zip(padding, x.shape[2:])
            )
            gx = gxp[crop]
        gb = g.sum(axis=(0,) + tuple(range(2, 2 + nd))) if b is not None and b.requires_grad else None
        return (gx, gw) if b is None else (gx, gw, gb)

    parents = (x, w) if b is None else (x, w, b)
    return _result(out, parents, backward, f"conv{nd}d")


def conv2d(x, w, b=None, stride=1, padding=0, groups: int = 1) -> Tensor:
    if as_tensor(w).ndim != 4:
        raise ShapeError(f"conv2d: kernel must be (O, C, kh, kw), got {as_tensor(w).shape}")
    return conv_nd(x, w, b, stride, padding, groups)


def conv3d(x, w, b=None, stride=1, padding=0, groups: int = 1) -> Tensor:
    if as_tensor(w).ndim != 5:
        raise ShapeError(f"conv3d: kernel must be (O, C, kt, kh, kw), got {as_tensor(w).shape}")
    return conv_nd(x, w, b, stride, padding, groups)


def grouped_conv2d(x, w, b=None, groups: int = 1, stride=1, padding=0) -> Tensor:
    return conv_nd(x, w, b, stride, padding, groups)


def channel_shuffle(x, groups: int) -> Tensor:
    """Interleave channel groups: index ``g * (C // G) + i`` moves to ``i * G + g``."""
    x = as_tensor(x)
    c = x.shape[1]
    if groups < 1 or c % groups:
        raise ShapeError(f"channel_shuffle: {c} channels not divisible by {groups} groups")
    rest = x.shape[2:]
    y = reshape(x, (x.shape[0], groups, c // groups) + rest)
    y = transpose(y, (0, 2, 1) + tuple(range(3, 3 + len(rest))))
    return reshape(y, (x.shape[0], c) + rest)
