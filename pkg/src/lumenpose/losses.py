"""Differentiable counterparts of the scalar metrics, built on autograd tensors.

All functions take predictions ``(..., 6)`` as a Tensor and ground truth as
an array of the same shape, and return per-sample losses ``(...)``.
"""
from __future__ import annotations

import numpy as np

from .autograd import Tensor, acos_clamped, as_tensor, cos, mean, mul, sin, square, sub, tsum
from .autograd.tensor import add
from .metrics import LossCombo, MetricKind


def _split(t: Tensor):
    return t[..., :3], t[..., 3:]


def mse_last(pred: Tensor, gt) -> Tensor:
    return mean(square(sub(pred, as_tensor(gt, pred))), axis=-1)


def cosinus_loss(pred: Tensor, gt) -> Tensor:
    return mean(1.0 - cos(sub(pred, as_tensor(gt, pred))), axis=-1)


def look_at_vector(angles: Tensor) -> list:
    """First column of ``Rx(a) Ry(b) Rz(c)`` as three tensors (x, y, z)."""
    a, b, c = angles[..., 0], angles[..., 1], angles[..., 2]
    ca, sa, cb, sb, cc, sc = cos(a), sin(a), cos(b), sin(b), cos(c), sin(c)
    x = mul(cb, cc)
    sbcc = mul(sb, cc)
    y = add(mul(ca, sc), mul(sa, sbcc))
    z = sub(mul(sa, sc), mul(ca, sbcc))
    return [x, y, z]


def direction_loss(pred: Tensor, gt) -> Tensor:
    gt = np.asarray(gt, dtype=np.float64)
    a, b, c = gt[..., 0], gt[..., 1], gt[..., 2]
    ref = (np.cos(b) * np.cos(c),
           np.cos(a) * np.sin(c) + np.sin(a) * np.sin(b) * np.cos(c),
           np.sin(a) * np.sin(c) - np.cos(a) * np.sin(b) * np.cos(c))
    vx, vy, vz = look_at_vector(pred)
    dot = add(add(mul(vx, ref[0].astype(pred.dtype)), mul(vy, ref[1].astype(pred.dtype))),
              mul(vz, ref[2].astype(pred.dtype)))
    return acos_clamped(dot)


def orientation_loss(kind: MetricKind, pred: Tensor, gt) -> Tensor:
    if kind is MetricKind.ROTATION_MSE:
        return mse_last(pred, gt)
    if kind is MetricKind.DIRECTION_ERROR:
        return direction_loss(pred, gt)
    if kind is MetricKind.COSINUS_ERROR:
        return cosinus_loss(pred, gt)
    raise ValueError(f"{kind} is not an orientation loss")


def combined_loss(combo: LossCombo, pred: Tensor, gt) -> Tensor:
    """Per-sample position MSE plus orientation loss, unweighted."""
    pred = as_tensor(pred)
    gt = np.asarray(gt, dtype=np.float64)
    pos, ori = _split(pred)
    return add(mse_last(pos, gt[..., :3]), orientation_loss(combo.orientation, ori, gt[..., 3:]))


def chunk_loss(combo: LossCombo, pred: Tensor, gt) -> Tensor:
    """Scalar mean of the per-step combined loss over every step and batch entry."""
    return mean(combined_loss(combo, pred, gt))


__all__ = ["combined_loss", "chunk_loss", "orientation_loss", "direction_loss",
           "cosinus_loss", "mse_last", "look_at_vector", "tsum"]
