"""Scalar position and rotation error functions.

The same quantities double as training losses; their differentiable
counterparts live in :mod:`lumenpose.losses`.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .pose import DeltaPose, _check_unit, direction_vector, euler_to_rotation


class MetricKind(str, enum.Enum):
    POSITION_L2 = "PositionL2"
    POSITION_MSE = "PositionMSE"
    ROTATION_L2 = "RotationL2"
    ROTATION_MSE = "RotationMSE"
    DIRECTION_ERROR = "DirectionError"
    COSINUS_ERROR = "CosinusError"


ORIENTATION_LOSSES = (MetricKind.ROTATION_MSE, MetricKind.DIRECTION_ERROR, MetricKind.COSINUS_ERROR)


@dataclass(frozen=True)
class LossCombo:
    position: MetricKind = MetricKind.POSITION_MSE
    orientation: MetricKind = MetricKind.COSINUS_ERROR

    def __post_init__(self):
        if self.position is not MetricKind.POSITION_MSE:
            raise ValueError("position loss must be PositionMSE")
        if self.orientation not in ORIENTATION_LOSSES:
            raise ValueError(f"unsupported orientation loss {self.orientation}")

    @property
    def name(self) -> str:
        return {
            MetricKind.ROTATION_MSE: "mse-mse",
            MetricKind.DIRECTION_ERROR: "mse-de",
            MetricKind.COSINUS_ERROR: "mse-ce",
        }[self.orientation]

    @classmethod
    def parse(cls, name: str) -> "LossCombo":
        table = {
            "mse-mse": MetricKind.ROTATION_MSE,
            "mse-de": MetricKind.DIRECTION_ERROR,
            "mse-ce": MetricKind.COSINUS_ERROR,
        }
        if name not in table:
            raise ValueError(f"unknown loss combo {name!r}; expected one of {sorted(table)}")
        return cls(MetricKind.POSITION_MSE, table[name])


ALL_LOSS_COMBOS = tuple(LossCombo.parse(n) for n in ("mse-mse", "mse-de", "mse-ce"))


def _vec(v) -> np.ndarray:
    return np.asarray(v, dtype=np.float64)


def _l2_or_mse(diff: np.ndarray, l2: bool):
    if l2:
        return np.sqrt(np.sum(diff * diff, axis=-1))
    return np.mean(diff * diff, axis=-1)


def position_error(est, gt, kind: MetricKind = MetricKind.POSITION_L2):
    """Euclidean norm (L2) or mean squared error over (x, y, z) differences."""
    if kind not in (MetricKind.POSITION_L2, MetricKind.POSITION_MSE):
        raise ValueError(f"{kind} is not a position metric")
    return _l2_or_mse(_vec(est) - _vec(gt), kind is MetricKind.POSITION_L2)


def rotation_error_l2(est, gt, kind: MetricKind = MetricKind.ROTATION_L2):
    """L2 / MSE over raw (unwrapped) Euler angle differences."""
    if kind not in (MetricKind.ROTATION_L2, MetricKind.ROTATION_MSE):
        raise ValueError(f"{kind} is not an L2-type rotation metric")
    return _l2_or_mse(_vec(est) - _vec(gt), kind is MetricKind.ROTATION_L2)


def direction_error(est, gt, u=(1.0, 0.0, 0.0)):
    """Angle in [0, pi] between the look-at vectors of two orientations.

    Rotations about ``u`` itself are invisible to this metric.
    """
    u = _vec(u)
    _check_unit(u)
    ve = euler_to_rotation(_vec(est)) @ u
    vg = euler_to_rotation(_vec(gt)) @ u
    # atan2 form equals arccos(dot) for unit vectors but stays accurate near 0 and pi
    cross = np.linalg.norm(np.cross(ve, vg), axis=-1)
    return np.arctan2(cross, np.sum(ve * vg, axis=-1))


def cosinus_error(est, gt):
    """Mean over the three angles of ``1 - cos(est_i - gt_i)``; lies in [0, 2]."""
    return np.mean(1.0 - np.cos(_vec(est) - _vec(gt)), axis=-1)


def orientation_loss(kind: MetricKind, est, gt):
    if kind is MetricKind.ROTATION_MSE:
        return rotation_error_l2(est, gt, MetricKind.ROTATION_MSE)
    if kind is MetricKind.DIRECTION_ERROR:
        return direction_error(est, gt)
    if kind is MetricKind.COSINUS_ERROR:
        return cosinus_error(est, gt)
    raise ValueError(f"{kind} is not an orientation loss")


def _as6(p) -> np.ndarray:
    return p.as_array() if isinstance(p, DeltaPose) else _vec(p)


def combined_loss(combo: LossCombo, pred, gt):
    """Position MSE plus the configured orientation loss, unweighted."""
    p, g = _as6(pred), _as6(gt)
    pos = position_error(p[..., :3], g[..., :3], MetricKind.POSITION_MSE)
    return pos + orientation_loss(combo.orientation, p[..., 3:], g[..., 3:])


# re-exported for callers that only import metrics
__all__ = [
    "MetricKind",
    "LossCombo",
    "ALL_LOSS_COMBOS",
    "position_error",
    "rotation_error_l2",
    "direction_error",
    "cosinus_error",
    "orientation_loss",
    "combined_loss",
    "direction_vector",
]
