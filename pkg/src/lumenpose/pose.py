"""Camera pose representation: Euler angles, rotation matrices, pose deltas.

Convention: ``R = Rx(alpha) @ Ry(beta) @ Rz(gamma)``. The camera look-at axis
is the local x axis, so ``R @ (1, 0, 0)`` is the viewing direction. Angles are
radians throughout; degrees only appear at CLI/report boundaries.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

GIMBAL_THRESHOLD = 1.0 - 1e-7
ORTHONORMAL_TOL = 1e-6


class InvalidRotationError(ValueError):
    pass


def wrap_angle(a):
    """Wrap angle(s) to the half-open interval (-pi, pi]."""
    a = np.asarray(a, dtype=np.float64)
    w = np.remainder(a + np.pi, 2.0 * np.pi) - np.pi
    # remainder maps the upper edge to -pi; flip it to +pi
    w = np.where(w <= -np.pi, np.pi, w)
    return w if w.ndim else float(w)


@dataclass(frozen=True)
class EulerAngles:
    alpha: float
    beta: float
    gamma: float

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.gamma], dtype=np.float64)

    def normalized(self) -> "EulerAngles":
        return EulerAngles(*(float(v) for v in wrap_angle(self.as_array())))

    @classmethod
    def from_array(cls, a: Sequence[float]) -> "EulerAngles":
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class Position:
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    @classmethod
    def from_array(cls, a: Sequence[float]) -> "Position":
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class Pose:
    position: Position
    orientation: EulerAngles

    def as_array(self) -> np.ndarray:
        """(x, y, z, alpha, beta, gamma)."""
        return np.concatenate([self.position.as_array(), self.orientation.as_array()])

    @classmethod
    def from_array(cls, a: Sequence[float]) -> "Pose":
        return cls(Position.from_array(a[:3]), EulerAngles.from_array(a[3:6]))


@dataclass(frozen=True)
class DeltaPose:
    dp: tuple[float, float, float]
    do: tuple[float, float, float]

    def as_array(self) -> np.ndarray:
        return np.array([*self.dp, *self.do], dtype=np.float64)

    @classmethod
    def from_array(cls, a: Sequence[float]) -> "DeltaPose":
        return cls(tuple(float(v) for v in a[:3]), tuple(float(v) for v in a[3:6]))

    @classmethod
    def zero(cls) -> "DeltaPose":
        return cls((0.0, 0.0, 0.0), (0.0, 0.0, 0.0))


def _angles(e) -> np.ndarray:
    if isinstance(e, EulerAngles):
        return e.as_array()
    return np.asarray(e, dtype=np.float64)


def euler_to_rotation(e) -> np.ndarray:
    """Rotation matrix ``Rx(alpha) Ry(beta) Rz(gamma)``.

    Accepts an :class:`EulerAngles` or an array whose last axis holds
    (alpha, beta, gamma); batched input yields ``(..., 3, 3)``.
    """
    a = _angles(e)
    ca, sa = np.cos(a[..., 0]), np.sin(a[..., 0])
    cb, sb = np.cos(a[..., 1]), np.sin(a[..., 1])
    cg, sg = np.cos(a[..., 2]), np.sin(a[..., 2])
    r = np.empty(a.shape[:-1] + (3, 3), dtype=np.float64)
    r[..., 0, 0] = cb * cg
    r[..., 0, 1] = -cb * sg
    r[..., 0, 2] = sb
    r[..., 1, 0] = sa * sb * cg + ca * sg
    r[..., 1, 1] = -sa * sb * sg + ca * cg
    r[..., 1, 2] = -sa * cb
    r[..., 2, 0] = -ca * sb * cg + sa * sg
    r[..., 2, 1] = ca * sb * sg + sa * cg
    r[..., 2, 2] = ca * cb
    return r


def is_rotation(r: np.ndarray, tol: float = ORTHONORMAL_TOL) -> bool:
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        return False
    return bool(
        np.max(np.abs(r @ r.T - np.eye(3))) <= tol and abs(np.linalg.det(r) - 1.0) <= tol
    )


def rotation_to_euler(r: np.ndarray) -> EulerAngles:
    """Inverse of :func:`euler_to_rotation` with beta in [-pi/2, pi/2].

    At gimbal lock (``|R[0, 2]|`` within 1e-7 of 1) gamma is fixed to zero
    and alpha absorbs the remaining rotation.
    """
    r = np.asarray(r, dtype=np.float64)
    if not is_rotation(r):
        raise InvalidRotationError("matrix is not a proper rotation within 1e-6")
    s = float(np.clip(r[0, 2], -1.0, 1.0))
    beta = math.asin(s)
    if abs(s) > GIMBAL_THRESHOLD:
        # with gamma = 0: R[1,0] = sin(alpha) sin(beta), R[1,1] = cos(alpha)
        gamma = 0.0
        alpha = math.atan2(r[2, 1], r[1, 1])
    else:
        gamma = math.atan2(-r[0, 1], r[0, 0])
        alpha = math.atan2(-r[1, 2], r[2, 2])
    return EulerAngles(alpha, beta, gamma)


def _check_unit(u: np.ndarray, tol: float = 1e-9) -> None:
    n = float(np.linalg.norm(u))
    if not math.isfinite(n) or abs(n - 1.0) > tol:
        raise ValueError(f"direction vector must have unit norm, got |u| = {n!r}")


def direction_vector(e, u: Sequence[float] = (1.0, 0.0, 0.0)) -> np.ndarray:
    """Rotate the unit vector ``u`` by the orientation ``e`` (``R @ u``)."""
    u = np.asarray(u, dtype=np.float64)
    _check_unit(u)
    return euler_to_rotation(e) @ u


def delta_pose(a: Pose, b: Pose) -> DeltaPose:
    dp = b.position.as_array() - a.position.as_array()
    do = wrap_angle(b.orientation.as_array() - a.orientation.as_array())
    return DeltaPose.from_array(np.concatenate([dp, do]))


def delta_pose_array(poses: np.ndarray) -> np.ndarray:
    """Consecutive deltas for an ``(n, 6)`` pose array; returns ``(n - 1, 6)``."""
    poses = np.asarray(poses, dtype=np.float64)
    d = np.diff(poses, axis=0)
    d[:, 3:] = wrap_angle(d[:, 3:])
    return d


def accumulate_raw(p0, deltas: Iterable) -> np.ndarray:
    """Plain componentwise sum ``p0 + sum(deltas)`` with no angle wrapping."""
    total = p0.as_array() if isinstance(p0, Pose) else np.array(p0, dtype=np.float64)
    for d in deltas:
        total = total + (d.as_array() if isinstance(d, DeltaPose) else np.asarray(d, dtype=np.float64))
    return total


def accumulate(p0: Pose, deltas: Iterable) -> Pose:
    """Initial pose plus the sum of all deltas; angles wrapped once at the end."""
    total = accumulate_raw(p0, deltas)
    total[3:] = wrap_angle(total[3:])
    return Pose.from_array(total)


def axis_rotation(axis: Sequence[float], angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + math.sin(angle) * kx + (1.0 - math.cos(angle)) * (kx @ kx)
