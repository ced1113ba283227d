"""Sphere-traced grayscale frames from inside the airway lumen.

Shading is Lambertian under a headlight at the camera with inverse-square
falloff, tone-mapped to 8 bits and replicated to three channels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

from .airway import AirwayTree, rounded_cone_sdf, signed_distance
from .pose import Pose, euler_to_rotation

MAX_STEPS = 128
HIT_EPS_FACTOR = 1e-3
ALBEDO = 1.0
LIGHT_REF_FACTOR = 2.0
FAR_FACTOR = 1.0


class RenderError(RuntimeError):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    width: int = 64
    height: int = 64
    vertical_fov: float = math.radians(80.0)
    near_clip: float = 0.05

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ValueError("frame size must be at least 8x8")
        if not 0.0 < self.vertical_fov < math.pi:
            raise ValueError("vertical_fov must be in (0, pi)")
        if self.near_clip < 0:
            raise ValueError("near_clip must be non-negative")


@dataclass(frozen=True)
class Frame:
    width: int
    height: int
    pixels: np.ndarray  # (H, W, 3) uint8

    def __eq__(self, other):
        return (isinstance(other, Frame) and self.width == other.width and self.height == other.height
                and np.array_equal(self.pixels, other.pixels))

    def gray(self) -> np.ndarray:
        return self.pixels[..., 0]


def camera_rays(rot: np.ndarray, cam: CameraIntrinsics) -> np.ndarray:
    """Unit ray directions (H*W, 3), row-major from the top-left pixel.

    Camera axes: ``rot[:, 0]`` look-at, ``rot[:, 1]`` left, ``rot[:, 2]`` up.
    """
    th = math.tan(cam.vertical_fov / 2)
    aspect = cam.width / cam.height
    px = ((np.arange(cam.width) + 0.5) / cam.width * 2 - 1) * th * aspect
    py = (1 - (np.arange(cam.height) + 0.5) / cam.height * 2) * th
    gx, gy = np.meshgrid(px, py)
    look, left, up = rot[:, 0], rot[:, 1], rot[:, 2]
    d = look[None, :] - gx.reshape(-1, 1) * left[None, :] + gy.reshape(-1, 1) * up[None, :]
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _near_branches(tree: AirwayTree, origin: np.ndarray, far: float) -> np.ndarray:
    # every marched point stays inside the lumen within `far` of the origin,
    # where any branch whose surface is further than `far` is positive
    arr = tree.branch_arrays()
    d = rounded_cone_sdf(origin[None, :], arr["a"], arr["b"], arr["r1"], arr["r2"])[0]
    return np.nonzero(d <= far)[0]


@njit(cache=True)
def _cone_sdf(px, py, pz, a, b, r1, r2):
    best = np.inf
    for j in range(a.shape[0]):
        bax = b[j, 0] - a[j, 0]
        bay = b[j, 1] - a[j, 1]
        baz = b[j, 2] - a[j, 2]
        l2 = bax * bax + bay * bay + baz * baz
        rr = r1[j] - r2[j]
        a2 = l2 - rr * rr
        il2 = 1.0 / l2
        pax = px - a[j, 0]
        pay = py - a[j, 1]
        paz = pz - a[j, 2]
        y = pax * bax + pay * bay + paz * baz
        z = y - l2
        qx = pax * l2 - bax * y
        qy = pay * l2 - bay * y
        qz = paz * l2 - baz * y
        x2 = qx * qx + qy * qy + qz * qz
        y2 = y * y * l2
        z2 = z * z * l2
        k = np.sign(rr) * rr * rr * x2
        if np.sign(z) * a2 * z2 > k:
            d = np.sqrt(x2 + z2) * il2 - r2[j]
        elif np.sign(y) * a2 * y2 < k:
            d = np.sqrt(x2 + y2) * il2 - r1[j]
        else:
            d = (np.sqrt(max(x2 * a2 * il2, 0.0)) + y * rr) * il2 - r1[j]
        if d < best:
            best = d
    return best


@njit(cache=True)
def _march(origin, dirs, a, b, r1, r2, near, eps, far, max_steps):
    n = dirs.shape[0]
    t_out = np.empty(n)
    hit = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        t = near
        done = False
        for _ in range(max_steps):
            d = -_cone_sdf(origin[0] + t * dirs[i, 0], origin[1] + t * dirs[i, 1],
                           origin[2] + t * dirs[i, 2], a, b, r1, r2)
            if d < eps:
                done = True
                hit[i] = True
                break
            t += d
            if t > far:
                done = True
                break
        if not done:
            # ran out of steps while grazing a wall
            hit[i] = True
        t_out[i] = t
    return t_out, hit


@njit(cache=True)
def _shade(origin, dirs, t, hit, a, b, r1, r2, h, ref, albedo):
    n = dirs.shape[0]
    out = np.zeros(n)
    for i in range(n):
        if not hit[i]:
            continue
        px = origin[0] + t[i] * dirs[i, 0]
        py = origin[1] + t[i] * dirs[i, 1]
        pz = origin[2] + t[i] * dirs[i, 2]
        gx = _cone_sdf(px + h, py, pz, a, b, r1, r2) - _cone_sdf(px - h, py, pz, a, b, r1, r2)
        gy = _cone_sdf(px, py + h, pz, a, b, r1, r2) - _cone_sdf(px, py - h, pz, a, b, r1, r2)
        gz = _cone_sdf(px, py, pz + h, a, b, r1, r2) - _cone_sdf(px, py, pz - h, a, b, r1, r2)
        norm = np.sqrt(gx * gx + gy * gy + gz * gz)
        if norm <= 0.0:
            continue
        # inward normal is -grad and the light direction is -ray
        lam = (gx * dirs[i, 0] + gy * dirs[i, 1] + gz * dirs[i, 2]) / norm
        if lam <= 0.0:
            continue
        dist = max(t[i], 1e-6)
        out[i] = albedo * lam * (ref / dist) ** 2
    return out


def trace_depth(tree: AirwayTree, origin: np.ndarray, dirs: np.ndarray, cam: CameraIntrinsics):
    """Sphere-trace rays; returns ``(t, hit, branch_subset)``. Rays past the far distance miss."""
    far = FAR_FACTOR * tree.scale
    subset = _near_branches(tree, origin, far)
    arr = tree.branch_arrays(subset)
    t, hit = _march(origin, dirs, arr["a"], arr["b"], arr["r1"], arr["r2"],
                    float(cam.near_clip), HIT_EPS_FACTOR * tree.scale, far, MAX_STEPS)
    return t, hit, subset


def shade(tree: AirwayTree, origin: np.ndarray, dirs: np.ndarray, t: np.ndarray, hit: np.ndarray,
          subset) -> np.ndarray:
    arr = tree.branch_arrays(subset)
    return _shade(origin, dirs, t, hit, arr["a"], arr["b"], arr["r1"], arr["r2"],
                  1e-4 * tree.scale, LIGHT_REF_FACTOR * tree.root.start_radius, ALBEDO)


def tone_map(radiance: np.ndarray) -> np.ndarray:
    return np.floor(255.0 * (1.0 - np.exp(-radiance)) + 0.5).clip(0, 255).astype(np.uint8)


def render(tree: AirwayTree, pose: Pose, cam: CameraIntrinsics = CameraIntrinsics()) -> Frame:
    origin = pose.position.as_array()
    if not signed_distance(tree, origin) < 0:
        raise RenderError(f"camera at {origin.tolist()} is outside the lumen")
    rot = euler_to_rotation(pose.orientation)
    dirs = camera_rays(rot, cam)
    t, hit, subset = trace_depth(tree, origin, dirs, cam)
    gray = tone_map(shade(tree, origin, dirs, t, hit, subset)).reshape(cam.height, cam.width)
    return Frame(cam.width, cam.height, np.repeat(gray[..., None], 3, axis=2))


def render_trajectory(tree: AirwayTree, poses: Sequence[Pose], cam: CameraIntrinsics = CameraIntrinsics()) -> list:
    frames = []
    for i, pose in enumerate(poses):
        try:
            frames.append(render(tree, pose, cam))
        except RenderError as exc:
            raise RenderError(f"frame {i}: {exc}") from exc
    return frames


# -- PPM (P6) -------------------------------------------------------------------
def encode_ppm(frame: Frame) -> bytes:
    header = f"P6\n{frame.width} {frame.height}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(frame.pixels, dtype=np.uint8).tobytes()


def write_ppm(path, frame: Frame) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_ppm(frame))


def decode_ppm(raw: bytes) -> Frame:
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise ValueError("only binary P6 with maxval 255 is supported")
    w, h = int(tokens[1]), int(tokens[2])
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h * 3, offset=pos + 1)
    return Frame(w, h, data.reshape(h, w, 3).copy())


def read_ppm(path) -> Frame:
    return decode_ppm(Path(path).read_bytes())
