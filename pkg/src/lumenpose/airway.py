"""Procedural branching airways and arc-length navigation along their centerline.

Each branch is a rounded cone (a capsule whose radius tapers linearly), which
gives a closed-form signed distance. Trees are pure functions of
:class:`PatientSpec`.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .pose import EulerAngles, Pose, Position, axis_rotation, rotation_to_euler

TRACHEA_RADIUS_RATIO = 0.13
LENGTH_RATIO = 0.68
SAMPLES_PER_SEGMENT = 64
CONTROL_POINTS_PER_BRANCH = 3
DEFAULT_DELTA_D = 4.0


class ConfigError(ValueError):
    pass


class LobeLabel(str, enum.Enum):
    UPPER_RIGHT = "UpperRight"
    LOWER_RIGHT = "LowerRight"
    UPPER_LEFT = "UpperLeft"
    LOWER_LEFT = "LowerLeft"


@dataclass(frozen=True)
class PatientSpec:
    seed: int
    scale: float = 60.0
    branching_levels: int = 4
    angle_jitter: float = 0.12
    radius_taper: float = 0.8

    def validate(self) -> None:
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ConfigError(f"patient scale must be positive, got {self.scale}")
        if not 4 <= self.branching_levels <= 6:
            raise ConfigError(f"branching_levels must be in [4, 6], got {self.branching_levels}")
        if not 0.0 < self.radius_taper < 1.0:
            raise ConfigError(f"radius_taper must be in (0, 1), got {self.radius_taper}")
        if self.angle_jitter < 0:
            raise ConfigError("angle_jitter must be non-negative")


@dataclass(frozen=True)
class Branch:
    id: int
    parent_id: int | None
    start: Position
    end: Position
    start_radius: float
    end_radius: float
    level: int
    lobe: LobeLabel | None

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.end.as_array() - self.start.as_array()))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["start"] = list(self.start.as_array())
        d["end"] = list(self.end.as_array())
        d["lobe"] = self.lobe.value if self.lobe else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Branch":
        return cls(
            int(d["id"]), None if d["parent_id"] is None else int(d["parent_id"]),
            Position.from_array(d["start"]), Position.from_array(d["end"]),
            float(d["start_radius"]), float(d["end_radius"]), int(d["level"]),
            LobeLabel(d["lobe"]) if d["lobe"] else None,
        )


@dataclass(frozen=True)
class AirwayTree:
    branches: tuple
    scale: float
    spec: PatientSpec | None = None
    _arrays: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        starts = np.array([b.start.as_array() for b in self.branches])
        ends = np.array([b.end.as_array() for b in self.branches])
        object.__setattr__(self, "_arrays", {
            "a": starts, "b": ends,
            "r1": np.array([b.start_radius for b in self.branches]),
            "r2": np.array([b.end_radius for b in self.branches]),
        })

    @property
    def root(self) -> Branch:
        return self.branches[0]

    def children(self, branch_id: int) -> list:
        return [b for b in self.branches if b.parent_id == branch_id]

    def lobes(self) -> set:
        return {b.lobe for b in self.branches if b.lobe is not None}

    @property
    def max_level(self) -> int:
        return max(b.level for b in self.branches)

    def branch_arrays(self, subset=None) -> dict:
        if subset is None:
            return self._arrays
        return {k: v[subset] for k, v in self._arrays.items()}

    def to_json(self) -> str:
        doc = {
            "scale": self.scale,
            "spec": asdict(self.spec) if self.spec else None,
            "branches": [b.to_dict() for b in self.branches],
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "AirwayTree":
        doc = json.loads(text)
        spec = PatientSpec(**doc["spec"]) if doc.get("spec") else None
        return cls(tuple(Branch.from_dict(b) for b in doc["branches"]), float(doc["scale"]), spec)


def _perpendicular(d: np.ndarray, hint: np.ndarray) -> np.ndarray:
    m = hint - np.dot(hint, d) * d
    n = np.linalg.norm(m)
    if n < 1e-9:
        alt = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        m = alt - np.dot(alt, d) * d
        n = np.linalg.norm(m)
    return m / n


def generate_patient(spec: PatientSpec) -> AirwayTree:
    """Recursive bifurcation from a trachea pointing along -z.

    Level 1 holds the main bronchi, level 2 the four lobar bronchi, and every
    lobe keeps bifurcating until ``spec.branching_levels``.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    r0 = TRACHEA_RADIUS_RATIO * spec.scale
    taper = spec.radius_taper
    branches: list[Branch] = []

    def jitter() -> float:
        return float(rng.uniform(-spec.angle_jitter, spec.angle_jitter))

    def add(parent: int | None, start: np.ndarray, d: np.ndarray, level: int, lobe) -> int:
        length = spec.scale * LENGTH_RATIO ** level * (1.0 + 0.1 * float(rng.uniform(-1, 1)))
        length = max(length, 2.5 * r0 * taper ** level)
        end = start + length * d
        bid = len(branches)
        branches.append(Branch(
            bid, parent, Position.from_array(start), Position.from_array(end),
            r0 * taper ** level, r0 * taper ** (level + 0.5), level, lobe,
        ))
        return bid

    def grow(bid: int, d: np.ndarray, plane: np.ndarray, lobe) -> None:
        b = branches[bid]
        if b.level >= spec.branching_levels:
            return
        # alternate bifurcation planes by ~90 degrees each generation
        spin = axis_rotation(d, math.pi / 2 + jitter())
        m = _perpendicular(d, spin @ plane)
        for sign, base in ((1.0, math.radians(32)), (-1.0, math.radians(28))):
            theta = base + jitter()
            cd = axis_rotation(np.cross(d, m), sign * theta) @ d
            cd /= np.linalg.norm(cd)
            child = add(bid, b.end.as_array(), cd, b.level + 1, lobe)
            grow(child, cd, m, lobe)

    down = np.array([0.0, 0.0, -1.0])
    trachea = add(None, np.zeros(3), down, 0, None)
    lateral = np.array([1.0, 0.0, 0.0])
    anterior = np.array([0.0, 1.0, 0.0])
    # right lung toward -x, left toward +x; the right main bronchus is steeper
    for side, main_angle, upper, lower in (
        (-1.0, math.radians(25), LobeLabel.UPPER_RIGHT, LobeLabel.LOWER_RIGHT),
        (1.0, math.radians(40), LobeLabel.UPPER_LEFT, LobeLabel.LOWER_LEFT),
    ):
        axis = np.cross(down, side * lateral)
        md = axis_rotation(axis, main_angle + jitter()) @ down
        main = add(trachea, branches[trachea].end.as_array(), md, 1, None)
        out = _perpendicular(md, side * lateral)
        for lobe, angle in ((upper, math.radians(45)), (lower, math.radians(-20))):
            ld = axis_rotation(np.cross(md, out), angle + jitter()) @ md
            ld /= np.linalg.norm(ld)
            lb = add(main, branches[main].end.as_array(), ld, 2, lobe)
            grow(lb, ld, _perpendicular(ld, anterior), lobe)
    return AirwayTree(tuple(branches), float(spec.scale), spec)


def rounded_cone_sdf(p: np.ndarray, a: np.ndarray, b: np.ndarray, r1: np.ndarray, r2: np.ndarray) -> np.ndarray:
    """Exact signed distance from points ``p`` (P, 3) to rounded cones (B,); returns (P, B).

    Closed form for the convex hull of two spheres (centre ``a`` radius ``r1``,
    centre ``b`` radius ``r2``), valid while ``|r1 - r2| < |b - a|``.
    """
    ba = b - a                                   # (B, 3)
    l2 = np.sum(ba * ba, axis=-1)                # (B,)
    rr = r1 - r2
    a2 = l2 - rr * rr
    il2 = 1.0 / l2
    pa = p[:, None, :] - a[None, :, :]           # (P, B, 3)
    y = np.einsum("pbk,bk->pb", pa, ba)
    z = y - l2
    q = pa * l2[None, :, None] - ba[None, :, :] * y[..., None]
    x2 = np.einsum("pbk,pbk->pb", q, q)
    y2 = y * y * l2
    z2 = z * z * l2
    k = np.sign(rr) * rr * rr * x2
    d_end = np.sqrt(x2 + z2) * il2 - r2
    d_start = np.sqrt(x2 + y2) * il2 - r1
    d_side = (np.sqrt(np.maximum(x2 * a2 * il2, 0.0)) + y * rr) * il2 - r1
    return np.where(np.sign(z) * a2 * z2 > k, d_end, np.where(np.sign(y) * a2 * y2 < k, d_start, d_side))


def signed_distance(tree: AirwayTree, point, subset=None) -> np.ndarray | float:
    """Union SDF of the tree; negative inside the lumen.

    ``point`` may be a single 3-vector (returns float) or an (P, 3) array.
    """
    p = np.asarray(point.as_array() if isinstance(point, Position) else point, dtype=np.float64)
    single = p.ndim == 1
    arr = tree.branch_arrays(subset)
    d = rounded_cone_sdf(p.reshape(-1, 3), arr["a"], arr["b"], arr["r1"], arr["r2"]).min(axis=1)
    return float(d[0]) if single else d


def sdf_gradient(tree: AirwayTree, points: np.ndarray, subset=None, h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of the union SDF at (P, 3) points."""
    g = np.empty_like(points)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        g[:, k] = (signed_distance(tree, points + e, subset) - signed_distance(tree, points - e, subset)) / (2 * h)
    return g


# -- navigation --------------------------------------------------------------------
class NavigationPath:
    """Cubic spline through centerline control points, indexed by arc length."""

    def __init__(self, control_points, samples_per_segment: int = SAMPLES_PER_SEGMENT,
                 up_hint=(0.0, 1.0, 0.0)):
        pts = np.asarray(control_points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 2:
            raise ValueError("need at least two 3D control points")
        chords = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if np.any(chords <= 0):
            raise ValueError("control points must be distinct")
        self.control_points = pts
        knots = np.concatenate([[0.0], np.cumsum(chords)])
        self.spline = CubicSpline(knots, pts, axis=0)
        self._deriv = self.spline.derivative()
        u = np.concatenate([
            np.linspace(knots[i], knots[i + 1], samples_per_segment, endpoint=False)
            for i in range(len(knots) - 1)
        ] + [knots[-1:]])
        points = self.spline(u)
        seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
        self.u_table = u
        self.s_table = np.concatenate([[0.0], np.cumsum(seg)])
        self.points_table = points
        tang = self._deriv(u)
        self.tangents_table = tang / np.linalg.norm(tang, axis=1, keepdims=True)
        self.up_table = self._rotation_minimizing_frame(np.asarray(up_hint, dtype=np.float64))

    @property
    def total_length(self) -> float:
        return float(self.s_table[-1])

    @property
    def arclen_table(self) -> tuple:
        return self.s_table, self.points_table, self.tangents_table

    def _rotation_minimizing_frame(self, hint: np.ndarray) -> np.ndarray:
        # double-reflection method over the dense samples
        x, t = self.points_table, self.tangents_table
        r = np.empty_like(x)
        r[0] = _perpendicular(t[0], hint)
        for i in range(len(x) - 1):
            v1 = x[i + 1] - x[i]
            c1 = v1 @ v1
            rl = r[i] - (2.0 / c1) * (v1 @ r[i]) * v1
            tl = t[i] - (2.0 / c1) * (v1 @ t[i]) * v1
            v2 = t[i + 1] - tl
            c2 = v2 @ v2
            r[i + 1] = rl - (2.0 / c2) * (v2 @ rl) * v2 if c2 > 1e-30 else rl
            r[i + 1] = _perpendicular(t[i + 1], r[i + 1])
        return r

    def _u(self, s):
        return np.interp(s, self.s_table, self.u_table)

    def point_at(self, s) -> np.ndarray:
        return self.spline(self._u(s))

    def tangent_at(self, s) -> np.ndarray:
        d = self._deriv(self._u(s))
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def reference_up_at(self, s: float) -> np.ndarray:
        i = int(np.clip(np.searchsorted(self.s_table, s, side="right") - 1, 0, len(self.s_table) - 2))
        w = (s - self.s_table[i]) / (self.s_table[i + 1] - self.s_table[i])
        r = (1.0 - w) * self.up_table[i] + w * self.up_table[i + 1]
        return r / np.linalg.norm(r)


def lobe_branch_chain(tree: AirwayTree, lobe: LobeLabel, rng_seed) -> list:
    """Trachea-to-leaf branch list through ``lobe``, choosing children with the seed."""
    lobe = LobeLabel(lobe)
    heads = [b for b in tree.branches if b.lobe is lobe and (b.parent_id is None or tree.branches[b.parent_id].lobe is not lobe)]
    if not heads:
        raise KeyError(f"lobe {lobe.value} not present in tree")
    rng = np.random.default_rng(rng_seed)
    chain = [heads[0]]
    while chain[0].parent_id is not None:
        chain.insert(0, tree.branches[chain[0].parent_id])
    while True:
        kids = tree.children(chain[-1].id)
        if not kids:
            return chain
        chain.append(kids[int(rng.integers(len(kids)))])


def centerline_path(tree: AirwayTree, lobe: LobeLabel, rng_seed=0) -> NavigationPath:
    """Smooth path from the trachea entrance to a terminal branch of ``lobe``."""
    chain = lobe_branch_chain(tree, lobe, rng_seed)
    pts = [chain[0].start.as_array()]
    for b in chain:
        a, e = b.start.as_array(), b.end.as_array()
        for k in range(1, CONTROL_POINTS_PER_BRANCH + 1):
            pts.append(a + (e - a) * k / CONTROL_POINTS_PER_BRANCH)
    return NavigationPath(np.array(pts))


class PathRangeError(ValueError):
    pass


def camera_frame_at(path: NavigationPath, s: float, delta_d: float = DEFAULT_DELTA_D,
                    roll: float = 0.0, offset=(0.0, 0.0, 0.0)) -> tuple:
    """Camera position and rotation matrix ``[look, left, up]`` (as columns).

    The camera sits at ``p(s) + offset`` and looks at the central-path point
    ``p(s + delta_d)``; ``roll`` turns the transported up-vector about the
    look-at axis.
    """
    tol = 1e-9 * max(1.0, path.total_length)
    if not (-tol <= s <= path.total_length - delta_d + tol) or delta_d <= 0:
        raise PathRangeError(
            f"s={s} outside [0, {path.total_length - delta_d}] for delta_d={delta_d}"
        )
    s = float(np.clip(s, 0.0, path.total_length - delta_d))
    pos = path.point_at(s) + np.asarray(offset, dtype=np.float64)
    look = path.point_at(s + delta_d) - pos
    n = np.linalg.norm(look)
    if n < 1e-9:
        raise PathRangeError("camera coincides with its look-at target")
    look = look / n
    up = _perpendicular(look, path.reference_up_at(s))
    up = math.cos(roll) * up + math.sin(roll) * np.cross(look, up)
    left = np.cross(up, look)
    return pos, np.column_stack([look, left, up])


def camera_pose_at(path: NavigationPath, s: float, delta_d: float = DEFAULT_DELTA_D,
                   roll: float = 0.0, offset=(0.0, 0.0, 0.0)) -> Pose:
    pos, r = camera_frame_at(path, s, delta_d, roll, offset)
    return Pose(Position.from_array(pos), rotation_to_euler(r))
