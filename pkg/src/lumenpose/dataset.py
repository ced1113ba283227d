"""Synthetic navigation datasets: variation grid, trajectories, splits, chunks.

On-disk layout::

    root/manifest.json
    root/{patient}/airway.json
    root/{patient}/{lobe}/{traj_id}/NNNNNN.ppm
    root/{patient}/{lobe}/{traj_id}/poses.jsonl
"""
from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .airway import (
    DEFAULT_DELTA_D,
    AirwayTree,
    ConfigError,
    LobeLabel,
    NavigationPath,
    PatientSpec,
    camera_pose_at,
    centerline_path,
    generate_patient,
    sdf_gradient,
    signed_distance,
)
from .pose import DeltaPose, Pose, delta_pose, delta_pose_array
from .render import CameraIntrinsics, Frame, read_ppm, render, write_ppm

log = logging.getLogger(__name__)

OFFSETS = (-2, -1, 0, 1, 2)
ROLLS_DEG = (-45, -30, -15, 0, 15, 30, 45)
PAPER_TRAJECTORIES_PER_LOBE = 876
CLAMP_MARGIN = 0.5


# -- variations -------------------------------------------------------------------
@dataclass(frozen=True)
class VariationSpec:
    offset: tuple = (0, 0, 0)
    roll: int = 0  # degrees
    is_central: bool = False

    def __post_init__(self):
        if self.is_central and (tuple(self.offset) != (0, 0, 0) or self.roll != 0):
            raise ValueError("the central variation has zero offset and zero roll")

    @property
    def roll_rad(self) -> float:
        return math.radians(self.roll)

    def to_dict(self) -> dict:
        return {"offset": list(self.offset), "roll": self.roll, "is_central": self.is_central}

    @classmethod
    def from_dict(cls, d: dict) -> "VariationSpec":
        return cls(tuple(int(v) for v in d["offset"]), int(d["roll"]), bool(d["is_central"]))


CENTRAL = VariationSpec((0, 0, 0), 0, True)


def enumerate_variations() -> list:
    """The central path followed by the 5x5x5 offset by 7 roll grid (876 specs)."""
    grid = [
        VariationSpec((x, y, z), r)
        for x, y, z in itertools.product(OFFSETS, repeat=3)
        for r in ROLLS_DEG
    ]
    return [CENTRAL] + grid


def are_neighbors(a: VariationSpec, b: VariationSpec) -> bool:
    """Grid adjacency: each offset axis differs by at most 1 voxel, roll by at most 15 degrees."""
    return (max(abs(p - q) for p, q in zip(a.offset, b.offset)) <= 1
            and abs(a.roll - b.roll) <= 15)


# -- trajectories -------------------------------------------------------------------
@dataclass
class TrajectorySpec:
    patient_seed: int
    lobe: LobeLabel
    variation_schedule: list  # [((s0, s1), VariationSpec)]
    velocity_profile: list  # arc-length increments per frame
    traj_id: str = ""

    def variation_at(self, s: float) -> VariationSpec:
        for (s0, s1), v in self.variation_schedule:
            if s0 <= s < s1:
                return v
        return self.variation_schedule[-1][1]

    def arc_positions(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.velocity_profile)])


def velocity_profile(rng: np.random.Generator, n_frames: int, available: float,
                     speed_jitter: float = 0.4, coverage=(0.75, 1.0)) -> list:
    """Smoothly varying positive arc-length increments covering part of the path."""
    if n_frames < 2:
        raise ConfigError("a trajectory needs at least two frames")
    knots = rng.uniform(1 - speed_jitter, 1 + speed_jitter, size=5)
    speed = np.interp(np.linspace(0, 4, n_frames - 1), np.arange(5), knots)
    frac = rng.uniform(*coverage)
    steps = speed / speed.sum() * available * frac
    return [float(v) for v in steps]


def combine_variations(seed, path: NavigationPath, variations: Sequence[VariationSpec],
                       n_intervals=(4, 8), *, n_frames: int = 60, delta_d: float = DEFAULT_DELTA_D,
                       patient_seed: int = 0, lobe: LobeLabel = LobeLabel.LOWER_RIGHT,
                       traj_id: str = "") -> TrajectorySpec:
    """Random piecewise schedule of neighbouring variations along the arc length.

    The first variation is uniform over ``variations``; each later one is
    uniform over the grid neighbours of its predecessor.
    """
    if not variations:
        raise ValueError("need at least one variation")
    rng = np.random.default_rng(seed)
    total = path.total_length
    k = int(rng.integers(n_intervals[0], n_intervals[1] + 1))
    cuts = np.sort(rng.uniform(0.0, total, size=k - 1))
    edges = np.concatenate([[0.0], cuts, [total]])
    current = variations[int(rng.integers(len(variations)))]
    schedule = []
    for i in range(k):
        if i > 0:
            nbrs = [v for v in variations if v != current and are_neighbors(v, current)]
            if nbrs:
                current = nbrs[int(rng.integers(len(nbrs)))]
        schedule.append(((float(edges[i]), float(edges[i + 1])), current))
    profile = velocity_profile(rng, n_frames, total - delta_d)
    return TrajectorySpec(patient_seed, LobeLabel(lobe), schedule, profile, traj_id)


def clamp_inside(tree: AirwayTree, point: np.ndarray, margin: float = CLAMP_MARGIN,
                 max_iter: int = 50) -> tuple:
    """Project ``point`` along the SDF normal until ``sdf <= -margin``."""
    p = np.asarray(point, dtype=np.float64).copy()
    clamped = False
    for _ in range(max_iter):
        d = signed_distance(tree, p)
        if d <= -margin:
            return p, clamped
        g = sdf_gradient(tree, p[None, :])[0]
        p = p - (d + margin * 1.05) * g / max(float(g @ g), 1e-12)
        clamped = True
    raise RuntimeError(f"could not bring {point.tolist()} inside the lumen")


@dataclass
class TrajectoryResult:
    poses: list
    frames: list
    arc: list
    variations: list
    clamp_events: list = field(default_factory=list)


def synthesize_trajectory(tree: AirwayTree, path: NavigationPath, spec: TrajectorySpec,
                          cam: CameraIntrinsics | None = CameraIntrinsics(),
                          delta_d: float = DEFAULT_DELTA_D) -> TrajectoryResult:
    """Poses (and frames unless ``cam`` is None) along the scheduled variations.

    The offset moves the camera; its look-at target stays on the central path.
    """
    arc = spec.arc_positions()
    poses, variations, events = [], [], []
    for k, s in enumerate(arc):
        v = spec.variation_at(s)
        central = path.point_at(s)
        offset = np.asarray(v.offset, dtype=np.float64)
        if np.any(offset):
            moved, clamped = clamp_inside(tree, central + offset)
            if clamped:
                log.info("%s frame %d: offset %s clamped into lumen", spec.traj_id, k, v.offset)
                events.append(k)
            offset = moved - central
        poses.append(camera_pose_at(path, float(s), delta_d, v.roll_rad, offset))
        variations.append(v)
    frames = [] if cam is None else [render(tree, p, cam) for p in poses]
    return TrajectoryResult(poses, frames, [float(s) for s in arc], variations, events)


# -- configuration --------------------------------------------------------------------
@dataclass
class DatasetConfig:
    seed: int = 0
    n_patients: int = 2
    lobes: list = field(default_factory=lambda: ["LowerRight"])
    trajectories_per_lobe: int = 18
    frames_per_trajectory: int = 60
    width: int = 64
    height: int = 64
    vertical_fov_deg: float = 80.0
    scale: float = 60.0
    branching_levels: int = 0  # 0 draws uniformly from [4, 6] per patient
    radius_taper: float = 0.8
    angle_jitter: float = 0.12
    delta_d: float = DEFAULT_DELTA_D
    chunk_len: int = 10
    train_per_lobe: int = 15
    val_per_lobe: int = 3
    paper_scale: bool = False

    def validate(self) -> None:
        if self.n_patients < 1 or self.trajectories_per_lobe < 1 or self.frames_per_trajectory < 2:
            raise ConfigError("dataset needs >=1 patient, >=1 trajectory and >=2 frames")
        for lobe in self.lobes:
            LobeLabel(lobe)
        if self.branching_levels not in (0, 4, 5, 6):
            raise ConfigError("branching_levels must be 0 (random) or in [4, 6]")
        if self.chunk_len < 1:
            raise ConfigError("chunk_len must be >= 1")
        CameraIntrinsics(self.width, self.height, math.radians(self.vertical_fov_deg))

    @property
    def effective_trajectories(self) -> int:
        return PAPER_TRAJECTORIES_PER_LOBE if self.paper_scale else self.trajectories_per_lobe

    def camera(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.width, self.height, math.radians(self.vertical_fov_deg))

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)[0])


def patient_specs(cfg: DatasetConfig) -> list:
    specs = []
    for i in range(cfg.n_patients):
        seed = _derived_seed(cfg.seed, 1, i)
        levels = cfg.branching_levels or int(np.random.default_rng(seed).integers(4, 7))
        specs.append(PatientSpec(seed, cfg.scale, levels, cfg.angle_jitter, cfg.radius_taper))
    return specs


def patient_name(i: int) -> str:
    return f"p{i}"


# -- building ----------------------------------------------------------------------------
def _fmt(x: float):
    return float(x)


def _build_one(task: dict) -> dict:
    cfg = DatasetConfig(**task["config"])
    spec = PatientSpec(**task["patient"])
    tree = generate_patient(spec)
    lobe = LobeLabel(task["lobe"])
    path = centerline_path(tree, lobe, rng_seed=task["path_seed"])
    tspec = combine_variations(
        task["traj_seed"], path, enumerate_variations(), n_frames=cfg.frames_per_trajectory,
        delta_d=cfg.delta_d, patient_seed=spec.seed, lobe=lobe, traj_id=task["traj_id"],
    )
    result = synthesize_trajectory(tree, path, tspec, cfg.camera(), cfg.delta_d)
    out = Path(task["root"]) / task["rel_dir"]
    out.mkdir(parents=True, exist_ok=True)
    sums = np.zeros(3, dtype=np.int64)
    sumsq = np.zeros(3, dtype=np.int64)
    lines = []
    prev = None
    for k, (pose, frame) in enumerate(zip(result.poses, result.frames)):
        write_ppm(out / f"{k:06d}.ppm", frame)
        px = frame.pixels.astype(np.int64).reshape(-1, 3)
        sums += px.sum(axis=0)
        sumsq += (px * px).sum(axis=0)
        rec = {
            "frame": k,
            "file": f"{k:06d}.ppm",
            "s": _fmt(result.arc[k]),
            "position": [_fmt(v) for v in pose.position.as_array()],
            "euler": [_fmt(v) for v in pose.orientation.as_array()],
            "delta": None if prev is None else [_fmt(v) for v in delta_pose(prev, pose).as_array()],
            "variation": result.variations[k].to_dict(),
            "clamped": k in result.clamp_events,
        }
        lines.append(json.dumps(rec, sort_keys=True))
        prev = pose
    (out / "poses.jsonl").write_text("\n".join(lines) + "\n")
    n = len(result.frames)
    pairs = n - 1
    return {
        "id": task["traj_id"],
        "patient": task["patient_name"],
        "lobe": lobe.value,
        "dir": task["rel_dir"],
        "n_frames": n,
        "n_chunks": pairs // cfg.chunk_len,
        "dropped_pairs": pairs % cfg.chunk_len,
        "clamp_events": len(result.clamp_events),
        "pixel_sum": sums.tolist(),
        "pixel_sumsq": sumsq.tolist(),
        "n_pixels": n * cfg.width * cfg.height,
        "path_length": path.total_length,
    }


def _stats_from(trajs: list) -> dict:
    s = np.sum([t["pixel_sum"] for t in trajs], axis=0, dtype=np.float64)
    ss = np.sum([t["pixel_sumsq"] for t in trajs], axis=0, dtype=np.float64)
    n = float(sum(t["n_pixels"] for t in trajs))
    mean = s / (255.0 * n)
    var = ss / (255.0 ** 2 * n) - mean ** 2
    return {"mean": mean.tolist(), "std": np.sqrt(np.maximum(var, 0.0)).tolist()}


def build_dataset(cfg: DatasetConfig, root, jobs: int = 1) -> dict:
    """Render every configured trajectory under ``root`` and write ``manifest.json``."""
    cfg.validate()
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    specs = patient_specs(cfg)
    tasks = []
    for pi, spec in enumerate(specs):
        pname = patient_name(pi)
        tree = generate_patient(spec)
        (root / pname).mkdir(exist_ok=True)
        (root / pname / "airway.json").write_text(tree.to_json())
        for lobe in cfg.lobes:
            path_seed = _derived_seed(cfg.seed, 2, pi, list(LobeLabel).index(LobeLabel(lobe)))
            for k in range(cfg.effective_trajectories):
                tid = f"{pname}_{lobe}_t{k:03d}"
                tasks.append({
                    "config": asdict(cfg), "patient": asdict(spec), "patient_name": pname,
                    "lobe": lobe, "path_seed": path_seed,
                    "traj_seed": _derived_seed(cfg.seed, 3, pi, path_seed, k),
                    "traj_id": tid, "rel_dir": f"{pname}/{lobe}/{tid}", "root": str(root),
                })
    try:
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                trajs = list(pool.map(_build_one, tasks))
        else:
            trajs = [_build_one(t) for t in tasks]
    except Exception as exc:
        raise RuntimeError(f"dataset build failed: {exc}") from exc

    manifest = {
        "format": 1,
        "config": asdict(cfg),
        "config_hash": cfg.config_hash(),
        "patients": [
            {"name": patient_name(i), "spec": asdict(s)} for i, s in enumerate(specs)
        ],
        "lobes": list(cfg.lobes),
        "trajectories": trajs,
        "frame_count": int(sum(t["n_frames"] for t in trajs)),
    }
    schemes = [Personalized(cfg.train_per_lobe, cfg.val_per_lobe)]
    if cfg.n_patients > 1:
        schemes += [CrossSubject(patient_name(i)) for i in range(cfg.n_patients)]
    manifest["splits"] = {}
    manifest["stats"] = {}
    for scheme in schemes:
        try:
            split = make_splits(manifest, scheme)
        except ConfigError as exc:
            log.warning("skipping split %s: %s", scheme.name, exc)
            continue
        manifest["splits"][scheme.name] = split
        by_id = {t["id"]: t for t in trajs}
        manifest["stats"][scheme.name] = _stats_from([by_id[i] for i in split["train"]])
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def load_manifest(root) -> dict:
    return json.loads((Path(root) / "manifest.json").read_text())


# -- splits ------------------------------------------------------------------------
@dataclass(frozen=True)
class Personalized:
    train_per_lobe: int = 15
    val_per_lobe: int = 3

    @property
    def name(self) -> str:
        return "personalized"


@dataclass(frozen=True)
class CrossSubject:
    holdout_patient: str

    @property
    def name(self) -> str:
        return f"cross-subject:{self.holdout_patient}"


def parse_scheme(text: str, cfg: dict | None = None):
    if text == "personalized":
        if cfg:
            return Personalized(cfg.get("train_per_lobe", 15), cfg.get("val_per_lobe", 3))
        return Personalized()
    if text.startswith("cross-subject:") and len(text) > len("cross-subject:"):
        return CrossSubject(text.split(":", 1)[1])
    raise ConfigError(f"unknown split scheme {text!r}")


def make_splits(manifest: dict, scheme) -> dict:
    """Assign trajectory ids to ``train`` / ``val`` under ``scheme``."""
    trajs = manifest["trajectories"]
    if isinstance(scheme, Personalized):
        groups: dict = {}
        for t in trajs:
            groups.setdefault((t["patient"], t["lobe"]), []).append(t["id"])
        train, val = [], []
        need = scheme.train_per_lobe + scheme.val_per_lobe
        for (patient, lobe), ids in sorted(groups.items()):
            ids = sorted(ids)
            if len(ids) < need:
                raise ConfigError(f"group {patient}/{lobe} has {len(ids)} trajectories, needs {need}")
            train += ids[:scheme.train_per_lobe]
            val += ids[scheme.train_per_lobe:need]
        return {"scheme": scheme.name, "train": train, "val": val}
    if isinstance(scheme, CrossSubject):
        patients = {t["patient"] for t in trajs}
        if scheme.holdout_patient not in patients:
            raise ConfigError(f"holdout patient {scheme.holdout_patient} not in dataset")
        if len(patients) < 2:
            raise ConfigError("cross-subject split needs at least two patients")
        train = sorted(t["id"] for t in trajs if t["patient"] != scheme.holdout_patient)
        val = sorted(t["id"] for t in trajs if t["patient"] == scheme.holdout_patient)
        return {"scheme": scheme.name, "train": train, "val": val}
    raise ConfigError(f"unsupported split scheme {scheme!r}")


def leave_one_out(manifest: dict) -> list:
    return [CrossSubject(p["name"]) for p in manifest["patients"]]


def split_stats(manifest: dict, split: dict) -> dict:
    """Normalization stats from the training trajectories of ``split`` only."""
    by_id = {t["id"]: t for t in manifest["trajectories"]}
    return _stats_from([by_id[i] for i in split["train"]])


# -- records, chunks, standardization --------------------------------------------------
@dataclass(frozen=True)
class SampleRecord:
    frame_a: str
    frame_b: str
    pose_a: Pose
    pose_b: Pose
    delta: DeltaPose
    traj_id: str
    step_index: int


@dataclass(frozen=True)
class SequenceChunk:
    records: tuple

    def __len__(self) -> int:
        return len(self.records)

    @property
    def traj_id(self) -> str:
        return self.records[0].traj_id

    @property
    def start(self) -> int:
        return self.records[0].step_index


def chunk_sequences(records: Sequence[SampleRecord], length: int = 10) -> list:
    """Non-overlapping runs of ``length`` consecutive records; the tail is dropped."""
    if length < 1:
        raise ValueError("chunk length must be >= 1")
    n = len(records) // length
    return [SequenceChunk(tuple(records[i * length:(i + 1) * length])) for i in range(n)]


def standardize_frame(frame, stats: dict) -> np.ndarray:
    """Channels-first float32 image ``(pixel / 255 - mean) / std``."""
    mean = np.asarray(stats["mean"], dtype=np.float64)
    std = np.asarray(stats["std"], dtype=np.float64)
    if np.any(std <= 0):
        raise ValueError("standard deviation is zero; the dataset frames are constant")
    px = frame.pixels if isinstance(frame, Frame) else np.asarray(frame)
    x = px.astype(np.float64) / 255.0
    x = (x - mean) / std
    return np.moveaxis(x, -1, -3).astype(np.float32)


def unstandardize_frame(image: np.ndarray, stats: dict) -> np.ndarray:
    """Inverse of :func:`standardize_frame`, in [0, 1] pixel units, channels-last."""
    mean = np.asarray(stats["mean"], dtype=np.float64)
    std = np.asarray(stats["std"], dtype=np.float64)
    return np.moveaxis(np.asarray(image, dtype=np.float64), -3, -1) * std + mean


@dataclass
class Trajectory:
    id: str
    patient: str
    lobe: str
    frames: np.ndarray  # (n, H, W, 3) uint8
    poses: np.ndarray  # (n, 6)
    deltas: np.ndarray  # (n - 1, 6)

    @property
    def n_pairs(self) -> int:
        return len(self.deltas)


class DatasetReader:
    """Lazy, cached access to a built dataset directory."""

    def __init__(self, root):
        self.root = Path(root)
        self.manifest = load_manifest(self.root)
        self._by_id = {t["id"]: t for t in self.manifest["trajectories"]}
        self._cache: dict = {}

    @property
    def trajectory_ids(self) -> list:
        return [t["id"] for t in self.manifest["trajectories"]]

    def info(self, traj_id: str) -> dict:
        return self._by_id[traj_id]

    def pose_records(self, traj_id: str) -> list:
        d = self.root / self._by_id[traj_id]["dir"]
        return [json.loads(line) for line in (d / "poses.jsonl").read_text().splitlines() if line]

    def records(self, traj_id: str) -> list:
        info = self._by_id[traj_id]
        recs = self.pose_records(traj_id)
        out = []
        for k in range(len(recs) - 1):
            a, b = recs[k], recs[k + 1]
            out.append(SampleRecord(
                f"{info['dir']}/{a['file']}", f"{info['dir']}/{b['file']}",
                Pose.from_array(a["position"] + a["euler"]), Pose.from_array(b["position"] + b["euler"]),
                DeltaPose.from_array(b["delta"]), traj_id, k,
            ))
        return out

    def load(self, traj_id: str) -> Trajectory:
        if traj_id in self._cache:
            return self._cache[traj_id]
        info = self._by_id[traj_id]
        recs = self.pose_records(traj_id)
        d = self.root / info["dir"]
        frames = np.stack([read_ppm(d / r["file"]).pixels for r in recs])
        poses = np.array([r["position"] + r["euler"] for r in recs], dtype=np.float64)
        deltas = np.array([r["delta"] for r in recs[1:]], dtype=np.float64).reshape(-1, 6)
        traj = Trajectory(traj_id, info["patient"], info["lobe"], frames, poses, deltas)
        self._cache[traj_id] = traj
        return traj

    def stats(self, scheme_name: str) -> dict:
        if scheme_name in self.manifest["stats"]:
            return self.manifest["stats"][scheme_name]
        scheme = parse_scheme(scheme_name, self.manifest["config"])
        return split_stats(self.manifest, make_splits(self.manifest, scheme))

    def split(self, scheme) -> dict:
        if isinstance(scheme, str):
            scheme = parse_scheme(scheme, self.manifest["config"])
        return make_splits(self.manifest, scheme)


def recompute_deltas(poses: np.ndarray) -> np.ndarray:
    return delta_pose_array(poses)
