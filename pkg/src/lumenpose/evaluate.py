"""Per-pair and accumulated evaluation of pose-difference predictors."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .autograd import no_grad
from .metrics import MetricKind, cosinus_error, direction_error, position_error, rotation_error_l2
from .pose import Pose, accumulate, wrap_angle

REPORT_METRICS = ("PositionL2", "RotationL2", "DE", "CE")


class EvalMode(str, enum.Enum):
    PER_PAIR = "per-pair"
    ACCUMULATED = "accumulated"

    @classmethod
    def parse(cls, text: str) -> "EvalMode":
        for m in cls:
            if text.lower() in (m.value, m.name.lower(), m.name.lower().replace("_", "")):
                return m
        raise ValueError(f"unknown eval mode {text!r}")


@dataclass
class EvalReport:
    mode: EvalMode
    metrics: dict  # name -> (mean, std)
    n: int
    scheme: str = ""
    head: str = ""
    loss: str = ""
    diagnostics: dict = field(default_factory=dict)

    def mean(self, name: str) -> float:
        return self.metrics[name][0]

    def std(self, name: str) -> float:
        return self.metrics[name][1]

    def row(self) -> dict:
        r = {"scheme": self.scheme, "mode": self.mode.value, "head": self.head, "loss": self.loss}
        for key, name in zip(("pos_l2", "rot_l2", "de", "ce"), REPORT_METRICS):
            r[f"{key}_mean"], r[f"{key}_std"] = self.metrics[name]
        r["n"] = self.n
        return r

    def to_dict(self) -> dict:
        return {**self.row(), "diagnostics": self.diagnostics}


# -- predictors -------------------------------------------------------------------
class ModelPredictor:
    """Runs a model over each full trajectory as one sequence (eval mode)."""

    def __init__(self, model):
        self.model = model

    def __call__(self, traj) -> np.ndarray:
        self.model.eval()
        with no_grad():
            out = self.model(traj.frames[None])
        return out.data[0].astype(np.float64)


class ZeroPredictor:
    def __call__(self, traj) -> np.ndarray:
        return np.zeros_like(traj.deltas)


class OraclePredictor:
    def __call__(self, traj) -> np.ndarray:
        return np.array(traj.deltas, dtype=np.float64)


# -- metrics -----------------------------------------------------------------------
def _summary(errors: dict) -> dict:
    return {k: (float(np.mean(v)), float(np.std(v))) for k, v in errors.items()}


def pose_errors(est: np.ndarray, gt: np.ndarray) -> dict:
    """Per-row errors between ``(n, 6)`` pose (or pose-difference) arrays."""
    est, gt = np.atleast_2d(est), np.atleast_2d(gt)
    return {
        "PositionL2": position_error(est[:, :3], gt[:, :3], MetricKind.POSITION_L2),
        "RotationL2": rotation_error_l2(est[:, 3:], gt[:, 3:], MetricKind.ROTATION_L2),
        "DE": direction_error(est[:, 3:], gt[:, 3:]),
        "CE": cosinus_error(est[:, 3:], gt[:, 3:]),
    }


def evaluate_per_pair(predictor, trajectories, **labels) -> EvalReport:
    """Score every consecutive pair; mean and std are over all pairs."""
    if not trajectories:
        raise ValueError("evaluation needs at least one trajectory")
    parts = [pose_errors(predictor(t), t.deltas) for t in trajectories]
    errors = {k: np.concatenate([p[k] for p in parts]) for k in REPORT_METRICS}
    n = len(errors["PositionL2"])
    if n == 0:
        raise ValueError("evaluation trajectories contain no pairs")
    return EvalReport(EvalMode.PER_PAIR, _summary(errors), n, **labels)


def accumulate_trajectory(first_pose: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Absolute poses ``(n, 6)`` from the first pose plus running sums of deltas."""
    out = np.vstack([first_pose, first_pose + np.cumsum(deltas, axis=0)])
    out[:, 3:] = wrap_angle(out[:, 3:])
    return out


def evaluate_accumulated(predictor, trajectories, traces: list | None = None, **labels) -> EvalReport:
    """Accumulate predictions from the true first pose; score only the final pose.

    Mean and std are across trajectories. If ``traces`` is a list, per-step
    estimated and true positions are appended to it.
    """
    if not trajectories:
        raise ValueError("evaluation needs at least one trajectory")
    finals_est, finals_gt, wrapped = [], [], []
    for t in trajectories:
        pred = predictor(t)
        final = accumulate(Pose.from_array(t.poses[0]), pred).as_array()
        finals_est.append(final)
        finals_gt.append(t.poses[-1])
        wrapped.append(np.linalg.norm(wrap_angle(final[3:] - t.poses[-1][3:])))
        if traces is not None:
            est = accumulate_trajectory(t.poses[0], pred)
            for k in range(len(est)):
                traces.append((t.id, k, *est[k, :3], *t.poses[k, :3]))
    errors = pose_errors(np.array(finals_est), np.array(finals_gt))
    diag = {"rot_l2_wrapped_mean": float(np.mean(wrapped)), "rot_l2_wrapped_std": float(np.std(wrapped))}
    return EvalReport(EvalMode.ACCUMULATED, _summary(errors), len(trajectories), diagnostics=diag, **labels)


def evaluate(predictor, trajectories, mode: EvalMode, **labels) -> EvalReport:
    if EvalMode(mode) is EvalMode.PER_PAIR:
        return evaluate_per_pair(predictor, trajectories, **labels)
    return evaluate_accumulated(predictor, trajectories, **labels)


def zero_baseline_eval(trajectories, mode: EvalMode, **labels) -> EvalReport:
    """The constant zero-difference predictor under ``mode``."""
    labels.setdefault("head", "zero")
    return evaluate(ZeroPredictor(), trajectories, mode, **labels)


# -- report tables -----------------------------------------------------------------
REPORT_COLUMNS = ("scheme", "mode", "head", "loss", "pos_l2_mean", "pos_l2_std", "rot_l2_mean",
                  "rot_l2_std", "de_mean", "de_std", "ce_mean", "ce_std", "n")


def _cell(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def report_csv(rows) -> str:
    lines = [",".join(REPORT_COLUMNS)]
    lines += [",".join(_cell(r[c]) for c in REPORT_COLUMNS) for r in rows]
    return "\n".join(lines) + "\n"


def report_markdown(rows) -> str:
    """One table per (scheme, mode): rows are head x loss, columns the four metrics."""
    out = []
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["scheme"], r["mode"]), []).append(r)
    for (scheme, mode), rs in groups.items():
        out.append(f"### {scheme} / {mode}\n")
        out.append("| Head | Loss | Position L2 | Rotation L2 | DE | CE | n |")
        out.append("|---|---|---|---|---|---|---|")
        for r in rs:
            cells = [f"{r[f'{k}_mean']:.4f} ± {r[f'{k}_std']:.4f}" for k in ("pos_l2", "rot_l2", "de", "ce")]
            out.append(f"| {r['head']} | {r['loss']} | " + " | ".join(cells) + f" | {r['n']} |")
        out.append("")
    return "\n".join(out)


def parse_report_csv(text: str) -> list:
    lines = [ln for ln in text.splitlines() if ln]
    header = lines[0].split(",")
    return [dict(zip(header, ln.split(","))) for ln in lines[1:]]
