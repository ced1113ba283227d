"""Chunked training with truncated backprop, Adam and early stopping."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .airway import ConfigError
from .autograd import Adam, no_grad
from .dataset import DatasetReader, parse_scheme, standardize_frame
from .losses import chunk_loss
from .metrics import LossCombo
from .models import PoseNet, save_model

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    loss: str = "mse-ce"
    lr: float = 1e-4
    batch_chunks: int = 32
    chunk_len: int = 10
    max_epochs: int = 30
    patience: int = 5
    dropout_rate: float = 0.1
    seed: int = 0
    split: str = "personalized"

    def validate(self) -> None:
        try:
            LossCombo.parse(self.loss)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.batch_chunks < 1 or self.chunk_len < 1 or self.max_epochs < 1:
            raise ConfigError("batch_chunks, chunk_len and max_epochs must be >= 1")
        parse_scheme(self.split)

    @property
    def combo(self) -> LossCombo:
        return LossCombo.parse(self.loss)


@dataclass
class PreparedTrajectory:
    id: str
    patient: str
    frames: np.ndarray  # (n, 3, H, W) standardized
    poses: np.ndarray  # (n, 6)
    deltas: np.ndarray  # (n - 1, 6)


class PreparedSplit:
    """Standardized frames and deltas for one side of a split, held in memory."""

    def __init__(self, trajectories):
        self.trajectories = list(trajectories)

    @classmethod
    def load(cls, reader: DatasetReader, ids, stats: dict, dtype="float32") -> "PreparedSplit":
        trajs = []
        for tid in ids:
            t = reader.load(tid)
            trajs.append(PreparedTrajectory(
                tid, t.patient, standardize_frame(t.frames, stats).astype(dtype), t.poses, t.deltas))
        return cls(trajs)

    def __len__(self) -> int:
        return len(self.trajectories)

    def chunks(self, length: int) -> list:
        """``(trajectory index, first step)`` for every full chunk; tails are dropped."""
        return [(i, k * length) for i, t in enumerate(self.trajectories)
                for k in range(len(t.deltas) // length)]

    def batch(self, items, length: int):
        frames = np.stack([self.trajectories[i].frames[s:s + length + 1] for i, s in items])
        deltas = np.stack([self.trajectories[i].deltas[s:s + length] for i, s in items])
        return frames, deltas

    def ids_of(self, items) -> list:
        return [self.trajectories[i].id for i, _ in items]


@dataclass
class RunRecord:
    config: dict
    model_config: dict
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = math.inf
    checkpoint: str | None = None
    wall_clock_s: float = 0.0
    seeds: dict = field(default_factory=dict)
    train_ids_seen: list = field(default_factory=list)
    stopped_early: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)


def _batches(n: int, size: int, rng: np.random.Generator) -> list:
    # array_split keeps every batch at >= 2 chunks whenever n >= 2 (batch norm needs it)
    order = rng.permutation(n)
    k = max(1, math.ceil(n / size))
    if n >= 2:
        k = min(k, n // 2)
    return [b for b in np.array_split(order, k) if len(b)]


def validation_loss(model: PoseNet, data: PreparedSplit, combo: LossCombo, chunk_len: int,
                    batch_chunks: int = 32) -> float:
    """Mean per-step combined loss over every validation chunk, in eval mode."""
    items = data.chunks(chunk_len)
    if not items:
        raise ConfigError("validation split has no full chunks")
    was = model.training
    model.eval()
    total, count = 0.0, 0
    with no_grad():
        for start in range(0, len(items), batch_chunks):
            part = items[start:start + batch_chunks]
            frames, deltas = data.batch(part, chunk_len)
            loss = chunk_loss(combo, model(frames), deltas)
            total += float(loss.data) * len(part)
            count += len(part)
    model.train(was)
    return total / count


def train(model: PoseNet, train_data: PreparedSplit, val_data: PreparedSplit, cfg: TrainConfig,
          out_dir=None, forbidden_patients=()) -> RunRecord:
    """Fit ``model`` in place; the best-validation weights are restored at the end.

    ``forbidden_patients`` is an audit guard: a training batch that contains
    any of these patients aborts the run.
    """
    cfg.validate()
    combo = cfg.combo
    items = train_data.chunks(cfg.chunk_len)
    if not items:
        raise ConfigError("training split has no full chunks")
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.parameters(), lr=cfg.lr)
    record = RunRecord(asdict(cfg), model.cfg.to_dict(), seeds={"train": cfg.seed, "model": model.cfg.seed})
    forbidden = set(forbidden_patients)
    seen: set = set()
    best_state = None
    stale = 0
    for epoch in range(cfg.max_epochs):
        model.train()
        losses = []
        for b in _batches(len(items), cfg.batch_chunks, rng):
            part = [items[i] for i in b]
            patients = {train_data.trajectories[i].patient for i, _ in part}
            if patients & forbidden:
                raise RuntimeError(f"holdout patient(s) {sorted(patients & forbidden)} in a training batch")
            seen.update(train_data.ids_of(part))
            frames, deltas = train_data.batch(part, cfg.chunk_len)
            loss = chunk_loss(combo, model(frames), deltas)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite loss {value} at epoch {epoch}, chunks {train_data.ids_of(part)}")
            loss.backward()
            opt.step()
            losses.append(value * len(part))
        train_loss = sum(losses) / len(items)
        val = validation_loss(model, val_data, combo, cfg.chunk_len, cfg.batch_chunks)
        if not math.isfinite(val):
            raise TrainingDivergedError(f"non-finite validation loss {val} at epoch {epoch}")
        record.train_losses.append(train_loss)
        record.val_losses.append(val)
        log.info("epoch %d train %.6f val %.6f", epoch, train_loss, val)
        if val < record.best_val_loss:
            record.best_val_loss, record.best_epoch = val, epoch
            best_state = {k: v.copy() for k, v in model.state_dict().items()}
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                record.stopped_early = True
                break
    model.load_state_dict(best_state)
    model.eval()
    record.train_ids_seen = sorted(seen)
    record.wall_clock_s = time.perf_counter() - t0
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_model(out / "model.ckpt", model, {"best_epoch": record.best_epoch, "loss": cfg.loss,
                                               "best_val_loss": record.best_val_loss})
        record.checkpoint = "model.ckpt"
        (out / "run_record.json").write_text(record.to_json() + "\n")
        write_loss_curve(out / "loss_curve.csv", record)
    return record


def write_loss_curve(path, record: RunRecord) -> None:
    lines = ["epoch,train_loss,val_loss"]
    lines += [f"{i},{t!r},{v!r}" for i, (t, v) in enumerate(zip(record.train_losses, record.val_losses))]
    Path(path).write_text("\n".join(lines) + "\n")


def prepare_split(reader: DatasetReader, scheme_name: str, dtype="float32") -> tuple:
    """``(train, val, stats, split)`` for a scheme, with stats from training frames only."""
    split = reader.split(scheme_name)
    stats = reader.stats(split["scheme"])
    return (PreparedSplit.load(reader, split["train"], stats, dtype),
            PreparedSplit.load(reader, split["val"], stats, dtype), stats, split)


def holdout_patients(scheme_name: str) -> tuple:
    scheme = parse_scheme(scheme_name)
    return (scheme.holdout_patient,) if hasattr(scheme, "holdout_patient") else ()
