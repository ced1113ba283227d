"""Pairwise pose-difference networks with four temporal heads.

Every model maps a frame sequence ``(B, L + 1, 3, H, W)`` to per-pair pose
differences ``(B, L, 6)``: a shared conv backbone encodes each frame, each
consecutive pair is fused, and a head turns the L fused maps into outputs.
"""
from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .airway import ConfigError
from .autograd import (
    BatchNorm,
    Conv2d,
    Conv3d,
    ConvLSTMCell,
    Dropout,
    Linear,
    LSTMCell,
    Module,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    channel_shuffle,
    concat,
    load_checkpoint,
    relu,
    reshape,
    save_checkpoint,
    stack,
    transpose,
)


class HeadKind(str, enum.Enum):
    STATIC = "Static"
    RECURRENT = "Recurrent"
    CONV_RECURRENT = "ConvRecurrent"
    TEMPORAL3D = "Temporal3D"

    @classmethod
    def parse(cls, text: str) -> "HeadKind":
        for h in cls:
            if text.lower() in (h.value.lower(), h.name.lower()):
                return h
        raise ConfigError(f"unknown head {text!r}; expected one of {[h.value for h in cls]}")


ALL_HEADS = tuple(HeadKind)


@dataclass
class ModelConfig:
    input_size: tuple = (64, 64)
    backbone_channels: list = field(default_factory=lambda: [8, 16, 32])
    fused_channels: int = 16
    shuffle_groups: int = 4
    dropout_rate: float = 0.1
    head: HeadKind = HeadKind.STATIC
    hidden_size: int = 64
    time_kernel: int = 3
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        self.head = HeadKind.parse(self.head) if isinstance(self.head, str) else HeadKind(self.head)
        self.input_size = tuple(int(v) for v in self.input_size)
        self.backbone_channels = [int(c) for c in self.backbone_channels]

    def validate(self) -> None:
        h, w = self.input_size
        k = 2 ** len(self.backbone_channels)
        if not self.backbone_channels or h % k or w % k:
            raise ConfigError(f"input size {self.input_size} not divisible by {k}")
        if self.shuffle_groups < 1 or self.fused_channels % self.shuffle_groups:
            raise ConfigError(
                f"fused_channels={self.fused_channels} not divisible by shuffle_groups={self.shuffle_groups}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")
        if self.time_kernel < 1 or self.time_kernel % 2 == 0:
            raise ConfigError("time_kernel must be odd so that 'same' padding keeps L")
        if self.hidden_size < 1:
            raise ConfigError("hidden_size must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")

    @property
    def feature_size(self) -> tuple:
        k = 2 ** len(self.backbone_channels)
        return self.input_size[0] // k, self.input_size[1] // k

    def to_dict(self) -> dict:
        d = asdict(self)
        d["head"] = self.head.value
        d["input_size"] = list(self.input_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys {sorted(unknown)}")
        return cls(**d)


class ConvBlock(Module):
    def __init__(self, n_in, n_out, rng, stride, dtype):
        self.conv = Conv2d(n_in, n_out, 3, rng, stride=stride, padding=1, dtype=dtype)
        self.norm = BatchNorm(n_out, dtype=dtype)

    def forward(self, x):
        return relu(self.norm(self.conv(x)))


class Backbone(Module):
    """Stride-2 conv blocks; one set of weights for every frame."""

    def __init__(self, channels, rng, dtype):
        ins = [3] + list(channels[:-1])
        self.blocks = [ConvBlock(i, o, rng, 2, dtype) for i, o in zip(ins, channels)]

    def forward(self, x):
        for b in self.blocks:
            x = b(x)
        return x


class ShuffleBlock(Module):
    """Grouped 3x3 conv with a residual path, then channel shuffle and dropout."""

    def __init__(self, channels, groups, dropout_rate, rng, seed, dtype):
        self.groups = groups
        self.conv = Conv2d(channels, channels, 3, rng, padding=1, groups=groups, dtype=dtype)
        self.norm = BatchNorm(channels, dtype=dtype)
        self.drop = Dropout(dropout_rate, seed)

    def forward(self, x):
        y = relu(add(self.norm(self.conv(x)), x))
        return self.drop(channel_shuffle(y, self.groups))


class PairFusion(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype):
        c = cfg.backbone_channels[-1]
        self.block = ConvBlock(2 * c, cfg.fused_channels, rng, 1, dtype)
        self.shuffle = ShuffleBlock(cfg.fused_channels, cfg.shuffle_groups, cfg.dropout_rate,
                                    rng, cfg.seed + 1, dtype)

    def forward(self, f1, f2):
        f1, f2 = as_tensor(f1), as_tensor(f2)
        if f1.shape != f2.shape:
            raise ShapeError(f"pair_fuse: feature shapes differ, {f1.shape} vs {f2.shape}")
        return self.shuffle(self.block(concat([f1, f2], axis=1)))


class StaticHead(Module):
    def __init__(self, cfg, rng, dtype):
        h, w = cfg.feature_size
        self.fc = Linear(cfg.fused_channels * h * w, 6, rng, dtype)

    def forward(self, fused):  # (B, L, C, h, w)
        b, l = fused.shape[:2]
        return reshape(self.fc(reshape(fused, (b * l, -1))), (b, l, 6))


class RecurrentHead(Module):
    def __init__(self, cfg, rng, dtype):
        h, w = cfg.feature_size
        self.hidden = cfg.hidden_size
        self.cell = LSTMCell(cfg.fused_channels * h * w, cfg.hidden_size, rng, dtype)
        self.fc = Linear(cfg.hidden_size, 6, rng, dtype)

    def forward(self, fused):
        b, l = fused.shape[:2]
        seq = reshape(fused, (b, l, -1))
        h = c = Tensor(np.zeros((b, self.hidden), dtype=fused.dtype))
        outs = []
        for t in range(l):
            h, c = self.cell(seq[:, t], h, c)
            outs.append(self.fc(h))
        return stack(outs, axis=1)


class ConvRecurrentHead(Module):
    def __init__(self, cfg, rng, dtype):
        h, w = cfg.feature_size
        self.cell = ConvLSTMCell(cfg.fused_channels, cfg.fused_channels, 3, rng, dtype)
        self.fc = Linear(cfg.fused_channels * h * w, 6, rng, dtype)

    def forward(self, fused):
        b, l = fused.shape[:2]
        h = c = Tensor(np.zeros((b,) + fused.shape[2:], dtype=fused.dtype))
        outs = []
        for t in range(l):
            h, c = self.cell(fused[:, t], h, c)
            outs.append(self.fc(reshape(h, (b, -1))))
        return stack(outs, axis=1)


class Temporal3DHead(Module):
    def __init__(self, cfg, rng, dtype):
        c, kt = cfg.fused_channels, cfg.time_kernel
        h, w = cfg.feature_size
        pad = (kt // 2, 1, 1)
        self.conv1 = Conv3d(c, c, (kt, 3, 3), rng, padding=pad, dtype=dtype)
        self.norm1 = BatchNorm(c, dtype=dtype)
        self.conv2 = Conv3d(c, c, (kt, 3, 3), rng, padding=pad, dtype=dtype)
        self.norm2 = BatchNorm(c, dtype=dtype)
        self.fc = Linear(c * h * w, 6, rng, dtype)

    def forward(self, fused):
        b, l = fused.shape[:2]
        x = transpose(fused, (0, 2, 1, 3, 4))  # (B, C, L, h, w)
        x = relu(self.norm1(self.conv1(x)))
        x = relu(self.norm2(self.conv2(x)))
        x = transpose(x, (0, 2, 1, 3, 4))
        return reshape(self.fc(reshape(x, (b * l, -1))), (b, l, 6))


_HEADS = {
    HeadKind.STATIC: StaticHead,
    HeadKind.RECURRENT: RecurrentHead,
    HeadKind.CONV_RECURRENT: ConvRecurrentHead,
    HeadKind.TEMPORAL3D: Temporal3DHead,
}


class PoseNet(Module):
    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        self.cfg = cfg
        dtype = np.dtype(cfg.dtype)
        rng = np.random.default_rng(cfg.seed)
        self.backbone = Backbone(cfg.backbone_channels, rng, dtype)
        self.fusion = PairFusion(cfg, rng, dtype)
        self.head = _HEADS[cfg.head](cfg, rng, dtype)

    def backbone_features(self, frames):
        """``(N, 3, H, W)`` standardized frames to ``(N, C, h, w)`` maps."""
        frames = as_tensor(frames)
        if frames.ndim != 4 or frames.shape[1] != 3 or frames.shape[2:] != self.cfg.input_size:
            raise ShapeError(f"expected frames (N, 3, {self.cfg.input_size[0]}, {self.cfg.input_size[1]}),"
                             f" got {frames.shape}")
        return self.backbone(frames)

    def fuse_sequence(self, frames):
        """``(B, L + 1, 3, H, W)`` to fused pair maps ``(B, L, C, h, w)``."""
        frames = as_tensor(frames)
        if frames.ndim != 5 or frames.shape[1] < 2:
            raise ShapeError(f"expected (B, L + 1, 3, H, W) with L >= 1, got {frames.shape}")
        b, n = frames.shape[:2]
        feats = self.backbone_features(reshape(frames, (b * n,) + frames.shape[2:]))
        feats = reshape(feats, (b, n) + feats.shape[1:])
        first = reshape(feats[:, :-1], (b * (n - 1),) + feats.shape[2:])
        second = reshape(feats[:, 1:], (b * (n - 1),) + feats.shape[2:])
        fused = self.fusion(first, second)
        return reshape(fused, (b, n - 1) + fused.shape[1:])

    def forward(self, frames):
        frames = as_tensor(frames)
        if frames.dtype != np.dtype(self.cfg.dtype):
            frames = Tensor(frames.data.astype(self.cfg.dtype))
        return self.head(self.fuse_sequence(frames))


def build_model(cfg: ModelConfig) -> PoseNet:
    return PoseNet(cfg)


def param_count(model: Module) -> int:
    return int(sum(p.size for p in model.parameters()))


def save_model(path, model: PoseNet, meta: dict | None = None) -> None:
    path = Path(path)
    save_checkpoint(path, model.state_dict(), {"model": model.cfg.to_dict(), **(meta or {})})
    path.with_suffix(".json").write_text(json.dumps(model.cfg.to_dict(), indent=1, sort_keys=True) + "\n")


def load_model(path) -> tuple:
    """Rebuild a model from its checkpoint; returns ``(model, meta)``."""
    state, meta = load_checkpoint(path)
    cfg = ModelConfig.from_dict(meta["model"])
    model = PoseNet(cfg)
    model.load_state_dict(state)
    return model, meta
