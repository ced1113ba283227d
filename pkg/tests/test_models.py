import numpy as np
import pytest
from oracles import naive_conv2d

from lumenpose.airway import ConfigError
from lumenpose.autograd import ShapeError, Tensor, no_grad
from lumenpose.autograd.gradcheck import relative_error
from lumenpose.autograd.nn import BN_EPS
from lumenpose.losses import chunk_loss
from lumenpose.metrics import LossCombo
from lumenpose.models import (
    ALL_HEADS,
    HeadKind,
    ModelConfig,
    PoseNet,
    load_model,
    param_count,
    save_model,
)

E2E_TOL = 1e-3


def frames(rng, b, l, size=16, dtype=np.float32):
    return rng.normal(size=(b, l + 1, 3, size, size)).astype(dtype)


def small_cfg(head, **kw):
    base = dict(input_size=(16, 16), head=head, hidden_size=16, dropout_rate=0.0)
    return ModelConfig(**{**base, **kw})


@pytest.mark.parametrize("head", ALL_HEADS)
def test_output_shape_and_finite(head):
    model = PoseNet(ModelConfig(head=head))
    out = model(frames(np.random.default_rng(0), 2, 10, 64))
    assert out.shape == (2, 10, 6) and np.all(np.isfinite(out.data))
    model.eval()  # a single pair is too small a batch for training-mode batch norm
    one = model(frames(np.random.default_rng(1), 1, 1, 64))
    assert one.shape == (1, 1, 6)


def test_backbone_stride_arithmetic():
    model = PoseNet(ModelConfig())
    feats = model.backbone_features(np.random.default_rng(0).normal(size=(3, 3, 64, 64)))
    assert feats.shape == (3, 32, 8, 8)
    same = np.repeat(np.random.default_rng(1).normal(size=(1, 3, 64, 64)), 2, axis=0)
    model.eval()
    f = model.backbone_features(same).data
    assert np.array_equal(f[0], f[1])


def test_frame_size_mismatch():
    model = PoseNet(ModelConfig())
    with pytest.raises(ShapeError):
        model(frames(np.random.default_rng(0), 1, 2, 32))


def test_pair_fusion_shape_and_mismatch():
    model = PoseNet(ModelConfig())
    model.eval()
    f = Tensor(np.random.default_rng(0).normal(size=(2, 32, 8, 8)).astype(np.float32))
    assert model.fusion(f, f).shape == (2, 16, 8, 8)
    with pytest.raises(ShapeError):
        model.fusion(f, Tensor(np.zeros((2, 32, 4, 4), np.float32)))


@pytest.mark.parametrize("head", ALL_HEADS)
def test_eval_forward_is_pure(head):
    model = PoseNet(small_cfg(head, dropout_rate=0.3))
    model.eval()
    x = frames(np.random.default_rng(0), 2, 4)
    assert np.array_equal(model(x).data, model(x).data)


def test_swapping_pair_changes_output():
    model = PoseNet(small_cfg(HeadKind.STATIC))
    model.eval()
    x = frames(np.random.default_rng(0), 1, 1)
    assert not np.allclose(model(x).data, model(x[:, ::-1].copy()).data)


def perturbed(x, step, rng):
    y = x.copy()
    y[:, step + 1] += rng.normal(size=y[:, step + 1].shape).astype(y.dtype)
    return y


def changed_steps(model, x, step):
    a = model(x).data
    b = model(perturbed(x, step, np.random.default_rng(9))).data
    return [t for t in range(a.shape[1]) if not np.allclose(a[:, t], b[:, t], atol=0, rtol=0)]


@pytest.mark.parametrize("head", [HeadKind.RECURRENT, HeadKind.CONV_RECURRENT])
def test_recurrent_heads_are_causal(head):
    model = PoseNet(small_cfg(head))
    model.eval()
    x = frames(np.random.default_rng(0), 1, 6)
    # frame index step+1 belongs to pairs step and step+1
    assert changed_steps(model, x, 3) == [3, 4, 5]


def test_static_head_only_touches_its_pairs():
    model = PoseNet(small_cfg(HeadKind.STATIC))
    model.eval()
    x = frames(np.random.default_rng(0), 1, 6)
    assert changed_steps(model, x, 3) == [3, 4]


def test_static_head_is_order_equivariant():
    model = PoseNet(small_cfg(HeadKind.STATIC))
    model.eval()
    x = frames(np.random.default_rng(0), 1, 5)
    pairs = [x[:, t:t + 2] for t in range(5)]
    per_pair = np.concatenate([model(p).data for p in pairs], axis=1)
    assert np.allclose(model(x).data, per_pair, atol=1e-6)
    order = [3, 0, 4, 1, 2]
    permuted = np.concatenate([model(pairs[t]).data for t in order], axis=1)
    assert np.allclose(permuted, per_pair[:, order], atol=1e-6)


def test_temporal3d_is_non_causal():
    model = PoseNet(small_cfg(HeadKind.TEMPORAL3D))
    model.eval()
    x = frames(np.random.default_rng(0), 1, 8)
    steps = changed_steps(model, x, 5)
    assert min(steps) < 5


def test_zero_final_layer_gives_bias_output():
    model = PoseNet(small_cfg(HeadKind.STATIC))
    model.head.fc.weight.data[:] = 0
    out = model(frames(np.random.default_rng(0), 2, 3)).data
    assert np.allclose(out, model.head.fc.bias.data, atol=0)


def test_temporal3d_unit_kernel_equals_per_step_2d_reference():
    model = PoseNet(small_cfg(HeadKind.TEMPORAL3D, time_kernel=1, dtype="float64"))
    rng = np.random.default_rng(3)
    for bn in (model.head.norm1, model.head.norm2):
        bn._buffers["running_mean"][:] = rng.normal(size=16)
        bn._buffers["running_var"][:] = rng.uniform(0.5, 2, size=16)
        bn.weight.data[:] = rng.uniform(0.5, 1.5, size=16)
        bn.bias.data[:] = rng.normal(size=16)
    model.eval()
    x = frames(rng, 2, 4, dtype=np.float64)
    with no_grad():
        fused = model.fuse_sequence(x).data
        out = model.head(Tensor(fused)).data

    def block(v, conv, bn):
        y = naive_conv2d(v, conv.weight.data[:, :, 0], conv.bias.data, pad=1)
        rm, rv = bn._buffers["running_mean"], bn._buffers["running_var"]
        y = (y - rm[None, :, None, None]) / np.sqrt(rv[None, :, None, None] + BN_EPS)
        return np.maximum(y * bn.weight.data[None, :, None, None] + bn.bias.data[None, :, None, None], 0)

    h = model.head
    for t in range(4):
        y = block(block(fused[:, t], h.conv1, h.norm1), h.conv2, h.norm2)
        ref = y.reshape(2, -1) @ h.fc.weight.data + h.fc.bias.data
        assert np.allclose(out[:, t], ref, atol=1e-10)


def test_param_counts():
    counts = {h: param_count(PoseNet(ModelConfig(head=h))) for h in ALL_HEADS}
    assert counts[HeadKind.STATIC] < counts[HeadKind.RECURRENT]
    assert all(c > 0 for c in counts.values())
    model = PoseNet(ModelConfig())
    assert param_count(model.backbone) <= 50_000


@pytest.mark.parametrize("kwargs", [{"input_size": (60, 60)}, {"fused_channels": 10}, {"time_kernel": 2},
                                    {"dropout_rate": 1.0}, {"dtype": "float16"}])
def test_bad_model_config(kwargs):
    with pytest.raises(ConfigError):
        ModelConfig(**kwargs).validate()


def test_config_dict_round_trip():
    cfg = ModelConfig(head="Temporal3D", seed=5)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({**cfg.to_dict(), "depth": 3})


@pytest.mark.parametrize("head", ALL_HEADS)
def test_checkpoint_round_trip(head, tmp_path):
    model = PoseNet(small_cfg(head, seed=4))
    model.train()
    model(frames(np.random.default_rng(0), 3, 2))  # moves batch-norm running stats
    model.eval()
    save_model(tmp_path / "m.ckpt", model, {"loss": "mse-ce"})
    again, meta = load_model(tmp_path / "m.ckpt")
    again.eval()
    x = frames(np.random.default_rng(1), 2, 3)
    assert np.array_equal(model(x).data, again(x).data)
    assert meta["loss"] == "mse-ce" and (tmp_path / "m.json").exists()


# -- end-to-end gradient check ---------------------------------------------------------
def sampled_fd(loss_fn, param, idx, h=1e-6):
    flat = param.data.reshape(-1)
    out = np.empty(len(idx))
    for k, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(loss_fn().data)
        flat[i] = orig - h
        fm = float(loss_fn().data)
        flat[i] = orig
        out[k] = (fp - fm) / (2 * h)
    return out


@pytest.mark.parametrize("head", ALL_HEADS)
def test_end_to_end_gradients(head):
    worst = end_to_end_gradient_error(head)
    assert worst <= E2E_TOL


def end_to_end_gradient_error(head, per_param=12) -> float:
    """Backprop vs finite differences through the whole model and MSE+CE loss, fp64, 16x16, L=2."""
    rng = np.random.default_rng(0)
    model = PoseNet(small_cfg(head, dtype="float64", seed=2))
    model.train()
    x = frames(rng, 2, 2, dtype=np.float64)
    gt = rng.normal(scale=0.5, size=(2, 2, 6))
    combo = LossCombo.parse("mse-ce")

    def loss_fn():
        return chunk_loss(combo, model(x), gt)

    model.zero_grad()
    loss_fn().backward()
    analytic, numeric = [], []
    for _, p in model.named_parameters():
        idx = rng.choice(p.size, size=min(per_param, p.size), replace=False)
        analytic.append(p.grad.reshape(-1)[idx].copy())
        numeric.append(sampled_fd(loss_fn, p, idx))
    # one shared scale: conv biases ahead of batch norm have exactly zero gradient
    return relative_error(np.concatenate(analytic), np.concatenate(numeric))
