"""Minimal reverse-mode automatic differentiation over numpy arrays."""
from .checkpoint import load_checkpoint, save_checkpoint
from .conv import channel_shuffle, conv2d, conv3d, conv_nd, grouped_conv2d
from .nn import (
    BatchNorm,
    Conv2d,
    Conv3d,
    ConvLSTMCell,
    Dropout,
    Linear,
    LSTMCell,
    Module,
    batch_norm,
    conv_lstm_cell,
    dropout,
    lstm_cell,
)
from .optim import Adam, AdamState, adam_step
from .tensor import (
    ShapeError,
    Tensor,
    acos_clamped,
    add,
    as_tensor,
    concat,
    cos,
    flatten,
    getitem,
    is_grad_enabled,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    sigmoid,
    sin,
    square,
    stack,
    sub,
    tanh,
    transpose,
    tsum,
)
