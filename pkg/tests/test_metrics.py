import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lumenpose.metrics import (
    ALL_LOSS_COMBOS,
    LossCombo,
    MetricKind,
    combined_loss,
    cosinus_error,
    direction_error,
    orientation_loss,
    position_error,
    rotation_error_l2,
)
from lumenpose.pose import DeltaPose, axis_rotation, euler_to_rotation, rotation_to_euler

angle = st.floats(-10.0, 10.0, allow_nan=False)
triple = st.tuples(angle, angle, angle)


def test_position_error_fixtures():
    assert position_error([1, 2, 3], [1, 2, 3]) == 0
    assert position_error([3, 4, 0], [0, 0, 0]) == pytest.approx(5)
    assert position_error([1, 2, 2], [0, 0, 0], MetricKind.POSITION_MSE) == pytest.approx(3)
    with pytest.raises(ValueError):
        position_error([0, 0, 0], [0, 0, 0], MetricKind.COSINUS_ERROR)


def test_rotation_error_fixtures():
    assert rotation_error_l2([0.1, 0.2, 0.3], [0.1, 0.2, 0.3]) == 0
    assert rotation_error_l2([3, 4, 0], [0, 0, 0]) == pytest.approx(5)
    assert rotation_error_l2([1, 2, 2], [0, 0, 0], MetricKind.ROTATION_MSE) == pytest.approx(3)


def test_rotation_l2_is_not_wrapped():
    # a full turn is the same orientation but a large raw difference
    assert rotation_error_l2([2 * math.pi, 0, 0], [0, 0, 0]) == pytest.approx(2 * math.pi)
    assert cosinus_error([2 * math.pi, 0, 0], [0, 0, 0]) == pytest.approx(0, abs=1e-15)


def test_direction_error_fixtures():
    assert direction_error([0.3, -0.1, 0.2], [0.3, -0.1, 0.2]) == pytest.approx(0, abs=1e-7)
    assert direction_error([1.3, 0, 0], [-0.4, 0, 0]) == pytest.approx(0, abs=1e-7)
    assert direction_error([0, math.pi / 2, 0], [0, 0, 0]) == pytest.approx(math.pi / 2, abs=1e-12)
    with pytest.raises(ValueError):
        direction_error([0, 0, 0], [0, 0, 0], u=(0, 0, 2))


def test_cosinus_error_fixtures():
    assert cosinus_error([0.1, 0.2, 0.3], [0.1, 0.2, 0.3]) == 0
    assert cosinus_error([math.pi] * 3, [0, 0, 0]) == pytest.approx(2)
    assert cosinus_error([math.pi / 2, 0, 0], [0, 0, 0]) == pytest.approx(1 / 3)


@given(triple, triple)
def test_ce_bounds_and_periodicity(a, b):
    ce = cosinus_error(a, b)
    assert 0 <= ce <= 2
    shifted = np.array(a) + 2 * math.pi * np.array([1, -2, 3])
    assert cosinus_error(shifted, b) == pytest.approx(ce, abs=1e-9)


@given(st.floats(1e-3, 2 * math.pi - 1e-3), st.integers(0, 2))
def test_ce_has_no_blind_spot(d, k):
    est = np.zeros(3)
    est[k] = d
    assert cosinus_error(est, np.zeros(3)) > 0


@given(triple, triple)
def test_de_bounds_and_symmetry(a, b):
    de = direction_error(a, b)
    assert 0 <= de <= math.pi
    assert direction_error(b, a) == pytest.approx(de, abs=1e-12)


@given(triple, st.floats(-math.pi, math.pi))
def test_de_blind_to_roll_about_look_axis(e, roll):
    r = euler_to_rotation(e)
    rolled = rotation_to_euler(r @ axis_rotation([1, 0, 0], roll)).as_array()
    assert direction_error(rolled, e) <= 2e-7


def test_combined_loss_fixtures():
    zero = DeltaPose.zero()
    for combo in ALL_LOSS_COMBOS:
        assert combined_loss(combo, zero, zero) == pytest.approx(0, abs=1e-7)
    pred = DeltaPose((1.0, 2.0, 2.0), (math.pi / 2, 0.0, 0.0))
    assert combined_loss(LossCombo.parse("mse-ce"), pred, zero) == pytest.approx(3 + 1 / 3)
    pred = DeltaPose((0.0, 0.0, 0.0), (1.0, 2.0, 2.0))
    assert combined_loss(LossCombo.parse("mse-mse"), pred, zero) == pytest.approx(3)


@given(st.tuples(*[st.floats(-5, 5)] * 6), st.tuples(*[st.floats(-5, 5)] * 6))
def test_combined_loss_is_plain_sum(p, g):
    p, g = np.array(p), np.array(g)
    for combo in ALL_LOSS_COMBOS:
        parts = position_error(p[:3], g[:3], MetricKind.POSITION_MSE) + orientation_loss(
            combo.orientation, p[3:], g[3:])
        assert combined_loss(combo, p, g) == parts


def test_loss_combo_names_and_validation():
    assert [c.name for c in ALL_LOSS_COMBOS] == ["mse-mse", "mse-de", "mse-ce"]
    assert LossCombo.parse("mse-de").orientation is MetricKind.DIRECTION_ERROR
    with pytest.raises(ValueError):
        LossCombo(MetricKind.POSITION_L2, MetricKind.COSINUS_ERROR)
    with pytest.raises(ValueError):
        LossCombo.parse("l2-ce")
