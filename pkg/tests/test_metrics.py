"""Tests for SSIM, explanation change and prediction change."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xattack.config import SsimConfig
from xattack.metrics import (UndefinedDenominatorError, explanation_change_pct, prediction_change, ssim,
                             ssim_global)
from xattack.micronet import ClassIndexError, ClassProbs
from xattack.tensor_core import AttributionMap, ImageTensor, Rng, ShapeMismatchError
from xattack.utils import ConfigError


def _pair(seed, side=10, channels=3):
    rng = Rng(seed).child("ssim")
    x = ImageTensor(rng.child("x").uniform(side * side * channels).reshape(side, side, channels))
    y = ImageTensor(rng.child("y").uniform(side * side * channels).reshape(side, side, channels))
    return x, y


def _brute_force_ssim(x, y, window, cfg):
    """Per-window loop with population moments"""
    height, width, channels = x.data.shape
    per_channel = []
    for c in range(channels):
        values = []
        for top in range(height - window + 1):
            for left in range(width - window + 1):
                a = x.data[top:top + window, left:left + window, c]
                b = y.data[top:top + window, left:left + window, c]
                mu_a, mu_b = a.mean(), b.mean()
                cov = ((a - mu_a) * (b - mu_b)).mean()
                value = ((2 * mu_a * mu_b + cfg.c1) * (2 * cov + cfg.c2)) / (
                    (mu_a ** 2 + mu_b ** 2 + cfg.c1) * (a.var() + b.var() + cfg.c2))
                values.append(value)
        per_channel.append(np.mean(values))
    return float(np.mean(per_channel))


@pytest.mark.parametrize("seed", range(3))
def test_ssim_of_identical_images_is_one(seed):
    x, _ = _pair(seed)
    assert ssim(x, x) == 1.0


def test_ssim_constant_images_closed_form():
    """Test constant 0 against constant 1 with L = 1: c1 / (1 + c1)."""
    zero = ImageTensor.zeros(8, 8, 3)
    one = ImageTensor(np.ones((8, 8, 3)))
    assert ssim(zero, one) == pytest.approx(1e-4 / 1.0001, abs=1e-12)


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_ssim_symmetric_and_bounded(seed):
    x, y = _pair(seed)
    value = ssim(x, y)
    assert value == ssim(y, x)
    assert -1.0 <= value <= 1.0


@pytest.mark.parametrize("window", [3, 8])
def test_ssim_matches_brute_force_windows(window):
    x, y = _pair(4)
    cfg = SsimConfig(window=window)
    assert ssim(x, y, cfg) == pytest.approx(_brute_force_ssim(x, y, window, cfg), rel=1e-9, abs=1e-12)


def test_ssim_falls_back_to_global_window():
    """Test that a window larger than the image gives the single-window value exactly."""
    x, y = _pair(5, side=6)
    cfg = SsimConfig(window=8)
    assert ssim(x, y, cfg) == ssim_global(x, y, cfg)


def test_ssim_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        ssim(ImageTensor.zeros(8, 8, 3), ImageTensor.zeros(8, 9, 3))


def test_ssim_is_deterministic():
    x, y = _pair(6)
    assert ssim(x, y) == ssim(x, y)


def test_ssim_config_validation():
    with pytest.raises(ConfigError):
        SsimConfig(k1=0.0)
    with pytest.raises(ConfigError):
        SsimConfig(stride=2)


def _map(values):
    return AttributionMap.from_flat(values, len(values), 1, 1)


def test_explanation_change_identity():
    z = _map([1.0, -2.0, 0.5])
    assert explanation_change_pct(z, z) == 0.0


def test_explanation_change_hand_example():
    """Test z = [1, −1], ẑ = [0, 0] → 100%."""
    assert explanation_change_pct(_map([1.0, -1.0]), _map([0.0, 0.0])) == 100.0


def test_explanation_change_of_doubled_map():
    z = _map([0.3, -1.2, 2.0])
    assert explanation_change_pct(z, _map([0.6, -2.4, 4.0])) == pytest.approx(100.0)


def test_explanation_change_scales_with_perturbation():
    z = _map([1.0, 2.0, -3.0])
    delta = np.array([0.1, -0.2, 0.05])
    single = explanation_change_pct(z, _map(z.flat() + delta))
    double = explanation_change_pct(z, _map(z.flat() + 2 * delta))
    assert double == pytest.approx(2 * single, rel=1e-12)


def test_explanation_change_of_zero_map():
    with pytest.raises(UndefinedDenominatorError):
        explanation_change_pct(_map([0.0, 0.0]), _map([1.0, 0.0]))


def test_explanation_change_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        explanation_change_pct(_map([1.0, 0.0]), _map([1.0, 0.0, 0.0]))


@pytest.mark.parametrize("before, after, expected", [
    ([0.6, 0.3, 0.1], [0.6, 0.3, 0.1], 0.0),
    ([0.6, 0.3, 0.1], [0.55, 0.35, 0.1], 0.05),
    ([0.6, 0.3, 0.1], [0.7, 0.2, 0.1], 0.10),
])
def test_prediction_change(before, after, expected):
    p, phat = ClassProbs(np.array(before)), ClassProbs(np.array(after))
    assert prediction_change(p, phat, 0) == pytest.approx(expected, abs=1e-12)
    assert prediction_change(phat, p, 0) == prediction_change(p, phat, 0)


def test_prediction_change_index_out_of_range():
    p = ClassProbs(np.array([0.5, 0.5]))
    with pytest.raises(ClassIndexError):
        prediction_change(p, p, 2)
