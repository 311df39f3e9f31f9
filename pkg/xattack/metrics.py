"""
Attack success metrics: SSIM between images, explanation percentage change,
and absolute confidence change of the originally predicted class.
"""

import logging
from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .config import SsimConfig
from .micronet import ClassIndexError, ClassProbs
from .tensor_core import AttributionMap, ImageTensor, abs_diff_sum, abs_sum, check_same_shape
from .utils import XAttackError

logger = logging.getLogger(__name__)


class UndefinedDenominatorError(XAttackError, ZeroDivisionError):
    """The original explanation has zero total mass"""


def _ssim_from_moments(mu_x, mu_y, var_x, var_y, cov_xy, c1: float, c2: float):
    """Per-window SSIM; every product is written symmetrically in x and y"""
    numerator = (2.0 * (mu_x * mu_y) + c1) * (2.0 * cov_xy + c2)
    denominator = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return np.clip(numerator / denominator, -1.0, 1.0)


def _window_moments(x: np.ndarray, y: np.ndarray, window: Tuple[int, int]):
    """Population moments over every window of two (H, W) planes"""
    wx = sliding_window_view(x, window)
    wy = sliding_window_view(y, window)
    mu_x = wx.mean(axis=(-2, -1))
    mu_y = wy.mean(axis=(-2, -1))
    var_x = (wx * wx).mean(axis=(-2, -1)) - mu_x * mu_x
    var_y = (wy * wy).mean(axis=(-2, -1)) - mu_y * mu_y
    cov_xy = (wx * wy).mean(axis=(-2, -1)) - mu_x * mu_y
    return mu_x, mu_y, var_x, var_y, cov_xy


def ssim_global(x: ImageTensor, y: ImageTensor, cfg: Optional[SsimConfig] = None) -> float:
    """Single-window SSIM per channel over the whole image, averaged over channels"""
    cfg = cfg or SsimConfig()
    check_same_shape(x, y, "SSIM images")
    return _channel_mean(x, y, (x.height, x.width), cfg)


def _channel_mean(x: ImageTensor, y: ImageTensor, window: Tuple[int, int], cfg: SsimConfig) -> float:
    values = []
    for c in range(x.channels):
        moments = _window_moments(x.data[:, :, c], y.data[:, :, c], window)
        values.append(float(_ssim_from_moments(*moments, cfg.c1, cfg.c2).mean()))
    return float(np.mean(values))


def ssim(x: ImageTensor, y: ImageTensor, cfg: Optional[SsimConfig] = None) -> float:
    """
    Mean SSIM: uniform cfg.window × cfg.window windows at stride 1, averaged over
    windows and then over channels. Falls back to one global window per channel
    when the window does not fit the image.
    """
    cfg = cfg or SsimConfig()
    check_same_shape(x, y, "SSIM images")
    if cfg.window > min(x.width, x.height):
        return ssim_global(x, y, cfg)
    return _channel_mean(x, y, (cfg.window, cfg.window), cfg)


def explanation_change_pct(z: AttributionMap, zhat: AttributionMap) -> float:
    """100 · Σ|z − ẑ| / Σ|z|"""
    check_same_shape(z, zhat, "original and corrupted explanations")
    mass = abs_sum(z)
    if mass == 0.0:
        raise UndefinedDenominatorError("original explanation sums to zero; percentage change is undefined")
    return 100.0 * abs_diff_sum(z, zhat) / mass


def prediction_change(p: ClassProbs, phat: ClassProbs, class_index: int) -> float:
    """|p[y*] − p̂[y*]|"""
    if not (0 <= class_index < p.num_classes and 0 <= class_index < phat.num_classes):
        raise ClassIndexError(f"class index {class_index} outside the probability vectors")
    return abs(p[class_index] - phat[class_index])
