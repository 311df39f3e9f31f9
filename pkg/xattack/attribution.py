"""
Post-hoc feature attribution methods.

- saliency: |∂ logit_j / ∂x|
- integrated gradients: (x − x⁰) ⊙ mean of gradients at midpoint samples
  x⁰ + β(x − x⁰), β = (s + ½)/steps
- DeepLIFT (rescale rule) over the model's layer trace, and DeepLIFT SHAP:
  the mean of DeepLIFT over a set of baselines

Attributions target the pre-softmax logit of the class and are returned signed,
except saliency which is an absolute value by definition.
"""

import logging
from typing import Optional, Sequence

import numpy as np

from .config import AttributionConfig
from .data_io import LabeledDataset
from .micronet import LINEAR_KINDS, LayerTrace, ModelBackend
from .tensor_core import AttributionMap, ImageTensor, Rng, check_same_shape
from .utils import XAttackError

logger = logging.getLogger(__name__)

# |Δinput| below this falls back to the local ReLU gradient
RESCALE_EPSILON = 1e-9


class UnsupportedLayerError(XAttackError, NotImplementedError):
    """A layer in the trace has no DeepLIFT rule"""


class EmptyBaselineError(XAttackError, ValueError):
    """DeepLIFT SHAP needs at least one baseline"""


def saliency(model: ModelBackend, x: ImageTensor, class_index: int) -> AttributionMap:
    return AttributionMap(np.abs(model.input_gradient(x, class_index).data))


def integrated_gradients(model: ModelBackend, x: ImageTensor, class_index: int,
                         cfg: Optional[AttributionConfig] = None) -> AttributionMap:
    """Midpoint Riemann sum of the path integral from the baseline to x"""
    cfg = cfg or AttributionConfig(method="integrated_gradients")
    if cfg.ig_steps < 1:
        raise ValueError(f"ig_steps must be >= 1, got {cfg.ig_steps}")
    model.check_input(x)
    model.check_class(class_index)

    baseline = cfg.ig_baseline if cfg.ig_baseline is not None else ImageTensor.zeros(*x.shape)
    check_same_shape(x, baseline, "input and integrated-gradients baseline")

    delta = x.data - baseline.data
    betas = (np.arange(cfg.ig_steps) + 0.5) / cfg.ig_steps
    path = baseline.data[None] + betas[:, None, None, None] * delta[None]
    gradients = model.input_gradient_batch(path, class_index)
    return AttributionMap(delta * gradients.mean(axis=0))


def _rescale_backprop(x_trace: LayerTrace, ref_trace: LayerTrace, class_index: int, num_classes: int) -> np.ndarray:
    """Multipliers of logit_j with respect to the input, rescale rule"""
    if len(x_trace) != len(ref_trace):
        raise UnsupportedLayerError("input and reference traces have different depths")

    batch = max(x_trace[-1].outputs.shape[0], ref_trace[-1].outputs.shape[0])
    multiplier = np.zeros((batch, num_classes))
    multiplier[:, class_index] = 1.0

    for record, reference in zip(reversed(x_trace), reversed(ref_trace)):
        if record.kind != reference.kind:
            raise UnsupportedLayerError(f"trace layers disagree: {record.kind} vs {reference.kind}")
        if record.kind in LINEAR_KINDS and record.vjp is not None:
            multiplier = record.vjp(multiplier)
        elif record.kind == "relu":
            delta_in = record.inputs - reference.inputs
            delta_out = record.outputs - reference.outputs
            small = np.abs(delta_in) < RESCALE_EPSILON
            ratio = delta_out / np.where(small, 1.0, delta_in)
            local = (np.broadcast_to(record.inputs, ratio.shape) > 0.0).astype(np.float64)
            multiplier = multiplier * np.where(small, local, ratio)
        else:
            raise UnsupportedLayerError(f"DeepLIFT rule not defined for layer {record.name!r} of kind {record.kind!r}")
    return multiplier


def _deeplift_batch(model: ModelBackend, x: ImageTensor, class_index: int, baselines: np.ndarray) -> np.ndarray:
    """DeepLIFT attributions of x against each baseline row: (B, H, W, C)"""
    x_trace = model.layer_trace(x.data[None])
    ref_trace = model.layer_trace(baselines)
    multipliers = _rescale_backprop(x_trace, ref_trace, class_index, model.num_classes)
    return (x.data[None] - baselines) * multipliers


def deeplift(model: ModelBackend, x: ImageTensor, class_index: int, baseline: ImageTensor) -> AttributionMap:
    """Rescale-rule DeepLIFT relative to one reference input"""
    model.check_input(x)
    model.check_class(class_index)
    check_same_shape(x, baseline, "input and DeepLIFT baseline")
    return AttributionMap(_deeplift_batch(model, x, class_index, baseline.data[None])[0])


def deeplift_shap(model: ModelBackend, x: ImageTensor, class_index: int,
                  cfg: AttributionConfig) -> AttributionMap:
    """Mean DeepLIFT attribution over cfg.dls_baselines"""
    if not cfg.dls_baselines:
        raise EmptyBaselineError("DeepLIFT SHAP needs at least one baseline; resolve_baselines() fills them")
    model.check_input(x)
    model.check_class(class_index)
    for baseline in cfg.dls_baselines:
        check_same_shape(x, baseline, "input and DeepLIFT SHAP baseline")

    stacked = np.stack([baseline.data for baseline in cfg.dls_baselines])
    return AttributionMap(_deeplift_batch(model, x, class_index, stacked).mean(axis=0))


def sample_baselines(dataset: LabeledDataset, count: int, rng: Rng) -> Sequence[ImageTensor]:
    """count distinct training images drawn uniformly with the given stream"""
    if len(dataset) == 0:
        raise EmptyBaselineError("cannot draw baselines from an empty dataset")
    picks = rng.choice(len(dataset), min(count, len(dataset)))
    return tuple(dataset.images[int(i)] for i in sorted(picks))


def resolve_baselines(cfg: AttributionConfig, dataset: LabeledDataset, seed: int) -> AttributionConfig:
    """Fill the DeepLIFT SHAP baseline set from the training data when it is not explicit"""
    if cfg.method != "deeplift_shap" or cfg.dls_baselines:
        return cfg
    baselines = sample_baselines(dataset, cfg.dls_count, Rng(seed).child(cfg.dls_stream))
    logger.debug(f"🎯 Drew {len(baselines)} DeepLIFT SHAP baselines (stream {cfg.dls_stream!r})")
    return AttributionConfig(
        method=cfg.method,
        ig_steps=cfg.ig_steps,
        ig_baseline=cfg.ig_baseline,
        dls_baselines=tuple(baselines),
        dls_count=cfg.dls_count,
        dls_stream=cfg.dls_stream,
    )


def explain(model: ModelBackend, x: ImageTensor, class_index: int, cfg: AttributionConfig) -> AttributionMap:
    """Dispatch on cfg.method"""
    if cfg.method == "saliency":
        return saliency(model, x, class_index)
    if cfg.method == "integrated_gradients":
        return integrated_gradients(model, x, class_index, cfg)
    if cfg.method == "deeplift_shap":
        return deeplift_shap(model, x, class_index, cfg)
    raise ValueError(f"unknown attribution method {cfg.method!r}")
