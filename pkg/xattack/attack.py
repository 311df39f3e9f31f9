"""
One-step black-box attack on explanations.

Phase 1 picks the running-up class y_r of the original image and the pool
images the model is most confident belong to y_r. Phase 2 explains each attack
image and keeps its top-k positive attribution coordinates. Phase 3 blends the
attack image into the original on those coordinates only:

    x̂[i] = clip((1 − α)·x[i] + α·x̄[i])   for i in I_k,   x̂[i] = x[i] otherwise

The model is only queried through ModelBackend (predictions and explanations).
A Gaussian-noise baseline perturbs the same number of random coordinates
through the same blend.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .attribution import explain, resolve_baselines
from .config import AttackConfig, AttributionConfig, SsimConfig
from .data_io import LabeledDataset
from .metrics import explanation_change_pct, prediction_change, ssim
from .micronet import ClassProbs, ModelBackend
from .tensor_core import (AttributionMap, ImageTensor, Rng, Shape, abs_sum, check_same_shape,
                          tensor_map_reduce, unflatten_index)
from .utils import ConfigError, XAttackError

logger = logging.getLogger(__name__)

# Added before flooring so that e.g. 0.29 · 100 keeps its 29th coordinate
TOPK_ROUNDING_SLACK = 1e-9
DEFAULT_BASELINE_SEED = 0

FLAG_NO_POSITIVE = "no_positive_features"
FLAG_SHORT_POOL = "short_pool"
FLAG_ZERO_EXPLANATION = "zero_original_explanation"


class NoRunningUpClassError(XAttackError, ValueError):
    """Fewer than two classes: no running-up class exists"""


class EmptyClassPoolError(XAttackError, ValueError):
    """The pool holds no image of the requested class"""


class InjectionBoundsError(XAttackError, IndexError):
    """An injection coordinate lies outside the image"""


@dataclass(frozen=True, eq=False)
class InjectionIndexSet:
    """Distinct injection coordinates, stored as ascending flat offsets"""
    offsets: np.ndarray
    shape: Shape

    def __post_init__(self):
        offsets = np.asarray(self.offsets, dtype=np.int64).reshape(-1)
        size = int(np.prod(self.shape))
        if offsets.size and (offsets.min() < 0 or offsets.max() >= size):
            raise InjectionBoundsError(f"injection offsets must lie in [0, {size}) for (W,H,C)={self.shape}")
        ordered = np.unique(offsets)
        if ordered.size != offsets.size:
            raise ValueError("injection coordinates contain duplicates")
        ordered.setflags(write=False)
        object.__setattr__(self, "offsets", ordered)
        object.__setattr__(self, "shape", tuple(self.shape))

    @classmethod
    def empty(cls, shape: Shape) -> "InjectionIndexSet":
        return cls(np.zeros(0, dtype=np.int64), shape)

    @classmethod
    def from_coords(cls, coords: Sequence[Tuple[int, int, int]], shape: Shape) -> "InjectionIndexSet":
        width, height, channels = shape
        offsets = []
        for w, h, c in coords:
            if not (0 <= w < width and 0 <= h < height and 0 <= c < channels):
                raise InjectionBoundsError(f"coordinate {(w, h, c)} outside (W,H,C)={shape}")
            offsets.append(c + channels * (w + width * h))
        return cls(np.array(offsets, dtype=np.int64), shape)

    @property
    def coords(self) -> List[Tuple[int, int, int]]:
        return [unflatten_index(int(offset), self.shape) for offset in self.offsets]

    def __len__(self) -> int:
        return int(self.offsets.size)

    def issuperset(self, other: "InjectionIndexSet") -> bool:
        return bool(np.isin(other.offsets, self.offsets).all())

    def mask(self) -> np.ndarray:
        width, height, channels = self.shape
        flat = np.zeros(width * height * channels, dtype=bool)
        flat[self.offsets] = True
        return flat.reshape(height, width, channels)


@dataclass
class AttackCandidate:
    """An attack image chosen in phase 1 and its phase-2 explanation"""
    image: ImageTensor
    dataset_index: int
    rank: int
    confidence: float
    explanation: Optional[AttributionMap] = None
    explained_class: int = -1


@dataclass
class AttackImageSelection:
    candidates: List[AttackCandidate]
    requested: int
    short_pool: bool = False

    @property
    def images(self) -> List[ImageTensor]:
        return [candidate.image for candidate in self.candidates]


@dataclass
class AttackOutcome:
    """Corrupted image and the three measurements for one (image, candidate, α, top-k, method) cell"""
    corrupted: ImageTensor
    indices: InjectionIndexSet
    attack_image_id: int
    candidate_rank: int
    candidate_confidence: float
    explanation_change_pct: float
    ssim: float
    confidence_change: float
    original_class: int
    running_up_class: int
    attack_class: int
    explained_class: int
    variant: str = "attack"
    flags: Tuple[str, ...] = ()
    corrupted_explanation: Optional[AttributionMap] = field(default=None, repr=False)


@dataclass
class AttackPlan:
    """Phases 1 and 2 for one original image; reusable across the α × top-k grid"""
    model: ModelBackend
    explain_cfg: AttributionConfig
    x: ImageTensor
    probs: ClassProbs
    original_class: int
    running_up_class: int
    attack_class: int
    explanation: AttributionMap
    selection: AttackImageSelection
    ssim_cfg: SsimConfig = field(default_factory=SsimConfig)

    @property
    def candidates(self) -> List[AttackCandidate]:
        return self.selection.candidates

    @property
    def flags(self) -> Tuple[str, ...]:
        return (FLAG_SHORT_POOL,) if self.selection.short_pool else ()


def select_running_up(probs: ClassProbs) -> Tuple[int, int]:
    """(y*, y_r): the top class and the best remaining class, ties to the lowest index"""
    if probs.num_classes < 2:
        raise NoRunningUpClassError(f"need at least 2 classes for a running-up class, got {probs.num_classes}")
    values = np.array(probs.probs)
    y_star = int(np.argmax(values))
    values[y_star] = -np.inf
    return y_star, int(np.argmax(values))


def select_attack_images(pool: LabeledDataset, model: ModelBackend, y_r: int, n: int,
                         start_rank: int = 1) -> AttackImageSelection:
    """
    Pool images of class y_r ordered by f_{y_r} descending (ties by dataset index),
    ranks start_rank … start_rank + n − 1 (1-based). A pool that cannot fill the
    request returns what exists with short_pool set.
    """
    if n < 1 or start_rank < 1:
        raise ValueError(f"need n >= 1 and start_rank >= 1, got n={n}, start_rank={start_rank}")
    members = pool.indices_of(y_r)
    if not members:
        raise EmptyClassPoolError(f"pool holds no image of class {y_r}")

    confidences = model.predict_batch(pool.stack()[members])[:, y_r]
    order = sorted(range(len(members)), key=lambda i: (-confidences[i], members[i]))
    window = order[start_rank - 1:start_rank - 1 + n]

    candidates = [
        AttackCandidate(
            image=pool.images[members[i]],
            dataset_index=members[i],
            rank=start_rank + position,
            confidence=float(confidences[i]),
        )
        for position, i in enumerate(window)
    ]
    short = len(candidates) < n
    if short:
        logger.warning(
            f"⚠️ Class {y_r} pool has {len(members)} images; ranks {start_rank}..{start_rank + n - 1} "
            f"requested, returning {len(candidates)}"
        )
    return AttackImageSelection(candidates=candidates, requested=n, short_pool=short)


def extract_topk(zbar: AttributionMap, topk_frac: float) -> InjectionIndexSet:
    """
    The k largest strictly positive attributions, k = max(1, ⌊topk_frac · P⌋)
    over the P positive entries (k = 0 when P = 0); ties go to the lower offset.
    """
    if not 0.0 < topk_frac <= 1.0:
        raise ValueError(f"topk_frac must lie in (0, 1], got {topk_frac}")
    flat = zbar.flat()
    positive = np.flatnonzero(flat > 0.0)
    if positive.size == 0:
        return InjectionIndexSet.empty(zbar.shape)

    k = max(1, math.floor(topk_frac * positive.size + TOPK_ROUNDING_SLACK))
    order = np.lexsort((positive, -flat[positive]))
    return InjectionIndexSet(positive[order[:k]], zbar.shape)


def inject(x: ImageTensor, xbar: ImageTensor, idx: InjectionIndexSet, alpha: float) -> ImageTensor:
    """α-blend xbar into x on idx, clipped to [0, 1]; every other entry is x unchanged"""
    check_same_shape(x, xbar, "original and attack image")
    if idx.shape != x.shape:
        raise InjectionBoundsError(f"index set built for (W,H,C)={idx.shape}, image is {x.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return tensor_map_reduce(x, xbar, "elementwise_blend", alpha=alpha, mask=idx.mask())


def gaussian_baseline(x: ImageTensor, k: int, alpha: float, rng: Rng) -> Tuple[ImageTensor, InjectionIndexSet]:
    """Blend clip(x + ε), ε ~ N(0, 1), into k uniformly drawn coordinates"""
    if not 0 <= k <= x.size:
        raise ValueError(f"k={k} outside [0, {x.size}]")
    idx = InjectionIndexSet(rng.choice(x.size, k), x.shape)
    noise = np.clip(x.data + rng.gaussian(x.size).reshape(x.data.shape), 0.0, 1.0)
    return inject(x, ImageTensor(noise), idx, alpha), idx


def prepare_attack(model: ModelBackend, explain_cfg: AttributionConfig, x: ImageTensor, pool: LabeledDataset,
                   candidates: int = 3, explain_target: str = "running_up", start_rank: int = 1,
                   attack_class: Optional[int] = None, ssim_cfg: Optional[SsimConfig] = None) -> AttackPlan:
    """
    Phases 1 and 2. `attack_class` replaces the running-up class as the source of
    attack images (used by the class-comparison experiment).
    """
    explain_cfg = resolve_baselines(explain_cfg, pool, DEFAULT_BASELINE_SEED)
    probs = model.predict(x)
    y_star, y_r = select_running_up(probs)
    source_class = y_r if attack_class is None else attack_class
    explained_class = source_class if explain_target == "running_up" else y_star

    selection = select_attack_images(pool, model, source_class, candidates, start_rank)
    for candidate in selection.candidates:
        candidate.explanation = explain(model, candidate.image, explained_class, explain_cfg)
        candidate.explained_class = explained_class

    return AttackPlan(
        model=model,
        explain_cfg=explain_cfg,
        x=x,
        probs=probs,
        original_class=y_star,
        running_up_class=y_r,
        attack_class=source_class,
        explanation=explain(model, x, y_star, explain_cfg),
        selection=selection,
        ssim_cfg=ssim_cfg or SsimConfig(),
    )


def _measure(plan: AttackPlan, corrupted: ImageTensor) -> Tuple[float, float, float, AttributionMap, Tuple[str, ...]]:
    zhat = explain(plan.model, corrupted, plan.original_class, plan.explain_cfg)
    flags: Tuple[str, ...] = ()
    if abs_sum(plan.explanation) == 0.0:
        change = 0.0
        flags = (FLAG_ZERO_EXPLANATION,)
    else:
        change = explanation_change_pct(plan.explanation, zhat)
    similarity = ssim(plan.x, corrupted, plan.ssim_cfg)
    confidence = prediction_change(plan.probs, plan.model.predict(corrupted), plan.original_class)
    return change, similarity, confidence, zhat, flags


def _outcome(plan: AttackPlan, candidate: AttackCandidate, corrupted: ImageTensor, idx: InjectionIndexSet,
             variant: str, extra_flags: Tuple[str, ...] = ()) -> AttackOutcome:
    if len(idx) == 0:
        change, similarity, confidence, zhat, flags = 0.0, 1.0, 0.0, plan.explanation, ()
    else:
        change, similarity, confidence, zhat, flags = _measure(plan, corrupted)
    return AttackOutcome(
        corrupted=corrupted,
        indices=idx,
        attack_image_id=candidate.dataset_index,
        candidate_rank=candidate.rank,
        candidate_confidence=candidate.confidence,
        explanation_change_pct=change,
        ssim=similarity,
        confidence_change=confidence,
        original_class=plan.original_class,
        running_up_class=plan.running_up_class,
        attack_class=plan.attack_class,
        explained_class=candidate.explained_class,
        variant=variant,
        flags=plan.flags + extra_flags + flags,
        corrupted_explanation=zhat,
    )


def execute_plan(plan: AttackPlan, alpha: float, topk_frac: float) -> List[AttackOutcome]:
    """Phase 3 and measurement, one outcome per candidate"""
    outcomes = []
    for candidate in plan.candidates:
        idx = extract_topk(candidate.explanation, topk_frac)
        if len(idx) == 0:
            logger.warning(f"⚠️ Attack image {candidate.dataset_index} has no positive attributions")
            outcomes.append(_outcome(plan, candidate, plan.x, idx, "attack", (FLAG_NO_POSITIVE,)))
            continue
        corrupted = inject(plan.x, candidate.image, idx, alpha)
        outcomes.append(_outcome(plan, candidate, corrupted, idx, "attack"))
    return outcomes


def baseline_outcome(plan: AttackPlan, attack: AttackOutcome, alpha: float, rng: Rng) -> AttackOutcome:
    """Gaussian baseline matched to an attack outcome's budget and α"""
    candidate = next(c for c in plan.candidates if c.rank == attack.candidate_rank)
    corrupted, idx = gaussian_baseline(plan.x, len(attack.indices), alpha, rng)
    extra = (FLAG_NO_POSITIVE,) if len(idx) == 0 else ()
    return _outcome(plan, candidate, corrupted, idx, "baseline", extra)


def run_attack(model: ModelBackend, explain_cfg: Optional[AttributionConfig], x: ImageTensor, pool: LabeledDataset,
               cfg: AttackConfig) -> List[AttackOutcome]:
    """
    The full single-step pipeline for one attack configuration. The explain
    config comes from `explain_cfg` or `cfg.attribution`; giving two different
    ones is an error.
    """
    if explain_cfg is None:
        explain_cfg = cfg.attribution or AttributionConfig()
    elif cfg.attribution is not None and cfg.attribution != explain_cfg:
        raise ConfigError(f"explain config {explain_cfg} disagrees with the attack config's {cfg.attribution}")
    plan = prepare_attack(
        model, explain_cfg, x, pool,
        candidates=cfg.candidates_per_image,
        explain_target=cfg.explain_target,
        start_rank=cfg.start_rank,
    )
    outcomes = execute_plan(plan, cfg.alpha, cfg.topk_frac)
    logger.debug(
        f"🎯 Attack y*={plan.original_class} y_r={plan.running_up_class}: "
        + ", ".join(f"{o.explanation_change_pct:.1f}%" for o in outcomes)
    )
    return outcomes
