"""
Experiment Harness
Grid sweeps, the class-comparison experiment, the confidence-rank ablation and
the single-attack unit of work; CSV emission and loading.

Work is split into (method, attacked image) tasks. Each task prepares the
attack once and then walks the α × top-k grid, so the expensive explanation
of the attack images is shared by every cell. Tasks run on a bounded thread
pool, own their random streams (derived from the master seed and the cell
coordinates) and their rows are merged in cell order, so the output bytes do
not depend on the worker count.
"""

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from .attack import (AttackOutcome, AttackPlan, baseline_outcome, execute_plan, prepare_attack,
                     select_running_up)
from .attribution import resolve_baselines
from .config import METHODS, SweepSpec
from .data_io import (LabeledDataset, dataset_load, holdout_path, ppm_write, save_attribution_maps,
                      split_holdout)
from .metrics import explanation_change_pct
from .micronet import ModelBackend, load_weights
from .tensor_core import ImageTensor, Rng, ShapeMismatchError
from .utils import (ConfigError, PathLike, XAttackError, atomic_write_text, format_float, join_flags,
                    validate_attack_params)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1"
HOLDOUT_FRACTION = 0.2

FLAG_ERROR_PREFIX = "error:"
FLAG_NO_CANDIDATES = "no_candidates"

CELL_ERRORS = (XAttackError, ValueError, ArithmeticError, IndexError)


class SchemaError(XAttackError, ValueError):
    """A results CSV does not match the expected versioned schema"""

    def __init__(self, column: str, message: str):
        self.column = column
        super().__init__(f"column {column!r}: {message}")


class UnknownMethodError(XAttackError, ValueError):
    """Attribution method name not recognised"""


class TooFewClassesError(XAttackError, ValueError):
    """The experiment needs more classes than the model has"""


class IncompatibleInputsError(XAttackError, ValueError):
    """Model and dataset disagree on the number of classes"""


def _format_cell(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return format_float(value)
    return str(value)


@dataclass
class _CsvRow:
    """Rows are written as schema_version followed by the dataclass fields in order"""

    @classmethod
    def header(cls) -> List[str]:
        return ["schema_version"] + [f.name for f in fields(cls)]

    def record(self) -> List[str]:
        return [SCHEMA_VERSION] + [_format_cell(getattr(self, f.name)) for f in fields(self)]


@dataclass
class ResultRow(_CsvRow):
    """One sweep cell: (method, α, top-k, image, candidate, variant)"""
    method: str
    alpha: float
    topk: float
    image_id: int
    candidate_rank: int
    variant: str
    expl_change_pct: float
    ssim: float
    conf_change_pp: float
    running_up_class: int
    flags: str


@dataclass
class CompareRow(_CsvRow):
    """One class-comparison cell; attack images come from attack_class"""
    method: str
    alpha: float
    topk: float
    image_id: int
    attack_class: int
    is_running_up: bool
    candidate_rank: int
    expl_change_pct: float
    ssim: float
    conf_change_pp: float
    running_up_class: int
    flags: str


@dataclass
class RankRow(_CsvRow):
    """One confidence-rank cell; arm is "top" or "low\""""
    method: str
    alpha: float
    topk: float
    image_id: int
    arm: str
    candidate_rank: int
    expl_change_pct: float
    ssim: float
    conf_change_pp: float
    running_up_class: int
    flags: str


@dataclass
class ExperimentInputs:
    """Immutable model and data shared by every worker"""
    model: ModelBackend
    pool: LabeledDataset
    holdout: LabeledDataset


def load_inputs(model_path: PathLike, data_path: PathLike, holdout: Optional[PathLike] = None,
                seed: int = 7) -> ExperimentInputs:
    """Load weights and the training pool; the held-out split comes from its own file when present"""
    model = load_weights(model_path)
    pool = dataset_load(data_path)
    holdout_file = Path(holdout) if holdout else holdout_path(data_path)
    if holdout_file.exists():
        held_out = dataset_load(holdout_file)
    else:
        logger.warning(f"⚠️ No held-out file at {holdout_file}; splitting {HOLDOUT_FRACTION:.0%} of {data_path}")
        pool, held_out = split_holdout(pool, HOLDOUT_FRACTION, Rng(seed).child("holdout"))

    for dataset in (pool, held_out):
        if len(dataset) and dataset.image_shape != model.input_shape:
            raise ShapeMismatchError(model.input_shape, dataset.image_shape, "model input and dataset images")
        if dataset.num_classes != model.num_classes:
            raise IncompatibleInputsError(
                f"dataset has {dataset.num_classes} classes but the model predicts {model.num_classes}"
            )
    return ExperimentInputs(model=model, pool=pool, holdout=held_out)


def choose_attacked_images(holdout: LabeledDataset, count: Optional[int], seed: int) -> List[int]:
    """
    One random held-out image per class (in class order); a larger count is
    filled from a seeded permutation of the remaining held-out images.
    """
    rng = Rng(seed).child("images")
    picks = []
    for label in range(holdout.num_classes):
        members = holdout.indices_of(label)
        if not members:
            logger.warning(f"⚠️ No held-out image of class {label}")
            continue
        picks.append(members[int(rng.child("class", label).integers(0, len(members)))])

    if count is None:
        return picks
    if count > len(picks):
        chosen = set(picks)
        rest = [int(i) for i in rng.child("extra").permutation(len(holdout)) if int(i) not in chosen]
        picks.extend(rest[:count - len(picks)])
    return picks[:count]


def _check_methods(spec: SweepSpec) -> None:
    for method in spec.methods:
        if method not in METHODS:
            raise UnknownMethodError(f"unknown attribution method {method!r}")


def _resolved_config(spec: SweepSpec, method: str, pool: LabeledDataset):
    return resolve_baselines(spec.attribution_config(method), pool, spec.master_seed)


def _run_tasks(tasks: Sequence, worker: Callable, workers: int, label: str) -> List:
    """Run tasks on a bounded pool; results come back in task order"""
    workers = max(1, int(workers))
    logger.info(f"📊 {label}: {len(tasks)} tasks on {workers} worker(s)")
    if workers == 1:
        return [worker(task) for task in tqdm(tasks, desc=label, disable=None)]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(tqdm(executor.map(worker, tasks), total=len(tasks), desc=label, disable=None))


def _error_flag(exc: Exception) -> str:
    return f"{FLAG_ERROR_PREFIX}{type(exc).__name__}"


def _sweep_task(inputs: ExperimentInputs, spec: SweepSpec, explain_cfgs: Dict[str, object],
                method: str, image_id: int) -> List[Tuple[tuple, ResultRow]]:
    """All grid cells of one (method, image); rows carry their merge key"""
    x = inputs.holdout.images[image_id]
    rows: List[Tuple[tuple, ResultRow]] = []

    def emit(a_pos, t_pos, outcome_or_none, rank, variant, y_r, flags):
        alpha, topk = spec.alphas[a_pos], spec.topks[t_pos]
        key = (a_pos, t_pos, rank, 0 if variant == "attack" else 1)
        if outcome_or_none is None:
            row = ResultRow(method, alpha, topk, image_id, rank, variant, 0.0, 1.0, 0.0, y_r, join_flags(flags))
        else:
            row = ResultRow(
                method, alpha, topk, image_id, rank, variant,
                float(outcome_or_none.explanation_change_pct),
                float(outcome_or_none.ssim),
                100.0 * float(outcome_or_none.confidence_change),
                y_r,
                join_flags(outcome_or_none.flags + tuple(flags)),
            )
        rows.append((key, row))

    variants = ("attack", "baseline") if spec.include_baseline else ("attack",)
    try:
        plan = prepare_attack(
            inputs.model, explain_cfgs[method], x, inputs.pool,
            candidates=spec.candidates, explain_target=spec.explain_target,
        )
    except CELL_ERRORS as exc:
        logger.warning(f"⚠️ {method} image {image_id}: attack preparation failed: {exc}")
        for a_pos in range(len(spec.alphas)):
            for t_pos in range(len(spec.topks)):
                for rank in range(1, spec.candidates + 1):
                    for variant in variants:
                        emit(a_pos, t_pos, None, rank, variant, -1, (_error_flag(exc),))
        return rows

    for a_pos, alpha in enumerate(spec.alphas):
        for t_pos, topk in enumerate(spec.topks):
            try:
                outcomes = execute_plan(plan, alpha, topk)
            except CELL_ERRORS as exc:
                logger.warning(f"⚠️ {method} image {image_id} α={alpha} top-k={topk}: {exc}")
                for candidate in plan.candidates:
                    for variant in variants:
                        emit(a_pos, t_pos, None, candidate.rank, variant, plan.running_up_class,
                             (_error_flag(exc),))
                continue

            for outcome in outcomes:
                emit(a_pos, t_pos, outcome, outcome.candidate_rank, "attack", plan.running_up_class, ())
                if not spec.include_baseline:
                    continue
                rng = Rng(spec.master_seed).child("baseline", method, image_id, alpha, topk, outcome.candidate_rank)
                try:
                    baseline = baseline_outcome(plan, outcome, alpha, rng)
                    emit(a_pos, t_pos, baseline, outcome.candidate_rank, "baseline", plan.running_up_class, ())
                except CELL_ERRORS as exc:
                    emit(a_pos, t_pos, None, outcome.candidate_rank, "baseline", plan.running_up_class,
                         (_error_flag(exc),))
    return rows


def run_sweep(spec: SweepSpec, inputs: ExperimentInputs, workers: int = 1) -> List[ResultRow]:
    """Every (method, α, top-k, image, candidate[, baseline]) cell, in deterministic cell order"""
    _check_methods(spec)
    images = choose_attacked_images(inputs.holdout, spec.images, spec.master_seed)
    explain_cfgs = {method: _resolved_config(spec, method, inputs.pool) for method in spec.methods}
    tasks = [(m_pos, method, i_pos, image_id)
             for m_pos, method in enumerate(spec.methods)
             for i_pos, image_id in enumerate(images)]

    def worker(task):
        m_pos, method, i_pos, image_id = task
        return [((m_pos, key[0], key[1], i_pos) + key[2:], row)
                for key, row in _sweep_task(inputs, spec, explain_cfgs, method, image_id)]

    keyed = [item for chunk in _run_tasks(tasks, worker, workers, "sweep") for item in chunk]
    keyed.sort(key=lambda item: item[0])
    rows = [row for _, row in keyed]
    flagged = sum(1 for row in rows if row.flags)
    logger.info(f"✅ Sweep finished: {len(rows)} rows ({flagged} flagged)")
    return rows


def rows_to_csv(rows: Sequence[_CsvRow], row_type=ResultRow) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(row_type.header())
    for row in rows:
        writer.writerow(row.record())
    return buffer.getvalue()


def write_rows(path: PathLike, rows: Sequence[_CsvRow], row_type=ResultRow) -> Path:
    target = atomic_write_text(path, rows_to_csv(rows, row_type))
    logger.info(f"💾 Wrote {len(rows)} rows to {target}")
    return target


def cmd_sweep(spec: SweepSpec, model_path: PathLike, data_path: PathLike, out_csv: PathLike,
              holdout: Optional[PathLike] = None, workers: int = 1) -> Path:
    inputs = load_inputs(model_path, data_path, holdout, spec.master_seed)
    return write_rows(out_csv, run_sweep(spec, inputs, workers), ResultRow)


def read_results(path: PathLike, row_type=ResultRow) -> pd.DataFrame:
    """Load a results CSV, rejecting unknown schema versions and column sets"""
    expected = row_type.header()
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        return pd.DataFrame({column: pd.Series(dtype=object) for column in expected})

    text_columns = {column: str for column in ("schema_version", "method", "variant", "arm", "flags")
                    if column in expected}
    frame = pd.read_csv(io.StringIO(text), dtype=text_columns, keep_default_na=False,
                        float_precision="round_trip")
    columns = list(frame.columns)
    for position, column in enumerate(expected):
        if position >= len(columns):
            raise SchemaError(column, "missing")
        if columns[position] != column:
            raise SchemaError(columns[position], f"unexpected at position {position}, expected {column!r}")
    if len(columns) > len(expected):
        raise SchemaError(columns[len(expected)], "unexpected extra column")

    versions = set(frame["schema_version"])
    if versions - {SCHEMA_VERSION}:
        raise SchemaError("schema_version", f"unsupported version(s) {sorted(versions - {SCHEMA_VERSION})}")
    return frame


def usable_rows(frame: pd.DataFrame) -> pd.DataFrame:
    """Rows whose metrics are real measurements (not failed or empty placeholder cells)"""
    if frame.empty:
        return frame
    flags = frame["flags"].astype(str)
    bad = flags.str.contains(FLAG_ERROR_PREFIX, regex=False) | flags.str.contains(FLAG_NO_CANDIDATES, regex=False)
    return frame[~bad]


def aggregate(frame: pd.DataFrame) -> pd.DataFrame:
    """
    Per (method, α, top-k, variant): mean and population std of the explanation
    change, mean confidence change (pp), mean SSIM and the row count.
    """
    columns = ["method", "alpha", "topk", "variant", "expl_mean", "expl_std", "conf_mean", "ssim_mean", "n"]
    frame = usable_rows(frame)
    if frame.empty:
        return pd.DataFrame({column: pd.Series(dtype=object) for column in columns})

    grouped = frame.groupby(["method", "alpha", "topk", "variant"], sort=True)
    result = grouped.agg(
        expl_mean=("expl_change_pct", "mean"),
        expl_std=("expl_change_pct", lambda s: float(np.std(s.to_numpy(dtype=float), ddof=0))),
        conf_mean=("conf_change_pp", "mean"),
        ssim_mean=("ssim", "mean"),
        n=("expl_change_pct", "size"),
    ).reset_index()
    return result[columns]


def _compare_task(inputs: ExperimentInputs, spec: SweepSpec, explain_cfgs: Dict[str, object],
                  method: str, image_id: int) -> List[Tuple[tuple, CompareRow]]:
    x = inputs.holdout.images[image_id]
    model = inputs.model
    y_star, y_r = select_running_up(model.predict(x))
    rows = []
    for attack_class in range(model.num_classes):
        if attack_class == y_star:
            continue
        try:
            plan = prepare_attack(model, explain_cfgs[method], x, inputs.pool, candidates=1,
                                  explain_target=spec.explain_target, attack_class=attack_class)
        except CELL_ERRORS as exc:
            plan, failure = None, _error_flag(exc)
        for a_pos, alpha in enumerate(spec.alphas):
            for t_pos, topk in enumerate(spec.topks):
                key = (a_pos, t_pos, attack_class)
                outcomes: List[AttackOutcome] = []
                flags: Tuple[str, ...] = ()
                if plan is None:
                    flags = (failure,)
                else:
                    try:
                        outcomes = execute_plan(plan, alpha, topk)
                    except CELL_ERRORS as exc:
                        flags = (_error_flag(exc),)
                if not outcomes:
                    flags = flags or (FLAG_NO_CANDIDATES,)
                    rows.append((key, CompareRow(method, alpha, topk, image_id, attack_class, attack_class == y_r,
                                                 0, 0.0, 1.0, 0.0, y_r, join_flags(flags))))
                    continue
                outcome = outcomes[0]
                rows.append((key, CompareRow(
                    method, alpha, topk, image_id, attack_class, attack_class == y_r, outcome.candidate_rank,
                    float(outcome.explanation_change_pct), float(outcome.ssim),
                    100.0 * float(outcome.confidence_change), y_r, join_flags(outcome.flags),
                )))
    return rows


def run_compare_classes(spec: SweepSpec, inputs: ExperimentInputs, workers: int = 1) -> List[CompareRow]:
    """Attack every image with the top pool image of every class other than y*"""
    _check_methods(spec)
    if inputs.model.num_classes < 3:
        raise TooFewClassesError(
            f"class comparison needs J >= 3 (a running-up class and at least one other), "
            f"got J={inputs.model.num_classes}"
        )
    images = choose_attacked_images(inputs.holdout, spec.images, spec.master_seed)
    explain_cfgs = {method: _resolved_config(spec, method, inputs.pool) for method in spec.methods}
    tasks = [(m_pos, method, i_pos, image_id)
             for m_pos, method in enumerate(spec.methods)
             for i_pos, image_id in enumerate(images)]

    def worker(task):
        m_pos, method, i_pos, image_id = task
        return [((m_pos, key[0], key[1], i_pos, key[2]), row)
                for key, row in _compare_task(inputs, spec, explain_cfgs, method, image_id)]

    keyed = [item for chunk in _run_tasks(tasks, worker, workers, "compare-classes") for item in chunk]
    keyed.sort(key=lambda item: item[0])
    return [row for _, row in keyed]


def cmd_compare_classes(spec: SweepSpec, model_path: PathLike, data_path: PathLike, out_csv: PathLike,
                        holdout: Optional[PathLike] = None, workers: int = 1) -> Path:
    inputs = load_inputs(model_path, data_path, holdout, spec.master_seed)
    return write_rows(out_csv, run_compare_classes(spec, inputs, workers), CompareRow)


def compare_summary(frame: pd.DataFrame) -> pd.DataFrame:
    """Per (method, α, top-k, image): running-up explanation change vs the mean over the other classes"""
    columns = ["method", "alpha", "topk", "image_id", "running_up", "other_mean"]
    frame = usable_rows(frame)
    if frame.empty:
        return pd.DataFrame({column: pd.Series(dtype=object) for column in columns})
    keys = ["method", "alpha", "topk", "image_id"]
    is_running_up = frame["is_running_up"].astype(int) == 1
    running_up = frame[is_running_up].groupby(keys)["expl_change_pct"].mean().rename("running_up")
    others = frame[~is_running_up].groupby(keys)["expl_change_pct"].mean().rename("other_mean")
    return pd.concat([running_up, others], axis=1, join="inner").reset_index()[columns]


def _rank_task(inputs: ExperimentInputs, spec: SweepSpec, explain_cfgs: Dict[str, object],
               method: str, image_id: int) -> List[Tuple[tuple, RankRow]]:
    x = inputs.holdout.images[image_id]
    first, last = spec.low_rank_window
    arms = (("top", 1, spec.candidates), ("low", first, last - first + 1))
    rows = []
    for arm_pos, (arm, start, count) in enumerate(arms):
        plan: Optional[AttackPlan] = None
        failure: Tuple[str, ...] = ()
        try:
            plan = prepare_attack(inputs.model, explain_cfgs[method], x, inputs.pool, candidates=count,
                                  explain_target=spec.explain_target, start_rank=start)
        except CELL_ERRORS as exc:
            failure = (_error_flag(exc),)
        for a_pos, alpha in enumerate(spec.alphas):
            for t_pos, topk in enumerate(spec.topks):
                key = (a_pos, t_pos, arm_pos)
                outcomes: List[AttackOutcome] = []
                flags = failure
                y_r = -1
                if plan is not None:
                    y_r = plan.running_up_class
                    flags = plan.flags
                    try:
                        outcomes = execute_plan(plan, alpha, topk)
                    except CELL_ERRORS as exc:
                        flags = flags + (_error_flag(exc),)
                if not outcomes:
                    rows.append((key + (0,), RankRow(method, alpha, topk, image_id, arm, 0, 0.0, 1.0, 0.0, y_r,
                                                     join_flags(flags + (FLAG_NO_CANDIDATES,)))))
                    continue
                for outcome in outcomes:
                    rows.append((key + (outcome.candidate_rank,), RankRow(
                        method, alpha, topk, image_id, arm, outcome.candidate_rank,
                        float(outcome.explanation_change_pct), float(outcome.ssim),
                        100.0 * float(outcome.confidence_change), y_r, join_flags(outcome.flags),
                    )))
    return rows


def run_confidence_rank(spec: SweepSpec, inputs: ExperimentInputs, workers: int = 1) -> List[RankRow]:
    """Top-confidence attack images (ranks 1..candidates) against the low-rank window"""
    _check_methods(spec)
    images = choose_attacked_images(inputs.holdout, spec.images, spec.master_seed)
    explain_cfgs = {method: _resolved_config(spec, method, inputs.pool) for method in spec.methods}
    tasks = [(m_pos, method, i_pos, image_id)
             for m_pos, method in enumerate(spec.methods)
             for i_pos, image_id in enumerate(images)]

    def worker(task):
        m_pos, method, i_pos, image_id = task
        return [((m_pos, key[0], key[1], i_pos) + key[2:], row)
                for key, row in _rank_task(inputs, spec, explain_cfgs, method, image_id)]

    keyed = [item for chunk in _run_tasks(tasks, worker, workers, "confidence-rank") for item in chunk]
    keyed.sort(key=lambda item: item[0])
    return [row for _, row in keyed]


def cmd_confidence_rank(spec: SweepSpec, model_path: PathLike, data_path: PathLike, out_csv: PathLike,
                        holdout: Optional[PathLike] = None, workers: int = 1) -> Path:
    inputs = load_inputs(model_path, data_path, holdout, spec.master_seed)
    return write_rows(out_csv, run_confidence_rank(spec, inputs, workers), RankRow)


def rank_summary(frame: pd.DataFrame) -> pd.DataFrame:
    """Per (method, α, top-k, image): mean explanation change of the top arm and of the low arm"""
    columns = ["method", "alpha", "topk", "image_id", "top", "low", "difference"]
    frame = usable_rows(frame)
    if frame.empty:
        return pd.DataFrame({column: pd.Series(dtype=object) for column in columns})
    keys = ["method", "alpha", "topk", "image_id"]
    pivot = frame.pivot_table(index=keys, columns="arm", values="expl_change_pct", aggfunc="mean")
    if "top" not in pivot.columns or "low" not in pivot.columns:
        return pd.DataFrame({column: pd.Series(dtype=object) for column in columns})
    pivot = pivot.dropna(subset=["top", "low"])
    pivot["difference"] = pivot["top"] - pivot["low"]
    result = pivot.reset_index()
    result.columns.name = None
    return result[columns]


@dataclass
class SingleAttackResult:
    """Artifacts and measurements of one attack run"""
    outcome: AttackOutcome
    corrupted_path: Path
    attributions_path: Path
    metrics_path: Path
    metrics_line: str


def metrics_line(method: str, alpha: float, topk: float, outcome: AttackOutcome) -> str:
    parts = [
        ("method", method),
        ("alpha", format_float(alpha)),
        ("topk", format_float(topk)),
        ("original_class", outcome.original_class),
        ("running_up_class", outcome.running_up_class),
        ("attack_image_id", outcome.attack_image_id),
        ("k", len(outcome.indices)),
        ("expl_change_pct", format_float(outcome.explanation_change_pct)),
        ("ssim", format_float(outcome.ssim)),
        ("conf_change_pp", format_float(100.0 * outcome.confidence_change)),
        ("flags", join_flags(outcome.flags) or "-"),
    ]
    return " ".join(f"{name}={value}" for name, value in parts)


def parse_metrics_line(line: str) -> Dict[str, str]:
    return dict(item.split("=", 1) for item in line.split())


def cmd_attack_single(model: ModelBackend, image: ImageTensor, pool: LabeledDataset, method: str,
                      alpha: float, topk: float, out_prefix: PathLike, seed: int = 7) -> SingleAttackResult:
    """
    Attack one image with the top-ranked attack image and write
    <prefix>_corrupted.ppm, <prefix>_attributions.xatkd (original and corrupted
    explanations, both at the predicted class) and <prefix>_metrics.txt.
    """
    ok, message = validate_attack_params(alpha, topk, allow_identity=True)
    if not ok:
        raise ConfigError(message)
    if alpha == 0.0:
        logger.info("🔍 α = 0: identity sanity run, the image is written back unchanged")
    spec = SweepSpec(methods=[method], master_seed=seed)
    plan = prepare_attack(model, _resolved_config(spec, method, pool), image, pool, candidates=1)
    outcome = execute_plan(plan, alpha, topk)[0]

    prefix = Path(out_prefix)
    corrupted_path = ppm_write(prefix.with_name(f"{prefix.name}_corrupted.ppm"), outcome.corrupted)
    attributions_path = save_attribution_maps(
        [plan.explanation, outcome.corrupted_explanation],
        [outcome.original_class, outcome.original_class],
        model.num_classes,
        prefix.with_name(f"{prefix.name}_attributions.xatkd"),
    )
    line = metrics_line(method, alpha, topk, outcome)
    metrics_path = atomic_write_text(prefix.with_name(f"{prefix.name}_metrics.txt"), line + "\n")

    if outcome.explanation_change_pct > 0.0:
        # self-check against the dumped explanations
        recomputed = explanation_change_pct(plan.explanation, outcome.corrupted_explanation)
        if recomputed != outcome.explanation_change_pct:
            raise AssertionError(f"explanation change {outcome.explanation_change_pct} != recomputed {recomputed}")

    logger.info(f"✅ {line}")
    return SingleAttackResult(outcome, corrupted_path, attributions_path, metrics_path, line)
