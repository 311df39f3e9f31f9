"""Tests for sweeps, the class-comparison and confidence-rank experiments, CSV I/O and single attacks."""

import sys

import numpy as np
import pandas as pd
import pytest

from xattack import harness
from xattack.attack import run_attack
from xattack.config import AttackConfig, AttributionConfig, SweepSpec
from xattack.data_io import (dataset_save, generate_toy_dataset, holdout_path, load_attribution_maps, ppm_encode,
                             ppm_read)
from xattack.harness import (CompareRow, ExperimentInputs, IncompatibleInputsError, RankRow, ResultRow,
                             SchemaError, TooFewClassesError, aggregate, choose_attacked_images, cmd_attack_single,
                             compare_summary, load_inputs, metrics_line, parse_metrics_line, rank_summary,
                             read_results, rows_to_csv, run_compare_classes, run_confidence_rank, run_sweep,
                             usable_rows, write_rows)
from xattack.metrics import explanation_change_pct
from xattack.micronet import MicroNet, save_weights
from xattack.tensor_core import Rng
from xattack.utils import ConfigError


@pytest.fixture(scope="module")
def inputs(trained_net, toy_split):
    pool, held_out = toy_split
    return ExperimentInputs(model=trained_net, pool=pool, holdout=held_out)


def _spec(**overrides):
    values = dict(methods=["saliency"], alphas=[0.09], topks=[0.1], candidates=3, images=2, ig_steps=4, dls_count=2)
    values.update(overrides)
    return SweepSpec(**values)


def _row(expl, method="saliency", alpha=0.09, topk=0.1, variant="attack", flags=""):
    return ResultRow(method, alpha, topk, 0, 1, variant, expl, 0.9, 1.5, 2, flags)


def test_sweep_cell_arithmetic(inputs):
    """Test 1 method × 1 α × 1 top-k × 2 images × 3 candidates with baselines → 12 rows."""
    rows = run_sweep(_spec(), inputs)
    assert len(rows) == 12
    assert [row.variant for row in rows[:2]] == ["attack", "baseline"]
    assert [row.candidate_rank for row in rows[:6]] == [1, 1, 2, 2, 3, 3]
    assert len({row.image_id for row in rows}) == 2
    assert all(row.flags == "" for row in rows)


def test_sweep_without_baseline(inputs):
    rows = run_sweep(_spec(include_baseline=False, alphas=[0.06, 0.12]), inputs)
    assert len(rows) == 2 * 2 * 3
    assert {row.variant for row in rows} == {"attack"}
    assert [row.alpha for row in rows] == [0.06] * 6 + [0.12] * 6


def test_sweep_failed_cell_keeps_baseline_rows(inputs, monkeypatch):
    """Test that a cell whose attack raises still yields flagged attack and baseline rows."""
    real_execute = harness.execute_plan

    def failing_execute(plan, alpha, topk):
        if alpha == 0.12:
            raise ValueError("injection failed")
        return real_execute(plan, alpha, topk)

    monkeypatch.setattr(harness, "execute_plan", failing_execute)
    rows = run_sweep(_spec(alphas=[0.06, 0.12], images=1), inputs)
    assert len(rows) == 2 * 1 * 1 * 3 * 2
    failed = [row for row in rows if row.alpha == 0.12]
    assert sorted((row.candidate_rank, row.variant) for row in failed) == [
        (rank, variant) for rank in (1, 2, 3) for variant in ("attack", "baseline")
    ]
    assert all(row.flags == "error:ValueError" for row in failed)
    assert not any("error:" in row.flags for row in rows if row.alpha == 0.06)
    assert usable_rows(pd.DataFrame([vars(row) for row in rows]))["alpha"].eq(0.06).all()


def test_sweep_is_deterministic_across_workers(inputs):
    """Test that the CSV bytes depend on neither the run nor the worker count."""
    spec = _spec(methods=["saliency", "integrated_gradients"], topks=[0.05, 0.2])
    first = rows_to_csv(run_sweep(spec, inputs, workers=1))
    assert rows_to_csv(run_sweep(spec, inputs, workers=1)) == first
    assert rows_to_csv(run_sweep(spec, inputs, workers=3)) == first


def test_csv_header():
    assert rows_to_csv([]).strip().split(",") == [
        "schema_version", "method", "alpha", "topk", "image_id", "candidate_rank", "variant",
        "expl_change_pct", "ssim", "conf_change_pp", "running_up_class", "flags",
    ]


def test_csv_round_trip(tmp_path, inputs):
    rows = run_sweep(_spec(images=1), inputs)
    frame = read_results(write_rows(tmp_path / "sweep.csv", rows))
    assert len(frame) == len(rows)
    assert frame["expl_change_pct"].tolist() == [row.expl_change_pct for row in rows]
    assert set(frame["schema_version"]) == {"1"}


def test_aggregate_mean_and_population_std(tmp_path):
    """Test a [10, 20] group → mean 15, std 5, and a single-row group → std 0."""
    rows = [_row(10.0), _row(20.0), _row(7.0, variant="baseline")]
    agg = aggregate(read_results(write_rows(tmp_path / "r.csv", rows)))
    attack = agg[agg["variant"] == "attack"].iloc[0]
    baseline = agg[agg["variant"] == "baseline"].iloc[0]
    assert (attack["expl_mean"], attack["expl_std"], attack["n"]) == (15.0, 5.0, 2)
    assert (baseline["expl_mean"], baseline["expl_std"]) == (7.0, 0.0)
    assert attack["conf_mean"] == 1.5 and attack["ssim_mean"] == 0.9


def test_aggregate_skips_placeholder_rows(tmp_path):
    rows = [_row(10.0), _row(0.0, flags="error:ValueError"), _row(0.0, flags="short_pool;no_candidates")]
    frame = read_results(write_rows(tmp_path / "r.csv", rows))
    assert len(usable_rows(frame)) == 1
    assert aggregate(frame).iloc[0]["n"] == 1


def test_empty_csv_reads_as_empty_frame(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("", encoding="utf-8")
    frame = read_results(path)
    assert frame.empty
    assert list(frame.columns) == ResultRow.header()
    assert aggregate(frame).empty


def test_header_only_csv(tmp_path):
    frame = read_results(write_rows(tmp_path / "h.csv", []))
    assert frame.empty


@pytest.mark.parametrize("mutate, column", [
    (lambda text: text.replace("schema_version,method", "method,schema_version", 1), "method"),
    (lambda text: text.replace(",flags\n", "\n", 1), "flags"),
    (lambda text: text.replace(",flags\n", ",flags,extra\n", 1), "extra"),
])
def test_schema_errors_name_the_column(tmp_path, mutate, column):
    path = tmp_path / "bad.csv"
    path.write_text(mutate(rows_to_csv([])), encoding="utf-8")
    with pytest.raises(SchemaError) as info:
        read_results(path)
    assert info.value.column == column


def test_unknown_schema_version(tmp_path):
    path = tmp_path / "v2.csv"
    path.write_text(rows_to_csv([_row(1.0)]).replace("\n1,", "\n2,"), encoding="utf-8")
    with pytest.raises(SchemaError, match="unsupported version"):
        read_results(path)


def test_choose_attacked_images(toy_split):
    _, held_out = toy_split
    default = choose_attacked_images(held_out, None, 7)
    assert [held_out.labels[i] for i in default] == [0, 1, 2, 3]
    assert choose_attacked_images(held_out, None, 7) == default
    extended = choose_attacked_images(held_out, 6, 7)
    assert extended[:4] == default and len(set(extended)) == 6
    assert choose_attacked_images(held_out, 2, 7) == default[:2]


def test_load_inputs(tmp_path, toy_split, trained_net):
    pool, held_out = toy_split
    weights = save_weights(trained_net, tmp_path / "net.xatkw")
    data = dataset_save(pool, tmp_path / "data.xatkd")
    dataset_save(held_out, holdout_path(data))
    loaded = load_inputs(weights, data)
    assert loaded.pool == pool and loaded.holdout == held_out


def test_load_inputs_splits_when_holdout_missing(tmp_path, toy_split, trained_net):
    pool, _ = toy_split
    weights = save_weights(trained_net, tmp_path / "net.xatkw")
    data = dataset_save(pool, tmp_path / "only.xatkd")
    loaded = load_inputs(weights, data)
    assert len(loaded.pool) + len(loaded.holdout) == len(pool)


def test_load_inputs_rejects_class_mismatch(tmp_path, trained_net):
    weights = save_weights(trained_net, tmp_path / "net.xatkw")
    data = dataset_save(generate_toy_dataset(3, 5, side=8, seed=1), tmp_path / "three.xatkd")
    with pytest.raises(IncompatibleInputsError):
        load_inputs(weights, data)


def test_compare_classes_needs_three_classes():
    dataset = generate_toy_dataset(2, 5, side=8, seed=3)
    net = MicroNet.initialize(2, 8, 8, 3, Rng(3))
    with pytest.raises(TooFewClassesError):
        run_compare_classes(_spec(), ExperimentInputs(net, dataset, dataset))


def test_compare_classes_cells(inputs):
    """Test one row per class other than y*, exactly one of them the running-up class."""
    rows = run_compare_classes(_spec(), inputs)
    assert len(rows) == 2 * 3
    for image_id in {row.image_id for row in rows}:
        image_rows = [row for row in rows if row.image_id == image_id]
        assert sum(row.is_running_up for row in image_rows) == 1
        assert all(row.attack_class != inputs.model.predict(inputs.holdout.images[image_id]).probs.argmax()
                   for row in image_rows)
    frame = pd.DataFrame([vars(row) for row in rows])
    summary = compare_summary(frame)
    assert len(summary) == 2


def test_compare_csv_round_trip(tmp_path, inputs):
    rows = run_compare_classes(_spec(images=1), inputs)
    frame = read_results(write_rows(tmp_path / "compare.csv", rows, CompareRow), CompareRow)
    assert frame["is_running_up"].sum() == 1
    assert len(compare_summary(frame)) == 1


def test_confidence_rank_identical_windows(tmp_path, inputs):
    """Test that a low-rank window of [1..3] reproduces the top arm exactly."""
    rows = run_confidence_rank(_spec(low_rank_window=(1, 3)), inputs)
    assert len(rows) == 2 * 2 * 3
    frame = read_results(write_rows(tmp_path / "rank.csv", rows, RankRow), RankRow)
    summary = rank_summary(frame)
    assert len(summary) == 2
    assert (summary["difference"] == 0.0).all()


def test_confidence_rank_short_pool(inputs):
    """Test that a window beyond the class pool flags every low-arm cell."""
    rows = run_confidence_rank(_spec(low_rank_window=(95, 100)), inputs)
    low = [row for row in rows if row.arm == "low"]
    assert low and all("short_pool" in row.flags for row in low)
    assert all("no_candidates" in row.flags for row in low)
    assert rank_summary(pd.DataFrame([vars(row) for row in rows])).empty


def test_attack_single_writes_consistent_artifacts(tmp_path, inputs):
    x = inputs.holdout.images[0]
    result = cmd_attack_single(inputs.model, x, inputs.pool, "saliency", 0.15, 0.2, tmp_path / "run")
    assert result.corrupted_path.name == "run_corrupted.ppm"
    assert result.metrics_path.read_text(encoding="utf-8").strip() == result.metrics_line

    fields = parse_metrics_line(result.metrics_line)
    maps, labels, _ = load_attribution_maps(result.attributions_path)
    assert labels == [int(fields["original_class"])] * 2
    assert explanation_change_pct(maps[0], maps[1]) == float(fields["expl_change_pct"])
    assert int(fields["k"]) == len(result.outcome.indices)
    assert ppm_read(result.corrupted_path).shape == x.shape


def test_attack_single_alpha_zero(tmp_path, inputs):
    """Test that α = 0 writes the input image after 8-bit quantization."""
    x = inputs.holdout.images[1]
    result = cmd_attack_single(inputs.model, x, inputs.pool, "integrated_gradients", 0.0, 0.1, tmp_path / "zero")
    assert result.corrupted_path.read_bytes() == ppm_encode(x)
    assert float(parse_metrics_line(result.metrics_line)["expl_change_pct"]) == 0.0


@pytest.mark.parametrize("alpha", [1.0, -0.1])
def test_attack_single_rejects_alpha_outside_identity_range(tmp_path, inputs, alpha):
    with pytest.raises(ConfigError, match="alpha"):
        cmd_attack_single(inputs.model, inputs.holdout.images[0], inputs.pool, "saliency", alpha, 0.1, tmp_path / "bad")
    assert not (tmp_path / "bad_metrics.txt").exists()


def test_metrics_line_round_trip(inputs):
    cfg = AttackConfig(alpha=0.06, topk_frac=0.05, candidates_per_image=1, attribution=AttributionConfig())
    outcome = run_attack(inputs.model, None, inputs.holdout.images[0], inputs.pool, cfg)[0]
    fields = parse_metrics_line(metrics_line("saliency", cfg.alpha, cfg.topk_frac, outcome))
    assert fields["method"] == "saliency"
    assert (fields["alpha"], fields["topk"]) == ("0.06", "0.05")
    assert float(fields["ssim"]) == outcome.ssim
    assert float(fields["conf_change_pp"]) == 100.0 * outcome.confidence_change


def test_golden_micro_sweep(inputs, golden):
    """Test a seeded four-cell sweep against the frozen fixture."""
    spec = _spec(alphas=[0.06, 0.12], topks=[0.05, 0.2], candidates=1, images=1)
    rows = run_sweep(spec, inputs)
    assert len(rows) == 8
    golden("micro_sweep", [
        [row.alpha, row.topk, row.image_id, row.variant, row.expl_change_pct, row.ssim, row.conf_change_pp]
        for row in rows
    ])
    assert np.isfinite([row.expl_change_pct for row in rows]).all()


def test_missing_golden_fixture_fails(request, golden, monkeypatch, tmp_path):
    """Test that an absent fixture is a failure unless recording was asked for."""
    if request.config.getoption("--record-golden"):
        pytest.skip("recording golden fixtures")
    monkeypatch.setattr(sys.modules[golden.__module__], "FIXTURES", tmp_path)
    with pytest.raises(pytest.fail.Exception, match="record-golden"):
        golden("absent", [1.0])
    assert not (tmp_path / "absent.json").exists()

    (tmp_path / "present.json").write_text("[1.0]\n", encoding="utf-8")
    golden("present", [1.0])
    with pytest.raises(AssertionError, match="differs"):
        golden("present", [2.0])
