"""Tests for the Markdown/HTML report rendering."""

import pytest

from xattack.export_manager import (ExportManager, build_report, cmd_report, export_manager, long_table,
                                    method_table, summary_table)
from xattack.harness import ResultRow, aggregate, read_results, rows_to_csv, write_rows


def _row(expl, alpha=0.09, topk=0.1, variant="attack", ssim=0.9, conf=1.5, flags=""):
    return ResultRow("saliency", alpha, topk, 0, 1, variant, expl, ssim, conf, 2, flags)


@pytest.fixture
def frame(tmp_path):
    rows = [
        _row(10.0), _row(20.0), _row(7.0, variant="baseline"),
        _row(30.0, topk=0.4), _row(3.0, topk=0.4, variant="baseline"),
        _row(0.0, flags="error:ValueError"),
    ]
    return read_results(write_rows(tmp_path / "sweep.csv", rows))


def test_long_table_formats_mean_and_std(frame):
    table = long_table(aggregate(frame))
    assert "| saliency | 0.09 | 0.1 | attack | 15.00 ± 5.00 | 1.50 | 0.9000 | 2 |" in table
    assert "| saliency | 0.09 | 0.1 | baseline | 7.00 ± 0.00 |" in table


def test_long_table_clips_negative_ssim_for_display(tmp_path):
    frame = read_results(write_rows(tmp_path / "neg.csv", [_row(5.0, ssim=-0.25)]))
    assert "| 0.0000 |" in long_table(aggregate(frame))


def test_method_table_puts_attack_above_baseline(frame):
    table = method_table(aggregate(frame), "saliency", [0.1, 0.4])
    assert table.splitlines()[0] == "| α \\ top-k | 0.1 | 0.4 |"
    assert "| 0.09 | **15.0 ↓1.50**<br>7.0 ↓1.50 | **30.0 ↓1.50**<br>3.0 ↓1.50 |" in table


def test_method_table_leaves_missing_cells_empty(frame):
    table = method_table(aggregate(frame), "saliency", [0.1, 0.8])
    assert table.splitlines()[-1].endswith("|  |")


def test_summary_table_keeps_present_columns_only(frame):
    table = summary_table(aggregate(frame))
    assert table.splitlines()[0] == "| method | α | 0.1 | 0.4 |"
    assert "| saliency | 0.09 | 15.0 ↓1.50 | 30.0 ↓1.50 |" in table
    assert "7.0" not in table


def test_empty_frame_gives_header_only_report(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text(rows_to_csv([]), encoding="utf-8")
    report = build_report(read_results(path))
    assert report.startswith("# X-Attack sweep report\n\n| method |")
    assert "## Aggregates" not in report


def test_build_report_sections(frame):
    report = build_report(frame, "runs/sweep.csv")
    assert "Source: `runs/sweep.csv`" in report
    assert "Rows: 6 (1 flagged, 1 excluded from aggregates)" in report
    for heading in ("## Aggregates", "### saliency", "## Summary", "## Trend checks"):
        assert heading in report
    assert "top-k ≤ 0.2:" in report and "top-k > 0.2:" in report


def test_export_to_markdown_front_matter():
    text = ExportManager().export_to_markdown("# Title\n\n\n\nbody   \n", {"title": "T", "date": "2024-01-02"})
    assert text.startswith("---\ntitle: T\ndate: 2024-01-02\nsource:\n---\n\n# Title")
    assert "\n\n\n" not in text
    assert text.endswith("body\n")


def test_export_to_html_renders_tables(frame):
    html = export_manager.export_to_html(build_report(frame), {"title": "sweep"})
    assert html.startswith("<!DOCTYPE html>")
    assert "<title>sweep</title>" in html
    assert "<table>" in html
    assert "<strong>15.0 ↓1.50</strong>" in html


def test_supported_formats_are_a_copy():
    formats = export_manager.get_supported_formats()
    formats.append("pdf")
    assert export_manager.get_supported_formats() == ["markdown", "html"]


def test_cmd_report_writes_files(tmp_path, frame):
    csv_path = tmp_path / "sweep.csv"
    out_md = cmd_report(csv_path, tmp_path / "out" / "report.md", tmp_path / "out" / "report.html")
    text = out_md.read_text(encoding="utf-8")
    assert text.startswith("# X-Attack sweep report")
    assert "15.00 ± 5.00" in text
    assert (tmp_path / "out" / "report.html").read_text(encoding="utf-8").count("<table>") >= 3


def test_report_with_only_placeholder_rows(tmp_path):
    path = write_rows(tmp_path / "failed.csv", [_row(0.0, flags="short_pool;no_candidates")])
    report = build_report(read_results(path))
    assert "## Aggregates" not in report
