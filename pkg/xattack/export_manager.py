"""
X-Attack Report Export Manager
Renders aggregated sweep results as a Markdown report (long table, per-method
α × top-k tables, selected-column summary and trend checks) and exports it to
Markdown or standalone HTML.
"""

import logging
import re
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional

import markdown
import numpy as np
import pandas as pd

from .config import SUMMARY_TOPKS
from .harness import ResultRow, aggregate, read_results, usable_rows
from .trends import render_verdicts, sweep_trends
from .utils import PathLike, atomic_write_text, markdown_table

logger = logging.getLogger(__name__)

# The α × top-k tables are split in two blocks at this top-k
LOW_TOPK_LIMIT = 0.2

LONG_TABLE_HEADERS = ["method", "α", "top-k", "variant", "expl change % (mean ± std)",
                      "conf change (pp)", "SSIM", "n"]


def _fmt_topk(value: float) -> str:
    return f"{float(value):g}"


def long_table(agg: pd.DataFrame) -> str:
    """One line per (method, α, top-k, variant); attack and baseline lines are adjacent"""
    rows = [
        (
            row.method, _fmt_topk(row.alpha), _fmt_topk(row.topk), row.variant,
            f"{row.expl_mean:.2f} ± {row.expl_std:.2f}",
            f"{row.conf_mean:.2f}",
            f"{max(0.0, float(row.ssim_mean)):.4f}",  # display clip to [0, 1]
            int(row.n),
        )
        for row in agg.itertuples(index=False)
    ]
    return markdown_table(LONG_TABLE_HEADERS, rows)


def _cell(values: Optional[pd.Series]) -> str:
    if values is None:
        return ""
    return f"{values['expl_mean']:.1f} ↓{values['conf_mean']:.2f}"


def method_table(agg: pd.DataFrame, method: str, topks: List[float]) -> str:
    """
    α rows × top-k columns; each cell holds "explanation change ↓confidence
    change" with the attack in bold above the matched baseline.
    """
    subset = agg[agg["method"] == method]
    lookup: Dict[tuple, pd.Series] = {
        (float(r["alpha"]), float(r["topk"]), r["variant"]): r for _, r in subset.iterrows()
    }
    alphas = sorted({float(a) for a in subset["alpha"]})
    rows = []
    for alpha in alphas:
        cells = [_fmt_topk(alpha)]
        for topk in topks:
            attack = lookup.get((alpha, topk, "attack"))
            baseline = lookup.get((alpha, topk, "baseline"))
            text = f"**{_cell(attack)}**" if attack is not None else ""
            if baseline is not None:
                text = f"{text}<br>{_cell(baseline)}" if text else _cell(baseline)
            cells.append(text)
        rows.append(cells)
    return markdown_table(["α \\ top-k"] + [_fmt_topk(t) for t in topks], rows)


def summary_table(agg: pd.DataFrame) -> str:
    """Attack cells at the selected top-k columns, all methods"""
    attack = agg[agg["variant"] == "attack"]
    present = sorted({float(t) for t in attack["topk"]})
    columns = [t for t in SUMMARY_TOPKS if any(np.isclose(t, p) for p in present)]
    rows = []
    for (method, alpha), group in attack.groupby(["method", "alpha"], sort=True):
        cells = [method, _fmt_topk(alpha)]
        for topk in columns:
            match = group[np.isclose(group["topk"].astype(float), topk)]
            cells.append(_cell(match.iloc[0]) if not match.empty else "")
        rows.append(cells)
    return markdown_table(["method", "α"] + [_fmt_topk(t) for t in columns], rows)


def build_report(frame: pd.DataFrame, source: str = "") -> str:
    """Full Markdown report for raw sweep rows; an empty frame yields the header only"""
    agg = aggregate(frame)
    lines = ["# X-Attack sweep report", ""]
    if agg.empty:
        lines += [markdown_table(LONG_TABLE_HEADERS, []), ""]
        return "\n".join(lines)

    flagged = int((frame["flags"].astype(str) != "").sum())
    excluded = len(frame) - len(usable_rows(frame))
    lines += [
        f"Source: `{source}`" if source else "",
        f"Rows: {len(frame)} ({flagged} flagged, {excluded} excluded from aggregates)",
        "",
        "## Aggregates",
        "",
        long_table(agg),
        "",
        "## Per-method tables",
        "",
        "Each cell: explanation change (%) ↓ confidence change (pp); attack in bold, Gaussian baseline below.",
        "",
    ]
    topks = sorted({float(t) for t in agg["topk"]})
    blocks = [("top-k ≤ 0.2", [t for t in topks if t <= LOW_TOPK_LIMIT + 1e-12]),
              ("top-k > 0.2", [t for t in topks if t > LOW_TOPK_LIMIT + 1e-12])]
    for method in sorted(set(agg["method"])):
        lines += [f"### {method}", ""]
        for title, block in blocks:
            if block:
                lines += [f"{title}:", "", method_table(agg, method, block), ""]

    lines += ["## Summary", "", summary_table(agg), "", "## Trend checks", "", render_verdicts(sweep_trends(agg)), ""]
    return "\n".join(lines)


class ExportManager:
    """Markdown and HTML report export"""

    def __init__(self):
        self.supported_formats = ['markdown', 'html']
        logger.info(f"📄 ExportManager initialized, supported formats: {', '.join(self.supported_formats)}")

    def get_supported_formats(self) -> list:
        """Get supported export formats"""
        return self.supported_formats.copy()

    def export_to_markdown(self, content: str, metadata: Optional[Dict] = None) -> str:
        """
        Export to Markdown (front matter when metadata is given, whitespace cleaned)

        Args:
            content: Report Markdown
            metadata: Optional title/date/source

        Returns:
            str: Cleaned Markdown content
        """
        if metadata:
            header = (
                "---\n"
                f"title: {metadata.get('title', 'X-Attack report')}\n"
                f"date: {metadata.get('date', datetime.now().strftime('%Y-%m-%d'))}\n"
                f"source: {metadata.get('source', '')}\n"
                "---\n\n"
            )
            content = header + content
        content = self._clean_markdown_content(content)
        logger.info("✅ Markdown export successful")
        return content + "\n"

    def export_to_html(self, content: str, metadata: Optional[Dict] = None) -> str:
        """
        Export to a standalone HTML page (tables rendered by python-markdown)

        Args:
            content: Report Markdown
            metadata: Optional title

        Returns:
            str: Complete HTML document
        """
        md = markdown.Markdown(extensions=['markdown.extensions.extra', 'markdown.extensions.tables'])
        html_content = md.convert(content)
        title = (metadata or {}).get('title', 'X-Attack report')

        full_html = f"""<!DOCTYPE html>
<html lang="en">
<head>
    <meta charset="UTF-8">
    <title>{title}</title>
    <style>
        {self._get_html_styles()}
    </style>
</head>
<body>
    <main class="content">
        {html_content}
    </main>
</body>
</html>
"""
        logger.info("✅ HTML export successful")
        return full_html

    def write_report(self, in_csv: PathLike, out_md: PathLike, out_html: Optional[PathLike] = None) -> Path:
        frame = read_results(in_csv, ResultRow)
        report = build_report(frame, str(in_csv))
        target = atomic_write_text(out_md, self.export_to_markdown(report))
        if out_html:
            atomic_write_text(out_html, self.export_to_html(report, {'title': f"X-Attack report: {Path(in_csv).name}"}))
        logger.info(f"💾 Report written to {target}")
        return target

    def _clean_markdown_content(self, content: str) -> str:
        """Collapse blank-line runs and strip trailing whitespace"""
        content = re.sub(r'\n{3,}', '\n\n', content)
        content = re.sub(r'(?m)[ \t]+$', '', content)
        return content.strip()

    def _get_html_styles(self) -> str:
        return """
        body { font-family: -apple-system, BlinkMacSystemFont, 'Segoe UI', sans-serif; color: #333; margin: 2rem; }
        table { border-collapse: collapse; margin: 1rem 0; font-size: 0.9rem; }
        th, td { border: 1px solid #cbd5e1; padding: 4px 8px; text-align: right; }
        th { background: #f1f5f9; }
        strong { color: #b91c1c; }
        """


def cmd_report(in_csv: PathLike, out_md: PathLike, out_html: Optional[PathLike] = None) -> Path:
    """CSV → Markdown report (and HTML when out_html is given)"""
    return export_manager.write_report(in_csv, out_md, out_html)


# Global export manager instance
export_manager = ExportManager()
