"""
Trend Checks
Qualitative behaviour of the attack measured on aggregated result tables:
α-monotonicity, diminishing returns in α, top-k saturation, attack vs
baseline, SSIM ordering, prediction preservation, running-up superiority and
confidence-rank dominance.

Thresholds are fixed here before any experiment is run. Every verdict keeps
the grid it was computed on so a failing check can be reported in full.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from .harness import (CompareRow, RankRow, ResultRow, aggregate, compare_summary, rank_summary,
                      read_results)
from .utils import PathLike, atomic_write_text, markdown_table

logger = logging.getLogger(__name__)

MONOTONE_TOPK = 0.1
SATURATION_ALPHA = 0.06
SATURATION_LOW = (0.01, 0.05)
SATURATION_HIGH = (0.6, 0.8)
BASELINE_WIN_RATE = 0.8
SSIM_BASELINE_RATE = 0.7
PRESERVATION_MAX_ALPHA = 0.06
PRESERVATION_LIMIT_PP = 10.0
RUNNING_UP_RATE = 0.7
CONFIDENCE_RANK_RATE = 0.7


@dataclass
class TrendVerdict:
    """Outcome of one check; passed is None when the grid lacks the needed cells"""
    name: str
    passed: Optional[bool]
    statistic: float
    threshold: float
    detail: str
    grid: pd.DataFrame = field(default_factory=pd.DataFrame, repr=False)

    @property
    def status(self) -> str:
        if self.passed is None:
            return "n/a"
        return "pass" if self.passed else "FAIL"

    def describe(self) -> str:
        """Verdict plus the full grid, for failure messages"""
        return f"{self.name}: {self.status} ({self.detail})\n{self.grid.to_string()}"


def _select(frame: pd.DataFrame, column: str, value: float) -> pd.DataFrame:
    return frame[np.isclose(frame[column].astype(float), value)]


def _variant(agg: pd.DataFrame, variant: str) -> pd.DataFrame:
    return agg[agg["variant"] == variant]


def _not_applicable(name: str, threshold: float, reason: str, grid: pd.DataFrame) -> TrendVerdict:
    return TrendVerdict(name, None, float("nan"), threshold, reason, grid)


def _alpha_series(agg: pd.DataFrame, topk: float, column: str, variant: str = "attack"):
    """Per method: (alphas, values) at a fixed top-k, sorted by α"""
    rows = _select(_variant(agg, variant), "topk", topk)
    for method, group in rows.groupby("method", sort=True):
        group = group.sort_values("alpha")
        yield method, group["alpha"].to_numpy(dtype=float), group[column].to_numpy(dtype=float)


def alpha_monotonicity(agg: pd.DataFrame, topk: float = MONOTONE_TOPK) -> TrendVerdict:
    """Mean explanation change strictly increases with α at fixed top-k (Spearman ρ = 1 per method)"""
    name = "alpha_monotonicity"
    grid = _select(_variant(agg, "attack"), "topk", topk)
    results = []
    for method, alphas, values in _alpha_series(agg, topk, "expl_mean"):
        if len(alphas) < 2:
            continue
        rho = float(stats.spearmanr(alphas, values).correlation) if np.ptp(values) > 0 else 0.0
        results.append((method, rho, bool(np.all(np.diff(values) > 0))))
    if not results:
        return _not_applicable(name, 1.0, f"needs at least two α values at top-k {topk}", grid)

    passed = all(strict for _, _, strict in results)
    detail = ", ".join(f"{method}: ρ={rho:.3f}" for method, rho, _ in results)
    return TrendVerdict(name, passed, min(rho for _, rho, _ in results), 1.0, detail, grid)


def alpha_diminishing_returns(agg: pd.DataFrame, topk: float = MONOTONE_TOPK) -> TrendVerdict:
    """The gain between the last two α values is smaller than between the first two"""
    name = "alpha_diminishing_returns"
    grid = _select(_variant(agg, "attack"), "topk", topk)
    results = []
    for method, alphas, values in _alpha_series(agg, topk, "expl_mean"):
        if len(alphas) < 3:
            continue
        gaps = np.diff(values)
        results.append((method, bool(gaps[-1] < gaps[0])))
    if not results:
        return _not_applicable(name, 1.0, f"needs at least three α values at top-k {topk}", grid)

    rate = sum(ok for _, ok in results) / len(results)
    detail = ", ".join(f"{method}: {'shrinking' if ok else 'not shrinking'}" for method, ok in results)
    return TrendVerdict(name, rate == 1.0, rate, 1.0, detail, grid)


def topk_saturation(agg: pd.DataFrame, alpha: float = SATURATION_ALPHA) -> TrendVerdict:
    """Marginal gain from top-k 0.6 → 0.8 is below the gain from 0.01 → 0.05"""
    name = "topk_saturation"
    grid = _select(_variant(agg, "attack"), "alpha", alpha)
    results = []
    for method, group in grid.groupby("method", sort=True):
        values = {}
        for topk in SATURATION_LOW + SATURATION_HIGH:
            match = _select(group, "topk", topk)
            if not match.empty:
                values[topk] = float(match["expl_mean"].iloc[0])
        if len(values) < 4:
            continue
        low_gain = values[SATURATION_LOW[1]] - values[SATURATION_LOW[0]]
        high_gain = values[SATURATION_HIGH[1]] - values[SATURATION_HIGH[0]]
        results.append((method, low_gain, high_gain))
    if not results:
        return _not_applicable(name, 1.0, f"needs top-k {SATURATION_LOW + SATURATION_HIGH} at α {alpha}", grid)

    passed = all(high < low for _, low, high in results)
    rate = sum(high < low for _, low, high in results) / len(results)
    detail = ", ".join(f"{m}: early gain {low:.2f} vs late gain {high:.2f}" for m, low, high in results)
    return TrendVerdict(name, passed, rate, 1.0, detail, grid)


def _paired(agg: pd.DataFrame, column: str) -> pd.DataFrame:
    keys = ["method", "alpha", "topk"]
    attack = _variant(agg, "attack")[keys + [column]].rename(columns={column: "attack"})
    baseline = _variant(agg, "baseline")[keys + [column]].rename(columns={column: "baseline"})
    return attack.merge(baseline, on=keys, how="inner")


def baseline_win_rate(agg: pd.DataFrame, threshold: float = BASELINE_WIN_RATE) -> TrendVerdict:
    """Share of (α, top-k, method) cells where the attack beats the matched Gaussian baseline"""
    name = "attack_beats_baseline"
    grid = _paired(agg, "expl_mean")
    if grid.empty:
        return _not_applicable(name, threshold, "no baseline rows", grid)
    rate = float((grid["attack"] > grid["baseline"]).mean())
    return TrendVerdict(name, rate >= threshold, rate, threshold,
                        f"attack ahead in {rate:.0%} of {len(grid)} cells", grid)


def ssim_ordering(agg: pd.DataFrame, topk: float = MONOTONE_TOPK,
                  threshold: float = SSIM_BASELINE_RATE) -> TrendVerdict:
    """Attack SSIM falls as α grows, and baseline SSIM is at least the attack's in most cells"""
    name = "ssim_ordering"
    monotone = []
    for method, alphas, values in _alpha_series(agg, topk, "ssim_mean"):
        if len(alphas) >= 2:
            monotone.append((method, bool(np.all(np.diff(values) <= 0))))
    grid = _paired(agg, "ssim_mean")
    if not monotone or grid.empty:
        return _not_applicable(name, threshold, "needs several α values and baseline rows", grid)

    rate = float((grid["baseline"] >= grid["attack"]).mean())
    decreasing = all(ok for _, ok in monotone)
    detail = (f"attack SSIM {'decreasing' if decreasing else 'not decreasing'} in α at top-k {topk}; "
              f"baseline ≥ attack in {rate:.0%} of cells")
    return TrendVerdict(name, decreasing and rate >= threshold, rate, threshold, detail, grid)


def prediction_preservation(agg: pd.DataFrame, max_alpha: float = PRESERVATION_MAX_ALPHA,
                            limit_pp: float = PRESERVATION_LIMIT_PP) -> TrendVerdict:
    """Mean confidence change stays under limit_pp percentage points for α ≤ max_alpha"""
    name = "prediction_preservation"
    attack = _variant(agg, "attack")
    grid = attack[attack["alpha"].astype(float) <= max_alpha + 1e-12]
    if grid.empty:
        return _not_applicable(name, limit_pp, f"no cells with α ≤ {max_alpha}", grid)
    worst = float(grid["conf_mean"].max())
    return TrendVerdict(name, worst < limit_pp, worst, limit_pp,
                        f"largest mean confidence change {worst:.2f} pp over {len(grid)} cells", grid)


def running_up_superiority(summary: pd.DataFrame, threshold: float = RUNNING_UP_RATE) -> TrendVerdict:
    """Running-up explanation change ≥ the other-class mean in most (method, α, top-k) cells"""
    name = "running_up_superiority"
    if summary.empty:
        return _not_applicable(name, threshold, "no class-comparison rows", summary)
    grid = summary.groupby(["method", "alpha", "topk"], sort=True)[["running_up", "other_mean"]].mean().reset_index()
    rate = float((grid["running_up"] >= grid["other_mean"]).mean())
    return TrendVerdict(name, rate >= threshold, rate, threshold,
                        f"running-up class at least as effective in {rate:.0%} of {len(grid)} cells", grid)


def confidence_rank_dominance(summary: pd.DataFrame, threshold: float = CONFIDENCE_RANK_RATE) -> TrendVerdict:
    """Top-confidence attack images match or beat the low-rank window in most cells"""
    name = "confidence_rank_dominance"
    if summary.empty:
        return _not_applicable(name, threshold, "no paired confidence-rank rows", summary)
    grid = summary.groupby(["method", "alpha", "topk"], sort=True)[["top", "low"]].mean().reset_index()
    rate = float((grid["top"] >= grid["low"]).mean())
    return TrendVerdict(name, rate >= threshold, rate, threshold,
                        f"top-ranked images at least as effective in {rate:.0%} of {len(grid)} cells", grid)


def sweep_trends(agg: pd.DataFrame) -> List[TrendVerdict]:
    return [
        alpha_monotonicity(agg),
        alpha_diminishing_returns(agg),
        topk_saturation(agg),
        baseline_win_rate(agg),
        ssim_ordering(agg),
        prediction_preservation(agg),
    ]


def evaluate_trends(sweep: Optional[pd.DataFrame] = None, compare: Optional[pd.DataFrame] = None,
                    rank: Optional[pd.DataFrame] = None) -> List[TrendVerdict]:
    """Run every check whose raw results are available"""
    verdicts: List[TrendVerdict] = []
    if sweep is not None:
        verdicts.extend(sweep_trends(aggregate(sweep)))
    if compare is not None:
        verdicts.append(running_up_superiority(compare_summary(compare)))
    if rank is not None:
        verdicts.append(confidence_rank_dominance(rank_summary(rank)))
    return verdicts


def render_verdicts(verdicts: List[TrendVerdict]) -> str:
    rows = [
        (v.name, v.status, "-" if np.isnan(v.statistic) else f"{v.statistic:.3f}", f"{v.threshold:g}", v.detail)
        for v in verdicts
    ]
    return markdown_table(["check", "verdict", "statistic", "threshold", "detail"], rows)


def cmd_trends(out_md: PathLike, sweep_csv: Optional[PathLike] = None, compare_csv: Optional[PathLike] = None,
               rank_csv: Optional[PathLike] = None) -> Tuple[Path, List[TrendVerdict]]:
    """Evaluate the checks over whichever result files are given and write a Markdown summary"""
    verdicts = evaluate_trends(
        read_results(sweep_csv, ResultRow) if sweep_csv else None,
        read_results(compare_csv, CompareRow) if compare_csv else None,
        read_results(rank_csv, RankRow) if rank_csv else None,
    )
    for verdict in verdicts:
        if verdict.passed is False:
            logger.warning(f"⚠️ Trend check failed: {verdict.describe()}")
        else:
            logger.info(f"🔍 {verdict.name}: {verdict.status} ({verdict.detail})")

    text = "# Trend checks\n\n" + render_verdicts(verdicts) + "\n"
    return atomic_write_text(out_md, text), verdicts
