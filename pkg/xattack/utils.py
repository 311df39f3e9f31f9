"""
Utility Functions for X-Attack.

This module contains helper functions for:
- The shared exception base class.
- Input validation of parameter grids and CLI values.
- Atomic file output.
- Deterministic float formatting for CSV files.
- Markdown table rendering for reports.
"""

import logging
import os
import tempfile
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple, Union

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]


class XAttackError(Exception):
    """Base class of every error raised by the toolkit"""


class ConfigError(XAttackError, ValueError):
    """Invalid configuration value"""


def validate_grid(values: Sequence[float], name: str, low: float, high: float,
                  include_high: bool = False) -> Tuple[bool, str]:
    """Validate a parameter grid: nonempty, every value in (low, high) or (low, high]"""
    if not values:
        return False, f"❌ {name} grid is empty"

    for value in values:
        upper_ok = value <= high if include_high else value < high
        if not (value > low and upper_ok):
            bracket = "]" if include_high else ")"
            return False, f"❌ {name} value {value!r} outside ({low}, {high}{bracket}"

    return True, ""


def validate_attack_params(alpha: float, topk_frac: float, allow_identity: bool = False) -> Tuple[bool, str]:
    """α in (0, 1) and top-k in (0, 1]; allow_identity also admits α = 0 (sanity runs)"""
    low_ok = alpha >= 0.0 if allow_identity else alpha > 0.0
    if not (low_ok and alpha < 1.0):
        bracket = "[" if allow_identity else "("
        return False, f"❌ alpha {alpha!r} outside {bracket}0, 1)"
    if not 0.0 < topk_frac <= 1.0:
        return False, f"❌ topk_frac {topk_frac!r} outside (0, 1]"
    return True, ""


def parse_float_list(text: str) -> List[float]:
    """Parse a comma separated list of floats ("0.03,0.06")"""
    items = [item.strip() for item in text.split(",") if item.strip()]
    return [float(item) for item in items]


def format_float(value: float) -> str:
    """Shortest round-trip representation, stable across runs"""
    return repr(float(value))


def atomic_write_bytes(path: PathLike, payload: bytes) -> Path:
    """Write to a temporary file in the target directory, then rename over the target"""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)

    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp_name, target)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise

    logger.debug(f"💾 Wrote {len(payload)} bytes to {target}")
    return target


def atomic_write_text(path: PathLike, text: str) -> Path:
    """Text variant of atomic_write_bytes (UTF-8, newlines untouched)"""
    return atomic_write_bytes(path, text.encode("utf-8"))


def join_flags(flags: Iterable[str]) -> str:
    """Flags are stored in CSV cells as a ';' separated, de-duplicated, ordered list"""
    seen: List[str] = []
    for flag in flags:
        if flag and flag not in seen:
            seen.append(flag)
    return ";".join(seen)


def markdown_table(headers: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    """Pipe table; cells are converted with str()"""
    lines = [
        "| " + " | ".join(str(h) for h in headers) + " |",
        "|" + "|".join("---" for _ in headers) + "|",
    ]
    for row in rows:
        lines.append("| " + " | ".join(str(cell) for cell in row) + " |")
    return "\n".join(lines)
