"""
X-Attack Application Configuration
Environment-driven application settings plus the typed configuration objects
of the attribution, attack, metric and sweep layers
"""

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, field_validator

from .utils import ConfigError, validate_attack_params, validate_grid

# Load environment variables
load_dotenv()

METHODS = ("saliency", "integrated_gradients", "deeplift_shap")
EXPLAIN_TARGETS = ("running_up", "predicted")

# Parameter grids of the reference experiment design
ALPHA_GRID = [0.03, 0.06, 0.09, 0.12, 0.15]
TOPK_GRID = [0.01, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8]
SUMMARY_TOPKS = [0.01, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8]


@dataclass
class AttributionConfig:
    """Attribution method configuration"""
    method: str = "saliency"
    ig_steps: int = 32
    ig_baseline: Optional[Any] = None  # ImageTensor; None means the all-zero image
    dls_baselines: Tuple[Any, ...] = ()  # explicit ImageTensor baselines
    dls_count: int = 8
    dls_stream: str = "deeplift_shap_baselines"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown attribution method {self.method!r}; expected one of {METHODS}")
        if self.ig_steps < 1:
            raise ConfigError(f"ig_steps must be >= 1, got {self.ig_steps}")
        if self.dls_count < 1:
            raise ConfigError(f"dls_count must be >= 1, got {self.dls_count}")
        self.dls_baselines = tuple(self.dls_baselines)


@dataclass
class AttackConfig:
    """Attack configuration (alpha, top-k fraction, candidate count)"""
    alpha: float = 0.09
    topk_frac: float = 0.1
    candidates_per_image: int = 3
    attribution: Optional[AttributionConfig] = None  # None: the explain config given to run_attack
    explain_target: str = "running_up"
    start_rank: int = 1

    def __post_init__(self):
        ok, message = validate_attack_params(self.alpha, self.topk_frac)
        if not ok:
            raise ConfigError(message)
        if self.candidates_per_image < 1:
            raise ConfigError(f"candidates_per_image must be >= 1, got {self.candidates_per_image}")
        if self.explain_target not in EXPLAIN_TARGETS:
            raise ConfigError(f"explain_target must be one of {EXPLAIN_TARGETS}, got {self.explain_target!r}")
        if self.start_rank < 1:
            raise ConfigError(f"start_rank is 1-based, got {self.start_rank}")


@dataclass
class SsimConfig:
    """SSIM constants and window scheme"""
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0
    window: int = 8
    stride: int = 1

    def __post_init__(self):
        if self.k1 <= 0 or self.k2 <= 0:
            raise ConfigError(f"k1 and k2 must be positive, got {self.k1}, {self.k2}")
        if self.dynamic_range <= 0:
            raise ConfigError(f"dynamic range must be positive, got {self.dynamic_range}")
        if self.window < 1:
            raise ConfigError(f"window must be a positive side length, got {self.window}")
        if self.stride != 1:
            raise ConfigError("only stride 1 windows are supported")

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2


class SweepSpec(BaseModel):
    """Experiment grid; JSON config keys equal the CLI flag names"""
    model_config = ConfigDict(extra="forbid")

    methods: List[str] = list(METHODS)
    alphas: List[float] = list(ALPHA_GRID)
    topks: List[float] = list(TOPK_GRID)
    candidates: int = 3
    images: Optional[int] = None  # None: one held-out image per class
    include_baseline: bool = True
    master_seed: int = 7
    ig_steps: int = 32
    dls_count: int = 8
    explain_target: str = "running_up"
    low_rank_window: Tuple[int, int] = (40, 42)

    @field_validator("methods")
    @classmethod
    def _check_methods(cls, value: List[str]) -> List[str]:
        if not value:
            raise ValueError("methods list is empty")
        unknown = [name for name in value if name not in METHODS]
        if unknown:
            raise ValueError(f"unknown method(s) {unknown}; expected a subset of {list(METHODS)}")
        return value

    @field_validator("alphas")
    @classmethod
    def _check_alphas(cls, value: List[float]) -> List[float]:
        ok, message = validate_grid(value, "alpha", 0.0, 1.0)
        if not ok:
            raise ValueError(message)
        return value

    @field_validator("topks")
    @classmethod
    def _check_topks(cls, value: List[float]) -> List[float]:
        ok, message = validate_grid(value, "top-k", 0.0, 1.0, include_high=True)
        if not ok:
            raise ValueError(message)
        return value

    @field_validator("candidates", "ig_steps", "dls_count")
    @classmethod
    def _check_positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError(f"must be >= 1, got {value}")
        return value

    @field_validator("images")
    @classmethod
    def _check_images(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and value < 1:
            raise ValueError(f"images must be >= 1, got {value}")
        return value

    @field_validator("explain_target")
    @classmethod
    def _check_target(cls, value: str) -> str:
        if value not in EXPLAIN_TARGETS:
            raise ValueError(f"explain_target must be one of {list(EXPLAIN_TARGETS)}")
        return value

    @field_validator("low_rank_window")
    @classmethod
    def _check_window(cls, value: Tuple[int, int]) -> Tuple[int, int]:
        first, last = value
        if first < 1 or last < first:
            raise ValueError(f"low_rank_window must be 1-based [first, last], got {list(value)}")
        return value

    def attribution_config(self, method: str) -> AttributionConfig:
        return AttributionConfig(method=method, ig_steps=self.ig_steps, dls_count=self.dls_count)


def load_sweep_spec(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None,
                    defaults: Optional[Dict[str, Any]] = None) -> SweepSpec:
    """Defaults, then the JSON config file (optional), then CLI overrides; flags win"""
    values: Dict[str, Any] = dict(defaults or {})
    if path:
        try:
            values.update(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read sweep config {path}: {exc}") from exc
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return SweepSpec(**values)


class AppConfig:
    """Application Configuration Class"""

    def __init__(self):
        self.environment = os.getenv("ENVIRONMENT", "development")
        self.debug = os.getenv("DEBUG", "false").lower() == "true"

        # Experiment defaults
        self.seed = int(os.getenv("XATK_SEED", "7"))
        self.workers = int(os.getenv("XATK_WORKERS", "1"))

        # Logging Configuration
        self.log_level = os.getenv("LOG_LEVEL", "DEBUG" if self.debug else "INFO")
        self.log_format = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

    def validate_config(self) -> Dict[str, str]:
        """Validate configuration completeness"""
        errors = {}

        if self.workers < 1:
            errors["workers"] = f"XATK_WORKERS must be >= 1, got {self.workers}"
        if self.log_level.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            errors["log_level"] = f"unknown LOG_LEVEL {self.log_level!r}"

        return errors

    def get_config_summary(self) -> Dict:
        """Get configuration summary"""
        return {
            "environment": self.environment,
            "debug": self.debug,
            "seed": self.seed,
            "workers": self.workers,
            "log_level": self.log_level,
        }


# Global configuration instance
config = AppConfig()
