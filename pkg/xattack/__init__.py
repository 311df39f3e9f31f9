"""
X-Attack: one-step black-box attacks on post-hoc explanations
Running-up-class attack images, top-k attribution injection, the attribution
methods it is measured against and the experiment harness around it
"""

__version__ = "1.0.0"
__license__ = "MIT"
__description__ = "Black-box, model-agnostic one-step attack on saliency, integrated gradients and DeepLIFT SHAP"

# Export key components
from .attack import run_attack
from .attribution import explain
from .config import config
from .export_manager import export_manager

__all__ = [
    "config",
    "explain",
    "export_manager",
    "run_attack",
]
