"""Model-side companion tools for the vectorizer: score-distillation image
simplification, segmentation mask export, and neural similarity metrics,
all speaking the vectorizer's sequence.json / masks.json manifest formats.
"""

from .errors import ModelUnavailableError, ToolchainError, ValidationError
from .metrics import neural_metrics
from .pngio import load_rgb, save_rgb
from .sam_export import export_sam_masks, level_from_filename, write_masks_manifest
from .sds import (ALPHA_BAR, DiffusionBackend, SDSConfig, SmoothingStub,
                  cfg_combine, sds_simplify)

__all__ = [
    "ALPHA_BAR",
    "DiffusionBackend",
    "ModelUnavailableError",
    "SDSConfig",
    "SmoothingStub",
    "ToolchainError",
    "ValidationError",
    "cfg_combine",
    "export_sam_masks",
    "level_from_filename",
    "load_rgb",
    "neural_metrics",
    "save_rgb",
    "sds_simplify",
    "write_masks_manifest",
]

__version__ = "0.1.0"
