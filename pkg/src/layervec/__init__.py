"""Layered vector graphics from raster images via differentiable rendering."""

__version__ = "0.1.0"

from .errors import (DecodeError, DegenerateShapeError, DivergenceError,
                     EmptyMaskError, InvalidSceneError, LayervecError,
                     ManifestError, ShapeMismatchError, UnsupportedSvgError,
                     ValidationError)
from .geometry import (Polyline, douglas_peucker, jaccard, overlap_fraction,
                       polyline_to_bezier, trace_boundary)
from .image import (BinaryMask, DiffRegion, Image, abs_diff,
                    connected_components, largest_component, load_png, save_png)
from .layering import LayerReport, LayerStack, build_layers, load_layers, save_layers, verify_layers
from .masks import MaskSet, builtin_segment, dedup_across_levels, import_masks, save_masks
from .metrics import MaskCompactness, VeCReport, mse, vec_compactness
from .optim import (AdamState, BudgetPlan, LossLog, StructureLossConfig,
                    adam_step, add_visual_paths, apply_pair_colors,
                    assign_pair_colors, build_layer_targets, cleanup,
                    fit_colors, init_structure_paths, mask_to_path,
                    pair_color_palette, run_stage1, run_stage2, structure_loss)
from .pipeline import RunResult, VectorizeConfig, run_vectorize
from .render import RasterCache, path_coverage_mask, render, render_with_grad
from .scene import (KIND_STRUCTURE, KIND_VISUAL, BezierPath, ParamGradients,
                    RenderConfig, Scene, UidAllocator)
from .simplify import (SimplificationSequence, bilateral_filter,
                       bilateral_sequence, gaussian_kernel, gaussian_sequence,
                       load_sequence, save_sequence, slic_labels, slic_sequence)
from .svgio import (export_svg, import_svg, load_scene_json, path_d,
                    save_scene_json, scene_from_dict, scene_to_dict)

__all__ = [name for name in dir() if not name.startswith("_")]
