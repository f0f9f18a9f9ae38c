"""Python bindings for the msca segmentation core."""

from ._core import (
    ConfigError,
    DimensionError,
    FormatError,
    IoError,
    Model,
    NumericalError,
    ValidationError,
    acc,
    box_from_mask,
    clip_percentiles,
    dice,
    gradcheck,
    gradcheck_modules,
    hd95,
    hd95_fast,
    iou,
    minmax_normalize,
    nearest_rank_percentile,
    normalize_intensities,
    perturb_boxes,
    perturbation_max,
    resize,
    synthetic_sample,
    window_ct,
)

__all__ = [name for name in dir() if not name.startswith("_")]
