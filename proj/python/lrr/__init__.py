"""Multi-resolution semantic segmentation with basis reconstruction and boundary-masked refinement."""

from ._lrr import (
    ConfigError,
    FormatError,
    Model,
    NumericError,
    ShapeError,
    bilinear_resize,
    boundary_mask,
    conv2d,
    disk_dilate,
    disk_erode,
    fit_basis_pca,
    generate_shapes,
    gradcheck,
    maxpool2d,
    metrics,
    oracle_check,
    reconstruct,
    reconstruct_backward,
    softmax_channels,
    tent_basis,
    train,
    trimap_band,
    trimap_curve,
    write_shapes,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "Model",
    "NumericError",
    "ShapeError",
    "bilinear_resize",
    "boundary_mask",
    "conv2d",
    "disk_dilate",
    "disk_erode",
    "fit_basis_pca",
    "generate_shapes",
    "gradcheck",
    "maxpool2d",
    "metrics",
    "oracle_check",
    "reconstruct",
    "reconstruct_backward",
    "softmax_channels",
    "tent_basis",
    "train",
    "trimap_band",
    "trimap_curve",
    "write_shapes",
]
