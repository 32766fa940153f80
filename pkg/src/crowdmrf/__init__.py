"""Crowd counting from overlapping patches with MRF smoothing of patch counts."""

__version__ = "0.1.0"

from .aggregate import density_raster, image_count, select_tiles
from .evaluation import group_report, mae, make_folds, mse
from .features import LBPFeatures, extract_features
from .ingest import load_annotations, load_features, load_image, patch_ground_truth, save_features
from .mrf import MRFSmoother, MrfParams, MrfProblem, smooth
from .pipeline import CrowdCounter
from .regressor import MLPCountRegressor
from .tiling import ImageDims, adjacency, build_grid

__all__ = [
    "ImageDims", "build_grid", "adjacency", "load_image", "load_annotations",
    "load_features", "save_features", "patch_ground_truth", "extract_features",
    "LBPFeatures", "MLPCountRegressor", "MrfParams", "MrfProblem", "smooth",
    "MRFSmoother", "select_tiles", "image_count", "density_raster", "mae", "mse",
    "make_folds", "group_report", "CrowdCounter",
]
