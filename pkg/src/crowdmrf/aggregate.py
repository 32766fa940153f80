"""Whole-image counts from overlapping patch counts, and density rasters.

With stride = patch_size / 2, the patches whose origins are multiples of
patch_size form a disjoint tiling and are summed at full weight. When an
axis is not a multiple of patch_size, its edge-snapped final patch overlaps
the last full tile and is summed at half weight (a quarter at the corner
where both axes are snapped).
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import FormatError, ShapeMismatchError, StrideError
from .ingest import atomic_write, encode_pgm

__all__ = [
    "TileSelection", "select_tiles", "image_count", "density_raster",
    "coverage_multiplicity", "save_raster", "load_raster", "raster_to_pgm",
]

RASTER_MAGIC = "DMAP01"


@dataclass(frozen=True)
class TileSelection:
    indices: np.ndarray
    weights: np.ndarray

    def __iter__(self):
        return iter(zip(self.indices.tolist(), self.weights.tolist()))

    def __len__(self):
        return len(self.indices)


def _axis_weights(starts, length, patch_size):
    weights = np.zeros(len(starts))
    covered = 0
    for i, s in enumerate(starts):
        if s % patch_size == 0 and s + patch_size <= length:
            weights[i] = 1.0
            covered = max(covered, s + patch_size)
    if covered < length:
        weights[-1] = 0.5
    return weights


def select_tiles(grid):
    """Patches (and weights) that enter the whole-image sum."""
    if grid.patch_size % 2 or grid.stride * 2 != grid.patch_size:
        raise StrideError(
            f"tile selection needs stride = patch_size / 2, got stride {grid.stride} "
            f"for patch size {grid.patch_size}")
    wx = _axis_weights(grid.x_starts, grid.dims.width, grid.patch_size)
    wy = _axis_weights(grid.y_starts, grid.dims.height, grid.patch_size)
    w = np.outer(wy, wx).ravel()
    idx = np.flatnonzero(w)
    return TileSelection(idx, w[idx])


def image_count(counts, selection):
    """Weighted sum of the selected patch counts."""
    counts = np.asarray(counts, dtype=np.float64).ravel()
    if len(selection) and selection.indices.max() >= counts.size:
        raise IndexError(
            f"selection uses patch {selection.indices.max()} but only "
            f"{counts.size} counts were given")
    return float(np.dot(counts[selection.indices], selection.weights))


def coverage_multiplicity(grid):
    """Number of patches covering each pixel, shape ``(height, width)``."""
    cover = np.zeros((grid.dims.height, grid.dims.width), dtype=np.int64)
    ps = grid.patch_size
    for x, y in grid.origins:
        cover[y:y + ps, x:x + ps] += 1
    return cover


def density_raster(grid, counts):
    """Per-pixel density: every patch spreads its count uniformly, and each
    pixel averages over the patches that cover it."""
    counts = np.asarray(counts, dtype=np.float64).ravel()
    if counts.size != grid.n_patches:
        raise ShapeMismatchError(f"{counts.size} counts for {grid.n_patches} patches")
    ps = grid.patch_size
    raster = np.zeros((grid.dims.height, grid.dims.width))
    for (x, y), c in zip(grid.origins, counts):
        raster[y:y + ps, x:x + ps] += c / (ps * ps)
    return raster / coverage_multiplicity(grid)


def save_raster(raster, path):
    raster = np.asarray(raster, dtype="<f4")
    h, w = raster.shape
    atomic_write(path, f"{RASTER_MAGIC} {w} {h}\n".encode("ascii") + raster.tobytes())


def load_raster(path):
    with open(path, "rb") as fh:
        data = fh.read()
    nl = data.find(b"\n")
    parts = data[:nl].split() if nl > 0 else []
    if len(parts) != 3 or parts[0] != RASTER_MAGIC.encode():
        raise FormatError("bad raster header", offset=0)
    w, h = int(parts[1]), int(parts[2])
    if len(data) - nl - 1 != 4 * w * h:
        raise FormatError("raster payload size mismatch", offset=nl + 1)
    return np.frombuffer(data, dtype="<f4", offset=nl + 1).reshape(h, w).astype(np.float32)


def raster_to_pgm(raster, path):
    """Max-normalised 8-bit preview of a raster."""
    raster = np.asarray(raster, dtype=np.float64)
    top = raster.max()
    scaled = raster / top * 255.0 if top > 0 else np.zeros_like(raster)
    atomic_write(path, encode_pgm(np.round(scaled).astype(np.uint8)))
