"""Uniform local binary pattern histograms as built-in patch features.

Codes use the eight radius-1 neighbours, clockwise from east (y grows
downwards): E, SE, S, SW, W, NW, N, NE -> bits 0..7. A bit is set when the
neighbour is >= the centre, so flat regions give code 255.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import ShapeMismatchError
from .ingest import GrayImage
from .tiling import ImageDims, build_grid

__all__ = [
    "N_BINS", "NEIGHBOR_OFFSETS", "lbp_code", "lbp_codes", "uniform_bin_table",
    "lbp_histogram", "extract_features", "LBPFeatures",
]

# (dx, dy) per bit
NEIGHBOR_OFFSETS = ((1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1))
N_BINS = 59


def _transitions(code):
    bits = [(code >> i) & 1 for i in range(8)]
    return sum(bits[i] != bits[(i + 1) % 8] for i in range(8))


def uniform_bin_table():
    """Map each 8-bit code to its histogram bin.

    Uniform codes (at most two circular 0/1 transitions) get bins 0..57 in
    ascending code order; everything else shares bin 58.
    """
    table = np.full(256, N_BINS - 1, dtype=np.intp)
    uniform = [c for c in range(256) if _transitions(c) <= 2]
    table[uniform] = np.arange(len(uniform))
    return table


_BIN_TABLE = uniform_bin_table()


def _pixels(img):
    return img.pixels if isinstance(img, GrayImage) else np.asarray(img)


def lbp_code(img, x, y):
    """LBP code of the interior pixel at column ``x``, row ``y``."""
    px = _pixels(img)
    h, w = px.shape
    if not (1 <= x < w - 1 and 1 <= y < h - 1):
        raise IndexError(f"pixel ({x}, {y}) is on the border of a {w}x{h} image")
    center = px[y, x]
    code = 0
    for bit, (dx, dy) in enumerate(NEIGHBOR_OFFSETS):
        if px[y + dy, x + dx] >= center:
            code |= 1 << bit
    return code


def lbp_codes(pixels):
    """Codes for every interior pixel, shape ``(h - 2, w - 2)``."""
    px = np.asarray(pixels)
    h, w = px.shape
    center = px[1:h - 1, 1:w - 1]
    codes = np.zeros(center.shape, dtype=np.intp)
    for bit, (dx, dy) in enumerate(NEIGHBOR_OFFSETS):
        neighbor = px[1 + dy:h - 1 + dy, 1 + dx:w - 1 + dx]
        codes |= (neighbor >= center).astype(np.intp) << bit
    return codes


def _normalized_hist(codes):
    hist = np.bincount(_BIN_TABLE[codes.ravel()], minlength=N_BINS).astype(np.float64)
    return hist / hist.sum()


def lbp_histogram(img, rect):
    """L1-normalised uniform-LBP histogram over the interior of ``rect``.

    ``rect`` is a half-open ``(x0, y0, x1, y1)``; only pixels whose whole
    3x3 neighbourhood lies inside it are coded.
    """
    x0, y0, x1, y1 = rect
    if x1 - x0 < 3 or y1 - y0 < 3:
        raise ShapeMismatchError(f"patch {rect} is smaller than 3x3")
    px = _pixels(img)
    if x0 < 0 or y0 < 0 or y1 > px.shape[0] or x1 > px.shape[1]:
        raise ShapeMismatchError(f"patch {rect} exceeds image {px.shape[1]}x{px.shape[0]}")
    return _normalized_hist(lbp_codes(px[y0:y1, x0:x1]))


def extract_features(img, grid):
    """One 59-bin histogram per patch of ``grid``, row-major."""
    px = _pixels(img)
    if px.shape != (grid.dims.height, grid.dims.width):
        raise ShapeMismatchError(
            f"image {px.shape[1]}x{px.shape[0]} does not match grid "
            f"{grid.dims.width}x{grid.dims.height}")
    ps = grid.patch_size
    if ps < 3:
        raise ShapeMismatchError(f"patch size {ps} is smaller than 3")
    # Codes are computed once; a patch's interior codes only see its own pixels.
    bins = _BIN_TABLE[lbp_codes(px)]
    out = np.empty((grid.n_patches, N_BINS), dtype=np.float64)
    for p, (x, y) in enumerate(grid.origins):
        window = bins[y:y + ps - 2, x:x + ps - 2]
        hist = np.bincount(window.ravel(), minlength=N_BINS)
        out[p] = hist / hist.sum()
    return out


class LBPFeatures(BaseEstimator, TransformerMixin):
    """Stateless transformer from images to stacked per-patch histograms.

    ``transform`` takes a sequence of images (``GrayImage`` or 2-D arrays)
    and returns the row-wise concatenation of their patch features.
    """

    def __init__(self, patch_size=100, stride=50):
        self.patch_size = patch_size
        self.stride = stride

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        blocks = []
        for img in X:
            px = _pixels(img)
            grid = build_grid(ImageDims(px.shape[1], px.shape[0]), self.patch_size, self.stride)
            blocks.append(extract_features(px, grid))
        if not blocks:
            return np.empty((0, N_BINS))
        return np.vstack(blocks)
