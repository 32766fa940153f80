"""Overlapping patch decomposition and the 4-connected patch graph.

Patches are half-open squares ``[x, x + patch_size) x [y, y + patch_size)``
indexed row-major (``p = row * cols + col``). Every per-patch array in the
package uses that order.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionError, FormatError, StrideError

__all__ = ["ImageDims", "PatchGrid", "build_grid", "adjacency", "axis_starts"]


@dataclass(frozen=True)
class ImageDims:
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image dims must be positive, got {self.width}x{self.height}")


def axis_starts(length, patch_size, stride):
    """Patch start offsets along one axis.

    Regular steps of ``stride`` plus one extra start snapped to
    ``length - patch_size`` when the steps do not land on the edge.
    """
    last = length - patch_size
    starts = list(range(0, last + 1, stride))
    if starts[-1] != last:
        starts.append(last)
    return starts


@dataclass(frozen=True)
class PatchGrid:
    dims: ImageDims
    patch_size: int
    stride: int
    rows: int
    cols: int
    x_starts: tuple = field(repr=False)
    y_starts: tuple = field(repr=False)

    @property
    def n_patches(self):
        return self.rows * self.cols

    @property
    def origins(self):
        """Top-left ``(x, y)`` of every patch, row-major."""
        return [(x, y) for y in self.y_starts for x in self.x_starts]

    def origin(self, p):
        row, col = divmod(p, self.cols)
        return self.x_starts[col], self.y_starts[row]

    def index(self, row, col):
        return row * self.cols + col

    def rect(self, p):
        """Half-open pixel rectangle ``(x0, y0, x1, y1)`` of patch ``p``."""
        x, y = self.origin(p)
        return x, y, x + self.patch_size, y + self.patch_size

    def origins_array(self):
        xs, ys = np.meshgrid(self.x_starts, self.y_starts)
        return np.stack([xs.ravel(), ys.ravel()], axis=1)

    def to_record(self):
        return (f"width={self.dims.width} height={self.dims.height} "
                f"patch_size={self.patch_size} stride={self.stride} "
                f"rows={self.rows} cols={self.cols}")

    @classmethod
    def from_record(cls, text):
        try:
            fields = dict(tok.split("=", 1) for tok in text.split())
            grid = build_grid(ImageDims(int(fields["width"]), int(fields["height"])),
                              int(fields["patch_size"]), int(fields["stride"]))
        except (KeyError, ValueError) as exc:
            raise FormatError(f"bad grid record {text!r}: {exc}") from exc
        if (grid.rows, grid.cols) != (int(fields.get("rows", grid.rows)),
                                      int(fields.get("cols", grid.cols))):
            raise FormatError(f"grid record {text!r} disagrees with its own geometry")
        return grid


def build_grid(dims, patch_size=100, stride=50):
    """Tile ``dims`` with square patches of ``patch_size`` every ``stride`` pixels."""
    if patch_size < 1:
        raise StrideError(f"patch size must be >= 1, got {patch_size}")
    if stride < 1 or stride > patch_size:
        raise StrideError(f"stride must be in [1, {patch_size}], got {stride}")
    if dims.width < patch_size:
        raise DimensionError("width", dims.width, patch_size)
    if dims.height < patch_size:
        raise DimensionError("height", dims.height, patch_size)
    xs = axis_starts(dims.width, patch_size, stride)
    ys = axis_starts(dims.height, patch_size, stride)
    return PatchGrid(dims, patch_size, stride, len(ys), len(xs), tuple(xs), tuple(ys))


def adjacency(grid):
    """Sorted list of 4-neighbour index pairs ``(p, q)`` with ``p < q``."""
    edges = []
    for r in range(grid.rows):
        for c in range(grid.cols):
            p = grid.index(r, c)
            if c + 1 < grid.cols:
                edges.append((p, p + 1))
            if r + 1 < grid.rows:
                edges.append((p, p + grid.cols))
    edges.sort()
    return edges
