"""Reading images, head annotations and per-patch feature files.

Images are binary PGM (``P5``, maxval 255). Annotations are CSV files with a
``x,y`` header. Feature matrices use the CFEAT layout::

    b"CFEAT01\\n"                                   8 bytes
    width, height, patch_size, stride, n_patches, dim   6 x uint32 LE
    n_patches * dim float32 LE, row-major, canonical patch order
"""

import csv
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .exceptions import FormatError, ShapeMismatchError, UnsupportedFormatError
from .tiling import ImageDims

__all__ = [
    "GrayImage", "AnnotationSet", "load_image", "save_image", "load_annotations",
    "save_annotations", "patch_ground_truth", "load_features", "save_features",
    "read_cfeat_header", "atomic_write",
]

CFEAT_MAGIC = b"CFEAT01\n"
_CFEAT_HEADER = struct.Struct("<6I")
_WHITESPACE = b" \t\r\n\v\f"


@dataclass(frozen=True)
class GrayImage:
    dims: ImageDims
    pixels: np.ndarray  # (height, width) uint8

    @classmethod
    def from_array(cls, array):
        array = np.ascontiguousarray(array, dtype=np.uint8)
        if array.ndim != 2:
            raise ShapeMismatchError(f"expected a 2-D array, got shape {array.shape}")
        h, w = array.shape
        return cls(ImageDims(w, h), array)

    @property
    def width(self):
        return self.dims.width

    @property
    def height(self):
        return self.dims.height


@dataclass(frozen=True)
class AnnotationSet:
    points: np.ndarray  # (n, 2) float64, columns x, y
    image_id: str = ""

    def __len__(self):
        return len(self.points)


def atomic_write(path, data):
    """Write ``data`` next to ``path`` then rename over it."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _pgm_token(data, pos):
    """Next whitespace-delimited header token, skipping ``#`` comments."""
    n = len(data)
    while pos < n:
        if data[pos] in _WHITESPACE:
            pos += 1
        elif data[pos] == ord("#"):
            while pos < n and data[pos] not in b"\r\n":
                pos += 1
        else:
            break
    if pos >= n:
        raise FormatError("truncated PGM header", offset=pos)
    start = pos
    while pos < n and data[pos] not in _WHITESPACE and data[pos] != ord("#"):
        pos += 1
    return data[start:pos], start, pos


def parse_pgm(data):
    token, start, pos = _pgm_token(data, 0)
    if token in (b"P1", b"P2", b"P3", b"P4", b"P6"):
        raise UnsupportedFormatError(
            f"unsupported netpbm variant {token.decode()!s}, only P5 is read", offset=start)
    if token != b"P5":
        raise FormatError(f"bad magic {token[:8]!r}", offset=start)
    values = []
    for name in ("width", "height", "maxval"):
        token, start, pos = _pgm_token(data, pos)
        if not token.isdigit():
            raise FormatError(f"bad {name} {token[:16]!r}", offset=start)
        values.append(int(token))
    width, height, maxval = values
    if width < 1 or height < 1:
        raise FormatError(f"bad dimensions {width}x{height}", offset=start)
    if maxval != 255:
        raise UnsupportedFormatError(f"maxval {maxval} not supported, need 255", offset=start)
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise FormatError("missing whitespace after maxval", offset=pos)
    pos += 1
    need = width * height
    payload = data[pos:pos + need]
    if len(payload) < need:
        raise FormatError(
            f"truncated pixel data: need {need} bytes, found {len(payload)}",
            offset=pos + len(payload))
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()
    return GrayImage(ImageDims(width, height), pixels)


def load_image(path):
    """Read a binary 8-bit PGM file."""
    with open(path, "rb") as fh:
        return parse_pgm(fh.read())


def encode_pgm(image):
    pixels = image.pixels if isinstance(image, GrayImage) else np.asarray(image)
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    return b"P5\n%d %d\n255\n" % (w, h) + pixels.tobytes()


def save_image(image, path):
    atomic_write(path, encode_pgm(image))


def load_annotations(path, dims=None, image_id=None):
    """Read head positions from a ``x,y`` CSV.

    When ``dims`` is given, points outside ``[0, width) x [0, height)`` are
    rejected with the offending line number.
    """
    if image_id is None:
        image_id = os.path.splitext(os.path.basename(os.fspath(path)))[0]
    points = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["x", "y"]:
            raise FormatError(f"expected header 'x,y', got {header!r}", line=1)
        for row in reader:
            lineno = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 2:
                raise FormatError(f"expected 2 fields, got {len(row)}", line=lineno)
            try:
                x, y = float(row[0]), float(row[1])
            except ValueError:
                raise FormatError(f"non-numeric coordinate in {','.join(row)!r}",
                                  line=lineno) from None
            if not (np.isfinite(x) and np.isfinite(y)):
                raise FormatError("non-finite coordinate", line=lineno)
            if dims is not None and not (0 <= x < dims.width and 0 <= y < dims.height):
                raise FormatError(
                    f"point ({x}, {y}) outside {dims.width}x{dims.height} image",
                    line=lineno)
            points.append((x, y))
    return AnnotationSet(np.array(points, dtype=np.float64).reshape(-1, 2), image_id)


def save_annotations(points, path):
    lines = ["x,y"] + [f"{x!r},{y!r}" for x, y in np.asarray(points, dtype=float).tolist()]
    atomic_write(path, ("\n".join(lines) + "\n").encode())


def patch_ground_truth(annotations, grid):
    """Number of annotated heads inside each patch.

    A point belongs to every patch whose half-open rectangle contains it, so
    overlapping patches share points but a disjoint tiling counts each once.
    """
    pts = annotations.points if isinstance(annotations, AnnotationSet) else annotations
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    origins = grid.origins_array()
    x0 = origins[:, 0][:, None]
    y0 = origins[:, 1][:, None]
    ps = grid.patch_size
    inside = ((pts[:, 0] >= x0) & (pts[:, 0] < x0 + ps)
              & (pts[:, 1] >= y0) & (pts[:, 1] < y0 + ps))
    return inside.sum(axis=1).astype(np.float64)


def read_cfeat_header(data):
    if len(data) < len(CFEAT_MAGIC) + _CFEAT_HEADER.size:
        raise FormatError("truncated CFEAT header", offset=len(data))
    if data[:len(CFEAT_MAGIC)] != CFEAT_MAGIC:
        raise FormatError(f"bad CFEAT magic {data[:8]!r}", offset=0)
    fields = _CFEAT_HEADER.unpack_from(data, len(CFEAT_MAGIC))
    return dict(zip(("width", "height", "patch_size", "stride", "n_patches", "dim"), fields))


def load_features(path, grid=None):
    """Read a CFEAT file into an ``(n_patches, dim)`` float32 array.

    With ``grid``, the stored patch count and geometry must match it.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    header = read_cfeat_header(data)
    n, dim = header["n_patches"], header["dim"]
    if grid is not None:
        if n != grid.n_patches:
            raise ShapeMismatchError(
                f"feature file has {n} patches but the grid has {grid.n_patches}")
        stored = (header["width"], header["height"], header["patch_size"], header["stride"])
        expected = (grid.dims.width, grid.dims.height, grid.patch_size, grid.stride)
        if stored != expected:
            raise ShapeMismatchError(
                f"feature file geometry {stored} does not match grid {expected}")
    start = len(CFEAT_MAGIC) + _CFEAT_HEADER.size
    need = n * dim * 4
    if len(data) - start < need:
        raise FormatError(f"truncated CFEAT payload: need {need} bytes",
                          offset=len(data))
    if len(data) - start > need:
        raise FormatError("trailing bytes after CFEAT payload", offset=start + need)
    values = np.frombuffer(data, dtype="<f4", count=n * dim, offset=start)
    values = values.astype(np.float32).reshape(n, dim)
    if not np.isfinite(values).all():
        bad = int(np.flatnonzero(~np.isfinite(values.ravel()))[0])
        raise FormatError("non-finite feature value", offset=start + 4 * bad)
    return values


def save_features(matrix, grid, path):
    """Write ``matrix`` (one row per patch of ``grid``) as CFEAT."""
    matrix = np.asarray(matrix, dtype=np.float32)
    if matrix.ndim != 2 or matrix.shape[0] != grid.n_patches:
        raise ShapeMismatchError(
            f"matrix shape {matrix.shape} does not fit a grid of {grid.n_patches} patches")
    if not np.isfinite(matrix).all():
        raise ValueError("feature matrix contains NaN or infinite values")
    header = _CFEAT_HEADER.pack(grid.dims.width, grid.dims.height, grid.patch_size,
                                grid.stride, matrix.shape[0], matrix.shape[1])
    atomic_write(path, CFEAT_MAGIC + header + matrix.astype("<f4").tobytes())
