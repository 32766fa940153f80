import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crowdmrf.exceptions import DimensionError, FormatError, StrideError
from crowdmrf.tiling import ImageDims, PatchGrid, adjacency, build_grid


def brute_coverage(grid):
    cover = np.zeros((grid.dims.height, grid.dims.width), dtype=int)
    for x, y in grid.origins:
        cover[y:y + grid.patch_size, x:x + grid.patch_size] += 1
    return cover


def brute_edges(grid):
    cells = [(r, c) for r in range(grid.rows) for c in range(grid.cols)]
    return sorted(
        (grid.index(*a), grid.index(*b))
        for a, b in itertools.combinations(cells, 2)
        if abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1)


def test_square_300():
    grid = build_grid(ImageDims(300, 300), 100, 50)
    assert (grid.rows, grid.cols, grid.n_patches) == (5, 5, 25)
    assert all(x % 50 == 0 and y % 50 == 0 for x, y in grid.origins)


def test_single_patch():
    grid = build_grid(ImageDims(100, 100), 100, 50)
    assert grid.origins == [(0, 0)]


def test_250_by_200():
    grid = build_grid(ImageDims(250, 200), 100, 50)
    assert grid.x_starts == (0, 50, 100, 150)
    assert grid.y_starts == (0, 50, 100)
    assert grid.n_patches == 12
    assert brute_coverage(grid).min() >= 1


def test_ragged_edge_is_snapped():
    grid = build_grid(ImageDims(230, 180), 100, 50)
    assert grid.x_starts == (0, 50, 100, 130)
    assert grid.y_starts == (0, 50, 80)


@pytest.mark.parametrize("w,h,axis", [(99, 300, "width"), (300, 40, "height")])
def test_too_small(w, h, axis):
    with pytest.raises(DimensionError, match=axis):
        build_grid(ImageDims(w, h), 100, 50)


@pytest.mark.parametrize("stride", [0, 101, -5])
def test_bad_stride(stride):
    with pytest.raises(StrideError):
        build_grid(ImageDims(300, 300), 100, stride)


def test_index_is_row_major():
    grid = build_grid(ImageDims(250, 200), 100, 50)
    for p in range(grid.n_patches):
        r, c = divmod(p, grid.cols)
        assert grid.origin(p) == (grid.x_starts[c], grid.y_starts[r])
        assert grid.origins[p] == grid.origin(p)


@pytest.mark.parametrize("rows,cols,n", [(1, 1, 0), (2, 2, 4), (3, 3, 12)])
def test_adjacency_counts(rows, cols, n):
    size = 100 + 50 * (cols - 1), 100 + 50 * (rows - 1)
    grid = build_grid(ImageDims(*size), 100, 50)
    edges = adjacency(grid)
    assert len(edges) == n == rows * (cols - 1) + cols * (rows - 1)
    assert edges == brute_edges(grid)


def test_adjacency_2x2_exact():
    grid = build_grid(ImageDims(150, 150), 100, 50)
    assert adjacency(grid) == [(0, 1), (0, 2), (1, 3), (2, 3)]


def test_record_roundtrip():
    grid = build_grid(ImageDims(250, 200), 100, 50)
    assert PatchGrid.from_record(grid.to_record()) == grid
    with pytest.raises(FormatError):
        PatchGrid.from_record("width=250 height=200")


@settings(max_examples=60, deadline=None)
@given(w=st.integers(4, 60), h=st.integers(4, 60), ps=st.integers(1, 20), data=st.data())
def test_grid_invariants(w, h, ps, data):
    ps = min(ps, w, h)
    stride = data.draw(st.integers(1, ps))
    grid = build_grid(ImageDims(w, h), ps, stride)
    for length, n, starts in ((h, grid.rows, grid.y_starts), (w, grid.cols, grid.x_starts)):
        expected = (length - ps) // stride + 1 + ((length - ps) % stride != 0)
        assert n == expected
        assert all(0 <= s <= length - ps for s in starts)
    assert brute_coverage(grid).min() >= 1
    assert len(set(grid.origins)) == grid.n_patches
    assert adjacency(grid) == brute_edges(grid)
    assert build_grid(ImageDims(w, h), ps, stride).origins == grid.origins


def test_interior_covered_four_times():
    grid = build_grid(ImageDims(400, 300), 100, 50)
    cover = brute_coverage(grid)
    assert (cover[50:-50, 50:-50] == 4).all()
