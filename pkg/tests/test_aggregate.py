import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crowdmrf.aggregate import (
    coverage_multiplicity, density_raster, image_count, load_raster, raster_to_pgm,
    save_raster, select_tiles,
)
from crowdmrf.exceptions import FormatError, StrideError
from crowdmrf.ingest import load_image, patch_ground_truth
from crowdmrf.tiling import ImageDims, build_grid


def weighted_coverage(grid, selection):
    """Per-pixel sum of the weights of the selected patches covering it."""
    cover = np.zeros((grid.dims.height, grid.dims.width))
    ps = grid.patch_size
    for p, w in selection:
        x, y = grid.origin(p)
        cover[y:y + ps, x:x + ps] += w
    return cover


def tiles(w, h):
    grid = build_grid(ImageDims(w, h), 100, 50)
    sel = select_tiles(grid)
    return grid, sel, {grid.origin(p): wt for p, wt in sel}


def test_200_square():
    _, _, chosen = tiles(200, 200)
    assert chosen == {(0, 0): 1, (100, 0): 1, (0, 100): 1, (100, 100): 1}


def test_single_tile():
    grid, sel, chosen = tiles(100, 100)
    assert chosen == {(0, 0): 1}
    assert image_count([7.0], sel) == 7


def test_250_wide_half_tiles():
    grid, sel, chosen = tiles(250, 200)
    assert chosen == {(0, 0): 1, (100, 0): 1, (150, 0): 0.5,
                      (0, 100): 1, (100, 100): 1, (150, 100): 0.5}
    cover = weighted_coverage(grid, sel)
    assert cover.sum() == 250 * 200
    assert (cover[:, :150] == 1).all()
    assert (cover[:, 150:200] == 1.5).all() and (cover[:, 200:] == 0.5).all()


def test_snapped_corner_quarter():
    grid, sel, chosen = tiles(250, 250)
    assert chosen[(150, 150)] == 0.25
    assert weighted_coverage(grid, sel).sum() == 250 * 250


def test_disjoint_sum():
    grid = build_grid(ImageDims(200, 200), 100, 50)
    counts = np.zeros(grid.n_patches)
    for (x, y), c in zip([(0, 0), (100, 0), (0, 100), (100, 100)], [10, 20, 30, 40]):
        counts[grid.index(y // 50, x // 50)] = c
    assert image_count(counts, select_tiles(grid)) == 100


def test_weights_match_point_coverage_oracle():
    """The weighted patch sum equals the per-point weighted coverage exactly."""
    rng = np.random.default_rng(0)
    grid, sel, _ = tiles(250, 200)
    cover = weighted_coverage(grid, sel)
    pts = np.column_stack([rng.uniform(0, 250, 500), rng.uniform(0, 200, 500)])
    total = image_count(patch_ground_truth(pts, grid), sel)
    expected = cover[pts[:, 1].astype(int), pts[:, 0].astype(int)].sum()
    assert total == pytest.approx(expected, abs=1e-9)


def test_uniform_field_matches_point_total():
    rng = np.random.default_rng(1)
    grid, sel, _ = tiles(250, 200)
    n = 50000
    k = n * 100 * 100 / (250 * 200)
    assert image_count(np.full(grid.n_patches, k), sel) == pytest.approx(n)
    pts = np.column_stack([rng.uniform(0, 250, n), rng.uniform(0, 200, n)])
    assert image_count(patch_ground_truth(pts, grid), sel) == pytest.approx(n, rel=0.02)


@settings(max_examples=40, deadline=None)
@given(w=st.sampled_from([100, 150, 200, 250, 300, 420]), h=st.integers(100, 420), a=st.floats(-5, 5), b=st.floats(-5, 5),
       seed=st.integers(0, 1000))
def test_linear_and_area_preserving(w, h, a, b, seed):
    grid = build_grid(ImageDims(w, h), 100, 50)
    sel = select_tiles(grid)
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(0, 10, (2, grid.n_patches))
    assert image_count(a * x + b * y, sel) == pytest.approx(
        a * image_count(x, sel) + b * image_count(y, sel), abs=1e-9)
    if w % 50 == 0 and h % 50 == 0:
        assert sel.weights.sum() * 100 * 100 == w * h


def test_other_stride_unsupported():
    with pytest.raises(StrideError):
        select_tiles(build_grid(ImageDims(300, 300), 100, 25))


def test_index_out_of_range():
    grid = build_grid(ImageDims(200, 200), 100, 50)
    with pytest.raises(IndexError):
        image_count([1.0, 2.0], select_tiles(grid))


def test_density_single_patch():
    grid = build_grid(ImageDims(100, 100), 100, 50)
    raster = density_raster(grid, [100.0])
    assert raster.shape == (100, 100)
    np.testing.assert_allclose(raster, 0.01)
    assert not density_raster(build_grid(ImageDims(300, 200)), np.zeros(15)).any()


def test_density_sum_close_to_count():
    rng = np.random.default_rng(2)
    grid = build_grid(ImageDims(400, 300), 100, 50)
    # smooth count field, as a real crowd gives
    r, c = np.divmod(np.arange(grid.n_patches), grid.cols)
    counts = 20 + 3 * np.sin(r / 2) + 2 * c + rng.uniform(-0.2, 0.2, grid.n_patches)
    raster = density_raster(grid, counts)
    assert raster.sum() == pytest.approx(image_count(counts, select_tiles(grid)), rel=0.01)


def test_coverage_multiplicity_interior():
    cover = coverage_multiplicity(build_grid(ImageDims(300, 300)))
    assert cover[150, 150] == 4 and cover[10, 10] == 1


def test_raster_roundtrip(tmp_path):
    raster = np.random.default_rng(3).uniform(0, 1, (20, 30)).astype(np.float32)
    save_raster(raster, tmp_path / "r.dmap")
    assert load_raster(tmp_path / "r.dmap").tobytes() == raster.tobytes()
    (tmp_path / "bad.dmap").write_bytes(b"DMAP01 30 20\n" + bytes(10))
    with pytest.raises(FormatError):
        load_raster(tmp_path / "bad.dmap")
    raster_to_pgm(raster, tmp_path / "r.pgm")
    img = load_image(tmp_path / "r.pgm")
    assert img.pixels.max() == 255
