import struct

import numpy as np
import pytest

from crowdmrf.exceptions import FormatError, ShapeMismatchError, UnsupportedFormatError
from crowdmrf.ingest import (
    AnnotationSet, CFEAT_MAGIC, load_annotations, load_features, load_image,
    patch_ground_truth, save_features, save_image,
)
from crowdmrf.tiling import ImageDims, build_grid


def write(path, data):
    path.write_bytes(data)
    return path


def test_load_zero_image(tmp_path):
    img = load_image(write(tmp_path / "z.pgm", b"P5\n4 4\n255\n" + bytes(16)))
    assert (img.width, img.height) == (4, 4)
    assert not img.pixels.any()


def test_header_comments_and_whitespace(tmp_path):
    data = b"P5 # comment\n# another\n3\t2\n255\n" + bytes(range(6))
    img = load_image(write(tmp_path / "c.pgm", data))
    assert img.pixels.tolist() == [[0, 1, 2], [3, 4, 5]]


def test_load_300(tmp_path):
    rng = np.random.default_rng(0)
    px = rng.integers(0, 256, (300, 300), dtype=np.uint8)
    save_image(px, tmp_path / "a.pgm")
    img = load_image(tmp_path / "a.pgm")
    assert img.dims == ImageDims(300, 300)
    assert img.pixels.size == 90000
    np.testing.assert_array_equal(img.pixels, px)


def test_p6_unsupported(tmp_path):
    with pytest.raises(UnsupportedFormatError):
        load_image(write(tmp_path / "c.ppm", b"P6\n1 1\n255\n\0\0\0"))


def test_truncated_payload_offset(tmp_path):
    with pytest.raises(FormatError) as info:
        load_image(write(tmp_path / "t.pgm", b"P5\n4 4\n255\n" + bytes(10)))
    assert info.value.offset == 11 + 10


@pytest.mark.parametrize("data", [b"P5\n4\n", b"P5\nx 4\n255\n", b"XX\n1 1\n255\n\0",
                                  b"P5\n1 1\n65535\n\0\0"])
def test_malformed_header(tmp_path, data):
    with pytest.raises(FormatError) as info:
        load_image(write(tmp_path / "m.pgm", data))
    assert info.value.offset is not None


def test_annotations(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("x,y\n10,10\n60,60\n")
    ann = load_annotations(path)
    assert len(ann) == 2 and ann.image_id == "a"
    path.write_text("x,y\n")
    assert len(load_annotations(path)) == 0


def test_annotation_parse_error_line(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("x,y\n1,2\nabc,5\n")
    with pytest.raises(FormatError) as info:
        load_annotations(path)
    assert info.value.line == 3


def test_annotation_out_of_range(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("x,y\n1,2\n100,5\n")
    assert len(load_annotations(path)) == 2
    with pytest.raises(FormatError) as info:
        load_annotations(path, dims=ImageDims(100, 100))
    assert info.value.line == 3


def test_patch_ground_truth_examples():
    grid = build_grid(ImageDims(200, 200), 100, 50)
    gt = patch_ground_truth(AnnotationSet(np.array([[10, 10], [60, 60]])), grid)
    at = dict(zip(grid.origins, gt))
    assert at[(0, 0)] == 2 and at[(50, 50)] == 1 and at[(100, 100)] == 0
    assert not patch_ground_truth(np.empty((0, 2)), grid).any()


def brute_tile_counts(points, w, h, ps):
    counts = {}
    for x0 in range(0, w, ps):
        for y0 in range(0, h, ps):
            counts[x0, y0] = sum(x0 <= x < x0 + ps and y0 <= y < y0 + ps for x, y in points)
    return counts


def test_disjoint_tiles_sum_to_total():
    rng = np.random.default_rng(1)
    pts = np.column_stack([rng.uniform(0, 300, 50), rng.uniform(0, 200, 50)])
    grid = build_grid(ImageDims(300, 200), 100, 50)
    gt = dict(zip(grid.origins, patch_ground_truth(pts, grid)))
    brute = brute_tile_counts(pts, 300, 200, 100)
    assert {k: gt[k] for k in brute} == brute
    assert sum(brute.values()) == 50


def test_boundary_point_owned_once():
    grid = build_grid(ImageDims(200, 100), 100, 100)
    assert patch_ground_truth(np.array([[100.0, 50.0]]), grid).tolist() == [0, 1]


def cfeat_bytes(header, values):
    return CFEAT_MAGIC + struct.pack("<6I", *header) + np.asarray(values, "<f4").tobytes()


def test_load_cfeat_small(tmp_path):
    grid = build_grid(ImageDims(150, 100), 100, 50)
    path = write(tmp_path / "f.cfeat", cfeat_bytes((150, 100, 100, 50, 2, 3), [1, 2, 3, 4, 5, 6]))
    X = load_features(path, grid)
    assert X.dtype == np.float32
    assert X.tolist() == [[1, 2, 3], [4, 5, 6]]


def test_cfeat_count_mismatch(tmp_path):
    grid = build_grid(ImageDims(300, 300), 100, 50)
    path = write(tmp_path / "f.cfeat", cfeat_bytes((300, 300, 100, 50, 4, 1), [0, 0, 0, 0]))
    with pytest.raises(ShapeMismatchError):
        load_features(path, grid)


def test_cfeat_bad_magic_and_nan(tmp_path):
    with pytest.raises(FormatError):
        load_features(write(tmp_path / "a", b"CFEAT02\n" + bytes(24)))
    path = write(tmp_path / "b", cfeat_bytes((150, 100, 100, 50, 2, 1), [1.0, np.nan]))
    with pytest.raises(FormatError) as info:
        load_features(path)
    assert info.value.offset == 8 + 24 + 4


def test_cfeat_roundtrip_bit_exact(tmp_path):
    grid = build_grid(ImageDims(300, 300), 100, 50)
    X = np.random.default_rng(2).standard_normal((25, 1000)).astype(np.float32)
    save_features(X, grid, tmp_path / "r.cfeat")
    first = (tmp_path / "r.cfeat").read_bytes()
    Y = load_features(tmp_path / "r.cfeat", grid)
    assert Y.tobytes() == X.tobytes()
    save_features(Y, grid, tmp_path / "r.cfeat")
    assert (tmp_path / "r.cfeat").read_bytes() == first
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".tmp-")]
