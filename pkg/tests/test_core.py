import itertools
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from symtrack.core import (
    BinaryMask,
    Centroid,
    FrameGrid,
    GridMismatchError,
    EmptyMaskError,
    InstanceDetection,
    RLEError,
    aligned_iou,
    coco_rle_decode,
    coco_rle_encode,
    format_mots_line,
    mask_centroid,
    mask_iou,
    mask_iou_50,
    mask_translate,
    parse_mots_line,
)

from conftest import disk, random_mask

FIXTURES = json.loads((Path(__file__).parent / "fixtures" / "rle_reference.json").read_text())

G2 = FrameGrid(2, 2)


def pix(grid, pts):
    return BinaryMask.from_pixels(grid, pts)


def pixel_iou(a: set, b: set) -> float:
    return len(a & b) / len(a | b) if a | b else 0.0


# -- construction --------------------------------------------------------------

def test_runs_must_be_canonical(grid):
    with pytest.raises(ValueError):
        BinaryMask(grid, ((0, 2), (2, 3)))  # adjacent
    with pytest.raises(ValueError):
        BinaryMask(grid, ((5, 2), (0, 1)))  # unsorted
    with pytest.raises(ValueError):
        BinaryMask(grid, ((grid.area - 1, 2),))  # out of bounds
    assert BinaryMask.from_runs(grid, [(5, 2), (0, 2), (2, 3)]).runs == ((0, 7),)


def test_from_array_is_column_major(grid):
    arr = np.zeros((grid.height, grid.width), dtype=bool)
    arr[grid.height - 1, 0] = True  # bottom of column 0
    arr[0, 1] = True  # top of column 1, adjacent in column-major order
    m = BinaryMask.from_array(arr)
    assert m.runs == ((grid.height - 1, 2),)
    np.testing.assert_array_equal(m.to_array(), arr)


def test_from_crop_clips_and_merges(grid):
    crop = np.ones((grid.height + 4, 3), dtype=bool)
    m = BinaryMask.from_crop(grid, -1, -2, crop)
    assert m.runs == ((0, 2 * grid.height),)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_array_roundtrip(seed):
    rng = np.random.default_rng(seed)
    g = FrameGrid(int(rng.integers(1, 12)), int(rng.integers(1, 12)))
    arr = rng.random((g.height, g.width)) < rng.uniform(0, 1)
    m = BinaryMask.from_array(arr)
    np.testing.assert_array_equal(m.to_array(), arr)
    assert m.area == arr.sum()
    assert m.pixels() == {(int(x), int(y)) for y, x in zip(*np.nonzero(arr))}


# -- IoU ------------------------------------------------------------------------

def test_iou_examples():
    a = pix(G2, [(0, 0), (0, 1), (1, 0)])
    b = pix(G2, [(0, 1), (1, 0), (1, 1)])
    assert mask_iou(a, a) == 1.0
    assert mask_iou(pix(G2, [(0, 0)]), pix(G2, [(1, 1)])) == 0.0
    assert mask_iou(a, b) == pixel_iou(a.pixels(), b.pixels()) == 0.5
    assert mask_iou(BinaryMask.empty(G2), BinaryMask.empty(G2)) == 0.0


def test_iou_50_is_strict():
    a = pix(G2, [(0, 0), (0, 1), (1, 0)])
    b = pix(G2, [(0, 1), (1, 0), (1, 1)])
    assert mask_iou_50(a, a)
    assert not mask_iou_50(a, b)  # exactly 0.5
    assert not mask_iou_50(pix(G2, [(0, 0)]), pix(G2, [(1, 1)]))


def test_grid_mismatch():
    with pytest.raises(GridMismatchError):
        mask_iou(BinaryMask.empty(G2), BinaryMask.empty(FrameGrid(3, 2)))


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_iou_matches_pixel_sets(seed):
    rng = np.random.default_rng(seed)
    g = FrameGrid(int(rng.integers(1, 10)), int(rng.integers(1, 10)))
    a, b = random_mask(rng, g), random_mask(rng, g)
    v = mask_iou(a, b)
    assert v == pytest.approx(pixel_iou(a.pixels(), b.pixels()), abs=1e-12)
    assert v == mask_iou(b, a)
    assert 0.0 <= v <= 1.0
    assert (v == 1.0) == (bool(a.runs) and a.pixels() == b.pixels())


def test_iou50_unique_match_exhaustive():
    # every pair of disjoint GT masks vs every prediction on a 2x3 grid
    g = FrameGrid(3, 2)
    cells = list(itertools.product(range(3), range(2)))
    subsets = [frozenset(s) for r in range(1, 7) for s in itertools.combinations(cells, r)]
    masks = {s: pix(g, s) for s in subsets}
    for p in subsets:
        hits = [s for s in subsets if mask_iou_50(masks[s], masks[p])]
        for s1, s2 in itertools.combinations(hits, 2):
            assert s1 & s2, "two disjoint GT masks both matched one prediction"


# -- centroid / translate --------------------------------------------------------

def test_centroid_examples(grid):
    assert mask_centroid(pix(grid, [(3, 7)])) == Centroid(3.0, 7.0)
    assert mask_centroid(pix(grid, [(0, 0), (0, 1), (1, 0), (1, 1)])) == Centroid(0.5, 0.5)
    c = mask_centroid(pix(grid, [(0, 0), (0, 1), (1, 0)]))
    assert c.x == pytest.approx(1 / 3) and c.y == pytest.approx(1 / 3)
    with pytest.raises(EmptyMaskError):
        mask_centroid(BinaryMask.empty(grid))


def test_translate_examples(grid):
    m = pix(grid, [(1, 2), (2, 2)])
    assert mask_translate(m, 0, 0) == m
    assert not mask_translate(pix(grid, [(0, 0)]), -1, -1).runs
    assert mask_translate(m, 5, 0).pixels() == {(x + 5, y) for x, y in m.pixels()}
    # half-pixel shifts round away from zero
    assert mask_translate(m, 0.5, -0.5).pixels() == {(x + 1, y - 1) for x, y in m.pixels()}


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(-3, 3), st.integers(-3, 3))
def test_translate_matches_pixel_shift(seed, dx, dy):
    rng = np.random.default_rng(seed)
    g = FrameGrid(9, 7)
    m = random_mask(rng, g)
    expect = {(x + dx, y + dy) for x, y in m.pixels() if 0 <= x + dx < 9 and 0 <= y + dy < 7}
    assert mask_translate(m, dx, dy).pixels() == expect


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(-4, 4), st.integers(-4, 4))
def test_iou_translation_invariance(seed, dx, dy):
    rng = np.random.default_rng(seed)
    g = FrameGrid(20, 20)
    a = BinaryMask.from_crop(g, 6, 6, rng.random((8, 8)) < 0.5)
    b = BinaryMask.from_crop(g, 7, 5, rng.random((8, 8)) < 0.5)
    assert mask_iou(mask_translate(a, dx, dy), mask_translate(b, dx, dy)) == pytest.approx(mask_iou(a, b))


def test_aligned_iou_ignores_position():
    g = FrameGrid(64, 64)
    a = disk(g, 15, 15, 6)
    b = mask_translate(a, 30, 20)
    assert aligned_iou(a, b) == 1.0
    assert mask_iou(a, b) < 1.0


def test_bbox(grid):
    m = pix(grid, [(2, 3), (5, 1), (4, 4)])
    assert tuple(m.bbox) == (2, 1, 5, 4)
    assert m.bbox.area == 16


# -- RLE codec ---------------------------------------------------------------------

def test_rle_matches_reference_small_masks():
    for case in FIXTURES["small_masks"]:
        g = FrameGrid(case["width"], case["height"])
        m = pix(g, [tuple(p) for p in case["pixels"]])
        assert coco_rle_encode(m) == case["rle"]
        assert coco_rle_decode(case["rle"], g) == m


def test_rle_empty_and_full(grid):
    e = BinaryMask.empty(grid)
    assert coco_rle_decode(coco_rle_encode(e), grid) == e
    full = BinaryMask(grid, ((0, grid.area),))
    assert coco_rle_decode(coco_rle_encode(full), grid) == full


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rle_roundtrip(seed):
    rng = np.random.default_rng(seed)
    g = FrameGrid(int(rng.integers(1, 40)), int(rng.integers(1, 40)))
    m = random_mask(rng, g)
    s = coco_rle_encode(m)
    assert coco_rle_decode(s, g) == m
    assert coco_rle_encode(coco_rle_decode(s, g)) == s


def test_rle_errors(grid):
    with pytest.raises(RLEError):
        coco_rle_decode("0", grid)  # covers 0 pixels
    with pytest.raises(RLEError):
        coco_rle_decode("~~~~", grid)
    with pytest.raises(RLEError):
        coco_rle_decode("P", grid)  # continuation flag without a following group
    too_many = coco_rle_encode(BinaryMask.empty(FrameGrid(64, 64)))
    with pytest.raises(RLEError):
        coco_rle_decode(too_many, grid)


def test_mots_line_roundtrip(grid):
    m = disk(grid, 10, 10, 4)
    line = format_mots_line(3, 7, m, class_id=2)
    rec = parse_mots_line(line)
    assert (rec.frame, rec.object_id, rec.class_id, rec.height, rec.width) == (3, 2007, 2, 24, 32)
    assert rec.instance == 7
    assert coco_rle_decode(rec.rle, grid) == m
    with pytest.raises(ValueError):
        parse_mots_line("1 2 3")


def test_detection_requires_mask(grid):
    with pytest.raises(EmptyMaskError):
        InstanceDetection(0, 0, BinaryMask.empty(grid))
