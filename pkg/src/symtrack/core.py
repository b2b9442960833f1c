"""Binary masks on a fixed frame grid, their geometry, and the MOTS RLE codec.

Pixels are addressed as ``(x, y)`` with ``x`` the column and ``y`` the row.
Runs use column-major linear indices (``x * height + y``), the same order as
the COCO / MOTS-challenge run-length encoding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, NamedTuple

import numpy as np


class GridMismatchError(ValueError):
    pass


class EmptyMaskError(ValueError):
    pass


class RLEError(ValueError):
    pass


@dataclass(frozen=True)
class FrameGrid:
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"grid dimensions must be positive, got {self.width}x{self.height}")

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def fov(self) -> int:
        """Field-of-view scale used for relative distances."""
        return min(self.width, self.height)


class Centroid(NamedTuple):
    x: float
    y: float


class BoundingBox(NamedTuple):
    """Inclusive pixel bounds."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    @property
    def area(self) -> int:
        return (self.x_max - self.x_min + 1) * (self.y_max - self.y_min + 1)


def _runs_from_linear(idx: np.ndarray) -> tuple[tuple[int, int], ...]:
    # idx: sorted, unique linear indices
    if idx.size == 0:
        return ()
    breaks = np.flatnonzero(np.diff(idx) != 1) + 1
    starts = idx[np.concatenate(([0], breaks))]
    ends = idx[np.concatenate((breaks - 1, [idx.size - 1]))]
    return tuple(zip(starts.tolist(), (ends - starts + 1).tolist()))


@dataclass(frozen=True)
class BinaryMask:
    """Run-length encoded single-object mask.

    ``runs`` must be sorted, non-overlapping and maximally merged; use the
    ``from_*`` constructors to build masks from arbitrary pixel data.
    """

    grid: FrameGrid
    runs: tuple[tuple[int, int], ...] = field(default=())

    def __post_init__(self):
        prev_end = -2
        area = self.grid.area
        for start, length in self.runs:
            if length < 1:
                raise ValueError("run lengths must be positive")
            if start <= prev_end:
                raise ValueError("runs must be sorted, non-overlapping and non-adjacent")
            if start < 0 or start + length > area:
                raise ValueError("run outside grid bounds")
            prev_end = start + length

    # -- constructors -------------------------------------------------------
    @classmethod
    def empty(cls, grid: FrameGrid) -> BinaryMask:
        return cls(grid)

    @classmethod
    def from_runs(cls, grid: FrameGrid, runs: Iterable[tuple[int, int]]) -> BinaryMask:
        """Normalize arbitrary (possibly unsorted/overlapping) runs."""
        pieces = sorted((int(s), int(n)) for s, n in runs if n > 0)
        merged: list[list[int]] = []
        for s, n in pieces:
            if merged and s <= merged[-1][0] + merged[-1][1]:
                end = max(merged[-1][0] + merged[-1][1], s + n)
                merged[-1][1] = end - merged[-1][0]
            else:
                merged.append([s, n])
        return cls(grid, tuple((s, n) for s, n in merged))

    @classmethod
    def from_linear(cls, grid: FrameGrid, idx) -> BinaryMask:
        idx = np.unique(np.asarray(idx, dtype=np.int64))
        return cls(grid, _runs_from_linear(idx))

    @classmethod
    def from_pixels(cls, grid: FrameGrid, pixels: Iterable[tuple[int, int]]) -> BinaryMask:
        pts = [(x, y) for x, y in pixels if 0 <= x < grid.width and 0 <= y < grid.height]
        return cls.from_linear(grid, [x * grid.height + y for x, y in pts])

    @classmethod
    def from_array(cls, arr: np.ndarray) -> BinaryMask:
        """Build from a dense ``(height, width)`` boolean image."""
        arr = np.asarray(arr, dtype=bool)
        grid = FrameGrid(arr.shape[1], arr.shape[0])
        return cls.from_crop(grid, 0, 0, arr)

    @classmethod
    def from_crop(cls, grid: FrameGrid, x0: int, y0: int, crop: np.ndarray) -> BinaryMask:
        """Place a ``(h, w)`` boolean crop with its top-left pixel at ``(x0, y0)``.

        Parts of the crop falling outside the grid are clipped.
        """
        crop = np.asarray(crop, dtype=bool)
        h, w = crop.shape
        xa, ya = max(x0, 0), max(y0, 0)
        xb, yb = min(x0 + w, grid.width), min(y0 + h, grid.height)
        if xa >= xb or ya >= yb:
            return cls(grid)
        crop = crop[ya - y0:yb - y0, xa - x0:xb - x0]
        cols = crop.T.astype(np.int8)  # (w, h): one row per image column
        padded = np.zeros((cols.shape[0], cols.shape[1] + 2), dtype=np.int8)
        padded[:, 1:-1] = cols
        d = np.diff(padded, axis=1)
        sc, sy = np.nonzero(d == 1)
        _, ey = np.nonzero(d == -1)
        if sc.size == 0:
            return cls(grid)
        starts = (xa + sc) * grid.height + ya + sy
        lengths = ey - sy
        # merge runs continuing across a column boundary
        ends = starts + lengths
        joined = np.flatnonzero(starts[1:] == ends[:-1])
        if joined.size:
            keep = np.ones(starts.size, dtype=bool)
            keep[joined + 1] = False
            group = np.cumsum(keep) - 1
            new_starts = starts[keep]
            new_ends = np.zeros(new_starts.size, dtype=np.int64)
            np.maximum.at(new_ends, group, ends)
            starts, lengths = new_starts, new_ends - new_starts
        return cls(grid, tuple(zip(starts.tolist(), lengths.tolist())))

    # -- derived geometry ---------------------------------------------------
    @cached_property
    def area(self) -> int:
        return sum(n for _, n in self.runs)

    def __bool__(self) -> bool:
        return bool(self.runs)

    @cached_property
    def linear(self) -> np.ndarray:
        """Sorted column-major indices of foreground pixels."""
        if not self.runs:
            return np.zeros(0, dtype=np.int64)
        r = np.asarray(self.runs, dtype=np.int64)
        starts, lengths = r[:, 0], r[:, 1]
        offsets = np.repeat(starts - np.concatenate(([0], np.cumsum(lengths)[:-1])), lengths)
        return np.arange(lengths.sum(), dtype=np.int64) + offsets

    @cached_property
    def xy(self) -> tuple[np.ndarray, np.ndarray]:
        idx = self.linear
        return idx // self.grid.height, idx % self.grid.height

    @cached_property
    def bbox(self) -> BoundingBox:
        if not self.runs:
            raise EmptyMaskError("bounding box of an empty mask")
        xs, ys = self.xy
        return BoundingBox(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))

    @cached_property
    def crop(self) -> tuple[int, int, np.ndarray]:
        """``(x0, y0, arr)`` with ``arr`` the ``(h, w)`` image over the bounding box."""
        b = self.bbox
        arr = np.zeros((b.y_max - b.y_min + 1, b.x_max - b.x_min + 1), dtype=bool)
        xs, ys = self.xy
        arr[ys - b.y_min, xs - b.x_min] = True
        return b.x_min, b.y_min, arr

    @cached_property
    def centroid(self) -> Centroid:
        if not self.runs:
            raise EmptyMaskError("centroid of an empty mask")
        xs, ys = self.xy
        return Centroid(float(xs.mean()), float(ys.mean()))

    def to_array(self) -> np.ndarray:
        out = np.zeros(self.grid.area, dtype=bool)
        out[self.linear] = True
        return out.reshape(self.grid.width, self.grid.height).T

    def pixels(self) -> set[tuple[int, int]]:
        xs, ys = self.xy
        return set(zip(xs.tolist(), ys.tolist()))


def _check_grids(a: BinaryMask, b: BinaryMask) -> None:
    if a.grid != b.grid:
        raise GridMismatchError(f"grid mismatch: {a.grid} vs {b.grid}")


def _crop_intersection(ca, cb, dx: int = 0, dy: int = 0) -> int:
    """Pixel overlap of two crops, ``cb`` shifted by ``(dx, dy)``."""
    ax, ay, aa = ca
    bx, by, ba = cb
    bx, by = bx + dx, by + dy
    x0, y0 = max(ax, bx), max(ay, by)
    x1 = min(ax + aa.shape[1], bx + ba.shape[1])
    y1 = min(ay + aa.shape[0], by + ba.shape[0])
    if x0 >= x1 or y0 >= y1:
        return 0
    sa = aa[y0 - ay:y1 - ay, x0 - ax:x1 - ax]
    sb = ba[y0 - by:y1 - by, x0 - bx:x1 - bx]
    return int(np.count_nonzero(sa & sb))


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection over union; 0.0 when both masks are empty."""
    _check_grids(a, b)
    if not a.runs or not b.runs:
        return 0.0
    ba, bb = a.bbox, b.bbox
    if ba.x_max < bb.x_min or bb.x_max < ba.x_min or ba.y_max < bb.y_min or bb.y_max < ba.y_min:
        return 0.0
    inter = _crop_intersection(a.crop, b.crop)
    return inter / (a.area + b.area - inter)


def mask_iou_50(a: BinaryMask, b: BinaryMask) -> bool:
    return mask_iou(a, b) > 0.5


def mask_centroid(m: BinaryMask) -> Centroid:
    return m.centroid


def mask_bbox(m: BinaryMask) -> BoundingBox:
    return m.bbox


def round_half_away(v: float) -> int:
    return int(math.copysign(math.floor(abs(v) + 0.5), v))


def mask_translate(m: BinaryMask, dx: float, dy: float) -> BinaryMask:
    """Shift the foreground by ``(dx, dy)`` rounded to whole pixels; clips at the grid."""
    dx, dy = round_half_away(dx), round_half_away(dy)
    if (dx == 0 and dy == 0) or not m.runs:
        return m
    g = m.grid
    xs, ys = m.xy
    xs, ys = xs + dx, ys + dy
    keep = (xs >= 0) & (xs < g.width) & (ys >= 0) & (ys < g.height)
    # translation preserves column-major order, so the result is still sorted
    return BinaryMask(g, _runs_from_linear(xs[keep] * g.height + ys[keep]))


def aligned_iou(a: BinaryMask, b: BinaryMask) -> float:
    """IoU after moving ``b`` so that its centroid coincides with ``a``'s.

    The shift is applied without grid clipping so shapes are compared whole.
    """
    _check_grids(a, b)
    if not a.runs or not b.runs:
        return 0.0
    ca, cb = a.centroid, b.centroid
    dx, dy = round_half_away(ca.x - cb.x), round_half_away(ca.y - cb.y)
    inter = _crop_intersection(a.crop, b.crop, dx, dy)
    return inter / (a.area + b.area - inter)


# -- COCO / MOTS compressed RLE ----------------------------------------------

def mask_to_counts(m: BinaryMask) -> list[int]:
    """Alternating background/foreground run counts covering the whole grid."""
    counts: list[int] = []
    pos = 0
    for start, length in m.runs:
        counts.append(start - pos)
        counts.append(length)
        pos = start + length
    if pos < m.grid.area or not counts:
        counts.append(m.grid.area - pos)
    return counts


def counts_to_mask(counts: list[int], grid: FrameGrid) -> BinaryMask:
    if any(c < 0 for c in counts):
        raise RLEError("negative run count")
    total = sum(counts)
    if total != grid.area:
        raise RLEError(f"run counts cover {total} pixels, grid has {grid.area}")
    runs = []
    pos = 0
    for i, c in enumerate(counts):
        if i % 2 == 1 and c > 0:
            runs.append((pos, c))
        pos += c
    return BinaryMask.from_runs(grid, runs)


def counts_to_string(counts: list[int]) -> str:
    out = []
    for i, count in enumerate(counts):
        x = count - counts[i - 2] if i > 2 else count
        more = True
        while more:
            c = x & 0x1F
            x >>= 5
            more = x != -1 if c & 0x10 else x != 0
            if more:
                c |= 0x20
            out.append(chr(c + 48))
    return "".join(out)


def string_to_counts(s: str) -> list[int]:
    counts: list[int] = []
    p = 0
    n = len(s)
    while p < n:
        x = 0
        k = 0
        more = True
        while more:
            if p >= n:
                raise RLEError("truncated RLE string")
            c = ord(s[p]) - 48
            if not 0 <= c < 64:
                raise RLEError(f"invalid RLE character {s[p]!r}")
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            p += 1
            k += 1
            if not more and c & 0x10:
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        counts.append(x)
    return counts


def coco_rle_encode(m: BinaryMask) -> str:
    return counts_to_string(mask_to_counts(m))


def coco_rle_decode(s: str, grid: FrameGrid) -> BinaryMask:
    return counts_to_mask(string_to_counts(s), grid)


# -- detections and MOTS text lines -------------------------------------------

@dataclass(frozen=True)
class InstanceDetection:
    frame: int
    instance_id: int
    mask: BinaryMask

    def __post_init__(self):
        if not self.mask.runs:
            raise EmptyMaskError("detections must have a non-empty mask")


class MOTSRecord(NamedTuple):
    frame: int
    object_id: int
    class_id: int
    height: int
    width: int
    rle: str

    @property
    def instance(self) -> int:
        return self.object_id % 1000


def parse_mots_line(line: str) -> MOTSRecord:
    parts = line.split()
    if len(parts) != 6:
        raise ValueError(f"expected 6 fields in MOTS line, got {len(parts)}: {line!r}")
    try:
        frame, oid, cls, h, w = (int(v) for v in parts[:5])
    except ValueError as exc:
        raise ValueError(f"non-integer field in MOTS line: {line!r}") from exc
    return MOTSRecord(frame, oid, cls, h, w, parts[5])


def format_mots_line(frame: int, instance: int, mask: BinaryMask, class_id: int = 1) -> str:
    if not 0 <= instance < 1000:
        raise ValueError(f"MOTS instance ids must be in [0, 1000), got {instance}")
    g = mask.grid
    return f"{frame} {class_id * 1000 + instance} {class_id} {g.height} {g.width} {coco_rle_encode(mask)}"
