"""Synthetic Arrows and Synthetic Amoeboids sequence generators.

Both families share one simulation loop: bodies move near-linearly at a
constant speed, collisions are avoided by re-steering, and bodies leaving the
field of view are replaced by new ones entering from an edge.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image

from .core import (
    BinaryMask,
    FrameGrid,
    coco_rle_decode,
    format_mots_line,
    parse_mots_line,
    round_half_away,
)
from .perlin import closed_loop_profile

FORMAT_VERSION = 1
GENERATOR_VERSION = "symtrack-scenegen/1"

MOTS_IGNORE_CLASS = 10

WHITE = (255, 255, 255)
SIGNAL_COLORS = {"left": (0, 0, 255), "right": (255, 0, 0)}

_MAX_RESTEER = 8
_MAX_SPAWN_TRIES = 8
_MAX_PLACEMENT_TRIES = 1000
_JITTER_TRIES = 16
_JITTER_ROUNDS = 8


class GenerationError(RuntimeError):
    pass


def _grid_from(value) -> FrameGrid:
    if isinstance(value, FrameGrid):
        return value
    return FrameGrid(int(value["width"]), int(value["height"]))


@dataclass(frozen=True)
class ArrowsScenarioConfig:
    grid: FrameGrid = FrameGrid(512, 512)
    num_objects: int = 20
    num_frames: int = 200
    speed: float = 4.0
    arrow_length: float = 24.0
    turn_probability: float = 0.0
    signal_period: int = 0
    seed: int = 0
    heading_noise_deg: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "grid", _grid_from(self.grid))
        if not 0.0 <= self.turn_probability <= 1.0:
            raise ValueError("turn_probability must lie in [0, 1]")
        if self.signal_period < 0:
            raise ValueError("signal_period must be >= 0")
        if self.num_frames < 1 or self.num_objects < 0:
            raise ValueError("num_frames must be >= 1 and num_objects >= 0")
        if 2 * _arrow_bound(self.arrow_length) >= self.grid.fov:
            raise ValueError("arrow does not fit in the grid")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ArrowsScenarioConfig:
        return cls(**d)


@dataclass(frozen=True)
class AmoeboidsScenarioConfig:
    grid: FrameGrid = FrameGrid(512, 512)
    num_objects: int = 20
    num_frames: int = 200
    speed: float = 4.0
    base_radius: float = 16.0
    perlin_octaves: int = 2
    perlin_amplitude: float = 0.3
    jitter_divisor: float = math.inf  # inf disables positional jitter
    seed: int = 0
    heading_noise_deg: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "grid", _grid_from(self.grid))
        jd = self.jitter_divisor
        if jd is None or jd == "inf":
            object.__setattr__(self, "jitter_divisor", math.inf)
        elif not float(jd) > 1:
            raise ValueError("jitter_divisor must be > 1 or inf")
        if not 0.0 <= self.perlin_amplitude < 1.0:
            raise ValueError("perlin_amplitude must lie in [0, 1)")
        if self.num_frames < 1 or self.num_objects < 0:
            raise ValueError("num_frames must be >= 1 and num_objects >= 0")
        if 2 * self.base_radius * (1 + self.perlin_amplitude) + 2 >= self.grid.fov:
            raise ValueError("amoeboid does not fit in the grid")

    @property
    def jitter(self) -> float:
        return 0.0 if math.isinf(self.jitter_divisor) else self.grid.fov / self.jitter_divisor

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        if math.isinf(self.jitter_divisor):
            d["jitter_divisor"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> AmoeboidsScenarioConfig:
        return cls(**d)


@dataclass
class SequenceDataset:
    grid: FrameGrid
    frames: list[np.ndarray]
    gt_masks: list[dict[int, BinaryMask]]
    meta: dict[str, Any] = field(default_factory=dict)
    # per (frame, gt_id) simulator state; in-memory only
    trace: dict[tuple[int, int], dict[str, Any]] = field(default_factory=dict, compare=False, repr=False)

    @property
    def num_frames(self) -> int:
        return len(self.gt_masks)

    def __eq__(self, other):
        if not isinstance(other, SequenceDataset):
            return NotImplemented
        return (
            self.grid == other.grid
            and len(self.frames) == len(other.frames)
            and all(np.array_equal(a, b) for a, b in zip(self.frames, other.frames))
            and self.gt_masks == other.gt_masks
            and self.meta == other.meta
        )

    def tracks(self) -> dict[int, list[int]]:
        """GT id -> sorted frames where it is present."""
        out: dict[int, list[int]] = {}
        for f, m in enumerate(self.gt_masks):
            for gid in m:
                out.setdefault(gid, []).append(f)
        return out


# -- simulation ---------------------------------------------------------------

@dataclass
class _Body:
    gt_id: int
    x: float
    y: float
    heading: float
    radius: float
    born: int
    color: tuple[int, int, int] = WHITE
    template: tuple[int, np.ndarray] | None = None  # (half size, crop) for rigid shapes
    signal_onset: int | None = None
    signal_side: str = ""
    last_turn: int = 0


def _inside(grid: FrameGrid, x: float, y: float) -> bool:
    return 0 <= round_half_away(x) < grid.width and 0 <= round_half_away(y) < grid.height


def _clear(x, y, r, others) -> bool:
    for ox, oy, orad in others:
        if math.hypot(x - ox, y - oy) <= r + orad + 2:
            return False
    return True


class _Simulation:
    kind = ""

    def __init__(self, cfg, rng: np.random.Generator):
        self.cfg = cfg
        self.grid: FrameGrid = cfg.grid
        self.rng = rng
        self.bodies: list[_Body] = []
        self.next_id = 1
        self.events: list[list] = []
        self.pending_spawns = 0
        self.heading_noise = math.radians(cfg.heading_noise_deg)

    # hooks
    def body_radius(self) -> float:
        raise NotImplementedError

    def init_body(self, body: _Body) -> None:
        pass

    def pre_step(self, body: _Body, f: int) -> bool:
        """Update heading for frame ``f``; returns True if the heading was set exactly."""
        return False

    def rasterize(self, body: _Body, x: float, y: float) -> BinaryMask:
        raise NotImplementedError

    def color(self, body: _Body, f: int) -> tuple[int, int, int]:
        return body.color

    def display_positions(self, f: int) -> list[tuple[float, float]]:
        return [(b.x, b.y) for b in self.bodies]

    # shared machinery
    def _new_body(self, x, y, heading, f) -> _Body:
        b = _Body(self.next_id, x, y, heading, self.body_radius(), born=f, last_turn=f)
        self.next_id += 1
        self.init_body(b)
        return b

    def _others(self, skip: _Body | None = None):
        return [(b.x, b.y, b.radius) for b in self.bodies if b is not skip]

    def place_initial(self) -> None:
        r = self.body_radius()
        g = self.grid
        for _ in range(self.cfg.num_objects):
            for _ in range(_MAX_PLACEMENT_TRIES):
                x = self.rng.uniform(r, g.width - 1 - r)
                y = self.rng.uniform(r, g.height - 1 - r)
                if _clear(x, y, r, self._others()):
                    break
            else:
                raise GenerationError(
                    f"could not place {self.cfg.num_objects} objects without overlap "
                    f"after {_MAX_PLACEMENT_TRIES} tries each"
                )
            self.bodies.append(self._new_body(x, y, self.rng.uniform(0, 2 * math.pi), 0))

    def try_spawn(self, f: int) -> bool:
        g = self.grid
        r = self.body_radius()
        for _ in range(_MAX_SPAWN_TRIES):
            edge = int(self.rng.integers(4))
            spread = self.rng.uniform(-math.pi / 3, math.pi / 3)
            if edge == 0:
                x, y, h = 0.0, self.rng.uniform(0, g.height - 1), 0.0
            elif edge == 1:
                x, y, h = g.width - 1.0, self.rng.uniform(0, g.height - 1), math.pi
            elif edge == 2:
                x, y, h = self.rng.uniform(0, g.width - 1), 0.0, math.pi / 2
            else:
                x, y, h = self.rng.uniform(0, g.width - 1), g.height - 1.0, -math.pi / 2
            if _clear(x, y, r, self._others()):
                b = self._new_body(x, y, h + spread, f)
                self.bodies.append(b)
                self.events.append([f, b.gt_id, "spawn", ""])
                return True
        return False

    def step(self, f: int) -> None:
        speed = self.cfg.speed
        exited = []
        for b in list(self.bodies):
            exact = self.pre_step(b, f)
            if not exact and self.heading_noise > 0:
                b.heading += self.rng.uniform(-self.heading_noise, self.heading_noise)
            nx, ny = b.x + speed * math.cos(b.heading), b.y + speed * math.sin(b.heading)
            if not _inside(self.grid, nx, ny):
                exited.append(b)
                continue
            others = self._others(b)
            if not _clear(nx, ny, b.radius, others):
                for _ in range(_MAX_RESTEER):
                    h = self.rng.uniform(0, 2 * math.pi)
                    cx, cy = b.x + speed * math.cos(h), b.y + speed * math.sin(h)
                    if _inside(self.grid, cx, cy) and _clear(cx, cy, b.radius, others):
                        b.heading = h
                        nx, ny = cx, cy
                        self.events.append([f, b.gt_id, "resteer", ""])
                        break
                else:
                    self.events.append([f, b.gt_id, "pause", ""])
                    continue
            b.x, b.y = nx, ny
        for b in exited:
            self.bodies.remove(b)
            self.events.append([f, b.gt_id, "exit", ""])
            self.pending_spawns += 1
        while self.pending_spawns and self.try_spawn(f):
            self.pending_spawns -= 1

    def record(self, f: int, frames, gt_masks, trace, render: bool) -> None:
        positions = self.display_positions(f)
        masks: dict[int, BinaryMask] = {}
        img = np.zeros((self.grid.height, self.grid.width, 3), dtype=np.uint8) if render else None
        for b, (dx, dy) in zip(self.bodies, positions):
            m = self.rasterize(b, dx, dy)
            if not m.runs:
                raise GenerationError(f"object {b.gt_id} rasterized to an empty mask at frame {f}")
            masks[b.gt_id] = m
            col = self.color(b, f)
            if img is not None:
                xs, ys = m.xy
                img[ys, xs] = col
            trace[(f, b.gt_id)] = {
                "latent": (b.x, b.y), "display": (dx, dy), "heading": b.heading,
                "signaling": b.signal_onset is not None and col != b.color,
            }
        gt_masks.append(dict(sorted(masks.items())))
        if img is not None:
            frames.append(img)

    def run(self, render: bool = True) -> SequenceDataset:
        frames: list[np.ndarray] = []
        gt_masks: list[dict[int, BinaryMask]] = []
        trace: dict = {}
        self.place_initial()
        self.record(0, frames, gt_masks, trace, render)
        for f in range(1, self.cfg.num_frames):
            self.step(f)
            self.record(f, frames, gt_masks, trace, render)
        meta = {
            "format_version": FORMAT_VERSION,
            "generator_version": GENERATOR_VERSION,
            "scenario": self.kind,
            "config": json.loads(json.dumps(self.cfg.to_dict())),
            "events": self.events,
        }
        return SequenceDataset(self.grid, frames, gt_masks, meta, trace)


def _arrow_bound(length: float) -> float:
    # farthest arrow corner from the center is the tail corner
    return math.hypot(length / 2, length / 8) + 1


class _ArrowsSimulation(_Simulation):
    kind = "arrows"

    def body_radius(self) -> float:
        return _arrow_bound(self.cfg.arrow_length)

    def pre_step(self, b: _Body, f: int) -> bool:
        T = self.cfg.signal_period
        if b.signal_onset is not None and f == b.signal_onset + T:
            self._turn(b, f)
            return True
        if b.signal_onset is None and f > b.last_turn and self.rng.random() < self.cfg.turn_probability:
            b.signal_side = "left" if self.rng.random() < 0.5 else "right"
            b.signal_onset = f
            self.events.append([f, b.gt_id, "signal", b.signal_side])
            if T == 0:
                self._turn(b, f)
                return True
        return False

    def _turn(self, b: _Body, f: int) -> None:
        # image y grows downward, so a left turn is a negative rotation
        b.heading += -math.pi / 2 if b.signal_side == "left" else math.pi / 2
        self.events.append([f, b.gt_id, "turn", b.signal_side])
        b.signal_onset = None
        b.last_turn = f

    def color(self, b: _Body, f: int):
        if b.signal_onset is not None and b.signal_onset <= f < b.signal_onset + self.cfg.signal_period:
            return SIGNAL_COLORS[b.signal_side]
        return b.color

    def rasterize(self, b: _Body, x: float, y: float) -> BinaryMask:
        L = self.cfg.arrow_length
        rb = int(math.ceil(self.body_radius()))
        ix, iy = round_half_away(x), round_half_away(y)
        off = np.arange(-rb, rb + 1)
        px = (ix + off)[None, :] - x
        py = (iy + off)[:, None] - y
        c, s = math.cos(b.heading), math.sin(b.heading)
        u = px * c + py * s
        v = -px * s + py * c
        head_len, head_w, shaft_w = L / 3, L / 2, L / 4
        neck = L / 2 - head_len
        shaft = (u >= -L / 2) & (u <= neck) & (np.abs(v) <= shaft_w / 2)
        head = (u >= neck) & (u <= L / 2) & (np.abs(v) <= (head_w / 2) * (L / 2 - u) / head_len)
        return BinaryMask.from_crop(self.grid, ix - rb, iy - rb, shaft | head)


class _AmoeboidsSimulation(_Simulation):
    kind = "amoeboids"

    def body_radius(self) -> float:
        return self.cfg.base_radius * (1 + self.cfg.perlin_amplitude) + 1

    def init_body(self, b: _Body) -> None:
        cfg = self.cfg
        profile = closed_loop_profile(self.rng, octaves=cfg.perlin_octaves)
        radii = cfg.base_radius * (1 + cfg.perlin_amplitude * profile)
        rb = int(math.ceil(self.body_radius()))
        off = np.arange(-rb, rb + 1)
        dx, dy = off[None, :], off[:, None]
        theta = np.mod(np.arctan2(dy, dx), 2 * np.pi)
        pos = theta / (2 * np.pi) * radii.size
        i0 = np.floor(pos).astype(int) % radii.size
        frac = pos - np.floor(pos)
        r_at = radii[i0] * (1 - frac) + radii[(i0 + 1) % radii.size] * frac
        b.template = (rb, np.hypot(dx, dy) <= r_at)
        b.color = tuple(int(v) for v in self.rng.integers(80, 256, size=3))

    def display_positions(self, f: int):
        j = self.cfg.jitter
        if j <= 0:
            return [(b.x, b.y) for b in self.bodies]
        for _ in range(_JITTER_ROUNDS):
            placed: list[tuple[float, float, float]] = []
            for b in self.bodies:
                for _ in range(_JITTER_TRIES):
                    ox, oy = self.rng.uniform(-j, j, size=2)
                    x, y = b.x + ox, b.y + oy
                    if _inside(self.grid, x, y) and _clear(x, y, b.radius, placed):
                        placed.append((x, y, b.radius))
                        break
                else:
                    break
            if len(placed) == len(self.bodies):
                return [(x, y) for x, y, _ in placed]
        # latent positions are always collision-free
        self.events.append([f, 0, "jitter-fallback", ""])
        return [(b.x, b.y) for b in self.bodies]

    def rasterize(self, b: _Body, x: float, y: float) -> BinaryMask:
        rb, crop = b.template
        return BinaryMask.from_crop(self.grid, round_half_away(x) - rb, round_half_away(y) - rb, crop)


def generate_arrows(cfg: ArrowsScenarioConfig, render: bool = True) -> SequenceDataset:
    return _ArrowsSimulation(cfg, np.random.default_rng(cfg.seed)).run(render)


def generate_amoeboids(cfg: AmoeboidsScenarioConfig, render: bool = True) -> SequenceDataset:
    return _AmoeboidsSimulation(cfg, np.random.default_rng(cfg.seed)).run(render)


# -- on-disk layout -----------------------------------------------------------

def id_map(grid: FrameGrid, masks: dict[int, BinaryMask]) -> np.ndarray:
    flat = np.zeros(grid.area, dtype=np.uint16)
    for gid, m in masks.items():
        if not 0 < gid < 2 ** 16:
            raise ValueError(f"track id {gid} cannot be stored in a 16-bit id map")
        flat[m.linear] = gid
    return flat.reshape(grid.width, grid.height).T


def masks_from_id_map(arr: np.ndarray) -> dict[int, BinaryMask]:
    grid = FrameGrid(arr.shape[1], arr.shape[0])
    flat = np.ascontiguousarray(arr.T).ravel()
    idx = np.flatnonzero(flat)
    if idx.size == 0:
        return {}
    ids = flat[idx]
    order = np.argsort(ids, kind="stable")
    idx, ids = idx[order], ids[order]
    bounds = np.flatnonzero(np.diff(ids)) + 1
    out = {}
    for chunk_idx, chunk_ids in zip(np.split(idx, bounds), np.split(ids, bounds)):
        out[int(chunk_ids[0])] = BinaryMask.from_linear(grid, chunk_idx)
    return out


def export_dataset(ds: SequenceDataset, directory) -> None:
    d = Path(directory)
    (d / "frames").mkdir(parents=True, exist_ok=True)
    (d / "gt").mkdir(parents=True, exist_ok=True)
    for f, img in enumerate(ds.frames):
        Image.fromarray(img, mode="RGB").save(d / "frames" / f"{f:06d}.png")
    for f, masks in enumerate(ds.gt_masks):
        Image.fromarray(id_map(ds.grid, masks)).save(d / "gt" / f"{f:06d}.png")
    meta = {
        **ds.meta,
        "grid": {"width": ds.grid.width, "height": ds.grid.height},
        "num_frames": ds.num_frames,
        "has_frames": bool(ds.frames),
        "format_version": FORMAT_VERSION,
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))


_LAYOUT_KEYS = ("grid", "num_frames", "has_frames")


def import_dataset(directory) -> SequenceDataset:
    d = Path(directory)
    try:
        meta = json.loads((d / "meta.json").read_text())
    except FileNotFoundError as exc:
        raise FileNotFoundError(f"no dataset at {d} (missing meta.json)") from exc
    for key in _LAYOUT_KEYS:
        if key not in meta:
            raise ValueError(f"meta.json lacks required key {key!r}")
    if meta.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format version {meta.get('format_version')}")
    grid = _grid_from(meta["grid"])
    n = int(meta["num_frames"])
    frames, gt = [], []
    for f in range(n):
        arr = np.array(Image.open(d / "gt" / f"{f:06d}.png"))
        if arr.shape != (grid.height, grid.width):
            raise ValueError(f"gt frame {f} has shape {arr.shape}, expected {(grid.height, grid.width)}")
        gt.append(masks_from_id_map(arr))
        if meta["has_frames"]:
            frames.append(np.array(Image.open(d / "frames" / f"{f:06d}.png").convert("RGB")))
    body = {k: v for k, v in meta.items() if k not in _LAYOUT_KEYS}
    return SequenceDataset(grid, frames, gt, body)


# -- MOTS-challenge text files -------------------------------------------------

def import_mots_ground_truth(path, grid: FrameGrid) -> SequenceDataset:
    """Masks only; ignore regions are dropped and object ids kept verbatim."""
    per_frame: dict[int, dict[int, BinaryMask]] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = parse_mots_line(line)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            if rec.class_id == MOTS_IGNORE_CLASS:
                continue
            if (rec.height, rec.width) != (grid.height, grid.width):
                raise ValueError(f"{path}:{lineno}: image size {rec.width}x{rec.height} does not match grid")
            per_frame.setdefault(rec.frame, {})[rec.object_id] = coco_rle_decode(rec.rle, grid)
    n = max(per_frame) + 1 if per_frame else 0
    gt = [dict(sorted(per_frame.get(f, {}).items())) for f in range(n)]
    return SequenceDataset(grid, [], gt, {"format_version": FORMAT_VERSION, "scenario": "external-mots",
                                          "source": str(path)})


def write_mots(path, per_frame: list[dict[int, BinaryMask]], class_id: int = 1) -> None:
    """Write per-frame id->mask maps; ids >= 1000 are taken as complete MOTS object ids."""
    with open(path, "w") as fh:
        for f, masks in enumerate(per_frame):
            for oid, m in sorted(masks.items()):
                if oid >= 1000:
                    fh.write(format_mots_line(f, oid % 1000, m, class_id=oid // 1000) + "\n")
                else:
                    fh.write(format_mots_line(f, oid, m, class_id=class_id) + "\n")
