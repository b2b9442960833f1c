"""Track-level data types shared by the tracker backends and the assignment stage."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable

from .core import BinaryMask, FrameGrid, coco_rle_decode, coco_rle_encode


class Variant(str, Enum):
    TS = "ts"
    TS_L2 = "ts-l2"
    TS_SHAPE = "ts-shape"
    KALMAN = "kalman"


class Provenance(str, Enum):
    DETECTED = "detected"
    INTERPOLATED = "interpolated"


@dataclass(frozen=True)
class LocalTrackWindow:
    """Predicted masks of one detection over frames ``anchor - tr .. anchor + tr``."""

    anchor_frame: int
    anchor_instance: int
    predicted: dict[int, BinaryMask]

    def __post_init__(self):
        tr = (len(self.predicted) - 1) // 2
        if sorted(self.predicted) != list(range(-tr, tr + 1)):
            raise ValueError("window offsets must be exactly -tr..tr")

    @property
    def tr(self) -> int:
        return (len(self.predicted) - 1) // 2

    def at(self, frame: int) -> BinaryMask | None:
        """Prediction for an absolute frame, or None outside the window."""
        return self.predicted.get(frame - self.anchor_frame)

    def to_json(self) -> dict[str, Any]:
        g = self.predicted[0].grid
        return {
            "anchor_frame": self.anchor_frame,
            "anchor_instance": self.anchor_instance,
            "grid": [g.width, g.height],
            "predicted": {str(o): coco_rle_encode(m) for o, m in sorted(self.predicted.items())},
        }

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> LocalTrackWindow:
        grid = FrameGrid(*d["grid"])
        pred = {int(o): coco_rle_decode(s, grid) for o, s in d["predicted"].items()}
        return cls(int(d["anchor_frame"]), int(d["anchor_instance"]), pred)


@dataclass(frozen=True)
class FragmentEntry:
    frame: int
    mask: BinaryMask
    window: LocalTrackWindow | None = None
    provenance: Provenance = Provenance.DETECTED


@dataclass
class TrackFragment:
    fragment_id: int
    entries: list[FragmentEntry]

    def __post_init__(self):
        if not self.entries:
            raise ValueError("a fragment needs at least one entry")
        frames = [e.frame for e in self.entries]
        if frames != list(range(frames[0], frames[0] + len(frames))):
            raise ValueError("fragment frames must be strictly consecutive")

    @property
    def start(self) -> int:
        return self.entries[0].frame

    @property
    def end(self) -> int:
        return self.entries[-1].frame


@dataclass(frozen=True)
class IdentityLink:
    from_fragment: int
    to_fragment: int
    offset: int
    similarity: float


@dataclass(frozen=True)
class TrackEntry:
    frame: int
    mask: BinaryMask
    provenance: Provenance = Provenance.DETECTED


@dataclass
class Track:
    """Frames are strictly increasing; they are contiguous unless gap filling was disabled."""

    track_id: int
    entries: list[TrackEntry] = field(default_factory=list)

    def __post_init__(self):
        frames = [e.frame for e in self.entries]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ValueError("track frames must be strictly increasing")

    @property
    def start(self) -> int:
        return self.entries[0].frame

    @property
    def end(self) -> int:
        return self.entries[-1].frame

    @property
    def length(self) -> int:
        return self.end - self.start + 1 if self.entries else 0


def tracks_to_frame_maps(tracks: Iterable[Track], num_frames: int) -> list[dict[int, BinaryMask]]:
    out: list[dict[int, BinaryMask]] = [{} for _ in range(num_frames)]
    for t in tracks:
        for e in t.entries:
            if e.frame >= num_frames:
                raise ValueError(f"track {t.track_id} has frame {e.frame} beyond sequence length {num_frames}")
            if t.track_id in out[e.frame]:
                raise ValueError(f"duplicate track id {t.track_id} in frame {e.frame}")
            out[e.frame][t.track_id] = e.mask
    return out


def write_tracks(path, tracks: list[Track], header: dict[str, Any] | None = None) -> None:
    """One JSON record per line; the optional first line carries provenance."""
    with open(path, "w") as fh:
        if header is not None:
            fh.write(json.dumps({"header": header}, sort_keys=True) + "\n")
        for t in tracks:
            g = t.entries[0].mask.grid if t.entries else FrameGrid(1, 1)
            rec = {
                "track_id": t.track_id,
                "start": t.start if t.entries else None,
                "end": t.end if t.entries else None,
                "grid": [g.width, g.height],
                "frames": [e.frame for e in t.entries],
                "rle": [coco_rle_encode(e.mask) for e in t.entries],
                "provenance": [e.provenance.value for e in t.entries],
            }
            fh.write(json.dumps(rec) + "\n")


def read_tracks(path) -> tuple[list[Track], dict[str, Any]]:
    tracks, header = [], {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if "header" in rec:
            header = rec["header"]
            continue
        grid = FrameGrid(*rec["grid"])
        entries = [
            TrackEntry(f, coco_rle_decode(s, grid), Provenance(p))
            for f, s, p in zip(rec["frames"], rec["rle"], rec["provenance"])
        ]
        tracks.append(Track(int(rec["track_id"]), entries))
    return tracks, header
