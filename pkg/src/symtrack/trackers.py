"""Local-track prediction backends.

The oracle predictor stands in for a trained time-symmetric segmentation
network: it reads the ground truth of the sequence it was given, optionally
corrupted, and exposes the same window interface the network would.  The
Kalman backend is a conventional constant-velocity forward tracker.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any

import numpy as np
from scipy import ndimage

from .assign import hungarian
from .core import BinaryMask, Centroid, InstanceDetection, _crop_intersection, mask_translate
from .scenegen import SequenceDataset
from .tracks import FragmentEntry, LocalTrackWindow, Provenance, TrackFragment, Variant


@dataclass(frozen=True)
class OracleCorruption:
    dropout_prob: float = 0.0
    boundary_noise: int = 0
    prediction_jitter: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise ValueError("dropout_prob must lie in [0, 1]")
        if self.boundary_noise < 0 or self.prediction_jitter < 0:
            raise ValueError("noise magnitudes must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class KalmanParams:
    process_noise_scale: float = 1.0
    measurement_noise_scale: float = 1.0
    initial_velocity_variance: float = 100.0
    gate_distance: float | None = None  # None: field of view / 8
    max_skip: int = 8

    def __post_init__(self):
        if min(self.process_noise_scale, self.measurement_noise_scale, self.initial_velocity_variance) <= 0:
            raise ValueError("Kalman variances must be positive")
        if self.max_skip < 1:
            raise ValueError("max_skip must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class TrackerConfig:
    tr: int = 4
    variant: Variant = Variant.TS
    min_track_length: int = 10
    similarity_threshold: float = 0.2
    interpolate: bool = True
    kalman: KalmanParams = field(default_factory=KalmanParams)

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if isinstance(self.kalman, dict):
            object.__setattr__(self, "kalman", KalmanParams(**self.kalman))
        if self.tr < 1 or self.min_track_length < 1:
            raise ValueError("tr and min_track_length must be >= 1")

    @property
    def max_offset(self) -> int:
        return 2 * self.tr

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d


# -- oracle --------------------------------------------------------------------

def _perturb_boundary(mask: BinaryMask, radius: int, dilate: bool) -> BinaryMask:
    if radius == 0:
        return mask
    x0, y0, crop = mask.crop
    padded = np.pad(crop, radius)
    if dilate:
        out = ndimage.binary_dilation(padded, iterations=radius)
    else:
        out = padded
        for r in range(radius, 0, -1):
            out = ndimage.binary_erosion(padded, iterations=r)
            if out.any():
                break
        else:
            return mask
    return BinaryMask.from_crop(mask.grid, x0 - radius, y0 - radius, out)


def oracle_detect(ds: SequenceDataset, corr: OracleCorruption) -> list[InstanceDetection]:
    """Re-emit ground-truth instances under fresh ids, with dropout and boundary noise."""
    rng = np.random.default_rng([corr.seed, 1])
    dets = []
    next_id = 0
    for f, masks in enumerate(ds.gt_masks):
        gids = sorted(masks)
        for k in rng.permutation(len(gids)):
            m = masks[gids[k]]
            drop = rng.random() < corr.dropout_prob
            radius = int(rng.integers(0, corr.boundary_noise + 1))
            dilate = bool(rng.random() < 0.5)
            if drop:
                continue
            dets.append(InstanceDetection(f, next_id, _perturb_boundary(m, radius, dilate)))
            next_id += 1
    return dets


def _underlying_object(ds: SequenceDataset, det: InstanceDetection) -> int | None:
    best, best_overlap = None, 0
    for gid, m in ds.gt_masks[det.frame].items():
        overlap = _crop_intersection(det.mask.crop, m.crop)
        if overlap > best_overlap:
            best, best_overlap = gid, overlap
    return best


def oracle_local_track(ds: SequenceDataset, det: InstanceDetection, tr: int,
                       corr: OracleCorruption) -> LocalTrackWindow:
    gid = _underlying_object(ds, det)
    rng = np.random.default_rng([corr.seed, 2, det.frame, det.instance_id])
    j = corr.prediction_jitter
    empty = BinaryMask.empty(ds.grid)
    predicted = {}
    for o in range(-tr, tr + 1):
        shift = rng.integers(-j, j + 1, size=2) if j else (0, 0)
        if o == 0:
            predicted[0] = det.mask
            continue
        f = det.frame + o
        m = ds.gt_masks[f].get(gid) if gid is not None and 0 <= f < ds.num_frames else None
        predicted[o] = mask_translate(m, int(shift[0]), int(shift[1])) if m is not None else empty
    return LocalTrackWindow(det.frame, det.instance_id, predicted)


# -- Kalman filter ---------------------------------------------------------------

_F = np.array([[1.0, 0, 1, 0], [0, 1, 0, 1], [0, 0, 1, 0], [0, 0, 0, 1]])
_H = np.array([[1.0, 0, 0, 0], [0, 1, 0, 0]])


@dataclass(frozen=True)
class KalmanTrackState:
    mean: np.ndarray
    covariance: np.ndarray
    last_mask: BinaryMask | None = None
    frames_since_observation: int = 0

    @property
    def position(self) -> tuple[float, float]:
        return float(self.mean[0]), float(self.mean[1])


def kalman_init(obs: Centroid, mask: BinaryMask | None, params: KalmanParams = KalmanParams()) -> KalmanTrackState:
    r, vv = params.measurement_noise_scale, params.initial_velocity_variance
    return KalmanTrackState(np.array([obs.x, obs.y, 0.0, 0.0]), np.diag([r, r, vv, vv]), mask, 0)


def kalman_predict(s: KalmanTrackState, params: KalmanParams = KalmanParams()) -> KalmanTrackState:
    P = _F @ s.covariance @ _F.T + params.process_noise_scale * np.eye(4)
    return replace(s, mean=_F @ s.mean, covariance=(P + P.T) / 2,
                   frames_since_observation=s.frames_since_observation + 1)


def kalman_update(s: KalmanTrackState, obs: Centroid, mask: BinaryMask | None,
                  params: KalmanParams = KalmanParams()) -> KalmanTrackState:
    z = np.array([obs.x, obs.y], dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError(f"non-finite observation {obs}")
    R = params.measurement_noise_scale * np.eye(2)
    P = s.covariance
    S = _H @ P @ _H.T + R
    K = np.linalg.solve(S, _H @ P).T
    mean = s.mean + K @ (z - _H @ s.mean)
    IKH = np.eye(4) - K @ _H
    P = IKH @ P @ IKH.T + K @ R @ K.T  # Joseph form keeps P symmetric PSD
    return KalmanTrackState(mean, (P + P.T) / 2, mask, 0)


@dataclass
class _LiveTrack:
    state: KalmanTrackState
    entries: list[FragmentEntry]


def _fill_gap(prev: FragmentEntry, mask: BinaryMask, frame: int) -> list[FragmentEntry]:
    ca, cb = prev.mask.centroid, mask.centroid
    span = frame - prev.frame
    out = []
    for tau in range(prev.frame + 1, frame):
        w = (tau - prev.frame) / span
        moved = mask_translate(prev.mask, (cb.x - ca.x) * w, (cb.y - ca.y) * w)
        out.append(FragmentEntry(tau, moved if moved.runs else prev.mask, None, Provenance.INTERPOLATED))
    return out


def kalman_track_sequence(dets: list[InstanceDetection], params: KalmanParams = KalmanParams(),
                          num_frames: int | None = None) -> list[TrackFragment]:
    """Forward constant-velocity tracking with coasting over up to ``max_skip`` frames.

    A track may be matched to a detection at most ``max_skip`` frames after
    its last observation; skipped frames are filled by sliding the last mask
    along the interpolated centroid path.
    """
    if not dets:
        return []
    by_frame: dict[int, list[InstanceDetection]] = {}
    for d in sorted(dets, key=lambda d: (d.frame, d.instance_id)):
        by_frame.setdefault(d.frame, []).append(d)
    grid = dets[0].mask.grid
    gate = params.gate_distance if params.gate_distance is not None else grid.fov / 8
    last_frame = max(by_frame) if num_frames is None else num_frames - 1

    live: list[_LiveTrack] = []
    finished: list[list[FragmentEntry]] = []
    for f in range(min(by_frame), last_frame + 1):
        for trk in live:
            trk.state = kalman_predict(trk.state, params)
        frame_dets = by_frame.get(f, [])
        cost = np.full((len(live), len(frame_dets)), np.inf)
        for i, trk in enumerate(live):
            if trk.state.frames_since_observation > params.max_skip:
                continue
            px, py = trk.state.position
            for j, d in enumerate(frame_dets):
                c = d.mask.centroid
                dist = math.hypot(c.x - px, c.y - py)
                if dist <= gate:
                    cost[i, j] = dist
        matches = hungarian(cost) if live and frame_dets else {}
        matched_dets = set(matches.values())
        for i, j in matches.items():
            trk, d = live[i], frame_dets[j]
            trk.entries.extend(_fill_gap(trk.entries[-1], d.mask, f))
            trk.entries.append(FragmentEntry(f, d.mask))
            trk.state = kalman_update(trk.state, d.mask.centroid, d.mask, params)
        still = []
        for i, trk in enumerate(live):
            if i not in matches and trk.state.frames_since_observation >= params.max_skip:
                finished.append(trk.entries)
            else:
                still.append(trk)
        live = still
        for j, d in enumerate(frame_dets):
            if j not in matched_dets:
                live.append(_LiveTrack(kalman_init(d.mask.centroid, d.mask, params), [FragmentEntry(f, d.mask)]))
    finished.extend(trk.entries for trk in live)
    finished.sort(key=lambda es: (es[0].frame, es[0].mask.linear[0]))
    return [TrackFragment(i, entries) for i, entries in enumerate(finished)]
