"""Scenario presets and the generate -> detect/track -> assign -> evaluate pipeline."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

from .assign import build_tracks, sweep_assign
from .core import InstanceDetection
from .metrics import MetricReport, evaluate_sequence
from .scenegen import (
    AmoeboidsScenarioConfig,
    ArrowsScenarioConfig,
    SequenceDataset,
    generate_amoeboids,
    generate_arrows,
)
from .trackers import (
    OracleCorruption,
    TrackerConfig,
    kalman_track_sequence,
    oracle_detect,
    oracle_local_track,
)
from .tracks import IdentityLink, LocalTrackWindow, Track, TrackFragment, FragmentEntry, Variant, tracks_to_frame_maps

SCENARIO_PRESETS: dict[str, tuple[str, dict[str, Any]]] = {
    "arrows": ("arrows", {"turn_probability": 0.0, "signal_period": 0}),
    "arrows-tr1": ("arrows", {"turn_probability": 0.2, "signal_period": 4}),
    "arrows-tr2": ("arrows", {"turn_probability": 0.8, "signal_period": 2}),
    "amoeboids": ("amoeboids", {"jitter_divisor": "inf"}),
    "amoeboids-rp20": ("amoeboids", {"jitter_divisor": 20}),
    "amoeboids-rp5": ("amoeboids", {"jitter_divisor": 5}),
}
SYNTHETIC_SCENARIOS = tuple(SCENARIO_PRESETS)
EXTERNAL_SCENARIO = "external-mots"
TRACKERS = ("kalman", "ts", "ts-l2", "ts-shape")


def scenario_config(name: str, seed: int = 0, overrides: dict[str, Any] | None = None):
    """Preset config for a named scenario; ``overrides`` may change any field but the preset's own."""
    try:
        family, preset = SCENARIO_PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(SCENARIO_PRESETS)}") from None
    fields = {**(overrides or {}), **preset, "seed": seed}
    cls = ArrowsScenarioConfig if family == "arrows" else AmoeboidsScenarioConfig
    return cls(**fields)


def generate_scenario(name: str, seed: int = 0, overrides: dict[str, Any] | None = None,
                      render: bool = True) -> SequenceDataset:
    cfg = scenario_config(name, seed, overrides)
    gen = generate_arrows if isinstance(cfg, ArrowsScenarioConfig) else generate_amoeboids
    ds = gen(cfg, render=render)
    ds.meta["preset"] = name
    return ds


@dataclass
class TrackingResult:
    detections: list[InstanceDetection]
    windows: dict[tuple[int, int], LocalTrackWindow] = field(default_factory=dict)
    fragments: list[TrackFragment] = field(default_factory=list)
    links: list[IdentityLink] = field(default_factory=list)
    tracks: list[Track] = field(default_factory=list)


def compute_windows(ds: SequenceDataset, detections: list[InstanceDetection], tr: int,
                    corruption: OracleCorruption) -> dict[tuple[int, int], LocalTrackWindow]:
    return {(d.frame, d.instance_id): oracle_local_track(ds, d, tr, corruption) for d in detections}


def detection_fragments(detections: list[InstanceDetection],
                        windows: dict[tuple[int, int], LocalTrackWindow]) -> list[TrackFragment]:
    dets = sorted(detections, key=lambda d: (d.frame, d.instance_id))
    return [
        TrackFragment(i, [FragmentEntry(d.frame, d.mask, windows[(d.frame, d.instance_id)])])
        for i, d in enumerate(dets)
    ]


def assign_windows(detections, windows, cfg: TrackerConfig) -> TrackingResult:
    fragments = detection_fragments(detections, windows)
    links = sweep_assign(fragments, cfg.tr, cfg.similarity_threshold, cfg.variant)
    tracks = build_tracks(fragments, links, cfg.min_track_length, cfg.interpolate)
    return TrackingResult(list(detections), windows, fragments, links, tracks)


def run_tracker(ds: SequenceDataset, cfg: TrackerConfig, corruption: OracleCorruption = OracleCorruption(),
                detections: list[InstanceDetection] | None = None) -> TrackingResult:
    if detections is None:
        detections = oracle_detect(ds, corruption)
    if cfg.variant is Variant.KALMAN:
        fragments = kalman_track_sequence(detections, cfg.kalman, ds.num_frames)
        tracks = build_tracks(fragments, [], cfg.min_track_length, cfg.interpolate)
        return TrackingResult(detections, {}, fragments, [], tracks)
    windows = compute_windows(ds, detections, cfg.tr, corruption)
    return assign_windows(detections, windows, cfg)


def tracker_config(name: str, base: TrackerConfig | None = None) -> TrackerConfig:
    if name not in TRACKERS:
        raise ValueError(f"unknown tracker {name!r}; choose from {list(TRACKERS)}")
    return replace(base or TrackerConfig(), variant=Variant(name))


def evaluate_tracks(ds: SequenceDataset, tracks: list[Track]) -> MetricReport:
    return evaluate_sequence(ds.gt_masks, tracks_to_frame_maps(tracks, ds.num_frames))
