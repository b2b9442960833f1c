"""Batch command line: ``generate``, ``track``, ``evaluate`` and ``report``.

Every stage reads its inputs from disk and writes its outputs next to a
``manifest.json`` that records the configuration, tool version, content
hashes and timestamps.  Stage outputs themselves carry no timestamps, so
re-running a stage with the same inputs reproduces them byte for byte.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from . import __version__
from .core import FrameGrid, InstanceDetection, coco_rle_decode, coco_rle_encode
from .assign import build_tracks
from .experiments import (
    EXTERNAL_SCENARIO,
    SCENARIO_PRESETS,
    TRACKERS,
    assign_windows,
    compute_windows,
    generate_scenario,
    scenario_config,
    tracker_config,
)
from .metrics import evaluate_sequence, summarize
from .scenegen import export_dataset, import_dataset, import_mots_ground_truth, write_mots
from .trackers import KalmanParams, OracleCorruption, TrackerConfig, kalman_track_sequence, oracle_detect
from .tracks import LocalTrackWindow, Variant, read_tracks, tracks_to_frame_maps, write_tracks

log = logging.getLogger("symtrack")

METRICS = ("ap50", "ar50", "af50", "deta", "assa", "hota")
SEQUENCE_COLUMNS = ("sequence", "tracker") + METRICS
ORACLE_DIR = "_oracle"


class CliError(Exception):
    """Expected failure reported to the user without a traceback."""


# -- config ----------------------------------------------------------------------

def load_config(path: str | None) -> dict[str, Any]:
    """JSON file with optional sections ``scenario``, ``corruption``, ``tracker`` and ``seeds``."""
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"config file {path} is not valid JSON: {exc}") from None
    unknown = set(cfg) - {"scenario", "corruption", "tracker", "seeds"}
    if unknown:
        raise CliError(f"unknown config sections: {sorted(unknown)}")
    return cfg


def corruption_from(cfg: dict[str, Any], seed: int) -> OracleCorruption:
    fields = {**cfg.get("corruption", {}), "seed": seed}
    try:
        return OracleCorruption(**fields)
    except TypeError as exc:
        raise CliError(f"bad corruption config: {exc}") from None


def tracker_from(cfg: dict[str, Any], name: str) -> TrackerConfig:
    fields = dict(cfg.get("tracker", {}))
    fields.pop("variant", None)
    try:
        if "kalman" in fields:
            fields["kalman"] = KalmanParams(**fields["kalman"])
        return tracker_config(name, TrackerConfig(**fields))
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad tracker config: {exc}") from None


def resolve_seeds(args, cfg) -> list[int]:
    if args.seeds:
        return [int(s) for s in args.seeds.split(",")]
    if args.replicates:
        return list(range(args.seed, args.seed + args.replicates))
    if "seeds" in cfg:
        return [int(s) for s in cfg["seeds"]]
    return [args.seed]


# -- provenance ------------------------------------------------------------------

def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def tree_hashes(root: Path, exclude=("manifest.json",)) -> dict[str, str]:
    return {
        str(p.relative_to(root)): sha256_file(p)
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.name not in exclude
    }


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(directory: Path, stage: str, config: dict[str, Any], started: str,
                   inputs: dict[str, str] | None = None, outputs: dict[str, str] | None = None) -> None:
    manifest = {
        "stage": stage,
        "version": __version__,
        "config": config,
        "inputs": inputs or {},
        "outputs": tree_hashes(directory) if outputs is None else outputs,
        "started": started,
        "finished": _now(),
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def _echo_lines(config: dict[str, Any]) -> list[str]:
    return ["# " + line for line in json.dumps(config, sort_keys=True, indent=None).splitlines()]


def write_csv(path: Path, columns, rows, config: dict[str, Any]) -> None:
    with open(path, "w", newline="") as fh:
        for line in _echo_lines(config):
            fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow(["" if v is None else (f"{v:.6f}" if isinstance(v, float) else v) for v in row])


def read_csv(path: Path) -> tuple[list[dict[str, str]], list[str]]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    return list(reader), list(reader.fieldnames or [])


# -- generate ----------------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    started = _now()
    if args.scenario == EXTERNAL_SCENARIO:
        if not args.mots or not args.grid:
            raise CliError("external-mots needs --mots FILE and --grid WIDTHxHEIGHT")
        w, h = (int(v) for v in args.grid.lower().split("x"))
        ds = import_mots_ground_truth(args.mots, FrameGrid(w, h))
        target = out / EXTERNAL_SCENARIO / Path(args.mots).stem
        export_dataset(ds, target)
        write_manifest(target, "generate", {"scenario": args.scenario, "mots": str(args.mots)}, started,
                       inputs={str(args.mots): sha256_file(Path(args.mots))})
        print(target)
        return 0

    overrides = cfg.get("scenario", {})
    for seed in resolve_seeds(args, cfg):
        try:
            ds = generate_scenario(args.scenario, seed, overrides, render=not args.no_frames)
        except (TypeError, ValueError) as exc:
            raise CliError(str(exc)) from None
        target = out / args.scenario / f"seed_{seed:04d}"
        export_dataset(ds, target)
        config = {"scenario": args.scenario, "seed": seed,
                  "generator": scenario_config(args.scenario, seed, overrides).to_dict()}
        write_manifest(target, "generate", config, started)
        log.info("generated %s", target)
        print(target)
    return 0


# -- track ---------------------------------------------------------------------------

def _load_dataset(path: Path):
    try:
        return import_dataset(path)
    except FileNotFoundError as exc:
        raise CliError(str(exc)) from None


def _stamped(directory: Path, name: str, config: dict[str, Any]) -> bool:
    stamp = directory / f"{name}.config.json"
    return stamp.exists() and json.loads(stamp.read_text()) == config


def _oracle_stage(ds_dir: Path, ds, corruption: OracleCorruption, tr: int | None):
    """Detections, plus windows when ``tr`` is given; reused from disk when the config matches."""
    odir = ds_dir / "tracks" / ORACLE_DIR
    odir.mkdir(parents=True, exist_ok=True)
    started = _now()
    det_cfg = {"corruption": corruption.to_dict()}
    if _stamped(odir, "detections", det_cfg):
        dets = read_detections(odir / "detections.jsonl", ds.grid)
    else:
        dets = oracle_detect(ds, corruption)
        write_detections(odir / "detections.jsonl", dets)
        (odir / "windows.config.json").unlink(missing_ok=True)
        (odir / "detections.config.json").write_text(json.dumps(det_cfg, sort_keys=True))
    if tr is None:
        return dets, {}
    win_cfg = {**det_cfg, "tr": tr}
    wdir = odir / "windows"
    if _stamped(odir, "windows", win_cfg):
        return dets, read_windows(wdir)
    windows = compute_windows(ds, dets, tr, corruption)
    wdir.mkdir(exist_ok=True)
    for old in wdir.glob("*.json"):
        old.unlink()
    for (frame, inst), w in sorted(windows.items()):
        (wdir / f"{frame:06d}_{inst:04d}.json").write_text(json.dumps(w.to_json(), sort_keys=True))
    (odir / "windows.config.json").write_text(json.dumps(win_cfg, sort_keys=True))
    write_manifest(odir, "oracle", win_cfg, started, inputs=tree_hashes(ds_dir / "gt"))
    return dets, windows


def write_detections(path: Path, dets: list[InstanceDetection]) -> None:
    with open(path, "w") as fh:
        for d in dets:
            fh.write(json.dumps({"frame": d.frame, "instance": d.instance_id,
                                 "rle": coco_rle_encode(d.mask)}) + "\n")


def read_detections(path: Path, grid: FrameGrid) -> list[InstanceDetection]:
    out = []
    for line in path.read_text().splitlines():
        rec = json.loads(line)
        out.append(InstanceDetection(rec["frame"], rec["instance"], coco_rle_decode(rec["rle"], grid)))
    return out


def read_windows(directory: Path) -> dict[tuple[int, int], LocalTrackWindow]:
    out = {}
    for p in sorted(directory.glob("*.json")):
        w = LocalTrackWindow.from_json(json.loads(p.read_text()))
        out[(w.anchor_frame, w.anchor_instance)] = w
    return out


def track_one(ds_dir: str, tracker: str, cfg: dict[str, Any]) -> str:
    ds_path = Path(ds_dir)
    ds = _load_dataset(ds_path)
    seed = int(ds.meta.get("seed", 0))
    corruption = corruption_from(cfg, seed)
    tcfg = tracker_from(cfg, tracker)
    started = _now()
    kalman = tcfg.variant is Variant.KALMAN
    dets, windows = _oracle_stage(ds_path, ds, corruption, None if kalman else tcfg.tr)
    if kalman:
        fragments = kalman_track_sequence(dets, tcfg.kalman, ds.num_frames)
        links = []
        tracks = build_tracks(fragments, [], tcfg.min_track_length, tcfg.interpolate)
    else:
        res = assign_windows(dets, windows, tcfg)
        links, tracks = res.links, res.tracks

    out = ds_path / "tracks" / tracker
    out.mkdir(parents=True, exist_ok=True)
    config = {"tracker": tcfg.to_dict(), "corruption": corruption.to_dict(), "dataset": str(ds_path)}
    (out / "links.json").write_text(json.dumps(
        [{"from": ln.from_fragment, "to": ln.to_fragment, "offset": ln.offset, "similarity": ln.similarity}
         for ln in links], indent=1))
    write_tracks(out / "tracks.jsonl", tracks, header={"config": config, "version": __version__})
    if len(tracks) < 1000:
        write_mots(out / "tracks.txt", tracks_to_frame_maps(tracks, ds.num_frames))
    else:
        log.warning("%d tracks exceed the MOTS instance range; skipping tracks.txt", len(tracks))
    write_manifest(out, "track", config, started, inputs=tree_hashes(ds_path / "tracks" / ORACLE_DIR))
    log.info("tracked %s with %s: %d tracks", ds_path, tracker, len(tracks))
    return str(out)


def _parallel(fn, jobs: list[tuple], workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*jobs)))


def _tracker_list(value: str) -> list[str]:
    names = [t.strip() for t in value.split(",") if t.strip()]
    bad = [t for t in names if t not in TRACKERS]
    if bad:
        raise CliError(f"unknown tracker(s) {bad}; choose from {list(TRACKERS)}")
    return names


def cmd_track(args) -> int:
    cfg = load_config(args.config)
    trackers = _tracker_list(args.tracker)
    for d in args.datasets:
        if not (Path(d) / "meta.json").exists():
            raise CliError(f"no dataset at {d} (missing meta.json)")
    # the window-based trackers share one oracle stage per dataset, so keep them in one worker
    jobs = [(d, t, cfg) for d in args.datasets for t in trackers]
    by_dataset: dict[str, list] = {}
    for j in jobs:
        by_dataset.setdefault(j[0], []).append(j)
    results = _parallel(_track_many, [(js,) for js in by_dataset.values()], args.jobs)
    for paths in results:
        for p in paths:
            print(p)
    return 0


def _track_many(jobs) -> list[str]:
    return [track_one(*j) for j in jobs]


# -- evaluate ------------------------------------------------------------------------

def _sequence_name(ds_dir: Path, meta: dict[str, Any]) -> str:
    scenario = meta.get("preset") or meta.get("scenario") or ds_dir.parent.name
    return f"{scenario}/{ds_dir.name}"


def evaluate_one(ds_dir: str, tracker: str):
    ds_path = Path(ds_dir)
    ds = _load_dataset(ds_path)
    tpath = ds_path / "tracks" / tracker / "tracks.jsonl"
    if not tpath.exists():
        raise CliError(f"missing track file {tpath}; run `track` first")
    tracks, _ = read_tracks(tpath)
    for t in tracks:
        if t.entries and t.entries[0].mask.grid != ds.grid:
            raise CliError(f"track grid {t.entries[0].mask.grid} does not match dataset grid {ds.grid}")
    pd = tracks_to_frame_maps(tracks, ds.num_frames)
    report = evaluate_sequence(ds.gt_masks, pd)
    return _sequence_name(ds_path, ds.meta), tracker, report


def cmd_evaluate(args) -> int:
    trackers = _tracker_list(args.tracker)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    jobs = [(d, t) for d in args.datasets for t in trackers]
    results = _parallel(evaluate_one, jobs, args.jobs)
    config = {"datasets": [str(d) for d in args.datasets], "trackers": trackers, "version": __version__}

    rows = [[seq, tr] + [rep.scores()[m] for m in METRICS] for seq, tr, rep in results]
    write_csv(out / "sequences.csv", SEQUENCE_COLUMNS, rows, config)
    frame_rows = [
        [seq, tr, c.t, c.tpa, c.fpa, c.fna, c.gtd, c.pdd]
        for seq, tr, rep in results for c in rep.per_frame
    ]
    write_csv(out / "per_frame.csv", ("sequence", "tracker", "t", "tpa", "fpa", "fna", "gtd", "pdd"),
              frame_rows, config)
    write_csv(out / "kde.csv", ("metric", "tracker", "x", "density"),
              _kde_rows([(tr, rep.scores()) for _, tr, rep in results], METRICS), config)

    inputs = {}
    for d, t in jobs:
        p = Path(d) / "tracks" / t / "tracks.jsonl"
        inputs[str(p)] = sha256_file(p)
    write_manifest(out, "evaluate", config, started, inputs=inputs)
    print(out / "sequences.csv")
    return 0


# -- report ------------------------------------------------------------------------------

def cmd_report(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    seq_rows, columns = [], None
    inputs = {}
    for rdir in args.reports:
        path = Path(rdir) / "sequences.csv"
        if not path.exists():
            raise CliError(f"missing report {path}; run `evaluate` first")
        rows, cols = read_csv(path)
        if columns is None:
            columns = cols
        elif cols != columns:
            raise CliError(f"inconsistent metric sets: {path} has {cols}, expected {columns}")
        seq_rows.extend(rows)
        inputs[str(path)] = sha256_file(path)
    metrics = [c for c in columns if c not in ("sequence", "tracker")]
    config = {"reports": [str(r) for r in args.reports], "version": __version__}

    groups: dict[tuple[str, str], list[dict[str, str]]] = {}
    for r in seq_rows:
        scenario = r["sequence"].split("/")[0]
        groups.setdefault((scenario, r["tracker"]), []).append(r)
    table = []
    for (scenario, tracker), rows in sorted(groups.items()):
        means = []
        for m in metrics:
            vals = [float(r[m]) for r in rows if r[m] != ""]
            means.append(sum(vals) / len(vals) if vals else None)
        table.append([scenario, tracker, len(rows)] + means)
    write_csv(out / "table.csv", ["scenario", "tracker", "sequences"] + metrics, table, config)

    for scenario in sorted({s for s, _ in groups}):
        scored = [
            (r["tracker"], {m: (float(r[m]) if r[m] != "" else None) for m in metrics})
            for r in seq_rows if r["sequence"].split("/")[0] == scenario
        ]
        write_csv(out / f"kde_{scenario}.csv", ("metric", "tracker", "x", "density"),
                  _kde_rows(scored, metrics), {**config, "scenario": scenario})
    write_manifest(out, "report", config, started, inputs=inputs)
    print(out / "table.csv")
    return 0


def _kde_rows(scored, metrics) -> list[list]:
    rows = []
    for metric in metrics:
        for tracker in sorted({t for t, _ in scored}):
            vals = [s[metric] for t, s in scored if t == tracker and s[metric] is not None]
            if vals:
                rows.extend([metric, tracker, x, d] for x, d in summarize(vals).kde)
    return rows


# -- entry point ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="symtrack", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="render synthetic datasets or ingest a MOTS file")
    g.add_argument("--scenario", required=True, choices=[*SCENARIO_PRESETS, EXTERNAL_SCENARIO])
    g.add_argument("--config")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--seeds", help="comma-separated list; overrides --seed/--replicates")
    g.add_argument("--replicates", type=int, help="consecutive seeds starting at --seed")
    g.add_argument("--out", required=True)
    g.add_argument("--no-frames", action="store_true", help="skip rendering RGB frames")
    g.add_argument("--mots", help="MOTS ground-truth text file (external-mots only)")
    g.add_argument("--grid", help="WIDTHxHEIGHT of the MOTS sequence")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("track", help="run trackers on datasets")
    t.add_argument("datasets", nargs="+")
    t.add_argument("--tracker", required=True, help=f"comma-separated subset of {','.join(TRACKERS)}")
    t.add_argument("--config")
    t.add_argument("--jobs", type=int, default=1)
    t.set_defaults(func=cmd_track)

    e = sub.add_parser("evaluate", help="score tracks against ground truth")
    e.add_argument("datasets", nargs="+")
    e.add_argument("--tracker", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--jobs", type=int, default=1)
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", help="aggregate evaluation outputs into tables and KDE curves")
    r.add_argument("reports", nargs="+")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CliError as exc:
        print(json.dumps({"error": "usage", "message": str(exc)}), file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
