import csv
import json
import shutil

import pytest

from symtrack.cli import evaluate_one, main, read_csv, tree_hashes
from symtrack.core import FrameGrid
from symtrack.scenegen import import_dataset, write_mots
from symtrack.tracks import Track, TrackEntry, read_tracks, write_tracks

SMALL_CFG = {
    "scenario": {"grid": {"width": 200, "height": 160}, "num_objects": 4, "num_frames": 30},
    "corruption": {"dropout_prob": 0.1},
}


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(SMALL_CFG))
    return str(p)


def run(*argv):
    return main([str(a) for a in argv])


def generate(tmp_path, cfg_file, scenario="arrows-tr1", seeds="1,2"):
    assert run("generate", "--scenario", scenario, "--seeds", seeds, "--config", cfg_file,
               "--out", tmp_path / "data") == 0
    return sorted((tmp_path / "data" / scenario).iterdir())


def test_generate_writes_preset_datasets(tmp_path, cfg_file):
    dirs = generate(tmp_path, cfg_file)
    assert [d.name for d in dirs] == ["seed_0001", "seed_0002"]
    ds = import_dataset(dirs[0])
    assert ds.meta["config"]["turn_probability"] == 0.2
    assert ds.meta["config"]["signal_period"] == 4
    assert ds.grid == FrameGrid(200, 160) and ds.num_frames == 30
    manifest = json.loads((dirs[0] / "manifest.json").read_text())
    assert manifest["stage"] == "generate" and "meta.json" in manifest["outputs"]


def test_generate_replicates_and_rp5(tmp_path, cfg_file):
    assert run("generate", "--scenario", "amoeboids-rp5", "--replicates", 3, "--seed", 4,
               "--config", cfg_file, "--out", tmp_path, "--no-frames") == 0
    dirs = sorted((tmp_path / "amoeboids-rp5").iterdir())
    assert [d.name for d in dirs] == ["seed_0004", "seed_0005", "seed_0006"]
    assert import_dataset(dirs[0]).meta["config"]["jitter_divisor"] == 5


def test_generate_is_reproducible(tmp_path, cfg_file):
    a = generate(tmp_path / "a", cfg_file)[0]
    b = generate(tmp_path / "b", cfg_file)[0]
    assert tree_hashes(a) == tree_hashes(b)


def test_full_pipeline(tmp_path, cfg_file):
    dirs = generate(tmp_path, cfg_file)
    assert run("track", *dirs, "--tracker", "kalman,ts,ts-l2,ts-shape", "--config", cfg_file) == 0
    tdir = dirs[0] / "tracks"
    assert (tdir / "_oracle" / "windows").is_dir()
    assert any((tdir / "_oracle" / "windows").glob("*_*.json"))
    for name in ("kalman", "ts", "ts-l2", "ts-shape"):
        for f in ("tracks.jsonl", "tracks.txt", "links.json", "manifest.json"):
            assert (tdir / name / f).exists()
    tracks, header = read_tracks(tdir / "ts" / "tracks.jsonl")
    assert header["config"]["corruption"]["dropout_prob"] == 0.1
    assert all(t.length >= 10 for t in tracks)
    assert json.loads((tdir / "kalman" / "links.json").read_text()) == []

    assert run("evaluate", *dirs, "--tracker", "kalman,ts", "--out", tmp_path / "eval") == 0
    rows, cols = read_csv(tmp_path / "eval" / "sequences.csv")
    assert cols == ["sequence", "tracker", "ap50", "ar50", "af50", "deta", "assa", "hota"]
    assert len(rows) == 4 and rows[0]["sequence"] == "arrows-tr1/seed_0001"
    assert (tmp_path / "eval" / "sequences.csv").read_text().startswith("# ")
    frame_rows, _ = read_csv(tmp_path / "eval" / "per_frame.csv")
    assert len(frame_rows) == 4 * 29
    kde, kcols = read_csv(tmp_path / "eval" / "kde.csv")
    assert kcols == ["metric", "tracker", "x", "density"]

    assert run("report", tmp_path / "eval", "--out", tmp_path / "rep") == 0
    table, _ = read_csv(tmp_path / "rep" / "table.csv")
    assert [(r["scenario"], r["tracker"]) for r in table] == [("arrows-tr1", "kalman"), ("arrows-tr1", "ts")]
    for r in table:
        vals = [float(s["assa"]) for s in rows if s["tracker"] == r["tracker"]]
        assert float(r["assa"]) == pytest.approx(sum(vals) / len(vals), abs=1e-5)
    assert (tmp_path / "rep" / "kde_arrows-tr1.csv").exists()


def test_zero_corruption_track_equals_gt(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"scenario": SMALL_CFG["scenario"], "tracker": {"min_track_length": 1}}))
    d = generate(tmp_path, str(cfg), "amoeboids", "3")[0]
    assert run("track", d, "--tracker", "ts", "--config", cfg) == 0
    tracks, _ = read_tracks(d / "tracks" / "ts" / "tracks.jsonl")
    ds = import_dataset(d)
    got = sorted(sorted((e.frame, e.mask.runs) for e in t.entries) for t in tracks)
    want = {}
    for f, masks in enumerate(ds.gt_masks):
        for gid, m in masks.items():
            want.setdefault(gid, []).append((f, m.runs))
    assert got == sorted(want.values())


def test_stage_rerun_is_hash_identical(tmp_path, cfg_file):
    d = generate(tmp_path, cfg_file, seeds="1")[0]
    assert run("track", d, "--tracker", "ts", "--config", cfg_file) == 0
    before = tree_hashes(d / "tracks" / "ts")
    shutil.rmtree(d / "tracks")
    assert run("track", d, "--tracker", "ts", "--config", cfg_file) == 0
    assert tree_hashes(d / "tracks" / "ts") == before


def test_evaluate_gt_against_itself(tmp_path, cfg_file):
    d = generate(tmp_path, cfg_file, seeds="1")[0]
    ds = import_dataset(d)
    (d / "tracks" / "gt").mkdir(parents=True)
    tracks = [Track(gid, [TrackEntry(f, ds.gt_masks[f][gid]) for f in frames]) for gid, frames in ds.tracks().items()]
    write_tracks(d / "tracks" / "gt" / "tracks.jsonl", tracks)
    _, _, rep = evaluate_one(str(d), "gt")
    assert all(v == 100.0 for v in rep.scores().values())


def test_evaluate_empty_tracks(tmp_path, cfg_file):
    d = generate(tmp_path, cfg_file, seeds="1")[0]
    (d / "tracks" / "ts").mkdir(parents=True)
    (d / "tracks" / "ts" / "tracks.jsonl").write_text("")
    assert run("evaluate", d, "--tracker", "ts", "--out", tmp_path / "e") == 0
    rows, _ = read_csv(tmp_path / "e" / "sequences.csv")
    assert rows[0]["ap50"] == "" and rows[0]["ar50"] == ""
    assert float(rows[0]["hota"]) == 0.0


def test_external_mots(tmp_path, cfg_file):
    d = generate(tmp_path, cfg_file, "amoeboids", "1")[0]
    ds = import_dataset(d)
    write_mots(tmp_path / "seq.txt", ds.gt_masks, class_id=2)
    assert run("generate", "--scenario", "external-mots", "--mots", tmp_path / "seq.txt",
               "--grid", "200x160", "--out", tmp_path / "ext") == 0
    ext = import_dataset(tmp_path / "ext" / "external-mots" / "seq")
    assert [{k % 1000: m for k, m in f.items()} for f in ext.gt_masks] == ds.gt_masks


def test_errors_are_machine_readable(tmp_path, capsys):
    assert run("track", tmp_path / "missing", "--tracker", "ts") == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert "missing" in err["message"]
    assert run("track", tmp_path, "--tracker", "bogus") == 2
    assert "bogus" in json.loads(capsys.readouterr().err.strip())["message"]
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    assert run("generate", "--scenario", "arrows", "--config", bad, "--out", tmp_path) == 2
    with pytest.raises(SystemExit) as exc:
        run("generate", "--scenario", "nope", "--out", tmp_path)
    assert exc.value.code != 0


def test_report_rejects_inconsistent_metrics(tmp_path):
    for name, cols in (("a", "sequence,tracker,ap50"), ("b", "sequence,tracker,ar50")):
        (tmp_path / name).mkdir()
        with open(tmp_path / name / "sequences.csv", "w", newline="") as fh:
            csv.writer(fh).writerows([cols.split(","), ["arrows/seed_0000", "ts", "1.0"]])
    assert run("report", tmp_path / "a", tmp_path / "b", "--out", tmp_path / "r") == 2
