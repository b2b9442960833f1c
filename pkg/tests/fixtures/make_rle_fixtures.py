"""Regenerate the reference RLE fixtures with pycocotools (the MOTS-challenge codec).

Run once; the JSON output is checked in so the test suite does not need pycocotools.
"""
import json
from pathlib import Path

import numpy as np
import pycocotools.mask as cocomask

OUT = Path(__file__).with_name("rle_reference.json")


def blob(rng, h, w):
    yy, xx = np.mgrid[:h, :w]
    m = np.zeros((h, w), dtype=bool)
    for _ in range(rng.integers(1, 4)):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ry, rx = rng.uniform(20, 150), rng.uniform(10, 60)
        m |= ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1
    return m


def main():
    rng = np.random.default_rng(20240611)
    small = []
    for _ in range(10):
        m = rng.random((16, 16)) < rng.uniform(0.2, 0.8)
        rle = cocomask.encode(np.asfortranarray(m.astype(np.uint8)))
        small.append({"height": 16, "width": 16, "pixels": np.argwhere(m.T).tolist(),
                      "rle": rle["counts"].decode()})
    # full-HD MOTS-format lines: frame, class*1000+instance, class, h, w, rle
    lines = []
    h, w = 1080, 1920
    for k in range(10):
        m = blob(rng, h, w)
        rle = cocomask.encode(np.asfortranarray(m.astype(np.uint8)))
        decoded = cocomask.decode(rle).astype(bool)
        cls = 2 if k < 8 else 10
        oid = 2000 + k + 1 if cls == 2 else 10000
        lines.append({
            "line": f"{k // 3 + 1} {oid} {cls} {h} {w} {rle['counts'].decode()}",
            "area": int(cocomask.area(rle)),
            "bbox": [int(v) for v in cocomask.toBbox(rle)],
            "column_major_sum": int(np.flatnonzero(decoded.T.ravel()).sum()),
        })
    OUT.write_text(json.dumps({"small_masks": small, "mots_lines": lines}, separators=(",", ":")))


if __name__ == "__main__":
    main()
