"""Association scores at the IoU-50 threshold, the HOTA family, and KDE summaries.

Association counts follow the literal definition: an object counts toward
the consecutive-frame denominators when it is present in both frames and was
detected in the first one.  Detection in the second frame is only required
for a true positive association.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import BinaryMask, BoundingBox, mask_iou

HOTA_ALPHAS = np.arange(0.05, 0.99, 0.05)
KDE_GRID_POINTS = 512
KDE_MIN_BANDWIDTH = 1.0

Frames = list[dict[int, BinaryMask]]


@dataclass(frozen=True)
class AssociationCounts:
    t: int
    tpa: int
    fpa: int
    fna: int
    gtd: int
    pdd: int


@dataclass
class HotaResult:
    deta: float
    assa: float
    hota: float
    per_alpha: list[dict[str, float]] = field(default_factory=list)


@dataclass
class MetricReport:
    ap50: float | None
    ar50: float | None
    af50: float | None
    deta: float
    assa: float
    hota: float
    per_frame: list[AssociationCounts] = field(default_factory=list)
    per_alpha: list[dict[str, float]] = field(default_factory=list)

    def scores(self) -> dict[str, float | None]:
        return {k: getattr(self, k) for k in ("ap50", "ar50", "af50", "deta", "assa", "hota")}


@dataclass
class DistributionSummary:
    mean: float
    kde: list[tuple[float, float]]
    bandwidth: float


# -- IoU-50 association family ------------------------------------------------

def frame_matches(gt: dict[int, BinaryMask], pd: dict[int, BinaryMask]) -> dict[int, int]:
    """GT id -> predicted id for pairs with IoU > 0.5 (unique by construction)."""
    out = {}
    for n, g in gt.items():
        for m, p in pd.items():
            if mask_iou(g, p) > 0.5:
                out[n] = m
                break
    return out


def _counts_from_matches(t, gt_t, gt_t1, pd_t, pd_t1, match_t, match_t1) -> AssociationCounts:
    matched_pd_t = set(match_t.values())
    gtd = sum(1 for n in match_t if n in gt_t1)
    pdd = sum(1 for m in matched_pd_t if m in pd_t1)
    tpa = sum(1 for n, m in match_t.items() if match_t1.get(n) == m)
    return AssociationCounts(t, tpa, pdd - tpa, gtd - tpa, gtd, pdd)


def association_counts(gt: Frames, pd: Frames, t: int) -> AssociationCounts:
    n = max(len(gt), len(pd))
    if not 0 <= t < n - 1:
        raise IndexError(f"frame pair ({t}, {t + 1}) outside sequence of {n} frames")

    def at(seq, f):
        return seq[f] if f < len(seq) else {}

    return _counts_from_matches(
        t, at(gt, t), at(gt, t + 1), at(pd, t), at(pd, t + 1),
        frame_matches(at(gt, t), at(pd, t)), frame_matches(at(gt, t + 1), at(pd, t + 1)),
    )


def all_association_counts(gt: Frames, pd: Frames) -> list[AssociationCounts]:
    n = max(len(gt), len(pd))
    gt = list(gt) + [{}] * (n - len(gt))
    pd = list(pd) + [{}] * (n - len(pd))
    matches = [frame_matches(g, p) for g, p in zip(gt, pd)]
    return [
        _counts_from_matches(t, gt[t], gt[t + 1], pd[t], pd[t + 1], matches[t], matches[t + 1])
        for t in range(n - 1)
    ]


def association_scores(counts) -> tuple[float | None, float | None, float | None]:
    """(AP50, AR50, AF50) in [0, 100]; None marks an undefined score.

    ``counts`` is an iterable of AssociationCounts or a ``(tpa, fpa, fna)`` triple.
    """
    if isinstance(counts, tuple) and len(counts) == 3 and all(isinstance(c, int) for c in counts):
        tpa, fpa, fna = counts
    else:
        counts = list(counts)
        tpa = sum(c.tpa for c in counts)
        fpa = sum(c.fpa for c in counts)
        fna = sum(c.fna for c in counts)
    ap = 100.0 * tpa / (tpa + fpa) if tpa + fpa > 0 else None
    ar = 100.0 * tpa / (tpa + fna) if tpa + fna > 0 else None
    if ap is None or ar is None:
        af = None
    elif ap + ar == 0:
        af = 0.0
    else:
        af = 2 * ap * ar / (ap + ar)
    return ap, ar, af


# -- HOTA ------------------------------------------------------------------------

def _box_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # inclusive pixel boxes, rows are (x_min, y_min, x_max, y_max)
    ix = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0]) + 1
    iy = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1]) + 1
    inter = np.clip(ix, 0, None) * np.clip(iy, 0, None)
    area_a = (a[:, 2] - a[:, 0] + 1) * (a[:, 3] - a[:, 1] + 1)
    area_b = (b[:, 2] - b[:, 0] + 1) * (b[:, 3] - b[:, 1] + 1)
    return inter / (area_a[:, None] + area_b[None, :] - inter)


def hota_family(gt_boxes: list[dict[int, BoundingBox]], pd_boxes: list[dict[int, BoundingBox]]) -> HotaResult:
    """HOTA, DetA and AssA averaged over alpha in {0.05, ..., 0.95}, scaled to [0, 100]."""
    n = max(len(gt_boxes), len(pd_boxes))
    gt_boxes = list(gt_boxes) + [{}] * (n - len(gt_boxes))
    pd_boxes = list(pd_boxes) + [{}] * (n - len(pd_boxes))
    gt_index = {g: i for i, g in enumerate(sorted({g for f in gt_boxes for g in f}))}
    pd_index = {p: i for i, p in enumerate(sorted({p for f in pd_boxes for p in f}))}
    G, P = len(gt_index), len(pd_index)

    frames = []
    potential = np.zeros((G, P))
    gt_count = np.zeros(G)
    pd_count = np.zeros(P)
    for gb, pb in zip(gt_boxes, pd_boxes):
        gi = np.array([gt_index[g] for g in gb], dtype=np.int64)
        pi = np.array([pd_index[p] for p in pb], dtype=np.int64)
        gt_count[gi] += 1
        pd_count[pi] += 1
        if gi.size and pi.size:
            sim = _box_iou(np.array(list(gb.values()), dtype=np.float64),
                           np.array(list(pb.values()), dtype=np.float64))
            denom = sim.sum(0)[None, :] + sim.sum(1)[:, None] - sim
            soft = np.divide(sim, denom, out=np.zeros_like(sim), where=denom > np.finfo(float).eps)
            potential[gi[:, None], pi[None, :]] += soft
        else:
            sim = np.zeros((gi.size, pi.size))
        frames.append((gi, pi, sim))
    align = potential / np.maximum(gt_count[:, None] + pd_count[None, :] - potential, np.finfo(float).eps)

    A = len(HOTA_ALPHAS)
    tp = np.zeros(A)
    fn = np.zeros(A)
    fp = np.zeros(A)
    match_counts = np.zeros((A, G, P))
    eps = np.finfo(float).eps
    for gi, pi, sim in frames:
        for a, alpha in enumerate(HOTA_ALPHAS):
            matched = 0
            if gi.size and pi.size:
                ok = sim >= alpha - eps
                if ok.any():
                    # count first, association-weighted overlap second
                    priority = min(gi.size, pi.size) + 1.0
                    weight = np.where(ok, priority + align[gi[:, None], pi[None, :]] * sim, 0.0)
                    rows, cols = linear_sum_assignment(-weight)
                    keep = ok[rows, cols]
                    rows, cols = rows[keep], cols[keep]
                    matched = rows.size
                    match_counts[a, gi[rows], pi[cols]] += 1
            tp[a] += matched
            fn[a] += gi.size - matched
            fp[a] += pi.size - matched

    per_alpha = []
    for a, alpha in enumerate(HOTA_ALPHAS):
        mc = match_counts[a]
        ass = mc / np.maximum(gt_count[:, None] + pd_count[None, :] - mc, eps)
        assa = float((mc * ass).sum() / max(1.0, tp[a]))
        deta = float(tp[a] / max(1.0, tp[a] + fn[a] + fp[a]))
        per_alpha.append({
            "alpha": float(alpha), "deta": deta, "assa": assa, "hota": math.sqrt(deta * assa),
            "tp": float(tp[a]), "fn": float(fn[a]), "fp": float(fp[a]),
        })
    return HotaResult(
        deta=100.0 * float(np.mean([r["deta"] for r in per_alpha])),
        assa=100.0 * float(np.mean([r["assa"] for r in per_alpha])),
        hota=100.0 * float(np.mean([r["hota"] for r in per_alpha])),
        per_alpha=per_alpha,
    )


def boxes_of(frames: Frames) -> list[dict[int, BoundingBox]]:
    return [{i: m.bbox for i, m in f.items() if m.runs} for f in frames]


def evaluate_sequence(gt: Frames, pd: Frames) -> MetricReport:
    per_frame = all_association_counts(gt, pd)
    ap, ar, af = association_scores(per_frame)
    h = hota_family(boxes_of(gt), boxes_of(pd))
    return MetricReport(ap, ar, af, h.deta, h.assa, h.hota, per_frame, h.per_alpha)


# -- distribution summaries -------------------------------------------------------

def summarize(values, bandwidth: float | None = None) -> DistributionSummary:
    """Mean and a boundary-reflected Gaussian KDE on [0, 100].

    Bandwidth follows Scott's rule with a floor of ``KDE_MIN_BANDWIDTH`` so
    degenerate samples (one value, or all equal) still give a finite peak.
    """
    vals = np.asarray([v for v in values if v is not None and not math.isnan(v)], dtype=np.float64)
    if vals.size == 0:
        raise ValueError("summarize() needs at least one defined value")
    if bandwidth is None:
        sd = vals.std(ddof=1) if vals.size > 1 else 0.0
        bandwidth = max(sd * vals.size ** (-1 / 5), KDE_MIN_BANDWIDTH)
    xs = np.linspace(0.0, 100.0, KDE_GRID_POINTS)
    centers = np.concatenate([vals, -vals, 200.0 - vals])
    z = (xs[:, None] - centers[None, :]) / bandwidth
    dens = np.exp(-0.5 * z * z).sum(1) / (vals.size * bandwidth * math.sqrt(2 * math.pi))
    dens /= np.trapezoid(dens, xs)
    return DistributionSummary(float(vals.mean()), list(zip(xs.tolist(), dens.tolist())), float(bandwidth))
