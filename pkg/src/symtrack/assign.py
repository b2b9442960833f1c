"""Time-symmetric global assignment.

Detections (or longer fragments) are linked by comparing their local track
windows over the frames both windows cover.  Links are solved with the
Hungarian method one temporal offset at a time, from 1 up to ``2 * tr``, so
short-range links are fixed before longer-range ones are considered.  Linked
fragments are reduced to tracks by depth-first search and the skipped frames
are filled in from the window predictions.
"""
from __future__ import annotations

import math
from collections import defaultdict

import numpy as np

from .core import BinaryMask, aligned_iou, mask_iou, mask_translate
from .tracks import (
    FragmentEntry,
    IdentityLink,
    LocalTrackWindow,
    Provenance,
    Track,
    TrackEntry,
    TrackFragment,
    Variant,
)

L2_SCALE_DIVISOR = 20.0


class LinkGraphError(RuntimeError):
    pass


# -- Hungarian method ---------------------------------------------------------

def hungarian(cost) -> dict[int, int]:
    """Minimum-cost one-to-one assignment of rows to columns.

    Rectangular matrices assign ``min(rows, cols)`` pairs when enough finite
    entries exist; infinite entries are never assigned, and the number of
    finite pairs is maximized before the total cost is minimized.  Ties are
    broken toward lower column indices as rows are inserted in order.
    """
    C = np.asarray(cost, dtype=np.float64)
    if C.ndim != 2 or C.size == 0:
        return {}
    transposed = C.shape[0] > C.shape[1]
    if transposed:
        C = C.T
    finite = np.isfinite(C)
    if not finite.any():
        return {}
    n, m = C.shape
    if finite.all():
        W = C
    else:
        big = (2 * n + 2) * (np.abs(C[finite]).max() + 1.0)
        W = np.where(finite, C, big)

    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)  # p[j]: 1-based row matched to column j
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = W[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    out = {}
    for j in range(1, m + 1):
        if p[j]:
            r, c = int(p[j]) - 1, j - 1
            if finite[r, c]:
                if transposed:
                    out[c] = r
                else:
                    out[r] = c
    return dict(sorted(out.items()))


def assignment_cost(cost, assignment: dict[int, int]) -> float:
    C = np.asarray(cost, dtype=np.float64)
    rows = sorted(assignment)
    return float(np.sum(C[rows, [assignment[r] for r in rows]]))


def max_similarity_assignment(sim, threshold: float) -> dict[int, int]:
    """Matching maximizing total similarity over pairs at or above ``threshold``.

    Each row gets a private "unmatched" column costing 1.0 next to the
    ``1 - sim`` pair costs, so a row is linked only when that raises the
    total similarity; otherwise full-cardinality matching would force weak
    pairs in just to add links.
    """
    sim = np.asarray(sim, dtype=np.float64)
    n, m = sim.shape
    if n == 0 or m == 0:
        return {}
    cost = np.full((n, m + n), np.inf)
    cost[:, :m] = np.where(sim >= threshold, 1.0 - sim, np.inf)
    cost[np.arange(n), m + np.arange(n)] = 1.0
    return {i: j for i, j in hungarian(cost).items() if j < m}


# -- window similarity -------------------------------------------------------

def _frame_score(pa: BinaryMask, pb: BinaryMask, variant: Variant, sigma: float) -> float:
    if variant is Variant.TS:
        return mask_iou(pa, pb)
    if variant is Variant.TS_SHAPE:
        return aligned_iou(pa, pb)
    if variant is Variant.TS_L2:
        ca, cb = pa.centroid, pb.centroid
        return math.exp(-math.hypot(ca.x - cb.x, ca.y - cb.y) / sigma)
    raise ValueError(f"variant {variant} has no window similarity")


def window_similarity(a: LocalTrackWindow, b: LocalTrackWindow, variant: Variant = Variant.TS) -> float:
    """Mean per-frame agreement of two windows over their common frames.

    ``b`` must be anchored 1..2*tr frames after ``a``.  Frames where neither
    window predicts anything are skipped; frames where only one does score 0.
    """
    variant = Variant(variant)
    tr = a.tr
    d = b.anchor_frame - a.anchor_frame
    if not 1 <= d <= 2 * tr:
        raise ValueError(f"window offset {d} outside [1, {2 * tr}]")
    sigma = a.predicted[0].grid.fov / L2_SCALE_DIVISOR
    total = 0.0
    counted = 0
    for frame in range(b.anchor_frame - tr, a.anchor_frame + tr + 1):
        pa = a.predicted[frame - a.anchor_frame]
        pb = b.predicted.get(frame - b.anchor_frame)
        if pb is None:
            continue
        if not pa.runs or not pb.runs:
            if pa.runs or pb.runs:
                counted += 1
            continue
        counted += 1
        total += _frame_score(pa, pb, variant, sigma)
    return total / counted if counted else 0.0


# -- offset sweep ------------------------------------------------------------

def sweep_assign(
    fragments: list[TrackFragment],
    tr: int,
    threshold: float,
    variant: Variant = Variant.TS,
    max_offset: int | None = None,
) -> list[IdentityLink]:
    variant = Variant(variant)
    max_offset = 2 * tr if max_offset is None else min(max_offset, 2 * tr)
    by_id = {f.fragment_id: f for f in fragments}
    if len(by_id) != len(fragments):
        raise ValueError("fragment ids must be unique")
    order = {f.fragment_id: i for i, f in enumerate(fragments)}
    has_out: set[int] = set()
    has_in: set[int] = set()
    links: list[IdentityLink] = []

    for d in range(1, max_offset + 1):
        ending = defaultdict(list)
        starting = defaultdict(list)
        for frag in fragments:
            if frag.fragment_id not in has_out:
                ending[frag.end].append(frag)
            if frag.fragment_id not in has_in:
                starting[frag.start].append(frag)
        for t in sorted(ending):
            rows = sorted(ending[t], key=lambda f: order[f.fragment_id])
            cols = sorted(starting.get(t + d, ()), key=lambda f: order[f.fragment_id])
            if not cols:
                continue
            sim = np.zeros((len(rows), len(cols)))
            for i, fa in enumerate(rows):
                wa = fa.entries[-1].window
                for j, fb in enumerate(cols):
                    wb = fb.entries[0].window
                    if wa is None or wb is None:
                        continue
                    sim[i, j] = window_similarity(wa, wb, variant)
            for i, j in max_similarity_assignment(sim, threshold).items():
                fa, fb = rows[i], cols[j]
                if fb.start <= fa.end:
                    continue
                links.append(IdentityLink(fa.fragment_id, fb.fragment_id, d, float(sim[i, j])))
                has_out.add(fa.fragment_id)
                has_in.add(fb.fragment_id)
    return links


# -- graph reduction -----------------------------------------------------------

def reduce_ids(fragments: list[TrackFragment], links: list[IdentityLink]) -> list[list[TrackFragment]]:
    """Chains of linked fragments in order of first appearance.

    Chains are sorted by start frame, then input order; ``build_tracks``
    numbers them from 1 in this order.
    """
    by_id = {f.fragment_id: f for f in fragments}
    succ: dict[int, int] = {}
    pred: dict[int, int] = {}
    adj: dict[int, list[int]] = defaultdict(list)
    for ln in links:
        if ln.from_fragment not in by_id or ln.to_fragment not in by_id:
            raise LinkGraphError(f"link {ln} references an unknown fragment")
        if ln.from_fragment in succ or ln.to_fragment in pred:
            raise LinkGraphError(f"link {ln} violates the one-in/one-out constraint")
        succ[ln.from_fragment] = ln.to_fragment
        pred[ln.to_fragment] = ln.from_fragment
        adj[ln.from_fragment].append(ln.to_fragment)
        adj[ln.to_fragment].append(ln.from_fragment)

    index = {f.fragment_id: i for i, f in enumerate(fragments)}
    visited: set[int] = set()
    chains = []
    for frag in sorted(fragments, key=lambda f: (f.start, index[f.fragment_id])):
        if frag.fragment_id in visited:
            continue
        component = []
        stack = [frag.fragment_id]
        visited.add(frag.fragment_id)
        while stack:
            node = stack.pop()
            component.append(node)
            for nb in adj[node]:
                if nb not in visited:
                    visited.add(nb)
                    stack.append(nb)
        heads = [c for c in component if c not in pred]
        if len(heads) != 1:
            raise LinkGraphError("link graph contains a cycle")
        path = [heads[0]]
        while path[-1] in succ:
            path.append(succ[path[-1]])
        if len(path) != len(component):
            raise LinkGraphError("link graph component is not a simple path")
        chains.append([by_id[c] for c in path])
    return chains


# -- gap filling ---------------------------------------------------------------

def vote_masks(masks: list[BinaryMask]) -> BinaryMask:
    """Pixels marked by at least half of the masks (ties count as foreground)."""
    masks = [m for m in masks if m.runs]
    if not masks:
        raise ValueError("no masks to vote on")
    if len(masks) <= 2:
        if len(masks) == 1 or masks[0] == masks[1]:
            return masks[0]
        return BinaryMask.from_linear(masks[0].grid, np.union1d(masks[0].linear, masks[1].linear))
    idx, counts = np.unique(np.concatenate([m.linear for m in masks]), return_counts=True)
    return BinaryMask.from_linear(masks[0].grid, idx[2 * counts >= len(masks)])


def _fallback_mask(prev: FragmentEntry, nxt: FragmentEntry, frame: int) -> BinaryMask:
    ca, cb = prev.mask.centroid, nxt.mask.centroid
    w = (frame - prev.frame) / (nxt.frame - prev.frame)
    cx, cy = ca.x + (cb.x - ca.x) * w, ca.y + (cb.y - ca.y) * w
    base = prev.mask if frame - prev.frame <= nxt.frame - frame else nxt.mask
    c = base.centroid
    moved = mask_translate(base, cx - c.x, cy - c.y)
    return moved if moved.runs else base


def interpolate_gaps(chain: list[TrackFragment], track_id: int = 0, interpolate: bool = True) -> Track:
    entries: list[TrackEntry] = []
    for k, frag in enumerate(chain):
        if k and interpolate:
            prev_frag = chain[k - 1]
            last, first = prev_frag.entries[-1], frag.entries[0]
            for tau in range(prev_frag.end + 1, frag.start):
                # forward predictions of the earlier fragment, backward ones of the later
                preds = [e.window.at(tau) for e in prev_frag.entries + frag.entries if e.window is not None]
                preds = [m for m in preds if m is not None and m.runs]
                mask = vote_masks(preds) if preds else _fallback_mask(last, first, tau)
                entries.append(TrackEntry(tau, mask, Provenance.INTERPOLATED))
        entries.extend(TrackEntry(e.frame, e.mask, e.provenance) for e in frag.entries)
    return Track(track_id, entries)


def filter_short_tracks(tracks: list[Track], min_len: int = 10) -> list[Track]:
    return [t for t in tracks if t.length >= min_len]


def build_tracks(fragments: list[TrackFragment], links: list[IdentityLink],
                 min_len: int = 10, interpolate: bool = True) -> list[Track]:
    chains = reduce_ids(fragments, links)
    tracks = [interpolate_gaps(chain, tid, interpolate) for tid, chain in enumerate(chains, 1)]
    return filter_short_tracks(tracks, min_len)
