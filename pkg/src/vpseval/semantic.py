"""mIoU, weighted IoU and n-frame video consistency for semantic videos."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Tuple

import numpy as np

from .data import SemanticVideo
from .matching import cooccurrence

VOID = 0
VC_MODES = ("strict", "self")


@dataclass
class ConfusionAccumulator:
    """Pixel counts keyed by (gt_class, pred_class).

    Pixels whose ground truth is void are never counted; predicted void is
    kept under pred class 0.
    """

    counts: Dict[Tuple[int, int], int] = field(default_factory=dict)

    def update(self, other: "ConfusionAccumulator") -> None:
        for k, n in other.counts.items():
            self.counts[k] = self.counts.get(k, 0) + n

    def __add__(self, other: "ConfusionAccumulator") -> "ConfusionAccumulator":
        out = ConfusionAccumulator(dict(self.counts))
        out.update(other)
        return out

    def add_frame(self, pred: np.ndarray, gt: np.ndarray) -> None:
        """Count one frame pair (or equally shaped stacks of frames)."""
        table = cooccurrence(gt, pred)
        for (g, p), n in table.pairs.items():
            if g != VOID:
                self.counts[(g, p)] = self.counts.get((g, p), 0) + n

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def class_ious(self) -> Dict[int, float]:
        """IoU for every class seen in gt or (non-void) prediction."""
        gt_area: Dict[int, int] = {}
        pred_area: Dict[int, int] = {}
        for (g, p), n in self.counts.items():
            gt_area[g] = gt_area.get(g, 0) + n
            if p != VOID:
                pred_area[p] = pred_area.get(p, 0) + n
        classes = sorted(set(gt_area) | set(pred_area))
        out = {}
        for c in classes:
            inter = self.counts.get((c, c), 0)
            union = gt_area.get(c, 0) + pred_area.get(c, 0) - inter
            out[c] = inter / union
        return out

    def gt_areas(self) -> Dict[int, int]:
        areas: Dict[int, int] = {}
        for (g, _), n in self.counts.items():
            areas[g] = areas.get(g, 0) + n
        return dict(sorted(areas.items()))


def confusion(pred: SemanticVideo, gt: SemanticVideo) -> ConfusionAccumulator:
    if pred.frames.shape != gt.frames.shape:
        raise ValueError(f"shape mismatch: {pred.frames.shape} vs {gt.frames.shape}")
    acc = ConfusionAccumulator()
    acc.add_frame(pred.frames, gt.frames)  # counting is per pixel, so the stack works too
    return acc


def _require_pixels(acc: ConfusionAccumulator) -> None:
    if acc.total == 0:
        raise ValueError("confusion accumulator has no ground-truth pixels")


def miou(acc: ConfusionAccumulator) -> float:
    _require_pixels(acc)
    ious = acc.class_ious()
    return math.fsum(ious.values()) / len(ious)


def weighted_iou(acc: ConfusionAccumulator) -> float:
    _require_pixels(acc)
    ious = acc.class_ious()
    total = acc.total
    return math.fsum(n / total * ious[c] for c, n in acc.gt_areas().items())


def vc_windows(pred: SemanticVideo, gt: SemanticVideo, n: int,
               mode: str = "strict") -> List[Tuple[int, int]]:
    """(consistent, stable) pixel counts for each window of ``min(n, T)`` frames.

    A pixel is stable when its gt label is non-void and unchanged over the
    window. In ``strict`` mode it is consistent when the prediction equals
    that label in every frame; in ``self`` mode when the prediction merely
    stays constant.
    """
    if n < 1:
        raise ValueError(f"window length must be >= 1, got {n}")
    if mode not in VC_MODES:
        raise ValueError(f"unknown vc mode {mode!r}")
    if pred.frames.shape != gt.frames.shape:
        raise ValueError(f"shape mismatch: {pred.frames.shape} vs {gt.frames.shape}")
    T = gt.num_frames
    kk = min(n, T)
    g = gt.frames.reshape(T, -1)
    p = pred.frames.reshape(T, -1)
    g_run = _run_lengths(g[1:] == g[:-1])
    if mode == "strict":
        # run of frames from t on where the prediction equals the gt label
        hit = p == g
        ok_run = _run_lengths(hit[1:] & hit[:-1], start=hit)
    else:
        ok_run = _run_lengths(p[1:] == p[:-1])
    S = T - kk + 1
    stable = (g_run[:S] >= kk) & (g[:S] != VOID)
    good = stable & (ok_run[:S] >= kk)
    return list(zip(np.count_nonzero(good, axis=1).tolist(),
                    np.count_nonzero(stable, axis=1).tolist()))


def _run_lengths(same_next: np.ndarray, start: np.ndarray = None) -> np.ndarray:
    """run[t] = frames from t on before the chain breaks (``start`` gates frame t).

    ``same_next[t]`` says whether frame t continues into frame t + 1.
    """
    T = same_next.shape[0] + 1
    dtype = np.uint16 if T < np.iinfo(np.uint16).max else np.uint32
    run = np.empty((T,) + same_next.shape[1:], dtype=dtype)
    run[-1] = 1 if start is None else start[-1]
    for t in range(T - 2, -1, -1):
        np.add(run[t + 1], 1, out=run[t])
        run[t] *= same_next[t]
        if start is None:
            run[t] += ~same_next[t]
        else:
            run[t] += ~same_next[t] & start[t]
    return run


def vc_n(pred: SemanticVideo, gt: SemanticVideo, n: int, mode: str = "strict") -> float:
    """Mean over windows of consistent / stable pixels; NaN if no window is stable."""
    ratios = [c / s for c, s in vc_windows(pred, gt, n, mode) if s > 0]
    if not ratios:
        return float("nan")
    return math.fsum(ratios) / len(ratios)


@dataclass(frozen=True)
class VcReport:
    per_n: Dict[int, float]


def mean_finite(values: Iterable[float]) -> float:
    vals = [v for v in values if not math.isnan(v)]
    if not vals:
        return float("nan")
    return math.fsum(vals) / len(vals)
