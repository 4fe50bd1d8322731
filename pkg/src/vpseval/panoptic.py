"""Frame PQ, windowed video panoptic quality and segmentation-tracking quality.

Tubes are keyed by track id on both sides; a track carries one class for
the whole video, so the key also fixes the class. Matching uses IoU > 0.5
within a class, which makes matches unique without an assignment solve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .data import CategoryTable, Segment, VideoAnnotation
from .matching import VOID, CooccurrenceTable, cooccurrence, iou
from .semantic import ConfusionAccumulator, miou

DEFAULT_WINDOWS = (1, 2, 4, 6)
MATCH_IOU = 0.5
VOID_IGNORE = 0.5


@dataclass
class ClassStats:
    iou_sum: float = 0.0
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def empty(self) -> bool:
        return self.tp + self.fp + self.fn == 0


@dataclass
class PanopticStats:
    """Per-class TP/FP/FN counts and summed TP IoU. Merges fieldwise."""

    classes: Dict[int, ClassStats] = field(default_factory=dict)

    def __getitem__(self, class_id: int) -> ClassStats:
        return self.classes.setdefault(class_id, ClassStats())

    def update(self, other: "PanopticStats") -> None:
        for c, s in other.classes.items():
            mine = self[c]
            mine.iou_sum += s.iou_sum
            mine.tp += s.tp
            mine.fp += s.fp
            mine.fn += s.fn

    def __add__(self, other: "PanopticStats") -> "PanopticStats":
        out = PanopticStats()
        out.update(self)
        out.update(other)
        return out

    def counts(self) -> Dict[int, Tuple[int, int, int]]:
        return {c: (s.tp, s.fp, s.fn) for c, s in sorted(self.classes.items())
                if not s.empty}


def match_tubes(table: CooccurrenceTable, gt_class: Mapping[int, int],
                pred_class: Mapping[int, int]) -> PanopticStats:
    """PQ bookkeeping for one gt-vs-pred table whose ``a`` side is ground truth."""
    stats = PanopticStats()
    matched_gt, matched_pred = set(), set()
    for (g, p) in sorted(table.pairs):
        if g == VOID or p == VOID or gt_class[g] != pred_class[p]:
            continue
        u = iou(table, g, p, gt_side="a")
        if u > MATCH_IOU:
            s = stats[gt_class[g]]
            s.tp += 1
            s.iou_sum += u
            matched_gt.add(g)
            matched_pred.add(p)
    for g in sorted(table.areas_a):
        if g != VOID and g not in matched_gt:
            stats[gt_class[g]].fn += 1
    for p in sorted(table.areas_b):
        if p == VOID or p in matched_pred:
            continue
        if table.pairs.get((VOID, p), 0) / table.areas_b[p] > VOID_IGNORE:
            continue
        stats[pred_class[p]].fp += 1
    return stats


def _tube_table(pred_frame, pred_track: np.ndarray, gt_frame,
                gt_track: np.ndarray) -> CooccurrenceTable:
    return cooccurrence(gt_frame, pred_frame).remap(gt_track, pred_track)


def frame_pq_stats(pred_frame: np.ndarray, pred_registry: Mapping[int, Segment],
                   gt_frame: np.ndarray, gt_registry: Mapping[int, Segment]) -> PanopticStats:
    """Single-frame PQ statistics.

    Segments of one track inside the frame are matched as one region.
    """
    pred_frame = np.asarray(pred_frame)
    gt_frame = np.asarray(gt_frame)
    if pred_frame.shape != gt_frame.shape:
        raise ValueError(f"resolution mismatch: {pred_frame.shape} vs {gt_frame.shape}")
    pred = VideoAnnotation("pred", pred_frame[None], pred_registry)
    gt = VideoAnnotation("gt", gt_frame[None], gt_registry)
    return vpq_k(pred, gt, 1)


def _check_pair(pred: VideoAnnotation, gt: VideoAnnotation) -> None:
    if pred.num_frames != gt.num_frames:
        raise ValueError(f"frame count mismatch: pred {pred.num_frames}, gt {gt.num_frames}")
    if pred.shape != gt.shape:
        raise ValueError(f"resolution mismatch: pred {pred.shape}, gt {gt.shape}")


class VideoPairTables:
    """Per-frame gt-vs-pred co-occurrence computed once and reused.

    ``segments[t]`` is keyed by raw segment ids, ``tubes[t]`` by track ids.
    """

    def __init__(self, pred: VideoAnnotation, gt: VideoAnnotation):
        _check_pair(pred, gt)
        self.pred = pred
        self.gt = gt
        gt_track = gt.lookup("track_id")
        pred_track = pred.lookup("track_id")
        self.segments = [cooccurrence(g, p) for g, p in zip(gt.frames, pred.frames)]
        self.tubes = [t.remap(gt_track, pred_track) for t in self.segments]
        self.gt_class = {**gt.track_classes()}
        self.pred_class = {**pred.track_classes()}

    def window_stats(self, k: int) -> PanopticStats:
        if k < 1:
            raise ValueError(f"window length must be >= 1, got {k}")
        T = len(self.tubes)
        kk = min(k, T)
        stats = PanopticStats()
        for s in range(T - kk + 1):
            window = CooccurrenceTable()
            for t in range(s, s + kk):
                window.update(self.tubes[t])
            stats.update(match_tubes(window, self.gt_class, self.pred_class))
        return stats

    def video_table(self) -> CooccurrenceTable:
        total = CooccurrenceTable()
        for t in self.segments:
            total.update(t)
        return total


def vpq_k(pred: VideoAnnotation, gt: VideoAnnotation, k: int,
          categories: Optional[CategoryTable] = None) -> PanopticStats:
    """Stats merged over every window of ``min(k, T)`` frames, stride 1."""
    if k < 1:
        raise ValueError(f"window length must be >= 1, got {k}")
    if categories is not None:
        pred.validate(categories)
        gt.validate(categories)
    return VideoPairTables(pred, gt).window_stats(k)


def score(stats: PanopticStats) -> Tuple[Dict[int, float], float]:
    """Per-class PQ in percent and their mean over classes seen on either side.

    The mean is NaN when no class has any TP, FP or FN.
    """
    per_class = {}
    for c, s in sorted(stats.classes.items()):
        if s.empty:
            continue
        per_class[c] = 100.0 * s.iou_sum / (s.tp + 0.5 * s.fp + 0.5 * s.fn)
    if not per_class:
        return per_class, float("nan")
    return per_class, math.fsum(per_class.values()) / len(per_class)


def vpq_aggregate(per_k: Mapping[int, float]) -> float:
    if not per_k:
        raise ValueError("vpq_aggregate needs at least one window score")
    return math.fsum(per_k[k] for k in sorted(per_k)) / len(per_k)


@dataclass(frozen=True)
class VpqReport:
    per_k: Dict[int, float]
    vpq: float

    @property
    def windows(self) -> List[int]:
        return sorted(self.per_k)

    @classmethod
    def from_scores(cls, per_k: Mapping[int, float]) -> "VpqReport":
        per_k = dict(sorted(per_k.items()))
        return cls(per_k, vpq_aggregate(per_k))


# --------------------------------------------------------------------------
# STQ

@dataclass(frozen=True)
class StqReport:
    aq: float
    sq: float
    stq: float


@dataclass
class StqAccumulator:
    """Mergeable STQ state: summed per-gt-track association scores + confusion."""

    aq_sum: float = 0.0
    aq_tracks: int = 0
    pred_tracks: int = 0
    confusion: ConfusionAccumulator = field(default_factory=ConfusionAccumulator)

    def update(self, other: "StqAccumulator") -> None:
        self.aq_sum += other.aq_sum
        self.aq_tracks += other.aq_tracks
        self.pred_tracks += other.pred_tracks
        self.confusion.update(other.confusion)

    def report(self) -> StqReport:
        if self.aq_tracks:
            aq = self.aq_sum / self.aq_tracks
        else:
            aq = 1.0 if self.pred_tracks == 0 else 0.0
        if self.confusion.total:
            sq = miou(self.confusion)
        else:
            sq = float("nan")
        return StqReport(aq, sq, math.sqrt(aq * sq))


def stq_accumulate(segment_table: CooccurrenceTable, pred: VideoAnnotation,
                   gt: VideoAnnotation, categories: Optional[CategoryTable] = None,
                   include_stuff: bool = True) -> StqAccumulator:
    """STQ state of one video from its whole-video segment co-occurrence.

    ``segment_table`` has ground truth on side ``a``, raw segment ids on both
    sides.
    """
    gt_seg, pred_seg = gt.registry, pred.registry

    def keep(class_id):
        return include_stuff or categories is None or categories.is_thing(class_id)

    if not include_stuff and categories is None:
        raise ValueError("excluding stuff from AQ requires the category table")

    inter: Dict[Tuple[int, int], int] = {}
    gt_area: Dict[int, int] = {}
    pred_area: Dict[int, int] = {}
    conf = ConfusionAccumulator()
    for (g, p), n in sorted(segment_table.pairs.items()):
        gc = gt_seg[g].class_id if g != VOID else VOID
        pc = pred_seg[p].class_id if p != VOID else VOID
        if g != VOID:
            conf.counts[(gc, pc)] = conf.counts.get((gc, pc), 0) + n
        gt_t = gt_seg[g].track_id if g != VOID and keep(gc) else None
        pred_t = pred_seg[p].track_id if p != VOID and keep(pc) else None
        if gt_t is not None:
            gt_area[gt_t] = gt_area.get(gt_t, 0) + n
        if pred_t is not None and g != VOID:
            pred_area[pred_t] = pred_area.get(pred_t, 0) + n
        if gt_t is not None and pred_t is not None:
            inter[(gt_t, pred_t)] = inter.get((gt_t, pred_t), 0) + n

    per_track: Dict[int, float] = {g: 0.0 for g in gt_area}
    for (g, p), tpa in sorted(inter.items()):
        u = tpa / (gt_area[g] + pred_area[p] - tpa)
        per_track[g] += tpa * u
    aq_sum = math.fsum(per_track[g] / gt_area[g] for g in sorted(per_track))
    return StqAccumulator(aq_sum, len(per_track), len(pred_area), conf)


def stq(pred: VideoAnnotation, gt: VideoAnnotation,
        categories: Optional[CategoryTable] = None,
        include_stuff: bool = True) -> StqReport:
    """AQ over full-video tracks, SQ = mIoU of the merged-class views."""
    _check_pair(pred, gt)
    table = CooccurrenceTable()
    for g, p in zip(gt.frames, pred.frames):
        table.update(cooccurrence(g, p))
    return stq_accumulate(table, pred, gt, categories, include_stuff).report()
