"""Dataset-level VPS / VSS evaluation over a pool of worker processes.

Each worker turns one (gt, pred) video pair into mergeable accumulators;
the parent merges them in sorted video-id order, so results do not depend
on the number of workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

from . import __version__
from .data import CategoryTable, DatasetRoot, load_as_semantic, load_video
from .panoptic import (DEFAULT_WINDOWS, PanopticStats, StqAccumulator, VideoPairTables,
                       score, stq_accumulate, vpq_aggregate)
from .semantic import ConfusionAccumulator, confusion, mean_finite, miou, vc_windows, weighted_iou

DEFAULT_VC = (8, 16)
TOOL = "vpseval"


class VideoSetMismatch(ValueError):
    """Ground-truth and prediction roots hold different video ids."""

    def __init__(self, missing: Sequence[str], extra: Sequence[str]):
        self.missing = list(missing)
        self.extra = list(extra)
        super().__init__(f"video id mismatch: missing in pred {self.missing},"
                         f" unexpected in pred {self.extra}")


def _paired_ids(gt: DatasetRoot, pred: DatasetRoot) -> List[str]:
    g, p = gt.video_ids(), pred.video_ids()
    if g != p:
        raise VideoSetMismatch(sorted(set(g) - set(p)), sorted(set(p) - set(g)))
    return g


def _pool_map(fn, jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(fn, jobs, chunksize=1))


def _finite(x: float):
    return None if x is None or math.isnan(x) else x


# --------------------------------------------------------------------------
# VPS

def _vps_job(job) -> Tuple[str, Dict[int, PanopticStats], StqAccumulator]:
    gt_dir, pred_dir, vid, categories, windows, include_stuff = job
    gt = load_video(gt_dir, categories, vid)
    pred = load_video(pred_dir, categories, vid)
    tables = VideoPairTables(pred, gt)
    stats = {k: tables.window_stats(k) for k in windows}
    acc = stq_accumulate(tables.video_table(), pred, gt, categories, include_stuff)
    return vid, stats, acc


def _vpq_block(per_k: Dict[int, float]) -> dict:
    per_k = {k: per_k[k] for k in sorted(per_k)}
    if any(math.isnan(v) for v in per_k.values()):
        vpq = float("nan")
    else:
        vpq = vpq_aggregate(per_k)
    return {"per_k": {str(k): _finite(v) for k, v in per_k.items()}, "vpq": _finite(vpq)}


def _stq_block(acc: StqAccumulator) -> dict:
    r = acc.report()
    return {"aq": _finite(r.aq), "sq": _finite(r.sq), "stq": _finite(r.stq)}


def evaluate_vps(gt_root, pred_root, windows: Sequence[int] = DEFAULT_WINDOWS,
                 workers: int = 1, per_video: bool = False,
                 include_stuff: bool = True) -> dict:
    """VPQ per window length, aggregate VPQ and STQ, per video and overall.

    By default class statistics are pooled over every window of every video
    and scored once; ``per_video=True`` averages per-video scores instead.
    """
    windows = sorted(set(int(k) for k in windows))
    if not windows or windows[0] < 1:
        raise ValueError("window lengths must be >= 1")
    gt, pred = DatasetRoot(gt_root), DatasetRoot(pred_root)
    categories = gt.categories
    ids = _paired_ids(gt, pred)
    jobs = [(gt.video_dir(v), pred.video_dir(v), v, categories, windows, include_stuff)
            for v in ids]
    results = sorted(_pool_map(_vps_job, jobs, workers), key=lambda r: r[0])

    videos = {}
    merged = {k: PanopticStats() for k in windows}
    stq_total = StqAccumulator()
    per_video_scores: Dict[int, List[float]] = {k: [] for k in windows}
    for vid, stats, acc in results:
        scores = {k: score(stats[k])[1] for k in windows}
        videos[vid] = {"vpq": _vpq_block(scores), "stq": _stq_block(acc)}
        for k in windows:
            merged[k].update(stats[k])
            per_video_scores[k].append(scores[k])
        stq_total.update(acc)

    if per_video:
        agg = {k: mean_finite(per_video_scores[k]) for k in windows}
    else:
        agg = {k: score(merged[k])[1] for k in windows}
    return {
        "tool": TOOL,
        "version": __version__,
        "task": "vps",
        "config": {"windows": windows,
                   "aggregation": "per-video" if per_video else "dataset",
                   "stq_include_stuff": include_stuff},
        "units": {"vpq": "percent", "stq": "ratio"},
        "aggregate": {"vpq": _vpq_block(agg), "stq": _stq_block(stq_total)},
        "videos": videos,
    }


# --------------------------------------------------------------------------
# VSS

def _vss_job(job):
    gt_dir, pred_dir, vid, categories, vc, vc_mode = job
    gt = load_as_semantic(gt_dir, categories)
    pred = load_as_semantic(pred_dir, categories)
    if pred.frames.shape != gt.frames.shape:
        raise ValueError(f"video {vid}: shape mismatch {pred.frames.shape} vs {gt.frames.shape}")
    conf = confusion(pred, gt)
    windows = {n: vc_windows(pred, gt, n, vc_mode) for n in vc}
    return vid, conf, windows


def _window_mean(windows: List[Tuple[int, int]]) -> float:
    ratios = [c / s for c, s in windows if s > 0]
    return math.fsum(ratios) / len(ratios) if ratios else float("nan")


def _semantic_block(conf: ConfusionAccumulator) -> dict:
    if conf.total == 0:
        return {"miou": None, "weighted_iou": None}
    return {"miou": miou(conf), "weighted_iou": weighted_iou(conf)}


def evaluate_vss(gt_root, pred_root, vc: Sequence[int] = DEFAULT_VC, workers: int = 1,
                 vc_mode: str = "strict", vc_pooling: bool = False) -> dict:
    """mIoU, weighted IoU and VC_n, per video and overall.

    Panoptic roots are converted to class rasters on load. VC_n defaults to
    the mean of per-video window means; ``vc_pooling`` pools every window of
    every video instead.
    """
    vc = sorted(set(int(n) for n in vc))
    if not vc or vc[0] < 1:
        raise ValueError("vc window lengths must be >= 1")
    gt, pred = DatasetRoot(gt_root), DatasetRoot(pred_root)
    categories = gt.categories
    ids = _paired_ids(gt, pred)
    jobs = [(gt.video_dir(v), pred.video_dir(v), v, categories, vc, vc_mode) for v in ids]
    results = sorted(_pool_map(_vss_job, jobs, workers), key=lambda r: r[0])

    videos = {}
    total = ConfusionAccumulator()
    per_video_vc: Dict[int, List[float]] = {n: [] for n in vc}
    pooled = {n: [0, 0] for n in vc}
    for vid, conf, windows in results:
        means = {n: _window_mean(windows[n]) for n in vc}
        videos[vid] = {**_semantic_block(conf),
                       "vc": {str(n): _finite(means[n]) for n in vc}}
        total.update(conf)
        for n in vc:
            per_video_vc[n].append(means[n])
            pooled[n][0] += sum(c for c, _ in windows[n])
            pooled[n][1] += sum(s for _, s in windows[n])
    if vc_pooling:
        agg_vc = {n: (pooled[n][0] / pooled[n][1] if pooled[n][1] else float("nan"))
                  for n in vc}
    else:
        agg_vc = {n: mean_finite(per_video_vc[n]) for n in vc}
    return {
        "tool": TOOL,
        "version": __version__,
        "task": "vss",
        "config": {"vc": vc, "vc_mode": vc_mode,
                   "vc_aggregation": "pooled" if vc_pooling else "per-video"},
        "units": {"miou": "ratio", "weighted_iou": "ratio", "vc": "ratio"},
        "aggregate": {**_semantic_block(total),
                      "vc": {str(n): _finite(agg_vc[n]) for n in vc}},
        "videos": videos,
    }
