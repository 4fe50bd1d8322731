"""Track-id association over precomputed per-frame segments and embeddings.

The online stage links each frame's queries to active tracks by cosine
similarity; the offline stage cuts the tracked video into refiner windows
that overlap by one frame and stitches their ids back together by mask IoU.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import (MAX_ID, CategoryTable, DataFormatError, Segment, ValidationError,
                   VideoAnnotation, present_ids)
from .matching import VOID, cooccurrence, iou, solve_assignment

CLIP_LEN = 5
WINDOW_LEN = 21
SIM_THRESHOLD = 0.3
PATIENCE = 5
STITCH_IOU = 0.5
NORM_TOL = 1e-6


@dataclass
class FrameQueries:
    """One embedding per nonzero segment of a frame."""

    index: int
    segment_ids: np.ndarray
    embeddings: np.ndarray
    class_ids: np.ndarray

    def __post_init__(self):
        self.segment_ids = np.asarray(self.segment_ids, dtype=np.int64).reshape(-1)
        self.embeddings = np.asarray(self.embeddings, dtype=float)
        self.class_ids = np.asarray(self.class_ids, dtype=np.int64).reshape(-1)
        n = self.segment_ids.size
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] != n:
            raise ValidationError(
                f"frame {self.index}: expected {n} embeddings, got shape {self.embeddings.shape}")
        if self.class_ids.size != n:
            raise ValidationError(f"frame {self.index}: class ids do not match queries")
        if len(set(self.segment_ids.tolist())) != n:
            raise ValidationError(f"frame {self.index}: duplicate query segment ids")
        norms = np.linalg.norm(self.embeddings, axis=1)
        if n and np.any(np.abs(norms - 1.0) > NORM_TOL):
            raise ValidationError(f"frame {self.index}: embeddings must be unit length")

    @property
    def dim(self) -> Optional[int]:
        return self.embeddings.shape[1] if self.segment_ids.size else None


@dataclass
class Track:
    class_id: int
    embedding: np.ndarray
    last_seen: int


@dataclass
class TrackState:
    tracks: Dict[int, Track] = field(default_factory=dict)
    next_id: int = 1
    frame: int = 0
    dim: Optional[int] = None

    def issue(self) -> int:
        if self.next_id > MAX_ID:
            raise ValidationError("track id space exhausted")
        tid = self.next_id
        self.next_id += 1
        return tid


def _associate_frame(state: TrackState, raster: np.ndarray, queries: FrameQueries,
                     threshold: float, patience: int) -> Dict[int, int]:
    f = state.frame
    ids = present_ids(np.asarray(raster, dtype=np.uint16))
    if sorted(ids.tolist()) != sorted(queries.segment_ids.tolist()):
        raise ValidationError(
            f"frame {queries.index}: queries {sorted(queries.segment_ids.tolist())}"
            f" do not match raster segments {ids.tolist()}")
    if queries.dim is not None:
        if state.dim is None:
            state.dim = queries.dim
        elif queries.dim != state.dim:
            raise ValueError(f"embedding dimension {queries.dim} != {state.dim}")

    for tid in [t for t, tr in state.tracks.items() if f - tr.last_seen > patience]:
        del state.tracks[tid]

    order = np.argsort(queries.segment_ids, kind="stable")
    assigned: Dict[int, int] = {}
    unmatched: List[int] = []
    for c in sorted(set(queries.class_ids.tolist())):
        q_idx = [i for i in order if queries.class_ids[i] == c]
        t_ids = sorted(t for t, tr in state.tracks.items() if tr.class_id == c)
        taken = set()
        if t_ids:
            sim = (np.stack([state.tracks[t].embedding for t in t_ids])
                   @ queries.embeddings[q_idx].T)
            for r, col in solve_assignment(sim, maximize=True).matches:
                if sim[r, col] >= threshold:
                    qi = q_idx[col]
                    tid = t_ids[r]
                    assigned[int(queries.segment_ids[qi])] = tid
                    state.tracks[tid].embedding = queries.embeddings[qi].copy()
                    state.tracks[tid].last_seen = f
                    taken.add(qi)
        unmatched.extend(i for i in q_idx if i not in taken)

    for qi in sorted(unmatched, key=lambda i: queries.segment_ids[i]):
        tid = state.issue()
        assigned[int(queries.segment_ids[qi])] = tid
        state.tracks[tid] = Track(int(queries.class_ids[qi]), queries.embeddings[qi].copy(), f)
    state.frame += 1
    return assigned


def associate_clip(state: TrackState, clip: Sequence[Tuple[np.ndarray, FrameQueries]],
                   clip_len: int = CLIP_LEN, threshold: float = SIM_THRESHOLD,
                   patience: int = PATIENCE) -> Tuple[TrackState, List[Dict[int, int]]]:
    """Assign track ids frame by frame over one clip.

    Returns the updated state (the input is left untouched) and, per frame,
    a mapping segment id -> track id.
    """
    if len(clip) > clip_len:
        raise ValueError(f"clip has {len(clip)} frames, more than clip_len={clip_len}")
    state = copy.deepcopy(state)
    out = [_associate_frame(state, raster, q, threshold, patience) for raster, q in clip]
    return state, out


# --------------------------------------------------------------------------
# Window stitching

def _window_starts(windows: Sequence[VideoAnnotation], window_len: int,
                   starts: Optional[Sequence[int]]) -> List[int]:
    if starts is None:
        stride = window_len - 1
        if stride < 1:
            raise ValueError("window_len must be >= 2 to stitch overlapping windows")
        starts = [i * stride for i in range(len(windows))]
        for w in windows[:-1]:
            if w.num_frames != window_len:
                raise ValueError(
                    f"window {w.video_id} has {w.num_frames} frames, expected {window_len}")
    starts = list(starts)
    if len(starts) != len(windows):
        raise ValueError("one start frame per window is required")
    if starts[0] != 0:
        raise ValueError("first window must start at frame 0")
    for i in range(1, len(windows)):
        prev_end = starts[i - 1] + windows[i - 1].num_frames
        if starts[i] >= prev_end:
            raise ValueError(f"windows {i - 1} and {i} do not overlap")
        if starts[i] <= starts[i - 1] or starts[i] + windows[i].num_frames <= prev_end:
            raise ValueError(f"window {i} does not extend past window {i - 1}")
    return starts


def stitch_windows(windows: Sequence[VideoAnnotation], window_len: int = WINDOW_LEN,
                   starts: Optional[Sequence[int]] = None,
                   min_iou: float = STITCH_IOU) -> VideoAnnotation:
    """Merge overlapping windows into one video with consistent track ids.

    By default window ``w`` is taken to start at frame ``w * (window_len - 1)``.
    Each window's tracks are matched to the already stitched tracks of the
    same class by IoU over the overlap frames (maximum-weight assignment,
    IoU > ``min_iou``); unmatched tracks get fresh ids. Overlap frames keep
    the earlier window's rasters.
    """
    if not windows:
        raise ValueError("no windows to stitch")
    starts = _window_starts(windows, window_len, starts)
    if len(windows) == 1:
        return windows[0]
    shape = windows[0].shape
    for w in windows:
        if w.shape != shape:
            raise ValueError(f"resolution mismatch: {w.shape} vs {shape}")

    first = windows[0]
    frames = [f for f in first.frames]
    registry: Dict[int, Segment] = dict(first.registry)
    next_track = max((s.track_id for s in registry.values()), default=0) + 1
    next_seg = max(registry, default=0) + 1

    for w, start in zip(windows[1:], starts[1:]):
        n_overlap = len(frames) - start
        out_track = np.zeros(MAX_ID + 1, dtype=np.int64)
        for sid, seg in registry.items():
            out_track[sid] = seg.track_id
        win_track = w.lookup("track_id")
        table = None
        for t in range(n_overlap):
            tt = cooccurrence(frames[start + t], w.frames[t]).remap(out_track, win_track)
            table = tt if table is None else table + tt
        out_cls = {s.track_id: s.class_id for s in registry.values()}
        win_cls = w.track_classes()
        remap: Dict[int, int] = {}
        for c in sorted(set(win_cls.values())):
            a_ids = sorted(t for t in table.areas_a if t != VOID and out_cls[t] == c)
            b_ids = sorted(t for t in table.areas_b if t != VOID and win_cls[t] == c)
            if not a_ids or not b_ids:
                continue
            m = np.array([[iou(table, a, b) for b in b_ids] for a in a_ids])
            for r, col in solve_assignment(m, maximize=True).matches:
                if m[r, col] > min_iou:
                    remap[b_ids[col]] = a_ids[r]
        for tid in sorted(win_cls):
            if tid not in remap:
                remap[tid] = next_track
                next_track += 1

        for t in range(n_overlap, w.num_frames):
            raster = w.frames[t]
            ids = present_ids(raster)
            lut = np.arange(MAX_ID + 1, dtype=np.uint16)
            for sid in ids.tolist():
                seg = w.registry[sid]
                new = Segment(seg.class_id, remap[seg.track_id])
                target = sid
                if target in registry and registry[target] != new:
                    target = next_seg
                if target > MAX_ID:
                    raise ValidationError("segment id space exhausted while stitching")
                next_seg = max(next_seg, target + 1)
                registry[target] = new
                lut[sid] = target
            frames.append(lut[raster])
    used = set(present_ids(np.stack(frames)).tolist())
    registry = {s: seg for s, seg in registry.items() if s in used or s in first.registry}
    return VideoAnnotation(first.video_id, np.stack(frames), registry)


# --------------------------------------------------------------------------
# Full tracking

def _frame_unique(video: VideoAnnotation, queries: Sequence[FrameQueries]):
    """Relabel so that no segment id appears in more than one frame."""
    seen: Dict[int, int] = {}
    shared = False
    for t, frame in enumerate(video.frames):
        for sid in present_ids(frame).tolist():
            if sid in seen:
                shared = True
                break
            seen[sid] = t
        if shared:
            break
    if not shared:
        return video, list(queries)
    frames, registry, new_queries = [], {}, []
    nxt = 1
    for frame, q in zip(video.frames, queries):
        lut = np.zeros(MAX_ID + 1, dtype=np.uint16)
        local = {}
        for sid in present_ids(frame).tolist():
            if nxt > MAX_ID:
                raise ValidationError("too many segments to make ids frame-unique")
            lut[sid] = nxt
            local[sid] = nxt
            registry[nxt] = video.registry[sid]
            nxt += 1
        frames.append(lut[frame])
        new_queries.append(FrameQueries(q.index, [local.get(int(s), 0) for s in q.segment_ids],
                                        q.embeddings, q.class_ids))
    return VideoAnnotation(video.video_id, np.stack(frames), registry), new_queries


def _renumber_by_appearance(video: VideoAnnotation) -> VideoAnnotation:
    order: Dict[int, int] = {}
    for frame in video.frames:
        for sid in present_ids(frame).tolist():
            tid = video.registry[sid].track_id
            if tid not in order:
                order[tid] = len(order) + 1
    nxt = len(order) + 1
    registry = {}
    for sid, seg in video.registry.items():
        if seg.track_id not in order:
            order[seg.track_id] = nxt
            nxt += 1
        registry[sid] = Segment(seg.class_id, order[seg.track_id])
    return video.replace(registry=registry)


def merge_stuff_tracks(video: VideoAnnotation, categories: CategoryTable) -> VideoAnnotation:
    """Give every stuff class a single track (its lowest track id)."""
    first: Dict[int, int] = {}
    for seg in video.registry.values():
        if not categories.is_thing(seg.class_id):
            first[seg.class_id] = min(first.get(seg.class_id, seg.track_id), seg.track_id)
    registry = {sid: (Segment(seg.class_id, first[seg.class_id]) if seg.class_id in first
                      else seg) for sid, seg in video.registry.items()}
    return video.replace(registry=registry)


def run_tracking(video: VideoAnnotation, queries: Sequence[FrameQueries],
                 categories: Optional[CategoryTable] = None,
                 clip_len: int = CLIP_LEN, window_len: int = WINDOW_LEN,
                 threshold: float = SIM_THRESHOLD, patience: int = PATIENCE) -> VideoAnnotation:
    """Online association in clips, then offline window stitching.

    ``video`` supplies per-frame segments and their classes; its track ids are
    ignored. Rasters are returned unchanged unless a segment id was shared
    between frames, in which case ids are made frame-unique first.
    """
    if len(queries) != video.num_frames:
        raise ValueError(f"{len(queries)} query frames for a {video.num_frames}-frame video")
    video, queries = _frame_unique(video, queries)
    state = TrackState()
    seg_track: Dict[int, int] = {}
    for s in range(0, video.num_frames, clip_len):
        clip = list(zip(video.frames[s:s + clip_len], queries[s:s + clip_len]))
        state, assigned = associate_clip(state, clip, clip_len, threshold, patience)
        for frame_map in assigned:
            seg_track.update(frame_map)
    registry = {sid: Segment(seg.class_id, seg_track.get(sid, seg.track_id))
                for sid, seg in video.registry.items() if sid in seg_track}
    tracked = video.replace(registry=registry)
    if categories is not None:
        tracked = merge_stuff_tracks(tracked, categories)

    stride = window_len - 1
    T = tracked.num_frames
    if T > window_len and stride >= 1:
        windows = []
        for start in range(0, T - 1, stride):
            sub = tracked.frames[start:start + window_len]
            used = set(present_ids(sub).tolist())
            reg = {sid: seg for sid, seg in tracked.registry.items() if sid in used}
            windows.append(_renumber_by_appearance(
                VideoAnnotation(tracked.video_id, sub, reg)))
            if start + window_len >= T:
                break
        tracked = stitch_windows(windows, window_len)
    if categories is not None:
        tracked = merge_stuff_tracks(tracked, categories)
    return tracked


# --------------------------------------------------------------------------
# queries.json

def load_queries(path, video: VideoAnnotation) -> List[FrameQueries]:
    """Read ``queries.json``; classes are resolved through the video registry."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    try:
        dim = int(doc["dim"])
        frames = sorted(doc["frames"], key=lambda fr: fr["index"])
        out = []
        for fr in frames:
            qs = fr["queries"]
            ids = [int(q["segment_id"]) for q in qs]
            emb = np.array([q["embedding"] for q in qs], dtype=float).reshape(len(qs), dim)
            for sid in ids:
                if sid not in video.registry:
                    raise ValidationError(f"{path}: frame {fr['index']}: unknown segment {sid}")
            classes = [video.registry[sid].class_id for sid in ids]
            out.append(FrameQueries(int(fr["index"]), ids, emb, classes))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise DataFormatError(f"{path}: malformed queries document ({exc})") from exc
    if [q.index for q in out] != list(range(video.num_frames)):
        raise ValidationError(f"{path}: expected one entry per frame 0..{video.num_frames - 1}")
    return out


def write_queries(path, queries: Sequence[FrameQueries], dim: int) -> None:
    doc = {"dim": dim, "frames": [
        {"index": q.index,
         "queries": [{"segment_id": int(s), "embedding": [float(x) for x in e]}
                     for s, e in zip(q.segment_ids, q.embeddings)]}
        for q in queries]}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True)
        f.write("\n")
