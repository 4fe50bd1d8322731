"""Data model for video panoptic / semantic segmentation annotations.

Ground truth and predictions share one layout::

    <root>/categories.json
    <root>/manifest.json
    <root>/videos/<video_id>/frames/000000.png   # 16-bit id rasters, 0 = void
    <root>/videos/<video_id>/segments.json        # segment id -> class, track

Semantic videos replace ``segments.json`` with a ``semantic.json`` marker and
store class ids directly in the rasters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
from PIL import Image

VOID = 0
MAX_ID = np.iinfo(np.uint16).max
FRAME_PATTERN = "{:06d}.png"


class ValidationError(ValueError):
    """Raised when loaded or constructed data violates a model invariant."""


class DataFormatError(ValueError):
    """Raised for malformed JSON or unexpected document structure."""


def _read_json(path: Path):
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataFormatError(
            f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=1, sort_keys=True)
        f.write("\n")


# --------------------------------------------------------------------------
# Categories

@dataclass(frozen=True)
class Category:
    class_id: int
    name: str
    is_thing: bool


class CategoryTable:
    """Ordered class catalog with a thing/stuff partition."""

    def __init__(self, entries: Iterable[Category]):
        entries = tuple(entries)
        if not entries:
            raise ValidationError("category table is empty")
        by_id: Dict[int, Category] = {}
        for c in entries:
            if c.class_id == VOID:
                raise ValidationError("class id 0 is not allowed: void is reserved")
            if c.class_id < 0:
                raise ValidationError(f"class id must be positive, got {c.class_id}")
            if c.class_id in by_id:
                raise ValidationError(f"duplicate class id {c.class_id}")
            by_id[c.class_id] = c
        self.entries = entries
        self._by_id = by_id

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, class_id) -> bool:
        return class_id in self._by_id

    def __getitem__(self, class_id: int) -> Category:
        return self._by_id[class_id]

    def __eq__(self, other) -> bool:
        return isinstance(other, CategoryTable) and self.entries == other.entries

    def __repr__(self) -> str:
        return f"CategoryTable({len(self)} classes, {self.num_things} things)"

    @property
    def ids(self) -> List[int]:
        return [c.class_id for c in self.entries]

    @property
    def thing_ids(self) -> List[int]:
        return [c.class_id for c in self.entries if c.is_thing]

    @property
    def stuff_ids(self) -> List[int]:
        return [c.class_id for c in self.entries if not c.is_thing]

    @property
    def num_things(self) -> int:
        return len(self.thing_ids)

    @property
    def num_stuff(self) -> int:
        return len(self.stuff_ids)

    def is_thing(self, class_id: int) -> bool:
        return self._by_id[class_id].is_thing

    def to_json(self) -> list:
        return [{"id": c.class_id, "name": c.name, "isthing": c.is_thing}
                for c in self.entries]

    @classmethod
    def from_json(cls, doc) -> "CategoryTable":
        if not isinstance(doc, list):
            raise DataFormatError("categories document must be a list")
        entries = []
        for i, item in enumerate(doc):
            try:
                class_id, name, isthing = item["id"], item["name"], item["isthing"]
            except (KeyError, TypeError) as exc:
                raise DataFormatError(f"category entry {i}: missing field {exc}") from exc
            if isinstance(class_id, bool) or not isinstance(class_id, int):
                raise DataFormatError(f"category entry {i}: id must be an integer")
            entries.append(Category(class_id, str(name), bool(isthing)))
        return cls(entries)


def load_category_table(path) -> CategoryTable:
    return CategoryTable.from_json(_read_json(Path(path)))


def write_category_table(table: CategoryTable, path) -> None:
    _write_json(Path(path), table.to_json())


# --------------------------------------------------------------------------
# Videos

@dataclass(frozen=True)
class Segment:
    class_id: int
    track_id: int


def _as_frames(frames) -> np.ndarray:
    if isinstance(frames, np.ndarray):
        arr = frames
    else:
        frames = list(frames)
        if not frames:
            raise ValidationError("video has no frames")
        shapes = {np.shape(f) for f in frames}
        if len(shapes) != 1:
            raise ValidationError(f"inconsistent frame resolutions: {sorted(shapes)}")
        arr = np.stack([np.asarray(f) for f in frames])
    if arr.ndim != 3 or arr.shape[0] == 0:
        raise ValidationError(f"frames must have shape (T, H, W), got {arr.shape}")
    if arr.dtype != np.uint16:
        if arr.size and (arr.min() < 0 or arr.max() > MAX_ID):
            raise ValidationError("segment ids must lie in [0, 65535]")
        arr = arr.astype(np.uint16)
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


def present_ids(raster: np.ndarray) -> np.ndarray:
    """Sorted distinct nonzero ids of a uint16 raster (or stack)."""
    counts = np.bincount(raster.ravel(), minlength=1)
    ids = np.flatnonzero(counts)
    return ids[ids != VOID]


@dataclass(frozen=True, eq=False)
class VideoAnnotation:
    """Per-frame segment id rasters plus a video-level segment registry.

    ``frames`` is a read-only ``(T, H, W)`` uint16 array. Every nonzero id
    in the rasters must be a key of ``registry``.
    """

    video_id: str
    frames: np.ndarray
    registry: Mapping[int, Segment]

    def __post_init__(self):
        object.__setattr__(self, "frames", _as_frames(self.frames))
        registry = {int(k): (v if isinstance(v, Segment) else Segment(*v))
                    for k, v in dict(self.registry).items()}
        object.__setattr__(self, "registry", dict(sorted(registry.items())))
        self._check()

    def _check(self) -> None:
        for sid, seg in self.registry.items():
            if sid <= VOID or sid > MAX_ID:
                raise ValidationError(f"segment id {sid} out of range [1, 65535]")
            if seg.track_id < 1:
                raise ValidationError(f"segment {sid}: track id must be >= 1")
        track_class: Dict[int, int] = {}
        for sid, seg in self.registry.items():
            prev = track_class.setdefault(seg.track_id, seg.class_id)
            if prev != seg.class_id:
                raise ValidationError(
                    f"track {seg.track_id} has two classes ({prev}, {seg.class_id}):"
                    " tracks must keep one class")
        lut = self.registered_mask()
        for t, frame in enumerate(self.frames):
            ids = present_ids(frame)
            missing = ids[~lut[ids]]
            if missing.size:
                raise ValidationError(
                    f"video {self.video_id} frame {t}: ids {missing.tolist()}"
                    " not in segment registry")

    def registered_mask(self) -> np.ndarray:
        lut = np.zeros(MAX_ID + 1, dtype=bool)
        lut[list(self.registry)] = True
        return lut

    def validate(self, categories: CategoryTable) -> None:
        """Check class ids against ``categories`` and stuff single-track rule."""
        stuff_tracks: Dict[int, set] = {}
        for sid, seg in self.registry.items():
            if seg.class_id not in categories:
                raise ValidationError(
                    f"video {self.video_id}: segment {sid} has unknown class {seg.class_id}")
            if not categories.is_thing(seg.class_id):
                stuff_tracks.setdefault(seg.class_id, set()).add(seg.track_id)
        for c, tracks in sorted(stuff_tracks.items()):
            if len(tracks) > 1:
                raise ValidationError(
                    f"video {self.video_id}: stuff class {c} has tracks {sorted(tracks)};"
                    " stuff classes must use a single track")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def shape(self):
        return self.frames.shape[1:]

    def lookup(self, attr: str) -> np.ndarray:
        """Dense table mapping segment id -> class_id or track_id (0 for void)."""
        lut = np.zeros(MAX_ID + 1, dtype=np.int64)
        for sid, seg in self.registry.items():
            lut[sid] = getattr(seg, attr)
        return lut

    def track_classes(self) -> Dict[int, int]:
        return {seg.track_id: seg.class_id for seg in self.registry.values()}

    def replace(self, frames=None, registry=None) -> "VideoAnnotation":
        return VideoAnnotation(self.video_id,
                               self.frames if frames is None else frames,
                               self.registry if registry is None else registry)

    def __eq__(self, other) -> bool:
        return (isinstance(other, VideoAnnotation)
                and self.video_id == other.video_id
                and self.frames.shape == other.frames.shape
                and np.array_equal(self.frames, other.frames)
                and self.registry == other.registry)


@dataclass(frozen=True, eq=False)
class SemanticVideo:
    """Per-frame class id rasters, 0 = void."""

    video_id: str
    frames: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "frames", _as_frames(self.frames))

    def validate(self, categories: CategoryTable) -> None:
        ids = present_ids(self.frames)
        unknown = [int(i) for i in ids if int(i) not in categories]
        if unknown:
            raise ValidationError(f"video {self.video_id}: unknown class ids {unknown}")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    def __eq__(self, other) -> bool:
        return (isinstance(other, SemanticVideo)
                and self.video_id == other.video_id
                and self.frames.shape == other.frames.shape
                and np.array_equal(self.frames, other.frames))


def pan_to_sem(video: VideoAnnotation, categories: CategoryTable) -> SemanticVideo:
    """Merge all segments of each class into one class region per frame."""
    for sid, seg in video.registry.items():
        if seg.class_id not in categories:
            raise ValidationError(
                f"video {video.video_id}: segment {sid} has unregistered class {seg.class_id}")
    lut = video.lookup("class_id").astype(np.uint16)
    return SemanticVideo(video.video_id, lut[video.frames])


# --------------------------------------------------------------------------
# PNG + sidecar I/O

def read_raster(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("I;16", "I;16B", "I;16L", "L", "I"):
            raise DataFormatError(f"{path}: expected single-channel PNG, got mode {im.mode}")
        arr = np.asarray(im)
    if arr.ndim != 2:
        raise DataFormatError(f"{path}: expected a 2-D raster")
    return arr.astype(np.uint16, copy=False)


def write_raster(path, raster: np.ndarray) -> None:
    raster = np.asarray(raster)
    if raster.dtype != np.uint16:
        raster = raster.astype(np.uint16)
    Image.fromarray(raster).save(path, format="PNG", compress_level=1)


def _frame_paths(frames_dir: Path) -> List[Path]:
    if not frames_dir.is_dir():
        raise FileNotFoundError(f"missing frames directory: {frames_dir}")
    paths = sorted(p for p in frames_dir.iterdir() if p.suffix == ".png")
    if not paths:
        raise ValidationError(f"{frames_dir}: no frames")
    for i, p in enumerate(paths):
        if p.name != FRAME_PATTERN.format(i):
            raise ValidationError(f"{frames_dir}: expected {FRAME_PATTERN.format(i)}, found {p.name}")
    return paths


def _read_frames(frames_dir: Path) -> np.ndarray:
    rasters = [read_raster(p) for p in _frame_paths(frames_dir)]
    shapes = {r.shape for r in rasters}
    if len(shapes) != 1:
        raise ValidationError(f"{frames_dir}: inconsistent frame resolutions {sorted(shapes)}")
    return np.stack(rasters)


def _write_frames(frames_dir: Path, frames: np.ndarray) -> None:
    frames_dir.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(frames):
        write_raster(frames_dir / FRAME_PATTERN.format(t), frame)


def load_video(path, categories: Optional[CategoryTable] = None,
               video_id: Optional[str] = None) -> VideoAnnotation:
    """Load one video directory (``frames/`` + ``segments.json``)."""
    path = Path(path)
    sidecar = path / "segments.json"
    if not sidecar.is_file():
        raise FileNotFoundError(f"missing segment sidecar: {sidecar}")
    doc = _read_json(sidecar)
    try:
        registry = {int(s["id"]): Segment(int(s["class_id"]), int(s["track_id"]))
                    for s in doc["segments"]}
        if len(registry) != len(doc["segments"]):
            raise ValidationError(f"{sidecar}: duplicate segment ids")
    except (KeyError, TypeError) as exc:
        raise DataFormatError(f"{sidecar}: malformed segment entry ({exc})") from exc
    video = VideoAnnotation(video_id or path.name, _read_frames(path / "frames"), registry)
    if categories is not None:
        video.validate(categories)
    return video


def write_video(video: VideoAnnotation, path) -> None:
    path = Path(path)
    try:
        _write_frames(path / "frames", video.frames)
        _write_json(path / "segments.json", {"segments": [
            {"id": sid, "class_id": seg.class_id, "track_id": seg.track_id}
            for sid, seg in video.registry.items()]})
    except OSError as exc:
        raise OSError(f"cannot write video to {path}: {exc}") from exc


def load_semantic(path, categories: Optional[CategoryTable] = None,
                  video_id: Optional[str] = None) -> SemanticVideo:
    path = Path(path)
    marker = path / "semantic.json"
    if not marker.is_file():
        raise FileNotFoundError(f"missing semantic marker: {marker}")
    _read_json(marker)
    video = SemanticVideo(video_id or path.name, _read_frames(path / "frames"))
    if categories is not None:
        video.validate(categories)
    return video


def write_semantic(video: SemanticVideo, path) -> None:
    path = Path(path)
    try:
        _write_frames(path / "frames", video.frames)
        _write_json(path / "semantic.json", {"kind": "semantic", "frames": video.num_frames})
    except OSError as exc:
        raise OSError(f"cannot write semantic video to {path}: {exc}") from exc


def load_as_semantic(path, categories: CategoryTable) -> SemanticVideo:
    """Load a video directory of either kind, converting panoptic input."""
    path = Path(path)
    if (path / "segments.json").is_file():
        return pan_to_sem(load_video(path, categories), categories)
    return load_semantic(path, categories)


# --------------------------------------------------------------------------
# Dataset manifest

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class VideoInfo:
    video_id: str
    frames: int
    width: int
    height: int


@dataclass
class DatasetManifest:
    splits: Dict[str, int]
    videos: List[VideoInfo] = field(default_factory=list)

    @property
    def total_videos(self) -> int:
        return len(self.videos)

    @property
    def total_frames(self) -> int:
        return sum(v.frames for v in self.videos)

    def to_json(self) -> dict:
        return {"splits": dict(self.splits),
                "videos": [{"id": v.video_id, "frames": v.frames,
                            "width": v.width, "height": v.height} for v in self.videos]}

    @classmethod
    def from_json(cls, doc) -> "DatasetManifest":
        try:
            splits = {str(k): v for k, v in doc["splits"].items()}
            videos = [VideoInfo(str(v["id"]), v["frames"], v["width"], v["height"])
                      for v in doc["videos"]]
        except (KeyError, TypeError, AttributeError) as exc:
            raise DataFormatError(f"malformed manifest ({exc})") from exc
        return cls(splits, videos)


def validate_manifest(manifest: DatasetManifest) -> List[str]:
    """Return every violated manifest rule; an empty list means valid."""
    problems = []
    keys = set(manifest.splits)
    if keys != set(SPLITS):
        problems.append(f"split keys {sorted(keys)} != {list(SPLITS)}")
    counts = []
    for name in SPLITS:
        n = manifest.splits.get(name, 0)
        if isinstance(n, bool) or not isinstance(n, int) or n < 0:
            problems.append(f"split {name!r} count must be a non-negative integer, got {n!r}")
        else:
            counts.append(n)
    if len(counts) == len(SPLITS) and sum(counts) != manifest.total_videos:
        problems.append(
            f"split sum {sum(counts)} != total video count {manifest.total_videos}")
    seen = set()
    for v in manifest.videos:
        if v.video_id in seen:
            problems.append(f"duplicate video id {v.video_id!r}")
        seen.add(v.video_id)
        for attr in ("frames", "width", "height"):
            value = getattr(v, attr)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                problems.append(f"video {v.video_id!r}: {attr} must be a positive integer")
    return problems


def load_manifest(path) -> DatasetManifest:
    return DatasetManifest.from_json(_read_json(Path(path)))


def write_manifest(manifest: DatasetManifest, path) -> None:
    _write_json(Path(path), manifest.to_json())


# --------------------------------------------------------------------------
# Dataset roots

class DatasetRoot:
    """A directory laid out as categories.json + manifest.json + videos/."""

    def __init__(self, root):
        self.root = Path(root)
        if not self.root.is_dir():
            raise FileNotFoundError(f"dataset root does not exist: {self.root}")

    @property
    def categories(self) -> CategoryTable:
        return load_category_table(self.root / "categories.json")

    @property
    def manifest(self) -> DatasetManifest:
        return load_manifest(self.root / "manifest.json")

    def video_dir(self, video_id: str) -> Path:
        return self.root / "videos" / video_id

    def video_ids(self) -> List[str]:
        videos = self.root / "videos"
        if not videos.is_dir():
            raise FileNotFoundError(f"missing videos directory: {videos}")
        return sorted(p.name for p in videos.iterdir() if p.is_dir())


def write_dataset(root, categories: CategoryTable, videos: Sequence,
                  splits: Optional[Dict[str, int]] = None) -> None:
    """Write a dataset root from panoptic or semantic videos."""
    root = Path(root)
    (root / "videos").mkdir(parents=True, exist_ok=True)
    write_category_table(categories, root / "categories.json")
    infos = []
    for v in videos:
        d = root / "videos" / v.video_id
        if isinstance(v, VideoAnnotation):
            write_video(v, d)
        else:
            write_semantic(v, d)
        infos.append(VideoInfo(v.video_id, int(v.frames.shape[0]),
                               int(v.frames.shape[2]), int(v.frames.shape[1])))
    if splits is None:
        splits = {"train": 0, "val": 0, "test": len(infos)}
    write_manifest(DatasetManifest(dict(splits), infos), root / "manifest.json")

