"""Deterministic synthetic scenes and corruption operators.

Scenes are horizontal stuff stripes with rectangles and disks painted on
top in list order. Every (frame, segment) pair gets its own segment id, so
track ids can be rewritten in the registry without touching rasters.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from .data import (MAX_ID, Category, CategoryTable, DataFormatError, Segment,
                   ValidationError, VideoAnnotation, present_ids, write_dataset)
from .pipeline import FrameQueries, write_queries

# Bumped whenever the mapping seed -> scene changes.
GENERATOR_VERSION = 1

DEFAULT_CATEGORIES = CategoryTable([
    Category(1, "person", True),
    Category(2, "car", True),
    Category(3, "bicycle", True),
    Category(4, "dog", True),
    Category(5, "sky", False),
    Category(6, "road", False),
    Category(7, "grass", False),
    Category(8, "building", False),
])


def generator(seed: int, *stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64([GENERATOR_VERSION, int(seed), *stream]))


@dataclass
class ObjectSpec:
    class_id: int
    shape: str = "rectangle"
    size: Tuple[int, ...] = (10, 6)
    position: Optional[Tuple[float, float]] = None
    velocity: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.shape not in ("rectangle", "disk"):
            raise ValidationError(f"unknown shape {self.shape!r}")
        self.size = tuple(int(s) for s in np.atleast_1d(self.size))
        if self.shape == "rectangle" and len(self.size) != 2:
            raise ValidationError("rectangle size must be (width, height)")
        if self.shape == "disk" and len(self.size) != 1:
            raise ValidationError("disk size must be (radius,)")
        if min(self.size) < (1 if self.shape == "rectangle" else 0):
            raise ValidationError(f"invalid object size {self.size}")
        if self.position is not None:
            self.position = tuple(float(p) for p in self.position)
        self.velocity = tuple(float(v) for v in self.velocity)

    @property
    def extent(self) -> Tuple[int, int]:
        """Bounding box (width, height) in pixels."""
        if self.shape == "rectangle":
            return self.size[0], self.size[1]
        d = 2 * self.size[0] + 1
        return d, d


@dataclass
class SceneConfig:
    width: int
    height: int
    frame_count: int
    objects: List[ObjectSpec] = field(default_factory=list)
    background: List[int] = field(default_factory=lambda: [5])
    seed: int = 0

    def __post_init__(self):
        self.objects = [o if isinstance(o, ObjectSpec) else ObjectSpec(**o) for o in self.objects]
        if self.width < 1 or self.height < 1 or self.frame_count < 1:
            raise ValidationError("scene dimensions and frame count must be positive")
        if not self.background:
            raise ValidationError("scene needs at least one background class")
        for o in self.objects:
            w, h = o.extent
            if w > self.width or h > self.height:
                raise ValidationError(
                    f"object of extent {w}x{h} does not fit a {self.width}x{self.height} canvas")

    @property
    def stuff_classes(self) -> List[int]:
        return list(dict.fromkeys(self.background))

    @property
    def segments_per_frame(self) -> int:
        return len(self.stuff_classes) + len(self.objects)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "SceneConfig":
        try:
            return cls(**doc)
        except TypeError as exc:
            raise DataFormatError(f"malformed scene config ({exc})") from exc


def _start_positions(config: SceneConfig) -> List[Tuple[float, float]]:
    rng = generator(config.seed, 0)
    out = []
    for o in config.objects:
        w, h = o.extent
        draw = (rng.uniform(0, config.width - w + 1), rng.uniform(0, config.height - h + 1))
        out.append(o.position if o.position is not None else draw)
    return out


def object_mask(config: SceneConfig, index: int, t: int,
                start: Optional[Tuple[float, float]] = None) -> np.ndarray:
    """Boolean mask of object ``index`` at frame ``t``, clamped into the canvas."""
    o = config.objects[index]
    if start is None:
        start = _start_positions(config)[index]
    W, H = config.width, config.height
    x = int(round(start[0] + o.velocity[0] * t))
    y = int(round(start[1] + o.velocity[1] * t))
    mask = np.zeros((H, W), dtype=bool)
    if o.shape == "rectangle":
        w, h = o.size
        x = min(max(x, 0), W - w)
        y = min(max(y, 0), H - h)
        mask[y:y + h, x:x + w] = True
    else:
        r = o.size[0]
        # position is the bounding-box corner; keep the whole disk inside
        x = min(max(x, 0), W - 2 * r - 1) + r
        y = min(max(y, 0), H - 2 * r - 1) + r
        yy, xx = np.ogrid[:H, :W]
        mask[(yy - y) ** 2 + (xx - x) ** 2 <= r * r] = True
    return mask


def _stripe_labels(config: SceneConfig) -> np.ndarray:
    """Per-row local index of the stuff class covering that row."""
    H = config.height
    n = len(config.background)
    local = {c: i for i, c in enumerate(config.stuff_classes)}
    rows = np.empty(H, dtype=np.int32)
    for i, c in enumerate(config.background):
        lo, hi = round(i * H / n), round((i + 1) * H / n)
        rows[lo:hi] = local[c]
    return rows


def render_local(config: SceneConfig, t: int, exclude: Sequence[int] = ()) -> np.ndarray:
    """Raster of local segment indices (stuff first, then objects) at frame ``t``."""
    starts = _start_positions(config)
    out = np.repeat(_stripe_labels(config)[:, None], config.width, axis=1)
    n_stuff = len(config.stuff_classes)
    for j in range(len(config.objects)):
        if j in exclude:
            continue
        out[object_mask(config, j, t, starts[j])] = n_stuff + j
    return out


def segment_id(config: SceneConfig, t: int, local: int) -> int:
    return t * config.segments_per_frame + local + 1


def local_segment(config: SceneConfig, sid: int) -> Tuple[int, int]:
    """Inverse of :func:`segment_id`: (frame, local index)."""
    return divmod(sid - 1, config.segments_per_frame)


def _local_segment_info(config: SceneConfig) -> List[Segment]:
    n_stuff = len(config.stuff_classes)
    info = [Segment(c, i + 1) for i, c in enumerate(config.stuff_classes)]
    info += [Segment(o.class_id, n_stuff + j + 1) for j, o in enumerate(config.objects)]
    return info


def gen_scene(config: SceneConfig, video_id: str = "video") -> VideoAnnotation:
    if config.frame_count * config.segments_per_frame > MAX_ID:
        raise ValidationError("scene needs more than 65535 segment ids")
    info = _local_segment_info(config)
    frames = np.empty((config.frame_count, config.height, config.width), dtype=np.uint16)
    registry: Dict[int, Segment] = {}
    for t in range(config.frame_count):
        local = render_local(config, t)
        frames[t] = local + (t * config.segments_per_frame + 1)
        for li in np.unique(local).tolist():
            registry[segment_id(config, t, li)] = info[li]
    return VideoAnnotation(video_id, frames, registry)


# --------------------------------------------------------------------------
# Corruptions

@dataclass(frozen=True)
class IdSwap:
    frame: int
    track_a: int
    track_b: int


@dataclass(frozen=True)
class ClassFlip:
    track: int
    new_class: int


@dataclass(frozen=True)
class Erode:
    track: int
    radius: int = 1


@dataclass(frozen=True)
class Drop:
    track: int
    start: int
    stop: int


@dataclass(frozen=True)
class BoundaryJitter:
    amplitude: int = 1
    seed: int = 0


Operator = Union[IdSwap, ClassFlip, Erode, Drop, BoundaryJitter]
_OPS = {"id_swap": IdSwap, "class_flip": ClassFlip, "erode": Erode, "drop": Drop,
        "boundary_jitter": BoundaryJitter}
_NAMES = {v: k for k, v in _OPS.items()}


@dataclass
class CorruptionSpec:
    ops: List[Operator] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"ops": [{"op": _NAMES[type(op)], **asdict(op)} for op in self.ops]}

    @classmethod
    def from_json(cls, doc: dict) -> "CorruptionSpec":
        ops = []
        try:
            for item in doc.get("ops", []):
                item = dict(item)
                ops.append(_OPS[item.pop("op")](**item))
        except (KeyError, TypeError, AttributeError) as exc:
            raise DataFormatError(f"malformed corruption spec ({exc})") from exc
        return cls(ops)


class _Editor:
    """Mutable working copy of a video used while applying operators."""

    def __init__(self, video: VideoAnnotation, scene: Optional[SceneConfig]):
        self.video_id = video.video_id
        self.frames = video.frames.copy()
        self.registry = dict(video.registry)
        self.scene = scene
        self.next_id = max(self.registry, default=0) + 1

    def tracks(self):
        return {s.track_id for s in self.registry.values()}

    def require_track(self, track: int) -> None:
        if track not in self.tracks():
            raise ValidationError(f"unknown track {track}")

    def track_mask(self, t: int, track: int) -> np.ndarray:
        sids = [s for s, seg in self.registry.items() if seg.track_id == track]
        return np.isin(self.frames[t], sids)

    def fresh_id(self) -> int:
        if self.next_id > MAX_ID:
            raise ValidationError("segment id space exhausted")
        self.next_id += 1
        return self.next_id - 1

    def _underlay(self, t: int, freed: np.ndarray) -> Optional[np.ndarray]:
        scene = self.scene
        if scene is None or self.frames.shape[0] != scene.frame_count:
            return None
        n_stuff = len(scene.stuff_classes)
        objects = set()
        for sid in present_ids(self.frames[t][freed]).tolist():
            frame, local = local_segment(scene, sid)
            if frame != t or local < n_stuff:
                return None
            objects.add(local - n_stuff)
        local = render_local(scene, t, sorted(objects))
        under = (local + (t * scene.segments_per_frame + 1)).astype(np.uint16)
        info = _local_segment_info(scene)
        for sid in present_ids(under[freed]).tolist():
            self.registry.setdefault(sid, info[local_segment(scene, sid)[1]])
        return under

    def refill(self, t: int, freed: np.ndarray, owner: Optional[np.ndarray] = None) -> None:
        """Give freed pixels back to whatever lay beneath them.

        ``owner`` is the full mask of the object losing the pixels; it never
        serves as the nearest-neighbour source.
        """
        if not freed.any():
            return
        frame = self.frames[t]
        under = self._underlay(t, freed)
        if under is not None:
            frame[freed] = under[freed]
            return
        blocked = freed if owner is None else (freed | owner)
        if blocked.all():
            frame[freed] = 0
            return
        _, (iy, ix) = ndimage.distance_transform_edt(blocked, return_indices=True)
        frame[freed] = frame[iy[freed], ix[freed]]

    def prune(self) -> None:
        used = set(present_ids(self.frames).tolist())
        self.registry = {s: seg for s, seg in self.registry.items() if s in used}

    def result(self) -> VideoAnnotation:
        return VideoAnnotation(self.video_id, self.frames, self.registry)


def _id_swap(ed: _Editor, op: IdSwap) -> None:
    ed.require_track(op.track_a)
    ed.require_track(op.track_b)
    classes = {s.track_id: s.class_id for s in ed.registry.values()}
    if classes[op.track_a] != classes[op.track_b]:
        raise ValidationError(
            f"id_swap needs tracks of one class; {op.track_a} is class"
            f" {classes[op.track_a]}, {op.track_b} is class {classes[op.track_b]}")
    T = ed.frames.shape[0]
    if not 0 <= op.frame < T:
        raise ValidationError(f"id_swap frame {op.frame} outside [0, {T})")
    before = set(present_ids(ed.frames[:op.frame]).tolist()) if op.frame else set()
    swap = {op.track_a: op.track_b, op.track_b: op.track_a}
    relabel: Dict[int, int] = {}
    for t in range(op.frame, T):
        frame = ed.frames[t]
        for sid in present_ids(frame).tolist():
            seg = ed.registry[sid]
            if seg.track_id not in swap:
                continue
            new = Segment(seg.class_id, swap[seg.track_id])
            if sid in before:
                # id also used before the swap frame: split it off
                if sid not in relabel:
                    relabel[sid] = ed.fresh_id()
                    ed.registry[relabel[sid]] = new
                frame[frame == sid] = relabel[sid]
            else:
                ed.registry[sid] = new


def _class_flip(ed: _Editor, op: ClassFlip) -> None:
    ed.require_track(op.track)
    ed.registry = {s: (Segment(op.new_class, seg.track_id) if seg.track_id == op.track else seg)
                   for s, seg in ed.registry.items()}


def _erode(ed: _Editor, op: Erode) -> None:
    ed.require_track(op.track)
    if op.radius < 0:
        raise ValidationError("erode radius must be non-negative")
    if op.radius == 0:
        return
    structure = np.ones((2 * op.radius + 1, 2 * op.radius + 1), dtype=bool)
    for t in range(ed.frames.shape[0]):
        mask = ed.track_mask(t, op.track)
        if not mask.any():
            continue
        kept = ndimage.binary_erosion(mask, structure=structure)
        ed.refill(t, mask & ~kept, owner=mask)
    ed.prune()


def _drop(ed: _Editor, op: Drop) -> None:
    ed.require_track(op.track)
    T = ed.frames.shape[0]
    if not (0 <= op.start <= op.stop <= T):
        raise ValidationError(f"drop range [{op.start}, {op.stop}) outside [0, {T}]")
    for t in range(op.start, op.stop):
        ed.refill(t, ed.track_mask(t, op.track))
    ed.prune()


def _boundary_jitter(ed: _Editor, op: BoundaryJitter) -> None:
    a = int(op.amplitude)
    if a < 0:
        raise ValidationError("jitter amplitude must be non-negative")
    if a == 0:
        return
    rng = generator(op.seed, 1)
    _, H, W = ed.frames.shape
    yy, xx = np.mgrid[:H, :W]
    for t in range(ed.frames.shape[0]):
        f = ed.frames[t]
        edge = np.zeros((H, W), dtype=bool)
        edge[1:, :] |= f[1:, :] != f[:-1, :]
        edge[:-1, :] |= f[:-1, :] != f[1:, :]
        edge[:, 1:] |= f[:, 1:] != f[:, :-1]
        edge[:, :-1] |= f[:, :-1] != f[:, 1:]
        dy = rng.integers(-a, a + 1, size=(H, W))
        dx = rng.integers(-a, a + 1, size=(H, W))
        sy = np.clip(yy + dy, 0, H - 1)
        sx = np.clip(xx + dx, 0, W - 1)
        src = f[sy, sx]
        ed.frames[t] = np.where(edge, src, f)
    ed.prune()


_APPLY = {IdSwap: _id_swap, ClassFlip: _class_flip, Erode: _erode, Drop: _drop,
          BoundaryJitter: _boundary_jitter}


def corrupt(gt: VideoAnnotation, spec: CorruptionSpec,
            scene: Optional[SceneConfig] = None) -> VideoAnnotation:
    """Apply ``spec.ops`` in order.

    If ``scene`` is the config ``gt`` was generated from, pixels freed by
    ``erode``/``drop`` are repainted with exactly what the removed object
    occluded; otherwise they take the nearest remaining pixel's segment.
    """
    if not spec.ops:
        return gt
    ed = _Editor(gt, scene)
    for op in spec.ops:
        _APPLY[type(op)](ed, op)
    return ed.result()


# --------------------------------------------------------------------------
# Embeddings and dataset writing

def track_embeddings(video: VideoAnnotation, dim: int, seed: int) -> Dict[int, np.ndarray]:
    """One fixed unit vector per track; mutually orthogonal when tracks <= dim."""
    tracks = sorted({s.track_id for s in video.registry.values()})
    rng = generator(seed, 2)
    m = rng.normal(size=(dim, len(tracks)))
    if len(tracks) <= dim:
        q, _ = np.linalg.qr(m)
        vecs = q.T
    else:
        vecs = (m / np.linalg.norm(m, axis=0)).T
    return {t: v / np.linalg.norm(v) for t, v in zip(tracks, vecs)}


def make_queries(video: VideoAnnotation, embeddings: Dict[int, np.ndarray]) -> List[FrameQueries]:
    out = []
    for t, frame in enumerate(video.frames):
        ids = present_ids(frame).tolist()
        segs = [video.registry[s] for s in ids]
        dim = len(next(iter(embeddings.values())))
        emb = np.array([embeddings[s.track_id] for s in segs]).reshape(len(ids), dim)
        out.append(FrameQueries(t, ids, emb, [s.class_id for s in segs]))
    return out


def random_scene(rng: np.random.Generator, categories: CategoryTable, width: int,
                 height: int, frame_count: int, objects: Tuple[int, int] = (2, 4),
                 stripes: int = 2, seed: int = 0) -> SceneConfig:
    things, stuff = categories.thing_ids, categories.stuff_ids
    if not stuff:
        raise ValidationError("random scenes need at least one stuff class")
    n_bg = min(stripes, len(stuff))
    background = [int(c) for c in rng.choice(stuff, size=n_bg, replace=False)]
    specs = []
    n_obj = int(rng.integers(objects[0], objects[1] + 1)) if things else 0
    short = min(width, height)
    for _ in range(n_obj):
        cls = int(rng.choice(things))
        if rng.random() < 0.5:
            w = int(rng.integers(max(1, width // 10), max(2, width // 4) + 1))
            h = int(rng.integers(max(1, height // 10), max(2, height // 4) + 1))
            size = (min(w, width), min(h, height))
            shape = "rectangle"
        else:
            r = int(rng.integers(max(1, short // 12), max(2, short // 6) + 1))
            size = (min(r, (short - 1) // 2),)
            shape = "disk"
        specs.append(ObjectSpec(cls, shape, size, None,
                                (float(rng.uniform(-2, 2)), float(rng.uniform(-2, 2)))))
    return SceneConfig(width, height, frame_count, specs, background, seed)


@dataclass
class DatasetConfig:
    """What ``synth`` writes: ``videos`` random scenes, or explicit ``scenes``."""

    videos: int = 10
    width: int = 160
    height: int = 90
    frames: int = 20
    objects: Tuple[int, int] = (2, 4)
    stripes: int = 2
    embedding_dim: int = 32
    categories: Optional[list] = None
    scenes: Optional[list] = None

    @classmethod
    def from_json(cls, doc: dict) -> "DatasetConfig":
        try:
            cfg = cls(**doc)
        except TypeError as exc:
            raise DataFormatError(f"malformed synth config ({exc})") from exc
        cfg.objects = tuple(cfg.objects)
        return cfg

    def category_table(self) -> CategoryTable:
        if self.categories is None:
            return DEFAULT_CATEGORIES
        return CategoryTable.from_json(self.categories)

    def scene_configs(self, seed: int) -> List[SceneConfig]:
        categories = self.category_table()
        if self.scenes is not None:
            return [SceneConfig.from_json({**s, "seed": s.get("seed", seed)}) for s in self.scenes]
        out = []
        for i in range(self.videos):
            rng = generator(seed, 3, i)
            out.append(random_scene(rng, categories, self.width, self.height, self.frames,
                                    self.objects, self.stripes, seed=int(rng.integers(2 ** 63))))
        return out


def synth_videos(config: DatasetConfig, seed: int,
                 corruption: Optional[Dict[str, CorruptionSpec]] = None):
    """Generate (scene, video) pairs; ``corruption`` maps video id -> spec."""
    categories = config.category_table()
    out = []
    for i, scene in enumerate(config.scene_configs(seed)):
        vid = f"video_{i:04d}"
        video = gen_scene(scene, vid)
        video.validate(categories)
        if corruption and vid in corruption:
            video = corrupt(video, corruption[vid], scene)
            video.validate(categories)
        out.append((scene, video))
    return categories, out


def write_synth_dataset(root, config: DatasetConfig, seed: int,
                        corruption: Optional[Dict[str, CorruptionSpec]] = None) -> List[str]:
    categories, pairs = synth_videos(config, seed, corruption)
    root = Path(root)
    videos = [v for _, v in pairs]
    write_dataset(root, categories, videos)
    for scene, video in pairs:
        d = root / "videos" / video.video_id
        with open(d / "scene.json", "w", encoding="utf-8") as f:
            json.dump(scene.to_json(), f, indent=1, sort_keys=True)
            f.write("\n")
        emb = track_embeddings(video, config.embedding_dim, scene.seed)
        write_queries(d / "queries.json", make_queries(video, emb), config.embedding_dim)
    return [v.video_id for v in videos]


def load_corruption(path, video_ids: Sequence[str]) -> Dict[str, CorruptionSpec]:
    """Read a corruption file: one spec for all videos, or ``{"videos": {id: spec}}``."""
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if "videos" in doc:
        return {vid: CorruptionSpec.from_json(s) for vid, s in doc["videos"].items()}
    spec = CorruptionSpec.from_json(doc)
    return {vid: spec for vid in video_ids}
