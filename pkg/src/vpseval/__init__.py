"""Evaluation toolkit for video panoptic and video semantic segmentation."""

__version__ = "0.1.0"

from .data import (Category, CategoryTable, DatasetManifest, SemanticVideo, Segment,
                   ValidationError, DataFormatError, VideoAnnotation, load_category_table,
                   load_semantic, load_video, pan_to_sem, validate_manifest, write_semantic,
                   write_video)
from .matching import Assignment, CooccurrenceTable, accumulate_tube, cooccurrence, iou, solve_assignment
from .panoptic import (PanopticStats, StqReport, VpqReport, frame_pq_stats, score, stq,
                       vpq_aggregate, vpq_k)
from .semantic import ConfusionAccumulator, confusion, miou, vc_n, weighted_iou
from .pipeline import FrameQueries, TrackState, associate_clip, run_tracking, stitch_windows
from .synth import CorruptionSpec, SceneConfig, corrupt, gen_scene
