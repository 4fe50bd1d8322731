"""Command-line entry point.

Exit codes: 0 success, 2 usage error or gt/pred video mismatch,
3 validation failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import time
from pathlib import Path
from typing import List, Optional, Sequence

from .data import (DataFormatError, DatasetRoot, ValidationError, load_video, pan_to_sem,
                   write_semantic, write_video)
from .evaluate import DEFAULT_VC, VideoSetMismatch, evaluate_vps, evaluate_vss
from .panoptic import DEFAULT_WINDOWS
from .pipeline import CLIP_LEN, PATIENCE, SIM_THRESHOLD, WINDOW_LEN, load_queries, run_tracking
from .report import builtin_fixture, bundled_fixtures, load_fixture, render_report, write_report
from .synth import DatasetConfig, load_corruption, write_synth_dataset

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("vpseval")


def _int_list(text: str) -> List[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("window lengths must be positive integers")
    return values


def _copy_root_files(src: Path, dst: Path) -> None:
    dst.mkdir(parents=True, exist_ok=True)
    for name in ("categories.json", "manifest.json"):
        if (src / name).is_file():
            shutil.copyfile(src / name, dst / name)


def _write_out(report: dict, out: str, elapsed: float, timing: bool) -> None:
    if timing:
        report = {**report, "wall_time_s": elapsed}
    write_report(report, out)
    log.info("wrote %s (%.2fs)", out, elapsed)


def cmd_evaluate_vps(args) -> int:
    t0 = time.perf_counter()
    report = evaluate_vps(args.gt, args.pred, args.windows, args.workers,
                          per_video=args.per_video, include_stuff=not args.stq_things_only)
    _write_out(report, args.out, time.perf_counter() - t0, args.timing)
    return EXIT_OK


def cmd_evaluate_vss(args) -> int:
    t0 = time.perf_counter()
    report = evaluate_vss(args.gt, args.pred, args.vc, args.workers,
                          vc_mode=args.vc_mode, vc_pooling=args.vc_pooling)
    _write_out(report, args.out, time.perf_counter() - t0, args.timing)
    return EXIT_OK


def cmd_convert(args) -> int:
    src = DatasetRoot(args.input)
    dst = Path(args.out)
    categories = src.categories
    _copy_root_files(src.root, dst)
    for vid in src.video_ids():
        video = load_video(src.video_dir(vid), categories, vid)
        write_semantic(pan_to_sem(video, categories), dst / "videos" / vid)
    return EXIT_OK


def cmd_synth(args) -> int:
    with open(args.config, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{args.config}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    config = DatasetConfig.from_json(doc)
    corruption = None
    if args.corrupt:
        n = len(config.scenes) if config.scenes is not None else config.videos
        corruption = load_corruption(args.corrupt, [f"video_{i:04d}" for i in range(n)])
    write_synth_dataset(args.out, config, args.seed, corruption)
    return EXIT_OK


def cmd_track(args) -> int:
    src = DatasetRoot(args.data)
    dst = Path(args.out)
    categories = src.categories
    _copy_root_files(src.root, dst)
    ids = src.video_ids()
    for vid in ids:
        vdir = src.video_dir(vid)
        qpath = Path(args.queries)
        if not (qpath.is_absolute() and qpath.is_file() and len(ids) == 1):
            qpath = vdir / qpath.name
        video = load_video(vdir, categories, vid)
        queries = load_queries(qpath, video)
        tracked = run_tracking(video, queries, categories, clip_len=args.clip_len,
                               window_len=args.window, threshold=args.threshold,
                               patience=args.patience)
        write_video(tracked, dst / "videos" / vid)
    return EXIT_OK


def cmd_report(args) -> int:
    path = Path(args.fixture)
    if not path.exists() and path.name == args.fixture and path.name in bundled_fixtures():
        fixture = builtin_fixture(path.name)
    else:
        fixture = load_fixture(path)
    sys.stdout.write(render_report(fixture, args.format))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vpseval", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evaluate-vps", help="VPQ and STQ of a prediction root")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--windows", type=_int_list, default=list(DEFAULT_WINDOWS))
    p.add_argument("--per-video", action="store_true",
                   help="average per-video scores instead of pooling class statistics")
    p.add_argument("--stq-things-only", action="store_true",
                   help="exclude stuff tracks from association quality")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--timing", action="store_true", help="record wall time in the report")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate_vps)

    p = sub.add_parser("evaluate-vss", help="mIoU, weighted IoU and VC_n")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--vc", type=_int_list, default=list(DEFAULT_VC))
    p.add_argument("--vc-mode", choices=("strict", "self"), default="strict")
    p.add_argument("--vc-pooling", action="store_true",
                   help="pool all windows of all videos instead of averaging per video")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--timing", action="store_true", help="record wall time in the report")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate_vss)

    p = sub.add_parser("convert", help="convert between annotation kinds")
    conv = p.add_subparsers(dest="conversion", required=True)
    c = conv.add_parser("pan2sem", help="merge instances of one class into class rasters")
    c.add_argument("--in", dest="input", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_convert)

    p = sub.add_parser("synth", help="write a synthetic dataset root")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--corrupt", help="corruption spec JSON applied to the generated videos")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("track", help="associate per-frame segments into tracks")
    p.add_argument("--data", required=True)
    p.add_argument("--queries", default="queries.json",
                   help="queries file, relative to each video directory")
    p.add_argument("--clip-len", type=int, default=CLIP_LEN)
    p.add_argument("--window", type=int, default=WINDOW_LEN)
    p.add_argument("--threshold", type=float, default=SIM_THRESHOLD)
    p.add_argument("--patience", type=int, default=PATIENCE)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("report", help="render a leaderboard fixture")
    p.add_argument("--fixture", required=True,
                   help="CSV path, or the name of a bundled fixture")
    p.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except VideoSetMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, DataFormatError, ValueError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
