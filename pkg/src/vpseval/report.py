"""Canonical report serialization and leaderboard fixture rendering."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from importlib import resources
from typing import Dict, List, Optional

from .data import DataFormatError

FLOAT_FORMAT = "{:.6f}"
VPQ_WINDOWS = ("VPQ1", "VPQ2", "VPQ4", "VPQ6")
AGREEMENT = Decimal("0.005")


def _encode(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        if math.isnan(obj) or math.isinf(obj):
            return "null"
        text = FLOAT_FORMAT.format(obj)
        return "0.000000" if text == "-0.000000" else text
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = sorted((str(k), v) for k, v in obj.items())
        body = ",\n".join(f"{pad}{_encode(k, indent, level + 1)}: {_encode(v, indent, level + 1)}"
                          for k, v in items)
        return "{\n" + body + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_canonical(report: dict) -> str:
    """Sorted keys, floats with six decimals, NaN as null, trailing newline."""
    return _encode(report, 2, 0) + "\n"


def write_report(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps_canonical(report))


def vpq_consistent(report: dict, tol: float = 1e-6) -> bool:
    """True when every VPQ block equals the mean of its per-window entries."""
    blocks = [report["aggregate"]["vpq"]] + [v["vpq"] for v in report.get("videos", {}).values()]
    for b in blocks:
        vals = list(b["per_k"].values())
        if b["vpq"] is None:
            if all(v is not None for v in vals):
                return False
            continue
        if any(v is None for v in vals) or abs(math.fsum(vals) / len(vals) - b["vpq"]) > tol:
            return False
    return True


# --------------------------------------------------------------------------
# Leaderboards

@dataclass
class LeaderboardRow:
    method: str
    values: Dict[str, Decimal]
    raw: Dict[str, str]


@dataclass
class LeaderboardFixture:
    columns: List[str]
    rows: List[LeaderboardRow]
    key: str = "method"


def parse_fixture(text: str) -> LeaderboardFixture:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DataFormatError("empty leaderboard fixture") from None
    header = [h.strip() for h in header]
    if len(header) < 2 or len(set(header)) != len(header):
        raise DataFormatError(f"bad fixture header {header}")
    columns = header[1:]
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        if not rec or all(not c.strip() for c in rec):
            continue
        if len(rec) != len(header):
            raise DataFormatError(f"line {lineno}: expected {len(header)} fields, got {len(rec)}")
        values, raw = {}, {}
        for name, cell in zip(columns, rec[1:]):
            cell = cell.strip()
            try:
                v = Decimal(cell)
            except InvalidOperation:
                raise DataFormatError(f"line {lineno}: {name}={cell!r} is not a number") from None
            if not v.is_finite():
                raise DataFormatError(f"line {lineno}: {name} is not finite")
            values[name] = v
            raw[name] = cell
        rows.append(LeaderboardRow(rec[0].strip(), values, raw))
    return LeaderboardFixture(columns, rows, header[0])


def load_fixture(path) -> LeaderboardFixture:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return parse_fixture(f.read())


def bundled_fixtures() -> List[str]:
    """Names of the CSV fixtures shipped with the package."""
    root = resources.files("vpseval").joinpath("fixtures")
    return sorted(f.name for f in root.iterdir() if f.name.endswith(".csv"))


def builtin_fixture(name: str) -> LeaderboardFixture:
    """Parse one of the CSV fixtures shipped under ``vpseval/fixtures``."""
    text = resources.files("vpseval").joinpath("fixtures", name).read_text(encoding="utf-8")
    return parse_fixture(text)


def recompute_vpq(row: LeaderboardRow) -> Optional[Decimal]:
    if not all(k in row.values for k in VPQ_WINDOWS):
        return None
    return sum(row.values[k] for k in VPQ_WINDOWS) / len(VPQ_WINDOWS)


def check_rows(fixture: LeaderboardFixture) -> List[dict]:
    """Per row: recomputed VPQ and whether it disagrees with the stored one.

    A stored 2-decimal VPQ agrees when it lies within 0.005 of the exact
    mean of the four window scores, i.e. when it is a valid rounding of it.
    """
    out = []
    for row in fixture.rows:
        mean = recompute_vpq(row)
        stored = row.values.get("VPQ")
        flagged = (mean is not None and stored is not None
                   and abs(mean - stored) > AGREEMENT)
        out.append({"method": row.method, "recomputed": mean, "flagged": flagged})
    return out


def render_report(fixture: LeaderboardFixture, fmt: str = "markdown") -> str:
    checks = check_rows(fixture)
    recompute = any(c["recomputed"] is not None for c in checks)
    header = [fixture.key] + fixture.columns + (["VPQ (mean)", "flag"] if recompute else [])
    body = []
    for row, chk in zip(fixture.rows, checks):
        cells = [row.method] + [row.raw[c] for c in fixture.columns]
        if recompute:
            mean = chk["recomputed"]
            cells.append("" if mean is None else f"{mean:.4f}")
            cells.append("MISMATCH" if chk["flagged"] else "")
        body.append(cells)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(body)
        return buf.getvalue()
    if fmt != "markdown":
        raise ValueError(f"unknown format {fmt!r}")
    lines = ["| " + " | ".join(header) + " |",
             "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(cells) + " |" for cells in body]
    return "\n".join(lines) + "\n"
