"""Sparse co-occurrence counting between id rasters and exact assignment."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
from scipy.optimize import linear_sum_assignment

VOID = 0
DENSE_LIMIT = 1 << 20

KeyMap = Union[Mapping[int, int], np.ndarray, Callable[[int], int]]


@dataclass
class CooccurrenceTable:
    """Pixel counts for every (id_a, id_b) pair, void (0) included.

    ``areas_a[x]`` is the number of pixels with id ``x`` in the first map,
    ``areas_b`` likewise for the second. Tables add pointwise.
    """

    pairs: Dict[Tuple[int, int], int] = field(default_factory=dict)
    areas_a: Dict[int, int] = field(default_factory=dict)
    areas_b: Dict[int, int] = field(default_factory=dict)
    total_pixels: int = 0

    def __add__(self, other: "CooccurrenceTable") -> "CooccurrenceTable":
        out = self.copy()
        out.update(other)
        return out

    def copy(self) -> "CooccurrenceTable":
        return CooccurrenceTable(dict(self.pairs), dict(self.areas_a),
                                 dict(self.areas_b), self.total_pixels)

    def update(self, other: "CooccurrenceTable") -> None:
        """In-place pointwise sum."""
        for src, dst in ((other.pairs, self.pairs), (other.areas_a, self.areas_a),
                         (other.areas_b, self.areas_b)):
            for k, v in src.items():
                dst[k] = dst.get(k, 0) + v
        self.total_pixels += other.total_pixels

    def transpose(self) -> "CooccurrenceTable":
        return CooccurrenceTable({(y, x): n for (x, y), n in self.pairs.items()},
                                 dict(self.areas_b), dict(self.areas_a), self.total_pixels)

    def remap(self, key_a: Optional[KeyMap] = None,
              key_b: Optional[KeyMap] = None) -> "CooccurrenceTable":
        """Re-key both sides, summing counts of ids that share a key."""
        fa, fb = _key_fn(key_a), _key_fn(key_b)
        out = CooccurrenceTable(total_pixels=self.total_pixels)
        for (x, y), n in self.pairs.items():
            k = (fa(x), fb(y))
            out.pairs[k] = out.pairs.get(k, 0) + n
        for x, n in self.areas_a.items():
            k = fa(x)
            out.areas_a[k] = out.areas_a.get(k, 0) + n
        for y, n in self.areas_b.items():
            k = fb(y)
            out.areas_b[k] = out.areas_b.get(k, 0) + n
        return out

    def __eq__(self, other) -> bool:
        return (isinstance(other, CooccurrenceTable)
                and self.total_pixels == other.total_pixels
                and self.pairs == other.pairs
                and self.areas_a == other.areas_a
                and self.areas_b == other.areas_b)


def _key_fn(key: Optional[KeyMap]) -> Callable[[int], int]:
    if key is None:
        return lambda i: i
    if isinstance(key, np.ndarray):
        return lambda i: 0 if i == VOID else int(key[i])
    if callable(key) and not isinstance(key, Mapping):
        return lambda i: 0 if i == VOID else int(key(i))
    return lambda i: 0 if i == VOID else int(key[i])


def _compact(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Distinct values of ``x`` and the index of each element among them."""
    if x.dtype in (np.uint8, np.uint16) and x.size > 4096:
        present = np.bincount(x, minlength=1) > 0
        ids = np.flatnonzero(present)
        lut = np.zeros(present.size, dtype=np.int64)
        lut[ids] = np.arange(ids.size)
        return ids, lut[x]
    ids, inverse = np.unique(x, return_inverse=True)
    return ids, inverse.ravel()


def cooccurrence(a: np.ndarray, b: np.ndarray) -> CooccurrenceTable:
    """Count pixels of every (a-id, b-id) pair in one pass over the rasters."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"resolution mismatch: {a.shape} vs {b.shape}")
    a = a.ravel()
    b = b.ravel()
    if not a.size:
        return CooccurrenceTable()
    if a.dtype.kind != "u" or b.dtype.kind != "u":
        if a.min() < 0 or b.min() < 0:
            raise ValueError("segment ids must be non-negative")
    na, nb = int(a.max()) + 1, int(b.max()) + 1
    if na * nb <= min(DENSE_LIMIT, max(4096, 4 * a.size)):
        # small id ranges: count joint keys directly, no compaction needed
        flat = np.bincount(a.astype(np.intp) * nb + b, minlength=na * nb)
        return _from_dense(flat, np.arange(na), np.arange(nb), int(a.size))
    ids_a, ia = _compact(a)
    ids_b, ib = _compact(b)
    nb = ids_b.size
    flat = np.bincount(ia * nb + ib, minlength=ids_a.size * nb)
    return _from_dense(flat, ids_a, ids_b, int(a.size))


def _from_dense(flat: np.ndarray, ids_a: np.ndarray, ids_b: np.ndarray,
                total: int) -> CooccurrenceTable:
    nb = ids_b.size
    nz = np.flatnonzero(flat)
    xs = ids_a[nz // nb].tolist()
    ys = ids_b[nz % nb].tolist()
    pairs = {(x, y): n for x, y, n in zip(xs, ys, flat[nz].tolist())}
    areas_a: Dict[int, int] = {}
    areas_b: Dict[int, int] = {}
    for (x, y), n in pairs.items():
        areas_a[x] = areas_a.get(x, 0) + n
        areas_b[y] = areas_b.get(y, 0) + n
    return CooccurrenceTable(pairs, areas_a, areas_b, total)


def accumulate_tube(table: CooccurrenceTable, a: np.ndarray, b: np.ndarray,
                    key_a: Optional[KeyMap] = None,
                    key_b: Optional[KeyMap] = None) -> CooccurrenceTable:
    """Add one frame pair to ``table`` with ids re-keyed to tube keys."""
    return table + cooccurrence(a, b).remap(key_a, key_b)


def iou(table: CooccurrenceTable, x: int, y: int,
        gt_side: Optional[str] = None) -> float:
    """IoU between id ``x`` of the first map and id ``y`` of the second.

    With ``gt_side="a"`` (or ``"b"``) pixels that are void in that ground
    truth map are removed from the other side's area before forming the
    union, as in COCO-style panoptic matching.
    """
    if x == VOID or y == VOID:
        raise ValueError("iou is undefined for the void id")
    if x not in table.areas_a:
        raise KeyError(f"id {x} not present in first map")
    if y not in table.areas_b:
        raise KeyError(f"id {y} not present in second map")
    inter = table.pairs.get((x, y), 0)
    if inter == 0:
        return 0.0
    area_x = table.areas_a[x]
    area_y = table.areas_b[y]
    if gt_side == "a":
        area_y -= table.pairs.get((VOID, y), 0)
    elif gt_side == "b":
        area_x -= table.pairs.get((x, VOID), 0)
    elif gt_side is not None:
        raise ValueError(f"gt_side must be 'a', 'b' or None, got {gt_side!r}")
    return inter / (area_x + area_y - inter)


# --------------------------------------------------------------------------
# Assignment

@dataclass(frozen=True)
class Assignment:
    matches: List[Tuple[int, int]]
    objective: float


def _optimum(cost: np.ndarray) -> float:
    if cost.shape[0] == 0 or cost.shape[1] == 0:
        return 0.0
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].sum())


def solve_assignment(weights, maximize: bool = False) -> Assignment:
    """Exact one-to-one assignment of size ``min(rows, cols)``.

    Among optimal assignments the one returned is lexicographically
    smallest when read row by row (each row takes the lowest feasible
    column; leaving a row unmatched ranks after every column).
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
        raise ValueError(f"weights must be a non-empty 2-D matrix, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    cost = -w if maximize else w
    n, m = cost.shape
    best = _optimum(cost)
    tol = 1e-9 * max(1.0, float(np.abs(cost).max())) * max(n, m)

    free_rows = list(range(n))
    free_cols = list(range(m))
    fixed = 0.0
    matches: List[Tuple[int, int]] = []
    for i in range(n):
        rest_rows = free_rows[1:]
        chosen = None
        for j in free_cols:
            cols = [c for c in free_cols if c != j]
            sub = cost[np.ix_(rest_rows, cols)] if rest_rows and cols else np.zeros((0, 0))
            if len(rest_rows) < len(cols) and n > m:
                continue
            total = fixed + cost[i, j] + _optimum(sub)
            if total <= best + tol:
                chosen = j
                fixed += cost[i, j]
                break
        free_rows = rest_rows
        if chosen is not None:
            matches.append((i, chosen))
            free_cols.remove(chosen)
        if not free_cols:
            break
    objective = float(sum(w[i, j] for i, j in matches))
    return Assignment(matches, objective)
