"""Slow reference implementations built from explicit pixel sets.

Nothing here imports the metric code under test; only the plain data
containers are shared.
"""

from collections import defaultdict
from itertools import permutations


def pixel_table(a, b):
    table = defaultdict(int)
    H, W = a.shape
    for y in range(H):
        for x in range(W):
            table[(int(a[y, x]), int(b[y, x]))] += 1
    return dict(table)


def tube_sets(video, frames):
    """track -> set of (t, y, x), plus the set of void pixels."""
    tubes = defaultdict(set)
    void = set()
    for t in frames:
        raster = video.frames[t]
        H, W = raster.shape
        for y in range(H):
            for x in range(W):
                sid = int(raster[y, x])
                if sid == 0:
                    void.add((t, y, x))
                else:
                    tubes[video.registry[sid].track_id].add((t, y, x))
    return dict(tubes), void


def window_stats(pred, gt, k):
    """class -> [iou_sum, tp, fp, fn] summed over all stride-1 windows."""
    T = gt.num_frames
    kk = min(k, T)
    gt_cls = {s.track_id: s.class_id for s in gt.registry.values()}
    pred_cls = {s.track_id: s.class_id for s in pred.registry.values()}
    stats = defaultdict(lambda: [0.0, 0, 0, 0])
    for s in range(T - kk + 1):
        frames = range(s, s + kk)
        g_tubes, g_void = tube_sets(gt, frames)
        p_tubes, _ = tube_sets(pred, frames)
        matched_g, matched_p = set(), set()
        for g, gs in g_tubes.items():
            for p, ps in p_tubes.items():
                if gt_cls[g] != pred_cls[p]:
                    continue
                inter = len(gs & ps)
                union = len(gs | (ps - g_void))
                if inter and inter / union > 0.5:
                    stats[gt_cls[g]][0] += inter / union
                    stats[gt_cls[g]][1] += 1
                    matched_g.add(g)
                    matched_p.add(p)
        for g in g_tubes:
            if g not in matched_g:
                stats[gt_cls[g]][3] += 1
        for p, ps in p_tubes.items():
            if p in matched_p:
                continue
            if len(ps & g_void) / len(ps) > 0.5:
                continue
            stats[pred_cls[p]][2] += 1
    return dict(stats)


def pq_mean(stats):
    scores = []
    for c in sorted(stats):
        iou_sum, tp, fp, fn = stats[c]
        if tp + fp + fn:
            scores.append(100.0 * iou_sum / (tp + 0.5 * fp + 0.5 * fn))
    return sum(scores) / len(scores) if scores else float("nan")


def stq(pred, gt):
    T = gt.num_frames
    g_tubes, g_void = tube_sets(gt, range(T))
    p_tubes, _ = tube_sets(pred, range(T))
    # association
    per_track = []
    for g, gs in g_tubes.items():
        acc = 0.0
        for p, ps in p_tubes.items():
            inter = len(gs & ps)
            if inter:
                union = len(gs | (ps - g_void))
                acc += inter * inter / union
        per_track.append(acc / len(gs))
    if per_track:
        aq = sum(per_track) / len(per_track)
    else:
        aq = 0.0 if any(ps - g_void for ps in p_tubes.values()) else 1.0
    # segmentation: class sets on non-void gt pixels
    g_cls, p_cls = defaultdict(set), defaultdict(set)
    for t in range(T):
        H, W = gt.frames[t].shape
        for y in range(H):
            for x in range(W):
                gs = int(gt.frames[t][y, x])
                if gs == 0:
                    continue
                g_cls[gt.registry[gs].class_id].add((t, y, x))
                ps = int(pred.frames[t][y, x])
                if ps:
                    p_cls[pred.registry[ps].class_id].add((t, y, x))
    ious = []
    for c in sorted(set(g_cls) | set(p_cls)):
        ious.append(len(g_cls[c] & p_cls[c]) / len(g_cls[c] | p_cls[c]))
    sq = sum(ious) / len(ious) if ious else float("nan")
    return aq, sq, (aq * sq) ** 0.5


def vc(pred_frames, gt_frames, n, mode="strict"):
    """Mean over windows of consistent/stable pixel ratios (per-pixel loops)."""
    T = len(gt_frames)
    kk = min(n, T)
    H, W = gt_frames[0].shape
    ratios = []
    for s in range(T - kk + 1):
        stable = good = 0
        for y in range(H):
            for x in range(W):
                labels = [int(gt_frames[t][y, x]) for t in range(s, s + kk)]
                if labels[0] == 0 or len(set(labels)) != 1:
                    continue
                stable += 1
                preds = [int(pred_frames[t][y, x]) for t in range(s, s + kk)]
                if mode == "strict":
                    good += all(p == labels[0] for p in preds)
                else:
                    good += len(set(preds)) == 1
        if stable:
            ratios.append(good / stable)
    return sum(ratios) / len(ratios) if ratios else float("nan")


def best_assignment(w, maximize):
    """Optimal objective over every one-to-one selection of size min(n, m)."""
    n, m = len(w), len(w[0])
    best = None
    if n <= m:
        for cols in permutations(range(m), n):
            v = sum(w[i][c] for i, c in enumerate(cols))
            if best is None or (v > best if maximize else v < best):
                best = v
    else:
        for rows in permutations(range(n), m):
            v = sum(w[r][j] for j, r in enumerate(rows))
            if best is None or (v > best if maximize else v < best):
                best = v
    return best


def stq_pooled(pairs):
    """Dataset STQ: AQ over every gt track of every video, SQ from pooled class sets."""
    per_track, any_pred = [], False
    g_cls, p_cls = defaultdict(set), defaultdict(set)
    for v, (pred, gt) in enumerate(pairs):
        T = gt.num_frames
        g_tubes, g_void = tube_sets(gt, range(T))
        p_tubes, _ = tube_sets(pred, range(T))
        any_pred |= any(ps - g_void for ps in p_tubes.values())
        for gs in g_tubes.values():
            acc = 0.0
            for ps in p_tubes.values():
                inter = len(gs & ps)
                if inter:
                    acc += inter * inter / len(gs | (ps - g_void))
            per_track.append(acc / len(gs))
        for t in range(T):
            H, W = gt.frames[t].shape
            for y in range(H):
                for x in range(W):
                    sid = int(gt.frames[t][y, x])
                    if sid == 0:
                        continue
                    g_cls[gt.registry[sid].class_id].add((v, t, y, x))
                    psid = int(pred.frames[t][y, x])
                    if psid:
                        p_cls[pred.registry[psid].class_id].add((v, t, y, x))
    if per_track:
        aq = sum(per_track) / len(per_track)
    else:
        aq = 0.0 if any_pred else 1.0
    ious = [len(g_cls[c] & p_cls[c]) / len(g_cls[c] | p_cls[c])
            for c in sorted(set(g_cls) | set(p_cls))]
    sq = sum(ious) / len(ious) if ious else float("nan")
    return aq, sq, (aq * sq) ** 0.5


def semantic_pooled(pairs):
    """mIoU and weighted IoU over (pred, gt) class-raster stacks, void gt skipped."""
    g_cls, p_cls = defaultdict(set), defaultdict(set)
    for v, (pred, gt) in enumerate(pairs):
        for idx in zip(*[a.tolist() for a in gt.nonzero()]):
            g_cls[int(gt[idx])].add((v,) + idx)
            if pred[idx]:
                p_cls[int(pred[idx])].add((v,) + idx)
    classes = sorted(set(g_cls) | set(p_cls))
    ious = {c: len(g_cls[c] & p_cls[c]) / len(g_cls[c] | p_cls[c]) for c in classes}
    total = sum(len(s) for s in g_cls.values())
    return (sum(ious.values()) / len(ious),
            sum(len(g_cls[c]) / total * ious[c] for c in g_cls))
