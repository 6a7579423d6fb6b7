"""Cross-model recombination, depth-error fits and report formatting."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import replace

import numpy as np

from ..errors import InsufficientData
from .ap import evaluate
from .iou import iou_2d_matrix

ITEMS = ("loc", "dim", "ori", "con")
REPORT_ORDER = ("moderate", "easy", "hard")
REPORT_HEADINGS = {"moderate": "Mod.", "easy": "Easy", "hard": "Hard"}


def pair_detections(dets_a, dets_b, min_iou=0.5):
    """Greedy one-to-one same-class pairing by descending 2-D IoU; returns {i: j}."""
    if not dets_a or not dets_b:
        return {}
    ious = iou_2d_matrix([d.box2d for d in dets_a], [d.box2d for d in dets_b])
    cand = []
    for i, da in enumerate(dets_a):
        for j, db in enumerate(dets_b):
            if da.class_id == db.class_id and ious[i, j] >= min_iou:
                cand.append((-ious[i, j], abs(i - j), i, j))
    cand.sort()
    pairs, used_b = {}, set()
    for _, _, i, j in cand:
        if i not in pairs and j not in used_b:
            pairs[i] = j
            used_b.add(j)
    return pairs


def combine(base, other, take_other):
    """Copy the items named in ``take_other`` from ``other`` into ``base``."""
    kw = {}
    if "loc" in take_other:
        kw["center3d"] = other.center3d.copy()
        kw["box2d"] = other.box2d
        kw["depth_sigma"] = other.depth_sigma
    if "dim" in take_other:
        kw["dims"] = other.dims
    if "ori" in take_other:
        kw["rotation_y"] = other.rotation_y
    if "con" in take_other:
        kw["score"] = other.score
        kw["heat"] = other.heat
    return replace(base, **kw) if kw else base


def cross_model_detections(dets_a, dets_b, take, min_iou=0.5):
    """Composite detections per scene.

    ``take`` maps each of loc/dim/ori/con to "A" or "B".  The location model
    supplies the base set, so its unmatched detections pass through unchanged.
    """
    for item in ITEMS:
        if take.get(item, "A") not in ("A", "B"):
            raise ValueError(f"selector for {item} must be 'A' or 'B'")
    loc_src = take.get("loc", "A")
    out = []
    for sa, sb in zip(dets_a, dets_b):
        base, partner = (sa, sb) if loc_src == "A" else (sb, sa)
        other_tag = "B" if loc_src == "A" else "A"
        take_other = {i for i in ITEMS if take.get(i, "A") == other_tag}
        pairs = pair_detections(base, partner, min_iou) if take_other else {}
        scene = [combine(d, partner[pairs[i]], take_other) if i in pairs else d
                 for i, d in enumerate(base)]
        scene.sort(key=lambda d: -d.score)
        out.append(scene)
    return out


def cross_model_eval(dets_a, dets_b, take, labels, class_names, cfg=None, thresholds=None,
                     min_iou=0.5):
    return evaluate(cross_model_detections(dets_a, dets_b, take, min_iou), labels, class_names,
                    cfg, thresholds=thresholds)


def fit_line(x, y):
    """Least-squares slope and intercept."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 2 or np.ptp(x) == 0:
        raise InsufficientData("need at least two distinct x values")
    a = np.stack([x, np.ones_like(x)], axis=1)
    (slope, intercept), *_ = np.linalg.lstsq(a, y, rcond=None)
    return float(slope), float(intercept)


def depth_error_pairs(detections, labels, class_names, min_iou=0.5):
    """(gt depth, |pred - gt| depth) for detections matched to labels by 2-D IoU."""
    pairs = []
    for dets, labs in zip(detections, labels):
        labs = [lab for lab in labs if lab.class_name in class_names]
        if not dets or not labs:
            continue
        ious = iou_2d_matrix([d.box2d for d in dets], [lab.box2d for lab in labs])
        used = set()
        for i, d in enumerate(dets):
            best, best_iou = -1, min_iou
            for j, lab in enumerate(labs):
                if j in used or class_names[d.class_id] != lab.class_name:
                    continue
                if ious[i, j] >= best_iou:
                    best, best_iou = j, ious[i, j]
            if best >= 0:
                used.add(best)
                gz = labs[best].location[2]
                pairs.append((gz, abs(d.center3d[2] - gz)))
    return pairs


def depth_error_fit(detections, labels, class_names, min_iou=0.5):
    pairs = depth_error_pairs(detections, labels, class_names, min_iou)
    if len(pairs) < 2:
        raise InsufficientData(f"only {len(pairs)} matched pairs")
    x, y = zip(*pairs)
    return fit_line(x, y), pairs


def scatter_csv(pairs):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["gt_depth", "abs_depth_error"])
    for gz, err in pairs:
        w.writerow([repr(float(gz)), repr(float(err))])
    return buf.getvalue()


def _fmt(v):
    return "  n/a" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:6.2f}"


def format_table(results, title=None):
    """Aligned text table: one row per (class, metric@threshold), columns Mod./Easy/Hard."""
    lines = [title] if title else []
    head = f"{'class':<12}{'metric':<10}" + "".join(f"{REPORT_HEADINGS[d]:>8}" for d in REPORT_ORDER)
    lines += [head, "-" * len(head)]
    for cls, table in results.items():
        for key, row in table.items():
            lines.append(f"{cls:<12}{key:<10}" + "".join(f"{_fmt(row[d]):>8}" for d in REPORT_ORDER))
    return "\n".join(lines) + "\n"


def table_csv(results):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "metric"] + [REPORT_HEADINGS[d] for d in REPORT_ORDER])
    for cls, table in results.items():
        for key, row in table.items():
            w.writerow([cls, key] + [("" if math.isnan(row[d]) else repr(row[d])) for d in REPORT_ORDER])
    return buf.getvalue()

