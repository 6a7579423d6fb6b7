"""KITTI-style AP|R40 for 2-D, BEV, 3-D and orientation similarity."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .iou import Box3D, iou_2d, iou_3d, iou_bev

DIFFICULTIES = ("easy", "moderate", "hard")
KITTI_FOCAL = 721.5377
SIMILAR_CLASSES = {"Car": ("Van",), "Pedestrian": ("Person_sitting",)}


@dataclass
class EvalConfig:
    min_height: tuple = (40.0, 25.0, 25.0)
    max_occlusion: tuple = (0, 1, 2)
    max_truncation: tuple = (0.15, 0.3, 0.5)
    iou_thresholds: dict = field(default_factory=lambda: {"Car": 0.7, "Pedestrian": 0.5,
                                                          "Cyclist": 0.5})
    recall_positions: int = 40
    dontcare_overlap: float = 0.5

    def __post_init__(self):
        for t in self.iou_thresholds.values():
            if not 0.0 < t <= 1.0:
                raise ValueError(f"IoU threshold {t} outside (0, 1]")

    @classmethod
    def for_focal(cls, focal, **kw):
        """KITTI difficulty filters with pixel heights scaled to another focal length."""
        s = focal / KITTI_FOCAL
        return cls(min_height=tuple(h * s for h in (40.0, 25.0, 25.0)), **kw)

    def difficulty_index(self, name):
        return DIFFICULTIES.index(name)


@dataclass
class MatchResult:
    gt_assignment: list  # per GT: index of matched detection or -1
    gt_ignored: list
    det_status: list  # per detection: "tp", "fp" or "ignored"
    scores: list
    similarity: list  # per detection: orientation similarity for tps


def _pair_iou(metric, det, lab):
    if metric in ("2d", "aos"):
        return iou_2d(det.box2d, lab.box2d)
    box_d = Box3D(tuple(det.center3d), tuple(det.dims), det.rotation_y)
    box_g = Box3D.from_label(lab)
    return iou_bev(box_d, box_g) if metric == "bev" else iou_3d(box_d, box_g)


def _gt_status(lab, cls_name, diff, cfg):
    """'valid', 'ignored', 'dontcare' or None (irrelevant)."""
    if lab.is_dontcare:
        return "dontcare"
    if lab.class_name == cls_name:
        hard = (lab.occlusion > cfg.max_occlusion[diff] or lab.truncation > cfg.max_truncation[diff]
                or lab.height2d <= cfg.min_height[diff])
        return "ignored" if hard else "valid"
    if lab.class_name in SIMILAR_CLASSES.get(cls_name, ()):
        return "ignored"
    return None


def match_scene(dets, labels, class_id, cls_name, difficulty, metric, threshold, cfg):
    """Greedy matching in descending score order for one scene."""
    diff = cfg.difficulty_index(difficulty)
    status = [_gt_status(lab, cls_name, diff, cfg) for lab in labels]
    cand = [d for d in dets if d.class_id == class_id
            and (d.box2d[3] - d.box2d[1]) >= cfg.min_height[diff]]
    cand = sorted(cand, key=lambda d: -d.score)
    assign = [-1] * len(labels)
    det_status, scores, sims = [], [], []
    for j, d in enumerate(cand):
        best, best_iou = -1, -1.0
        for want in ("valid", "ignored"):
            for i, lab in enumerate(labels):
                if status[i] != want or assign[i] >= 0:
                    continue
                ov = _pair_iou(metric, d, lab)
                if ov >= threshold and ov > best_iou:
                    best, best_iou = i, ov
            if best >= 0:
                break
        if best >= 0:
            assign[best] = j
            if status[best] == "valid":
                det_status.append("tp")
                sims.append((1.0 + math.cos(d.alpha - labels[best].alpha)) / 2.0)
            else:
                det_status.append("ignored")
                sims.append(0.0)
        else:
            in_dc = False
            area = max((d.box2d[2] - d.box2d[0]) * (d.box2d[3] - d.box2d[1]), 1e-12)
            for i, lab in enumerate(labels):
                if status[i] == "dontcare":
                    b = lab.box2d
                    iw = min(d.box2d[2], b[2]) - max(d.box2d[0], b[0])
                    ih = min(d.box2d[3], b[3]) - max(d.box2d[1], b[1])
                    if iw > 0 and ih > 0 and iw * ih / area >= cfg.dontcare_overlap:
                        in_dc = True
                        break
            det_status.append("ignored" if in_dc else "fp")
            sims.append(0.0)
        scores.append(d.score)
    return MatchResult(assign, [s != "valid" for s in status], det_status, scores, sims)


def precision_at_recalls(tp_flags, n_gt, positions=40, weights=None):
    """Interpolated precision (or similarity) at recall j/positions, j = 1..positions.

    ``tp_flags`` follows descending score order.  ``weights`` replaces the
    true-positive count in the numerator (orientation similarity for AOS).
    """
    tp_flags = np.asarray(tp_flags, dtype=bool)
    num = np.asarray(weights, dtype=np.float64) if weights is not None else tp_flags.astype(float)
    ctp = np.cumsum(tp_flags)
    cnum = np.cumsum(num)
    ranks = np.arange(1, len(tp_flags) + 1)
    prec = cnum / ranks if len(ranks) else np.zeros(0)
    out = np.zeros(positions)
    for j in range(1, positions + 1):
        # recall ctp / n_gt >= j / positions, compared exactly in integers
        ok = ctp * positions >= j * n_gt
        if ok.any():
            out[j - 1] = prec[ok].max()
    return out


def ap_r40(detections, labels, class_id, cls_name, difficulty="moderate", metric="3d",
           threshold=None, cfg=None):
    """AP|R40 in percent; NaN marks a split without ground truth for this class."""
    cfg = cfg or EvalConfig()
    if threshold is None:
        threshold = cfg.iou_thresholds[cls_name]
    entries = []
    n_gt = 0
    for scene_idx, (dets, labs) in enumerate(zip(detections, labels)):
        res = match_scene(dets, labs, class_id, cls_name, difficulty, metric, threshold, cfg)
        n_gt += sum(1 for ig in res.gt_ignored if not ig)
        for k, (st, sc, sim) in enumerate(zip(res.det_status, res.scores, res.similarity)):
            if st != "ignored":
                entries.append((-sc, scene_idx, k, st == "tp", sim))
    if n_gt == 0:
        return math.nan
    entries.sort(key=lambda e: (e[0], e[1], e[2]))
    flags = [e[3] for e in entries]
    weights = [e[4] for e in entries] if metric == "aos" else None
    prec = precision_at_recalls(flags, n_gt, cfg.recall_positions, weights)
    # exactly rounded sum so the result does not depend on reduction order
    return math.fsum(prec.tolist()) / cfg.recall_positions * 100.0


def evaluate(detections, labels, class_names, cfg=None, metrics=("3d", "bev", "2d", "aos"),
             thresholds=None):
    """Nested dict ``result[class][metric@thr][difficulty]`` of AP values."""
    cfg = cfg or EvalConfig()
    out = {}
    for cid, name in enumerate(class_names):
        thr_list = thresholds.get(name) if thresholds else None
        thr_list = thr_list or [cfg.iou_thresholds[name]]
        table = {}
        for m in metrics:
            for thr in thr_list:
                table[f"{m}@{thr:g}"] = {d: ap_r40(detections, labels, cid, name, d, m, thr, cfg)
                                         for d in DIFFICULTIES}
        out[name] = table
    return out
