"""Turning head maps into 3-D detections."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ..data_io.kitti import wrap_angle
from ..evaluation.iou import iou_2d

SIGMA_CLAMP = (0.0, 5.0)


@dataclass
class Detection:
    class_id: int
    score: float
    box2d: tuple
    center3d: np.ndarray  # geometric centre, camera frame
    dims: tuple  # (h, w, l)
    rotation_y: float
    depth_sigma: float
    heat: float = 0.0
    extra: dict = field(default_factory=dict, repr=False)

    @property
    def location(self):
        """KITTI bottom-centre location."""
        return np.array([self.center3d[0], self.center3d[1] + self.dims[0] / 2.0, self.center3d[2]])

    @property
    def alpha(self):
        return wrap_angle(self.rotation_y - math.atan2(self.center3d[0], self.center3d[2]))


def bin_centers(num_bins):
    """Orientation bin centres, evenly spaced from 0."""
    return wrap_angle(np.arange(num_bins) * (2 * math.pi / num_bins))


def angle_to_bin(angle, num_bins):
    """Nearest bin and the residual angle in [-pi/B, pi/B)."""
    width = 2 * math.pi / num_bins
    b = int(math.floor(wrap_angle(angle + width / 2.0) % (2 * math.pi) / width)) % num_bins
    res = wrap_angle(angle - bin_centers(num_bins)[b])
    return b, res


def decode_orientation(vec, num_bins):
    """``vec``: 4*B values laid out as B pairs of logits then B (sin, cos) pairs."""
    logits = np.asarray(vec[:2 * num_bins]).reshape(num_bins, 2)
    conf = logits[:, 1] - logits[:, 0]  # in-bin log-odds
    b = int(np.argmax(conf))
    s, c = vec[2 * num_bins + 2 * b], vec[2 * num_bins + 2 * b + 1]
    return wrap_angle(bin_centers(num_bins)[b] + math.atan2(s, c))


def confidence(heat, log_sigma, mode="exp"):
    """Depth-uncertainty normalised score; ``sigma`` is clamped to [0, 5]."""
    sigma = min(max(math.exp(log_sigma), SIGMA_CLAMP[0]), SIGMA_CLAMP[1])
    if mode == "exp":
        return heat * math.exp(-sigma), math.exp(log_sigma)
    if mode == "none":
        return heat, math.exp(log_sigma)
    raise ValueError(f"unknown confidence mode {mode!r}")


def _arr(t):
    return t.data if hasattr(t, "data") else np.asarray(t)


def decode(outputs, calib, conf_threshold=0.1, class_mean_dims=None, stride=4, batch_index=0,
           max_dets=50, confidence_mode="exp"):
    """Local heatmap maxima above ``conf_threshold`` become detections (score-sorted)."""
    heat = _arr(outputs.heatmap)[batch_index]
    k, h, w = heat.shape
    peaks = (heat == ndimage.maximum_filter(heat, size=(1, 3, 3), mode="constant",
                                            cval=-np.inf)) & (heat > conf_threshold)
    cls_idx, ys, xs = np.nonzero(peaks)
    if len(cls_idx) == 0:
        return []
    vals = heat[cls_idx, ys, xs]
    order = np.argsort(-vals, kind="stable")[:max_dets]
    off2d = _arr(outputs.offset2d)[batch_index]
    size2d = _arr(outputs.size2d)[batch_index]
    off3d = _arr(outputs.offset3d)[batch_index]
    dep = _arr(outputs.depth)[batch_index]
    dims = _arr(outputs.dims)[batch_index]
    ori = _arr(outputs.orientation)[batch_index]
    num_bins = ori.shape[0] // 4
    means = np.asarray(class_mean_dims) if class_mean_dims is not None else np.zeros((k, 3))
    dets = []
    for i in order:
        c, y, x = int(cls_idx[i]), int(ys[i]), int(xs[i])
        u = (x + off3d[0, y, x]) * stride
        v = (y + off3d[1, y, x]) * stride
        depth = float(np.exp(-dep[0, y, x]))
        score, sigma = confidence(float(heat[c, y, x]), float(dep[1, y, x]), confidence_mode)
        center = calib.image_to_rect(u, v, depth)
        hwl = tuple(float(means[c, j] + dims[j, y, x]) for j in range(3))
        alpha = decode_orientation(ori[:, y, x], num_bins)
        ry = wrap_angle(alpha + math.atan2(center[0], center[2]))
        bx = (x + off2d[0, y, x]) * stride
        by = (y + off2d[1, y, x]) * stride
        bw, bh = size2d[0, y, x] * stride, size2d[1, y, x] * stride
        dets.append(Detection(
            class_id=c, score=float(score),
            box2d=(float(bx - bw / 2), float(by - bh / 2), float(bx + bw / 2), float(by + bh / 2)),
            center3d=center, dims=hwl, rotation_y=float(ry), depth_sigma=float(sigma),
            heat=float(heat[c, y, x]),
        ))
    dets.sort(key=lambda d: -d.score)
    return dets


def nms2d(dets, iou_threshold):
    """Greedy per-class suppression on 2-D IoU; input must be score-sorted."""
    keep = []
    for d in dets:
        if all(k.class_id != d.class_id or iou_2d(k.box2d, d.box2d) <= iou_threshold for k in keep):
            keep.append(d)
    return keep
