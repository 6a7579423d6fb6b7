"""Rotated bird's-eye-view and 3-D box overlap."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

AREA_EPS = 1e-12


@dataclass(frozen=True)
class Box3D:
    center: tuple  # geometric centre (x, y, z), camera frame, y down
    dims: tuple  # (h, w, l)
    rotation_y: float

    @classmethod
    def from_label(cls, lab):
        return cls(tuple(lab.center3d), tuple(lab.dims), lab.rotation_y)

    def bev_polygon(self):
        """Counter-clockwise footprint in the (x, z) plane."""
        _, w, l = self.dims
        c, s = math.cos(self.rotation_y), math.sin(self.rotation_y)
        local = [(l / 2, w / 2), (l / 2, -w / 2), (-l / 2, -w / 2), (-l / 2, w / 2)]
        cx, _, cz = self.center
        pts = [(cx + c * lx + s * lz, cz - s * lx + c * lz) for lx, lz in local]
        if polygon_area(pts) < 0:
            pts.reverse()
        return pts

    @property
    def volume(self):
        h, w, l = self.dims
        return h * w * l


def polygon_area(pts):
    """Signed shoelace area (positive for counter-clockwise)."""
    a = 0.0
    n = len(pts)
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        a += x0 * y1 - x1 * y0
    return 0.5 * a


def clip_convex(subject, clipper):
    """Sutherland-Hodgman: intersection of ``subject`` with convex CCW ``clipper``."""
    out = list(subject)
    n = len(clipper)
    for i in range(n):
        if not out:
            break
        ax, ay = clipper[i]
        bx, by = clipper[(i + 1) % n]

        def side(p):
            return (bx - ax) * (p[1] - ay) - (by - ay) * (p[0] - ax)

        inp = out
        out = []
        for j in range(len(inp)):
            cur = inp[j]
            prev = inp[j - 1]
            sc, sp = side(cur), side(prev)
            if sc >= 0:
                if sp < 0:
                    out.append(_intersect(prev, cur, sp, sc))
                out.append(cur)
            elif sp >= 0:
                out.append(_intersect(prev, cur, sp, sc))
    return out


def _intersect(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def bev_intersection(a, b):
    poly = clip_convex(a.bev_polygon(), b.bev_polygon())
    if len(poly) < 3:
        return 0.0
    area = abs(polygon_area(poly))
    return area if area > AREA_EPS else 0.0


def iou_bev(a, b):
    inter = bev_intersection(a, b)
    area_a = a.dims[1] * a.dims[2]
    area_b = b.dims[1] * b.dims[2]
    return float(min(max(inter / (area_a + area_b - inter), 0.0), 1.0))


def iou_3d(a, b):
    inter_bev = bev_intersection(a, b)
    if inter_bev == 0.0:
        return 0.0
    a_top, a_bot = a.center[1] - a.dims[0] / 2, a.center[1] + a.dims[0] / 2
    b_top, b_bot = b.center[1] - b.dims[0] / 2, b.center[1] + b.dims[0] / 2
    overlap = max(0.0, min(a_bot, b_bot) - max(a_top, b_top))
    inter = inter_bev * overlap
    return float(min(max(inter / (a.volume + b.volume - inter), 0.0), 1.0))


def iou_2d(a, b):
    """Axis-aligned IoU of (left, top, right, bottom) boxes."""
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def iou_2d_matrix(boxes_a, boxes_b):
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(inter > 0, inter / np.where(union > 0, union, 1.0), 0.0)
