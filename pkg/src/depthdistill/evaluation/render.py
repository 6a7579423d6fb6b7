"""PNG overlays of detections on the image and in bird's-eye view."""

from __future__ import annotations

import io

import numpy as np
from PIL import Image, ImageDraw

from ..data_io.kitti import box_corners
from .iou import Box3D

EDGES = [(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4), (0, 4), (1, 5), (2, 6), (3, 7)]
GT_COLOR = (40, 220, 40)
DET_COLOR = (240, 60, 40)


def _png(img):
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def _draw_box3d(draw, calib, dims, location, ry, color):
    corners = box_corners(dims, location, ry)
    if (corners[:, 2] <= 0.1).any():
        return
    uv, _ = calib.rect_to_image(corners)
    for a, b in EDGES:
        draw.line([tuple(uv[a]), tuple(uv[b])], fill=color, width=1)


def render_overlay(rgb, calib, labels, detections, scale=2):
    """Image (H, W, 3) in [0, 1] with ground-truth and predicted 3-D boxes drawn."""
    img = Image.fromarray((np.clip(rgb, 0, 1) * 255).astype(np.uint8))
    img = img.resize((img.width * scale, img.height * scale), Image.NEAREST)
    draw = ImageDraw.Draw(img)
    up = calib.p2.copy()
    up[:2] *= scale
    scaled = type(calib)(up, calib.r0_rect, calib.tr_velo_to_cam)
    for lab in labels:
        if not lab.is_dontcare:
            _draw_box3d(draw, scaled, lab.dims, lab.location, lab.rotation_y, GT_COLOR)
    for d in detections:
        _draw_box3d(draw, scaled, d.dims, d.location, d.rotation_y, DET_COLOR)
    return _png(img)


def render_bev(labels, detections, x_range=(-20.0, 20.0), z_range=(0.0, 50.0), px_per_m=8):
    """Top-down sketch: x to the right, depth upward."""
    w = int((x_range[1] - x_range[0]) * px_per_m)
    h = int((z_range[1] - z_range[0]) * px_per_m)
    img = Image.new("RGB", (w, h), (255, 255, 255))
    draw = ImageDraw.Draw(img)

    def to_px(x, z):
        return ((x - x_range[0]) * px_per_m, h - (z - z_range[0]) * px_per_m)

    for z in range(int(z_range[0]), int(z_range[1]) + 1, 10):
        draw.line([to_px(x_range[0], z), to_px(x_range[1], z)], fill=(225, 225, 225))
    boxes = [(Box3D.from_label(lab), GT_COLOR) for lab in labels if not lab.is_dontcare]
    boxes += [(Box3D(tuple(d.center3d), tuple(d.dims), d.rotation_y), DET_COLOR) for d in detections]
    for box, color in boxes:
        pts = [to_px(x, z) for x, z in box.bev_polygon()]
        draw.polygon(pts, outline=color)
    return _png(img)
