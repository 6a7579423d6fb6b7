"""Image-plane depth maps from LiDAR: projection, densification, beam thinning."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

from .data_io.kitti import PointCloud
from .errors import DepthOutOfRange, EmptyInput

TEACHER_DEPTH_SCALE = 80.0


@dataclass
class DepthMap:
    depth: np.ndarray  # (H, W) metres, 0 where invalid
    valid: np.ndarray  # (H, W) bool

    @property
    def height(self):
        return self.depth.shape[0]

    @property
    def width(self):
        return self.depth.shape[1]

    @classmethod
    def dense(cls, depth):
        depth = np.asarray(depth, dtype=np.float64)
        return cls(depth.copy(), np.ones(depth.shape, dtype=bool))

    def density(self):
        return float(self.valid.mean())


@dataclass(frozen=True)
class BeamModel:
    n_beams: int = 64
    elevation_min: float = math.radians(-24.9)
    elevation_max: float = math.radians(2.0)

    def __post_init__(self):
        if self.n_beams < 1 or not self.elevation_max > self.elevation_min:
            raise ValueError(f"invalid beam model {self}")

    def bin_of(self, elevation):
        span = self.elevation_max - self.elevation_min
        return np.floor((elevation - self.elevation_min) / span * self.n_beams).astype(np.int64)

    def bin_centers(self):
        step = (self.elevation_max - self.elevation_min) / self.n_beams
        return self.elevation_min + (np.arange(self.n_beams) + 0.5) * step


def project_lidar(cloud, calib, width, height):
    """Nearest-point depth image of ``cloud`` under ``calib``; depth is rectified z."""
    depth = np.zeros((height, width))
    valid = np.zeros((height, width), dtype=bool)
    if len(cloud) == 0:
        return DepthMap(depth, valid)
    rect = calib.velo_to_rect(cloud.points[:, :3])
    z = rect[:, 2]
    front = z > 0
    rect, z = rect[front], z[front]
    uv, _ = calib.rect_to_image(rect)
    col = np.floor(uv[:, 0])
    row = np.floor(uv[:, 1])
    inside = (col >= 0) & (col < width) & (row >= 0) & (row < height) & np.isfinite(z)
    flat = row[inside].astype(np.int64) * width + col[inside].astype(np.int64)
    best = np.full(height * width, np.inf)
    np.minimum.at(best, flat, z[inside])
    hit = np.isfinite(best)
    depth.reshape(-1)[hit] = best[hit]
    valid.reshape(-1)[hit] = True
    return DepthMap(depth, valid)


def diamond(radius):
    return [(dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)
            if abs(dy) + abs(dx) <= radius]


def square(radius):
    return [(dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)]


def _masked_filter(depth, valid, offsets, reducer):
    """Min or max over the valid neighbours in ``offsets``; returns (values, any_valid)."""
    fill = np.inf if reducer is np.minimum else -np.inf
    src = np.where(valid, depth, fill)
    h, w = src.shape
    r = max(max(abs(dy), abs(dx)) for dy, dx in offsets)
    pad = np.full((h + 2 * r, w + 2 * r), fill)
    pad[r:r + h, r:r + w] = src
    out = np.full((h, w), fill)
    for dy, dx in offsets:
        out = reducer(out, pad[r + dy:r + dy + h, r + dx:r + dx + w])
    ok = np.isfinite(out)
    return np.where(ok, out, 0.0), ok


@dataclass(frozen=True)
class DensifyParams:
    dilate_radius: int = 2  # 5-pixel diamond
    close_radius: int = 2  # 5x5 square
    median_size: int = 3


def densify(sparse, params=None):
    """Fill every pixel of a sparse map; originally valid pixels keep their depth.

    Steps: min-dilation with a diamond, 5x5 closing, nearest-valid hole fill,
    then a 3x3 median written back only to originally invalid pixels.  Every
    output value is drawn from (or is a median of) input depths.
    """
    params = params or DensifyParams()
    orig_valid = sparse.valid
    if not orig_valid.any():
        raise EmptyInput("densify needs at least one valid pixel")
    orig = np.where(orig_valid, sparse.depth, 0.0)
    holes = ~orig_valid

    dil, dil_ok = _masked_filter(orig, orig_valid, diamond(params.dilate_radius), np.minimum)
    cur = np.where(orig_valid, orig, dil)
    cur_valid = orig_valid | dil_ok

    sq = square(params.close_radius)
    up, up_ok = _masked_filter(cur, cur_valid, sq, np.maximum)
    closed, closed_ok = _masked_filter(up, up_ok, sq, np.minimum)
    cur = np.where(holes & closed_ok, closed, cur)
    cur_valid = cur_valid | closed_ok

    if not cur_valid.all():
        _, (iy, ix) = ndimage.distance_transform_edt(~cur_valid, return_indices=True)
        cur = cur[iy, ix]

    med = ndimage.median_filter(cur, size=params.median_size, mode="nearest")
    out = np.where(holes, med, orig)
    return DepthMap(out, np.ones(out.shape, dtype=bool))


def elevation_angles(points):
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    return np.arctan2(z, np.sqrt(x * x + y * y))


def simulate_beams(cloud, model=None, keep_every=1):
    """Keep points whose elevation bin index is a multiple of ``keep_every``."""
    if keep_every < 1:
        raise ValueError("keep_every must be >= 1")
    model = model or BeamModel()
    if len(cloud) == 0:
        return PointCloud.empty()
    b = model.bin_of(elevation_angles(cloud.points))
    keep = (b >= 0) & (b < model.n_beams) & (b % keep_every == 0)
    return PointCloud(cloud.points[keep].copy())


def encode_depth_png16(dmap):
    vals = np.where(dmap.valid, np.round(dmap.depth * 256.0), 0.0)
    if (dmap.valid & ((vals > 65535) | (vals < 1))).any():
        raise DepthOutOfRange("valid depths must lie in [1/512, 256) m for 16-bit storage")
    buf = io.BytesIO()
    Image.fromarray(vals.astype(np.uint16)).save(buf, format="PNG")
    return buf.getvalue()


def decode_depth_png16(data):
    arr = np.array(Image.open(io.BytesIO(data)), dtype=np.float64)
    valid = arr > 0
    return DepthMap(np.where(valid, arr / 256.0, 0.0), valid)


def teacher_input(dmap, scale=TEACHER_DEPTH_SCALE):
    """Depth normalized by ``scale``, clamped to [0, 1], replicated to 3 channels."""
    d = np.clip(np.where(dmap.valid, dmap.depth, 0.0) / scale, 0.0, 1.0)
    return np.repeat(d[None], 3, axis=0)
