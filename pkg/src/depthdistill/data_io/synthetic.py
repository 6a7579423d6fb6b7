"""Deterministic synthetic driving scenes with exact labels and depth.

The world is a ground plane at ``camera_height`` below the camera, a back wall
at ``wall_depth`` and a handful of cuboid objects resting on the ground.  RGB
is ray-cast (face shading, checkerboard ground, distance fog); the depth
z-buffer stores, for object pixels, the object's centre depth over its
projected silhouette, so the depth under an object's projected centre equals
its label depth exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigInvalid
from .kitti import CameraCalib, ObjectLabel, PointCloud, box_corners, wrap_angle

# KITTI train-split mean sizes (h, w, l) in metres
CLASS_MEAN_DIMS = {
    "Car": (1.52563191, 1.62856739, 3.88311640),
    "Pedestrian": (1.76255119, 0.66068622, 0.84422524),
    "Cyclist": (1.73698127, 0.59706367, 1.76282397),
}

# LiDAR frame (x forward, y left, z up) to camera frame (x right, y down, z forward)
LIDAR_TO_CAMERA = np.array([[0.0, -1.0, 0.0, 0.0], [0.0, 0.0, -1.0, 0.0], [1.0, 0.0, 0.0, 0.0]])


@dataclass(frozen=True)
class SyntheticConfig:
    height: int = 96
    width: int = 320
    focal: float = 200.0
    camera_height: float = 1.0
    object_count: tuple = (2, 5)
    class_mix: tuple = (("Car", 0.6), ("Pedestrian", 0.2), ("Cyclist", 0.2))
    depth_range: tuple = (6.0, 30.0)
    size_jitter: float = 0.08
    wall_depth: float = 45.0
    fog_distance: float = 50.0
    noise_std: float = 0.01
    # (rotation_y, weight) modes of a road-like heading mixture; empty means uniform
    heading_modes: tuple = ((-math.pi / 2, 0.4), (math.pi / 2, 0.4), (0.0, 0.1), (math.pi, 0.1))
    heading_jitter: float = 0.15  # radians
    # simulated LiDAR
    lidar_azimuth_step_deg: float = 0.5
    lidar_beams: int = 64
    lidar_elevation_deg: tuple = (-24.9, 2.0)

    def validate(self):
        problems = []
        if self.height < 16 or self.width < 16 or self.height % 16 or self.width % 16:
            problems.append("image size must be positive multiples of 16")
        if self.focal <= 0:
            problems.append("focal must be positive")
        lo, hi = self.object_count
        if lo < 0 or hi < lo:
            problems.append("object_count must satisfy 0 <= lo <= hi")
        dlo, dhi = self.depth_range
        if not (0 < dlo < dhi):
            problems.append("depth_range must be positive and increasing")
        if dhi >= self.wall_depth:
            problems.append("depth_range must end before wall_depth")
        if self.camera_height <= 0:
            problems.append("camera_height must be positive")
        total = 0.0
        for name, wgt in self.class_mix:
            if name not in CLASS_MEAN_DIMS or wgt < 0:
                problems.append(f"bad class_mix entry {name}:{wgt}")
            total += wgt
        if total <= 0:
            problems.append("class_mix weights must sum to a positive value")
        if self.heading_modes and (any(w < 0 for _, w in self.heading_modes)
                                   or sum(w for _, w in self.heading_modes) <= 0):
            problems.append("heading_modes weights must be nonnegative with a positive sum")
        if self.heading_jitter < 0:
            problems.append("heading_jitter must be nonnegative")
        if problems:
            raise ConfigInvalid("; ".join(problems))

    @property
    def calib(self):
        return CameraCalib.pinhole(self.focal, self.width / 2.0, self.height / 2.0, LIDAR_TO_CAMERA)


@dataclass
class Silhouette:
    hull: np.ndarray  # (M, 2) counter-clockwise image polygon
    depth: float
    index: int


@dataclass
class SyntheticScene:
    rgb: np.ndarray  # (H, W, 3) in [0, 1]
    gt_depth: np.ndarray  # (H, W) metres
    objects: list
    calib: CameraCalib
    seed: int
    silhouettes: list = field(default_factory=list, repr=False)
    config: SyntheticConfig = field(default_factory=SyntheticConfig, repr=False)

    def depth_at(self, u, v):
        return _depth_at(np.asarray(u, float), np.asarray(v, float), self.silhouettes, self.config)


def _convex_hull(pts):
    pts = sorted(map(tuple, pts))

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def _inside_convex(hull, u, v):
    inside = np.ones(np.shape(u), dtype=bool)
    n = len(hull)
    for i in range(n):
        x0, y0 = hull[i]
        x1, y1 = hull[(i + 1) % n]
        inside &= (x1 - x0) * (v - y0) - (y1 - y0) * (u - x0) >= 0
    return inside


def _background_depth(u, v, cfg):
    cy = cfg.height / 2.0
    below = v > cy
    ground = np.where(below, cfg.camera_height * cfg.focal / np.where(below, v - cy, 1.0), np.inf)
    return np.minimum(ground, cfg.wall_depth)


def _depth_at(u, v, silhouettes, cfg, ids=None):
    depth = _background_depth(u, v, cfg)
    for sil in sorted(silhouettes, key=lambda s: -s.depth):
        m = _inside_convex(sil.hull, u, v)
        depth = np.where(m, sil.depth, depth)
        if ids is not None:
            ids[m] = sil.index
    return depth


def _sample_class(rng, mix):
    names = [n for n, _ in mix]
    w = np.array([x for _, x in mix], dtype=float)
    return names[rng.choice(len(names), p=w / w.sum())]


def _sample_heading(rng, cfg):
    if not cfg.heading_modes:
        return rng.uniform(-math.pi, math.pi)
    centres = [a for a, _ in cfg.heading_modes]
    w = np.array([x for _, x in cfg.heading_modes], dtype=float)
    k = rng.choice(len(centres), p=w / w.sum())
    return wrap_angle(centres[k] + rng.normal(0.0, cfg.heading_jitter))


def _place_objects(rng, cfg):
    calib = cfg.calib
    lo, hi = cfg.object_count
    count = int(rng.integers(lo, hi + 1))
    placed = []
    for _ in range(count):
        for _attempt in range(60):
            cls = _sample_class(rng, cfg.class_mix)
            mean = np.array(CLASS_MEAN_DIMS[cls])
            jitter = np.clip(rng.normal(0.0, cfg.size_jitter, 3), -0.2, 0.2)
            dims = tuple(mean * (1.0 + jitter))
            z = rng.uniform(*cfg.depth_range)
            half_fov = (cfg.width / 2.0) / cfg.focal
            x = rng.uniform(-0.9 * half_fov * z, 0.9 * half_fov * z)
            ry = _sample_heading(rng, cfg)
            loc = (x, cfg.camera_height, z)
            corners = box_corners(dims, loc, ry)
            if corners[:, 2].min() < 0.5:
                continue
            uv, _ = calib.rect_to_image(corners)
            if uv[:, 0].min() < 0 or uv[:, 0].max() >= cfg.width or \
                    uv[:, 1].min() < 0 or uv[:, 1].max() >= cfg.height:
                continue
            radius = 0.5 * math.hypot(dims[1], dims[2])
            if any(math.hypot(x - p["loc"][0], z - p["loc"][2]) < radius + p["radius"] + 0.3
                   for p in placed):
                continue
            placed.append(dict(cls=cls, dims=dims, loc=loc, ry=ry, corners=corners, uv=uv,
                               radius=radius, color=rng.uniform(0.15, 0.95, 3)))
            break
    return placed


def _face_normals(obj, dirs):
    """World-frame normal of the box face each camera ray enters first."""
    h, w, l = obj["dims"]
    cx, cy, cz = obj["loc"]
    centre = np.array([cx, cy - h / 2.0, cz])
    c, s = math.cos(obj["ry"]), math.sin(obj["ry"])
    rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    o = rot.T @ (-centre)
    d = dirs @ rot  # rows are R^T d
    half = np.array([l, h, w]) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - o) / d
        t2 = (half - o) / d
    tnear = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
    axis = np.argmax(tnear, axis=1)
    sign = -np.sign(d[np.arange(len(d)), axis])
    local = np.zeros_like(d)
    local[np.arange(len(d)), axis] = sign
    return local @ rot.T, (axis == 0) & (sign > 0)


def generate_synthetic_scene(seed, config=None):
    cfg = config or SyntheticConfig()
    cfg.validate()
    rng = np.random.default_rng(seed)
    calib = cfg.calib
    hgt, wid = cfg.height, cfg.width
    objs = _place_objects(rng, cfg)

    silhouettes = [Silhouette(_convex_hull(o["uv"]), o["loc"][2], i) for i, o in enumerate(objs)]
    vv, uu = np.mgrid[0:hgt, 0:wid].astype(np.float64)
    uc, vc = uu + 0.5, vv + 0.5
    ids = np.full((hgt, wid), -1, dtype=np.int64)
    depth = _depth_at(uc, vc, silhouettes, cfg, ids)

    # background shading
    cx, cy = wid / 2.0, hgt / 2.0
    rgb = np.empty((hgt, wid, 3))
    wall = np.array([0.55, 0.60, 0.68])
    rgb[:] = wall * (0.9 + 0.1 * (vc / hgt))[..., None]
    ground = (vc > cy) & (depth < cfg.wall_depth) & (ids < 0)
    gx = (uc - cx) * depth / cfg.focal
    checker = (np.floor(gx / 2.0) + np.floor(depth / 2.0)) % 2 == 0
    tile = np.where(checker[..., None], np.array([0.42, 0.40, 0.37]), np.array([0.30, 0.29, 0.27]))
    rgb[ground] = tile[ground]

    light = np.array([-0.4, -1.0, -0.5])
    light /= np.linalg.norm(light)
    for i, o in enumerate(objs):
        m = ids == i
        if not m.any():
            continue
        dirs = np.stack([(uc[m] - cx) / cfg.focal, (vc[m] - cy) / cfg.focal, np.ones(m.sum())], 1)
        normals, front = _face_normals(o, dirs)
        shade = 0.35 + 0.65 * np.clip(normals @ light, 0.0, None)
        base = np.where(front[:, None], 0.5 * o["color"] + 0.5, o["color"][None, :])
        rgb[m] = base * shade[:, None]

    fog = np.exp(-depth / cfg.fog_distance)[..., None]
    rgb = rgb * fog + np.array([0.70, 0.72, 0.75]) * (1.0 - fog)
    rgb = np.clip(rgb + rng.normal(0.0, cfg.noise_std, rgb.shape), 0.0, 1.0)

    labels = []
    for i, o in enumerate(objs):
        area = _inside_convex(silhouettes[i].hull, uc, vc).sum()
        visible = (ids == i).sum() / max(area, 1)
        occ = 0 if visible >= 0.9 else 1 if visible >= 0.6 else 2 if visible >= 0.3 else 3
        x, _, z = o["loc"]
        uv = o["uv"]
        labels.append(ObjectLabel(
            class_name=o["cls"],
            truncation=0.0,
            occlusion=occ,
            alpha=wrap_angle(o["ry"] - math.atan2(x, z)),
            box2d=(float(uv[:, 0].min()), float(uv[:, 1].min()),
                   float(uv[:, 0].max()), float(uv[:, 1].max())),
            dims=tuple(float(d) for d in o["dims"]),
            location=tuple(float(v) for v in o["loc"]),
            rotation_y=wrap_angle(o["ry"]),
        ))
    return SyntheticScene(rgb=rgb, gt_depth=depth, objects=labels, calib=calib, seed=seed,
                          silhouettes=silhouettes, config=cfg)


def synthetic_lidar(scene):
    """Ray-cast a spinning LiDAR at the camera centre against ``scene``.

    One ray per (beam, azimuth step) inside the camera frustum; the return is
    the scene surface hit along that ray, expressed in the LiDAR frame.
    """
    cfg = scene.config
    lo, hi = np.radians(cfg.lidar_elevation_deg)
    step = (hi - lo) / cfg.lidar_beams
    elev = lo + (np.arange(cfg.lidar_beams) + 0.5) * step
    half = math.atan((cfg.width / 2.0) / cfg.focal)
    az_step = math.radians(cfg.lidar_azimuth_step_deg)
    n_az = int(math.floor(half / az_step))
    az = np.arange(-n_az, n_az + 1) * az_step
    e, a = np.meshgrid(elev, az, indexing="ij")
    # direction in camera frame
    dx = -np.cos(e) * np.sin(a)
    dy = -np.sin(e)
    dz = np.cos(e) * np.cos(a)
    u = cfg.width / 2.0 + cfg.focal * dx / dz
    v = cfg.height / 2.0 + cfg.focal * dy / dz
    keep = (u >= 0) & (u < cfg.width) & (v >= 0) & (v < cfg.height)
    u, v, dx, dy, dz = u[keep], v[keep], dx[keep], dy[keep], dz[keep]
    z = scene.depth_at(u, v)
    scale = z / dz
    cam = np.stack([dx * scale, dy * scale, z], axis=1)
    refl = scene.rgb[np.floor(v).astype(int), np.floor(u).astype(int)].mean(axis=1)
    lidar = np.stack([cam[:, 2], -cam[:, 0], -cam[:, 1], refl], axis=1)
    return PointCloud(lidar)
