"""KITTI-format calibration, label and velodyne readers."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from ..errors import FieldCount, MalformedNumber, MissingKey, TruncatedRecord

_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")
_INTEGER = re.compile(r"^[+-]?\d+$")

CALIB_KEYS = {"P2": (3, 4), "R0_rect": (3, 3), "Tr_velo_to_cam": (3, 4)}
FOREGROUND_CLASSES = ("Car", "Pedestrian", "Cyclist")


def parse_number(token, line, column):
    """Strict '.'-decimal float; rejects inf/nan spellings, underscores, commas."""
    if not _NUMBER.match(token):
        raise MalformedNumber(line, column, token)
    return float(token)


@dataclass
class CameraCalib:
    p2: np.ndarray
    r0_rect: np.ndarray
    tr_velo_to_cam: np.ndarray

    @classmethod
    def pinhole(cls, focal, cx, cy, tr=None):
        p2 = np.array([[focal, 0.0, cx, 0.0], [0.0, focal, cy, 0.0], [0.0, 0.0, 1.0, 0.0]])
        if tr is None:
            tr = np.hstack([np.eye(3), np.zeros((3, 1))])
        return cls(p2, np.eye(3), np.asarray(tr, dtype=np.float64))

    def to_text(self):
        lines = []
        for key, mat in (("P2", self.p2), ("R0_rect", self.r0_rect),
                         ("Tr_velo_to_cam", self.tr_velo_to_cam)):
            lines.append(key + ": " + " ".join(repr(float(v)) for v in mat.reshape(-1)))
        return "\n".join(lines) + "\n"

    def velo_to_rect(self, xyz):
        """LiDAR-frame points (N, 3) to rectified camera coordinates (N, 3)."""
        xyz = np.asarray(xyz, dtype=np.float64)
        cam = xyz @ self.tr_velo_to_cam[:, :3].T + self.tr_velo_to_cam[:, 3]
        return cam @ self.r0_rect.T

    def rect_to_image(self, pts):
        """Rectified points (N, 3) to pixel coordinates (N, 2) and projective depth."""
        pts = np.asarray(pts, dtype=np.float64)
        hom = pts @ self.p2[:, :3].T + self.p2[:, 3]
        return hom[:, :2] / hom[:, 2:3], hom[:, 2]

    def image_to_rect(self, u, v, depth):
        """Back-project pixel (u, v) at rectified depth z through P2."""
        p = self.p2
        w = depth + p[2, 3]
        a = np.array([[p[0, 0], p[0, 1]], [p[1, 0], p[1, 1]]])
        rhs = np.array([u * w - p[0, 2] * depth - p[0, 3], v * w - p[1, 2] * depth - p[1, 3]])
        x, y = np.linalg.solve(a, rhs)
        return np.array([x, y, depth])


def parse_calib(text):
    found = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if ":" not in raw:
            continue
        key, rest = raw.split(":", 1)
        key = key.strip()
        if key not in CALIB_KEYS:
            continue
        tokens = rest.split()
        vals = [parse_number(t, lineno, col) for col, t in enumerate(tokens, start=1)]
        shape = CALIB_KEYS[key]
        need = shape[0] * shape[1]
        if len(vals) != need:
            raise MalformedNumber(lineno, len(vals) + 1, f"expected {need} values for {key}")
        found[key] = np.array(vals, dtype=np.float64).reshape(shape)
    for key in CALIB_KEYS:
        if key not in found:
            raise MissingKey(key)
    return CameraCalib(found["P2"], found["R0_rect"], found["Tr_velo_to_cam"])


@dataclass
class ObjectLabel:
    class_name: str
    truncation: float
    occlusion: int
    alpha: float
    box2d: tuple
    dims: tuple  # (h, w, l)
    location: tuple  # bottom centre (x, y, z), camera frame
    rotation_y: float
    score: float | None = None

    @property
    def is_dontcare(self):
        return self.class_name == "DontCare"

    @property
    def center3d(self):
        x, y, z = self.location
        return np.array([x, y - self.dims[0] / 2.0, z])

    @property
    def height2d(self):
        return self.box2d[3] - self.box2d[1]

    def to_line(self):
        fields = [self.class_name, f"{self.truncation:.2f}", str(int(self.occlusion)),
                  f"{self.alpha:.6f}"]
        fields += [f"{v:.6f}" for v in self.box2d]
        fields += [f"{v:.6f}" for v in self.dims]
        fields += [f"{v:.6f}" for v in self.location]
        fields.append(f"{self.rotation_y:.6f}")
        if self.score is not None:
            fields.append(f"{self.score:.6f}")
        return " ".join(fields)


def parse_labels(text):
    labels = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split()
        if not tokens:
            continue
        if len(tokens) < 15:
            raise FieldCount(lineno, len(tokens))
        num = [parse_number(t, lineno, col) if col != 3 else None
               for col, t in enumerate(tokens[:16], start=1) if col > 1]
        if not _INTEGER.match(tokens[2]):
            raise MalformedNumber(lineno, 3, tokens[2])
        score = num[14] if len(tokens) > 15 else None
        labels.append(ObjectLabel(
            class_name=tokens[0],
            truncation=num[0],
            occlusion=int(tokens[2]),
            alpha=num[2],
            box2d=tuple(num[3:7]),
            dims=tuple(num[7:10]),
            location=tuple(num[10:13]),
            rotation_y=num[13],
            score=score,
        ))
    return labels


def format_labels(labels):
    return "".join(lab.to_line() + "\n" for lab in labels)


@dataclass
class PointCloud:
    points: np.ndarray  # (N, 4): x, y, z, reflectance

    def __len__(self):
        return len(self.points)

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 4)))


def read_velodyne(data):
    if len(data) % 16:
        raise TruncatedRecord(f"velodyne byte length {len(data)} is not a multiple of 16")
    pts = np.frombuffer(data, dtype="<f4").reshape(-1, 4).astype(np.float64)
    return PointCloud(pts)


def write_velodyne(cloud):
    return np.ascontiguousarray(cloud.points, dtype="<f4").tobytes()


def wrap_angle(a):
    """Wrap to [-pi, pi)."""
    return (a + math.pi) % (2 * math.pi) - math.pi


def box_corners(dims, location, rotation_y):
    """Eight corners (8, 3) of a KITTI box; ``location`` is the bottom centre."""
    h, w, l = dims
    x = np.array([l, l, -l, -l, l, l, -l, -l]) / 2.0
    y = np.array([0.0, 0.0, 0.0, 0.0, -h, -h, -h, -h])
    z = np.array([w, -w, -w, w, w, -w, -w, w]) / 2.0
    c, s = math.cos(rotation_y), math.sin(rotation_y)
    rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return (rot @ np.vstack([x, y, z])).T + np.asarray(location, dtype=np.float64)
