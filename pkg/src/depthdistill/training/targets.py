"""Encoding labels into per-head training targets, and the inverse used for round trips."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..autograd import Tensor
from ..data_io.kitti import FOREGROUND_CLASSES
from ..detector.decode import angle_to_bin
from ..detector.model import HeadOutputs

MIN_OVERLAP = 0.7


def gaussian_radius(height, width, min_overlap=MIN_OVERLAP):
    """CenterNet radius: the smallest of the three corner-shift cases."""
    a1 = 1
    b1 = height + width
    c1 = width * height * (1 - min_overlap) / (1 + min_overlap)
    r1 = (b1 + math.sqrt(b1 ** 2 - 4 * a1 * c1)) / 2

    a2 = 4
    b2 = 2 * (height + width)
    c2 = (1 - min_overlap) * width * height
    r2 = (b2 + math.sqrt(b2 ** 2 - 4 * a2 * c2)) / 2

    a3 = 4 * min_overlap
    b3 = -2 * min_overlap * (height + width)
    c3 = (min_overlap - 1) * width * height
    r3 = (b3 + math.sqrt(b3 ** 2 - 4 * a3 * c3)) / 2
    return min(r1, r2, r3)


def draw_gaussian(heat, cx, cy, radius):
    """Max-splat a (2r+1)^2 Gaussian with sigma = (2r+1)/6 centred on integer (cx, cy)."""
    d = 2 * radius + 1
    sigma = d / 6.0
    ys, xs = np.ogrid[-radius:radius + 1, -radius:radius + 1]
    g = np.exp(-(xs * xs + ys * ys) / (2 * sigma * sigma))
    g[radius, radius] = 1.0
    h, w = heat.shape
    left, right = min(cx, radius), min(w - cx, radius + 1)
    top, bottom = min(cy, radius), min(h - cy, radius + 1)
    region = heat[cy - top:cy + bottom, cx - left:cx + right]
    patch = g[radius - top:radius + bottom, radius - left:radius + right]
    np.maximum(region, patch, out=region)


@dataclass
class EncodedTargets:
    heatmap: np.ndarray  # (N, K, H, W)
    batch: np.ndarray  # (M,) sample index of each centre
    ys: np.ndarray
    xs: np.ndarray
    classes: np.ndarray
    offset2d: np.ndarray  # (M, 2)
    size2d: np.ndarray  # (M, 2)
    offset3d: np.ndarray  # (M, 2)
    depth: np.ndarray  # (M,)
    dims: np.ndarray  # (M, 3) residuals from class means
    bins: np.ndarray  # (M,)
    residuals: np.ndarray  # (M,)
    alpha: np.ndarray  # (M,)
    skipped: int = 0
    label_index: list = field(default_factory=list)

    @property
    def count(self):
        return len(self.batch)

    def index_arrays(self):
        return self.batch, self.ys, self.xs

    @classmethod
    def stack(cls, items):
        """Concatenate single-sample targets into one batch."""
        cat = {}
        for name in ("ys", "xs", "classes", "depth", "bins", "residuals", "alpha"):
            cat[name] = np.concatenate([getattr(t, name) for t in items])
        for name in ("offset2d", "size2d", "offset3d"):
            cat[name] = np.concatenate([getattr(t, name) for t in items]).reshape(-1, 2)
        cat["dims"] = np.concatenate([t.dims for t in items]).reshape(-1, 3)
        batch = np.concatenate([np.full(t.count, i, dtype=np.int64) for i, t in enumerate(items)])
        return cls(heatmap=np.concatenate([t.heatmap for t in items]), batch=batch,
                   skipped=sum(t.skipped for t in items),
                   label_index=[j for t in items for j in t.label_index], **cat)


def encode_targets(labels, calib, out_size, stride=4, class_mean_dims=None,
                   class_names=FOREGROUND_CLASSES, num_bins=4, min_overlap=MIN_OVERLAP):
    """Targets for one sample; objects whose centre leaves the map are skipped and counted.

    Two objects sharing a centre cell keep the nearer one (the later is counted as skipped).
    """
    h, w = out_size
    k = len(class_names)
    means = np.zeros((k, 3)) if class_mean_dims is None else np.asarray(class_mean_dims)
    heat = np.zeros((1, k, h, w))
    rows = []
    skipped = 0
    taken = {}
    order = sorted(range(len(labels)), key=lambda i: labels[i].location[2])
    for i in order:
        lab = labels[i]
        if lab.class_name not in class_names:
            continue
        c = class_names.index(lab.class_name)
        uv, _ = calib.rect_to_image(lab.center3d[None, :])
        u, v = uv[0] / stride
        cx, cy = int(math.floor(u)), int(math.floor(v))
        if not (0 <= cx < w and 0 <= cy < h) or (cy, cx) in taken:
            skipped += 1
            continue
        taken[(cy, cx)] = i
        bw = (lab.box2d[2] - lab.box2d[0]) / stride
        bh = (lab.box2d[3] - lab.box2d[1]) / stride
        radius = max(0, int(gaussian_radius(bh, bw, min_overlap)))
        draw_gaussian(heat[0, c], cx, cy, radius)
        b, res = angle_to_bin(lab.alpha, num_bins)
        rows.append(dict(
            i=i, y=cy, x=cx, c=c,
            off2d=((lab.box2d[0] + lab.box2d[2]) / 2 / stride - cx,
                   (lab.box2d[1] + lab.box2d[3]) / 2 / stride - cy),
            size2d=(bw, bh), off3d=(u - cx, v - cy), depth=lab.center3d[2],
            dims=np.asarray(lab.dims) - means[c], bin=b, res=res, alpha=lab.alpha,
        ))
    rows.sort(key=lambda r: r["i"])

    def arr(key, width=None, dtype=np.float64):
        a = np.array([r[key] for r in rows], dtype=dtype)
        return a.reshape(-1, width) if width else a

    return EncodedTargets(
        heatmap=heat, batch=np.zeros(len(rows), dtype=np.int64),
        ys=arr("y", dtype=np.int64), xs=arr("x", dtype=np.int64), classes=arr("c", dtype=np.int64),
        offset2d=arr("off2d", 2), size2d=arr("size2d", 2), offset3d=arr("off3d", 2),
        depth=arr("depth"), dims=arr("dims", 3), bins=arr("bin", dtype=np.int64),
        residuals=arr("res"), alpha=arr("alpha"), skipped=skipped,
        label_index=[r["i"] for r in rows],
    )


def targets_to_outputs(targets, num_bins=4, log_sigma=-30.0):
    """Head maps that decode exactly to the encoded objects (noiseless predictions)."""
    n, k, h, w = targets.heatmap.shape
    maps = {
        "offset2d": np.zeros((n, 2, h, w)), "size2d": np.zeros((n, 2, h, w)),
        "offset3d": np.zeros((n, 2, h, w)), "depth": np.zeros((n, 2, h, w)),
        "dims": np.zeros((n, 3, h, w)), "orientation": np.zeros((n, 4 * num_bins, h, w)),
    }
    b, ys, xs = targets.index_arrays()
    maps["offset2d"][b, :, ys, xs] = targets.offset2d
    maps["size2d"][b, :, ys, xs] = targets.size2d
    maps["offset3d"][b, :, ys, xs] = targets.offset3d
    maps["depth"][b, 0, ys, xs] = -np.log(targets.depth)
    maps["depth"][b, 1, ys, xs] = log_sigma
    maps["dims"][b, :, ys, xs] = targets.dims
    logits = np.tile([10.0, -10.0], num_bins)
    for j in range(targets.count):
        o = logits.copy()
        o[2 * targets.bins[j]:2 * targets.bins[j] + 2] = (-10.0, 10.0)
        sc = np.zeros(2 * num_bins)
        sc[2 * targets.bins[j]] = math.sin(targets.residuals[j])
        sc[2 * targets.bins[j] + 1] = math.cos(targets.residuals[j])
        maps["orientation"][b[j], :, ys[j], xs[j]] = np.concatenate([o, sc])
    heat = targets.heatmap
    with np.errstate(divide="ignore"):
        logit = np.log(heat) - np.log1p(-np.minimum(heat, 1 - 1e-12))
    return HeadOutputs(heatmap_logits=Tensor(logit), heatmap=Tensor(heat.copy()),
                       **{name: Tensor(v) for name, v in maps.items()})
