"""In-memory training/validation sets built from synthetic scenes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..data_io.kitti import FOREGROUND_CLASSES, CameraCalib, wrap_angle
from ..data_io.synthetic import CLASS_MEAN_DIMS, SyntheticConfig, generate_synthetic_scene, synthetic_lidar
from ..geom_depth import BeamModel, densify, project_lidar, simulate_beams, teacher_input
from ..losses import build_masks
from .targets import encode_targets

TEACHER_INPUTS = ("dense", "sparse", "beams32", "beams16")
BEAM_KEEP = {"beams32": 2, "beams16": 4}
OUTPUT_STRIDE = 4
BLOCK_STRIDES = (4, 8, 16)  # strides of the distilled blocks


@dataclass
class Sample:
    rgb: np.ndarray  # (3, H, W)
    depth_input: np.ndarray  # (3, H, W) normalized teacher input
    dense_depth: np.ndarray  # (H, W) metres, densified LiDAR
    labels: list
    calib: CameraCalib
    seed: int


@dataclass
class View:
    """One (sample, flip) pair with everything a training step needs."""
    rgb: np.ndarray
    depth_input: np.ndarray
    labels: list
    calib: CameraCalib
    targets: object
    of_masks: list  # per distilled block (H_i, W_i) bool
    or_mask: np.ndarray  # (H/4, W/4) bool
    aux_depth: np.ndarray  # (H/4, W/4) metres


def flip_labels(labels, width):
    out = []
    for lab in labels:
        x0, y0, x1, y1 = lab.box2d
        x, y, z = lab.location
        out.append(replace(
            lab, box2d=(width - x1, y0, width - x0, y1), location=(-x, y, z),
            rotation_y=wrap_angle(math.pi - lab.rotation_y), alpha=wrap_angle(math.pi - lab.alpha)))
    return out


def flip_calib(calib, width):
    p2 = calib.p2.copy()
    p2[0, 2] = width - p2[0, 2]
    p2[0, 3] = -p2[0, 3]
    return CameraCalib(p2, calib.r0_rect.copy(), calib.tr_velo_to_cam.copy())


def depth_for_teacher(scene, mode):
    """The teacher's depth map for a scene under one of the input modes."""
    if mode not in TEACHER_INPUTS:
        raise ValueError(f"unknown teacher input {mode!r}")
    cloud = synthetic_lidar(scene)
    h, w = scene.gt_depth.shape
    dense = densify(project_lidar(cloud, scene.calib, w, h))
    if mode == "dense":
        return dense, dense
    if mode in BEAM_KEEP:
        cloud = simulate_beams(cloud, BeamModel(), BEAM_KEEP[mode])
    return project_lidar(cloud, scene.calib, w, h), dense


def make_sample(seed, config, mode="dense"):
    scene = generate_synthetic_scene(seed, config)
    tmap, dense = depth_for_teacher(scene, mode)
    return Sample(rgb=np.ascontiguousarray(scene.rgb.transpose(2, 0, 1)),
                  depth_input=teacher_input(tmap), dense_depth=dense.depth,
                  labels=scene.objects, calib=scene.calib, seed=seed)


def class_mean_dims(label_lists, class_names=FOREGROUND_CLASSES):
    """Per-class mean (h, w, l) over a split; classes without instances fall back to priors."""
    means = []
    for name in class_names:
        dims = [lab.dims for labels in label_lists for lab in labels if lab.class_name == name]
        means.append(np.mean(dims, axis=0) if dims else np.asarray(CLASS_MEAN_DIMS[name]))
    return np.asarray(means, dtype=np.float64)


@dataclass
class Dataset:
    samples: list
    config: SyntheticConfig
    teacher_input: str = "dense"
    class_names: tuple = FOREGROUND_CLASSES
    mean_dims: np.ndarray | None = None
    tau: float = 0.3
    num_bins: int = 4
    _views: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.samples)

    def view(self, i, flip=False):
        key = (i, bool(flip))
        if key not in self._views:
            self._views[key] = self._make_view(self.samples[i], flip)
        return self._views[key]

    def target_priors(self):
        """Geometric-mean object depth and mean 2-D size (output cells) over the split."""
        depths, sizes = [], []
        for i in range(len(self)):
            t = self.view(i).targets
            depths.extend(t.depth)
            sizes.extend(t.size2d)
        if not depths:
            return None, None
        return float(np.exp(np.mean(np.log(depths)))), tuple(float(v) for v in np.mean(sizes, axis=0))

    def _make_view(self, s, flip):
        h, w = s.rgb.shape[1:]
        rgb, din, dense, labels, calib = s.rgb, s.depth_input, s.dense_depth, s.labels, s.calib
        if flip:
            rgb = np.ascontiguousarray(rgb[:, :, ::-1])
            din = np.ascontiguousarray(din[:, :, ::-1])
            dense = np.ascontiguousarray(dense[:, ::-1])
            labels = flip_labels(labels, w)
            calib = flip_calib(calib, w)
        size = (h // OUTPUT_STRIDE, w // OUTPUT_STRIDE)
        targets = encode_targets(labels, calib, size, OUTPUT_STRIDE, self.mean_dims,
                                 self.class_names, self.num_bins)
        of_masks = [build_masks(labels, (h, w), st, self.tau, calib=calib).m_of
                    for st in BLOCK_STRIDES]
        or_mask = build_masks(labels, (h, w), OUTPUT_STRIDE, self.tau, calib=calib).m_or
        aux = dense.reshape(size[0], OUTPUT_STRIDE, size[1], OUTPUT_STRIDE).mean(axis=(1, 3))
        return View(rgb, din, labels, calib, targets, of_masks, or_mask, aux)


def build_dataset(seeds, config=None, teacher_input_mode="dense", mean_dims=None, tau=0.3):
    config = config or SyntheticConfig()
    config.validate()
    samples = [make_sample(int(s), config, teacher_input_mode) for s in seeds]
    if mean_dims is None:
        mean_dims = class_mean_dims([s.labels for s in samples])
    return Dataset(samples, config, teacher_input_mode, mean_dims=mean_dims, tau=tau)


def benchmark_seeds(n_train=200, n_val=100, val_offset=100_000):
    """Scene seeds of the synthetic benchmark; validation seeds never overlap training."""
    return list(range(n_train)), list(range(val_offset, val_offset + n_val))
