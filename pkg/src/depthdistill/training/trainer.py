"""Teacher and student training loops."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..autograd import Tensor, backward, no_grad, ops
from ..detector.model import Detector, DetectorConfig, FusionModule
from ..errors import ArchMismatch, ConfigInvalid, Diverged, NonFinite
from ..losses import (
    LossWeights,
    auxiliary_depth_loss,
    loss_of,
    loss_or,
    loss_sf,
    loss_src,
    total_loss,
)
from .optim import AdamState, adam_step, lr_schedule
from .targets import EncodedTargets

SWITCHES = ("sf", "of", "or", "ff", "aux_depth")


@dataclass
class TrainConfig:
    epochs: int = 40
    base_lr: float = 1.25e-4
    decay_epochs: tuple = (24, 32)
    decay_factor: float = 0.1
    warmup_epochs: int = 2
    batch_size: int = 4
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    switches: dict = field(default_factory=lambda: {k: False for k in SWITCHES})
    teacher_input: str = "dense"
    regions: int = 8
    tau: float = 0.3
    flip: bool = True

    def validate(self):
        problems = []
        if self.epochs < 1:
            problems.append("epochs must be >= 1")
        if not self.base_lr >= 0 or not math.isfinite(self.base_lr):
            problems.append("base_lr must be finite and >= 0")
        d = list(self.decay_epochs)
        if any(b <= a for a, b in zip(d, d[1:])):
            problems.append("decay_epochs must be strictly increasing")
        if d and d[-1] >= self.epochs:
            problems.append("decay_epochs must be < epochs")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        unknown = set(self.switches) - set(SWITCHES)
        if unknown:
            problems.append(f"unknown switches {sorted(unknown)}")
        if problems:
            raise ConfigInvalid("; ".join(problems))

    def switch(self, name):
        return bool(self.switches.get(name, False))

    @property
    def distills(self):
        return any(self.switch(k) for k in ("sf", "of", "or"))

    def lr(self, epoch):
        return lr_schedule(epoch, self.base_lr, self.warmup_epochs, self.decay_epochs,
                           self.decay_factor)

    def to_dict(self):
        d = asdict(self)
        d["decay_epochs"] = list(self.decay_epochs)
        return d


@dataclass
class TrainResult:
    model: Detector
    fusion: FusionModule | None
    log: list
    steps: int


def _batch_arrays(views, kind):
    return np.stack([v.rgb if kind == "rgb" else v.depth_input for v in views])


class TeacherCache:
    """Frozen-teacher features and head maps, computed once per (sample, flip)."""

    def __init__(self, teacher, dataset):
        self.teacher = teacher
        self.dataset = dataset
        self.store = {}

    def get(self, keys):
        missing = [k for k in keys if k not in self.store]
        if missing:
            x = np.stack([self.dataset.view(*k).depth_input for k in missing])
            with no_grad():
                feats, heads = self.teacher(Tensor(x))
            for j, k in enumerate(missing):
                self.store[k] = ([b.data[j].copy() for b in feats.blocks[1:]],
                                 [h.data[j].copy() for h in heads.heads()])
        blocks = [Tensor(np.stack([self.store[k][0][i] for k in keys])) for i in range(3)]
        heads = [Tensor(np.stack([self.store[k][1][i] for k in keys])) for i in range(7)]
        return blocks, heads


def check_architecture(student, teacher):
    if student.manifest() != teacher.manifest():
        raise ArchMismatch("teacher and student parameter manifests differ")


def distill_terms(cfg, feats, heads, teacher_blocks, teacher_heads, views, fusion):
    """(l_sf, l_of, l_or) for the enabled switches; disabled terms are None."""
    s_blocks = feats.blocks[1:]
    if cfg.switch("ff") and fusion is not None:
        s_blocks = fusion(s_blocks)
    l_sf = loss_sf(s_blocks, teacher_blocks, cfg.regions) if cfg.switch("sf") else None
    l_of = None
    if cfg.switch("of"):
        masks = [np.stack([v.of_masks[i] for v in views]) for i in range(3)]
        l_of = loss_of(s_blocks, teacher_blocks, masks)
    l_or = None
    if cfg.switch("or"):
        l_or = loss_or(heads.heads(), teacher_heads, np.stack([v.or_mask for v in views]))
    return l_sf, l_of, l_or


def default_detector_config(dataset, cfg):
    depth, size = dataset.target_priors()
    return DetectorConfig(aux_depth=cfg.switch("aux_depth"), depth_prior=depth, size_prior=size)


def train(dataset, cfg, input_kind="rgb", teacher=None, detector_config=None, log_path=None,
          init_state=None, progress=None):
    """Shared loop: teachers use ``input_kind='depth'`` and no teacher."""
    cfg.validate()
    det_cfg = detector_config or default_detector_config(dataset, cfg)
    model = Detector(det_cfg, seed=cfg.seed)
    if init_state is not None:
        model.load_state_dict(init_state, strict=False)
    fusion = None
    cache = None
    if teacher is not None and cfg.distills:
        check_architecture(model, teacher)
        teacher.freeze()
        cache = TeacherCache(teacher, dataset)
        if cfg.switch("ff"):
            fusion = FusionModule(tuple(det_cfg.channels[1:]), seed=cfg.seed)
    elif cfg.distills:
        raise ConfigInvalid("distillation switches need a teacher")
    params = model.parameters() + (fusion.parameters() if fusion else [])
    trainable = [p for p in params if p.trainable]
    state = AdamState()
    rng = np.random.default_rng(cfg.seed)
    log = []
    writer = None
    fh = None
    step = 0
    try:
        for epoch in range(cfg.epochs):
            lr = cfg.lr(epoch)
            order = rng.permutation(len(dataset))
            flips = rng.random(len(dataset)) < 0.5 if cfg.flip else np.zeros(len(dataset), bool)
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                keys = [(int(i), bool(flips[i])) for i in idx]
                views = [dataset.view(*k) for k in keys]
                x = Tensor(_batch_arrays(views, input_kind))
                targets = EncodedTargets.stack([v.targets for v in views])
                feats, heads = model(x)
                src = loss_src(heads, targets, det_cfg.num_bins)
                l_src = src.total
                parts = dict(src.parts)
                if det_cfg.aux_depth:
                    aux_pred = ops.exp(ops.neg(heads.aux_depth))
                    aux_gt = np.stack([v.aux_depth for v in views])
                    aux = auxiliary_depth_loss(aux_pred, aux_gt, np.ones(aux_gt.shape, bool))
                    parts["aux_depth"] = float(aux.data)
                    l_src = l_src + aux
                l_sf = l_of = l_or = None
                if cache is not None:
                    t_blocks, t_heads = cache.get(keys)
                    l_sf, l_of, l_or = distill_terms(cfg, feats, heads, t_blocks, t_heads, views,
                                                     fusion)
                try:
                    report = total_loss(l_src, l_sf, l_of, l_or, cfg.weights, parts)
                except NonFinite as exc:
                    raise Diverged(f"step {step}: {exc}") from exc
                for p in trainable:
                    p.tensor.grad = None
                backward(report.tensor, [p.tensor for p in trainable])
                adam_step(trainable, state, lr)
                row = {"step": step, "epoch": epoch, "lr": lr, **report.row()}
                log.append(row)
                if log_path is not None:
                    if writer is None:
                        fh = open(log_path, "w", newline="")
                        writer = csv.DictWriter(fh, fieldnames=list(row), extrasaction="ignore")
                        writer.writeheader()
                    writer.writerow(row)
                step += 1
            if progress is not None:
                progress(epoch, log[-1])
    finally:
        if fh is not None:
            fh.close()
    return TrainResult(model, fusion, log, step)


def train_teacher(dataset, cfg, **kw):
    """Depth-input detector trained with the source loss only."""
    if cfg.distills:
        cfg = TrainConfig(**{**cfg.__dict__, "switches": {k: False for k in SWITCHES}})
    return train(dataset, cfg, input_kind="depth", **kw)


def train_student(dataset, teacher, cfg, **kw):
    """RGB detector trained under the weighted source + distillation objective."""
    return train(dataset, cfg, input_kind="rgb", teacher=teacher, **kw)
