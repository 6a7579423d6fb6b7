"""Four-block backbone with a stride-4 fused map and seven detection heads.

Teacher and student are two instances of :class:`Detector` with the same
config; only the input differs (RGB vs. normalized depth).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..autograd import Parameter, Tensor, make_parameter, ops
from ..errors import ArchMismatch, ShapeMismatch

HEAD_NAMES = ("heatmap", "offset2d", "size2d", "offset3d", "depth", "dims", "orientation")
HEATMAP_PRIOR_BIAS = -2.19  # sigmoid(-2.19) ~ 0.1


@dataclass
class DetectorConfig:
    channels: tuple = (16, 32, 64, 128)
    fused_channels: int = 32
    head_channels: int = 16
    num_classes: int = 3
    num_bins: int = 4
    in_channels: int = 3
    aux_depth: bool = False
    # output biases set from training-split statistics (None leaves them at 0)
    depth_prior: float | None = None  # metres
    size_prior: tuple | None = None  # (w, h) in output-stride cells

    def head_channels_out(self):
        return {
            "heatmap": self.num_classes,
            "offset2d": 2,
            "size2d": 2,
            "offset3d": 2,
            "depth": 2,  # transformed depth logit + log sigma
            "dims": 3,
            "orientation": 4 * self.num_bins,
        }

    def to_dict(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        if self.size_prior is not None:
            d["size_prior"] = list(self.size_prior)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["channels"] = tuple(d["channels"])
        if d.get("size_prior") is not None:
            d["size_prior"] = tuple(d["size_prior"])
        return cls(**d)


@dataclass
class BackboneFeatures:
    blocks: list  # 4 tensors, strides 2, 4, 8, 16
    fused: Tensor  # stride 4

    strides: tuple = (2, 4, 8, 16)


@dataclass
class HeadOutputs:
    heatmap_logits: Tensor
    heatmap: Tensor
    offset2d: Tensor
    size2d: Tensor
    offset3d: Tensor
    depth: Tensor  # channel 0: depth logit, channel 1: log sigma
    dims: Tensor
    orientation: Tensor
    aux_depth: Tensor | None = None

    def head(self, name):
        return getattr(self, name)

    def heads(self):
        """The seven head maps in fixed order; the heatmap is post-sigmoid."""
        return [getattr(self, n) for n in HEAD_NAMES]

    @property
    def spatial_size(self):
        return self.heatmap.shape[-2:]


def depth_from_logit(x):
    """Inverse-sigmoid depth transform: 1/sigmoid(x) - 1 = exp(-x)."""
    return np.exp(-np.asarray(x, dtype=np.float64))


def logit_from_depth(d):
    return -np.log(np.asarray(d, dtype=np.float64))


def _he(rng, shape):
    fan_in = int(np.prod(shape[1:]))
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class Detector:
    def __init__(self, config=None, seed=0, zero=False):
        self.config = config or DetectorConfig()
        self.params: dict[str, Parameter] = {}
        rng = np.random.default_rng(seed)
        cfg = self.config

        def conv(name, oc, ic, k, bias_value=0.0):
            w = np.zeros((oc, ic, k, k)) if zero else _he(rng, (oc, ic, k, k))
            b = np.zeros(oc)
            if not zero:
                b[:] = bias_value
            self.params[name + ".w"] = make_parameter(name + ".w", w)
            self.params[name + ".b"] = make_parameter(name + ".b", b)

        prev = cfg.in_channels
        for i, c in enumerate(cfg.channels):
            conv(f"backbone.block{i + 1}.conv1", c, prev, 3)
            conv(f"backbone.block{i + 1}.conv2", c, c, 3)
            prev = c
        for i in (1, 2, 3):
            conv(f"backbone.fuse{i + 1}", cfg.fused_channels, cfg.channels[i], 1)
        outs = cfg.head_channels_out()
        for name in HEAD_NAMES:
            conv(f"head.{name}.conv3", cfg.head_channels, cfg.fused_channels, 3)
            bias = self._output_bias(name)
            conv(f"head.{name}.conv1", outs[name], cfg.head_channels, 1, bias_value=bias)
        if cfg.aux_depth:
            conv("aux_depth.conv3", cfg.head_channels, cfg.fused_channels, 3)
            conv("aux_depth.conv1", 1, cfg.head_channels, 1)

    def _output_bias(self, name):
        cfg = self.config
        if name == "heatmap":
            return HEATMAP_PRIOR_BIAS
        if name == "depth" and cfg.depth_prior is not None:
            return [float(logit_from_depth(cfg.depth_prior)), 0.0]
        if name == "size2d" and cfg.size_prior is not None:
            return list(cfg.size_prior)
        return 0.0

    # parameter bookkeeping -------------------------------------------------------
    def parameters(self):
        return [self.params[k] for k in sorted(self.params)]

    def tensors(self):
        return [p.tensor for p in self.parameters()]

    def state_dict(self):
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, state, strict=True):
        mine = {k: p.data.shape for k, p in self.params.items()}
        theirs = {k: np.shape(v) for k, v in state.items()}
        if strict and mine != theirs:
            raise ArchMismatch(f"parameter manifest differs: {sorted(set(mine) ^ set(theirs))}")
        for k, v in state.items():
            if k in self.params:
                if self.params[k].data.shape != np.shape(v):
                    raise ArchMismatch(f"{k}: {np.shape(v)} vs {self.params[k].data.shape}")
                self.params[k].tensor.data = np.array(v, dtype=np.float64)

    def manifest(self):
        """(name, shape) pairs of the shared architecture, excluding optional branches."""
        return [(k, p.data.shape) for k, p in sorted(self.params.items())
                if not k.startswith("aux_depth")]

    def freeze(self):
        for p in self.params.values():
            p.trainable = False
            p.tensor.requires_grad = False

    def zero_grad(self):
        for p in self.params.values():
            p.tensor.grad = None

    def _p(self, name):
        return self.params[name].tensor

    def _conv(self, x, name, stride=1):
        return ops.conv2d(x, self._p(name + ".w"), self._p(name + ".b"), stride=stride)

    # forward ---------------------------------------------------------------------
    def forward_backbone(self, x):
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if x.ndim == 3:
            x = ops.reshape(x, (1, *x.shape))
        n, c, h, w = x.shape
        if h % 16 or w % 16 or c != self.config.in_channels:
            raise ShapeMismatch("forward_backbone", x.shape, (n, self.config.in_channels, "16k", "16k"))
        blocks = []
        for i in range(len(self.config.channels)):
            x = ops.relu(self._conv(x, f"backbone.block{i + 1}.conv1", stride=2))
            x = ops.relu(self._conv(x, f"backbone.block{i + 1}.conv2"))
            blocks.append(x)
        fused = self._conv(blocks[1], "backbone.fuse2")
        fused = fused + ops.upsample_bilinear(self._conv(blocks[2], "backbone.fuse3"), 2)
        fused = fused + ops.upsample_bilinear(self._conv(blocks[3], "backbone.fuse4"), 4)
        return BackboneFeatures(blocks=blocks, fused=ops.relu(fused))

    def forward_heads(self, fused):
        cfg = self.config
        outs = cfg.head_channels_out()
        # the seven 3x3 convs run as one matmul over concatenated weights
        w = ops.concat([self._p(f"head.{n}.conv3.w") for n in HEAD_NAMES], axis=0)
        b = ops.concat([self._p(f"head.{n}.conv3.b") for n in HEAD_NAMES], axis=0)
        hidden = ops.relu(ops.conv2d(fused, w, b))
        res = {}
        ch = cfg.head_channels
        for i, name in enumerate(HEAD_NAMES):
            part = ops.slice(hidden, (slice(None), slice(i * ch, (i + 1) * ch)))
            res[name] = self._conv(part, f"head.{name}.conv1")
            assert res[name].shape[1] == outs[name]
        aux = None
        if cfg.aux_depth:
            aux = ops.relu(self._conv(fused, "aux_depth.conv3"))
            aux = self._conv(aux, "aux_depth.conv1")
        return HeadOutputs(
            heatmap_logits=res["heatmap"],
            heatmap=ops.sigmoid(res["heatmap"]),
            offset2d=res["offset2d"],
            size2d=res["size2d"],
            offset3d=res["offset3d"],
            depth=res["depth"],
            dims=res["dims"],
            orientation=res["orientation"],
            aux_depth=aux,
        )

    def __call__(self, x):
        feats = self.forward_backbone(x)
        return feats, self.forward_heads(feats.fused)


@dataclass
class FusionModule:
    """Attention-based fusion of a student block with an aligned partner map.

    For block i (i = 2, 3 in 0-based order of the last three blocks) the
    partner is the fused output of block i+1, projected to block i's channels
    and upsampled; the deepest block is only passed through its adapter.
    """

    channels: tuple = (32, 64, 128)
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.params:
            return
        rng = np.random.default_rng(self.seed + 7919)
        for i, c in enumerate(self.channels):
            self._add(f"fusion.adapt{i}.w", _he(rng, (c, c, 1, 1)))
            self._add(f"fusion.adapt{i}.b", np.zeros(c))
            if i + 1 < len(self.channels):
                self._add(f"fusion.project{i}.w", _he(rng, (c, self.channels[i + 1], 1, 1)))
                self._add(f"fusion.project{i}.b", np.zeros(c))
                self._add(f"fusion.att{i}.w", np.zeros((2, 2 * c, 1, 1)))
                self._add(f"fusion.att{i}.b", np.zeros(2))

    def _add(self, name, values):
        self.params[name] = make_parameter(name, values)

    def parameters(self):
        return [self.params[k] for k in sorted(self.params)]

    def state_dict(self):
        return {k: p.data.copy() for k, p in self.params.items()}

    def _p(self, name):
        return self.params[name].tensor

    def attention_logits(self, i, student, partner):
        return ops.conv2d(ops.concat([student, partner], axis=1), self._p(f"fusion.att{i}.w"),
                          self._p(f"fusion.att{i}.b"))

    def __call__(self, blocks):
        """Fuse the last three student blocks (shallow to deep order)."""
        out = [None] * len(blocks)
        k = len(blocks) - 1
        out[k] = ops.conv2d(blocks[k], self._p(f"fusion.adapt{k}.w"), self._p(f"fusion.adapt{k}.b"))
        for i in range(k - 1, -1, -1):
            x = ops.conv2d(blocks[i], self._p(f"fusion.adapt{i}.w"), self._p(f"fusion.adapt{i}.b"))
            y = ops.conv2d(out[i + 1], self._p(f"fusion.project{i}.w"), self._p(f"fusion.project{i}.b"))
            y = ops.upsample_bilinear(y, 2)
            out[i] = fuse_features(x, y, self.attention_logits(i, x, y))
        return out


def fuse_features(student, partner, logits):
    """Per-pixel softmax-weighted sum ``w_s * student + w_p * partner``.

    ``logits`` holds the two attention logit maps, shape (N, 2, H, W).
    """
    if student.shape != partner.shape:
        raise ShapeMismatch("fuse_features", partner.shape, student.shape)
    n, c, h, w = student.shape
    if logits.shape != (n, 2, h, w):
        raise ShapeMismatch("fuse_features.logits", logits.shape, (n, 2, h, w))
    weights = ops.softmax(logits, axis=1)
    ws = ops.expand(ops.slice(weights, (slice(None), slice(0, 1))), student.shape)
    wp = ops.expand(ops.slice(weights, (slice(None), slice(1, 2))), student.shape)
    return ws * student + wp * partner
