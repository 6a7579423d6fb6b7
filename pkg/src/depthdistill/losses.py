"""Source detection loss, the three distillation losses and their combination."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor, ops
from .detector.model import HEAD_NAMES
from .errors import EmptyInput, NonFinite, ShapeMismatch

FOCAL_ALPHA = 2.0
FOCAL_BETA = 4.0
DISTILL_BLOCKS = (1, 2, 3)  # last three backbone blocks (0-based)


# affinity ----------------------------------------------------------------------

def pooling_matrix(size, regions):
    """Row r averages the input positions of adaptive bin r."""
    m = np.zeros((regions, size))
    for r in range(regions):
        lo = (r * size) // regions
        hi = -((-(r + 1) * size) // regions)
        m[r, lo:hi] = 1.0 / (hi - lo)
    return m


@dataclass
class AffinityMap:
    a: Tensor  # (N, K, K)

    @property
    def k(self):
        return self.a.shape[-1]


def region_vectors(features, regions):
    """Average-pool (N, C, H, W) into (N, K, C) region vectors, K = regions**2."""
    n, c, h, w = features.shape
    if h < regions or w < regions or c < 1:
        raise ShapeMismatch("affinity", features.shape, (n, "C>=1", f">={regions}", f">={regions}"))
    ph = Tensor(np.broadcast_to(pooling_matrix(h, regions), (n, c, regions, h)).copy())
    pw = Tensor(np.broadcast_to(pooling_matrix(w, regions).T, (n, c, w, regions)).copy())
    pooled = ops.matmul(ops.matmul(ph, features), pw)  # (N, C, R, R)
    return ops.transpose(ops.reshape(pooled, (n, c, regions * regions)), (0, 2, 1))


def affinity(features, regions=8):
    """Pairwise cosine similarity of pooled region vectors; zero vectors give 0."""
    v = ops.l2_normalize(region_vectors(features, regions), axis=-1)
    return AffinityMap(ops.matmul(v, ops.transpose(v, (0, 2, 1))))


def _block_regions(block, regions):
    return min(regions, block.shape[2], block.shape[3])


def loss_sf(student_blocks, teacher_blocks, regions=8):
    """Mean over the given block pairs of (1/K^2) * sum |A_t - A_s| (batch-averaged)."""
    if len(student_blocks) != len(teacher_blocks):
        raise ShapeMismatch("loss_sf", len(student_blocks), len(teacher_blocks))
    terms = []
    for s, t in zip(student_blocks, teacher_blocks):
        if s.shape != t.shape:
            raise ShapeMismatch("loss_sf", s.shape, t.shape)
        r = _block_regions(s, regions)
        a_s = affinity(s, r).a
        a_t = affinity(t, r).a
        terms.append(ops.mean(ops.abs(ops.sub(a_t, a_s))))
    return _mean_terms(terms)


def _mean_terms(terms):
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


# masks -------------------------------------------------------------------------

@dataclass
class ForegroundMasks:
    m_of: np.ndarray  # (H, W) bool
    m_or: np.ndarray  # (H, W) bool

    @property
    def n_pos(self):
        return int(self.m_of.sum())


def box_fill(box2d, stride, shape):
    """Cells floor(x1/s)..floor(x2/s) by floor(y1/s)..floor(y2/s), clipped."""
    h, w = shape
    x0 = max(int(math.floor(box2d[0] / stride)), 0)
    y0 = max(int(math.floor(box2d[1] / stride)), 0)
    x1 = min(int(math.floor(box2d[2] / stride)), w - 1)
    y1 = min(int(math.floor(box2d[3] / stride)), h - 1)
    m = np.zeros(shape, dtype=bool)
    if x1 >= x0 and y1 >= y0:
        m[y0:y1 + 1, x0:x1 + 1] = True
    return m


def object_center_cell(lab, stride, calib=None):
    """Integer feature cell of the projected 3-D centre (or of the 2-D box centre)."""
    if calib is not None:
        uv, _ = calib.rect_to_image(lab.center3d[None, :])
        u, v = uv[0]
    else:
        u = (lab.box2d[0] + lab.box2d[2]) / 2.0
        v = (lab.box2d[1] + lab.box2d[3]) / 2.0
    return int(math.floor(u / stride)), int(math.floor(v / stride))


def gaussian_response(lab, stride, shape, center, sigma_div=6.0):
    """exp(-((px-cx)^2 + (py-cy)^2 * aspect) / (2 sigma_b^2)) over the feature grid."""
    bw = (lab.box2d[2] - lab.box2d[0]) / stride
    bh = (lab.box2d[3] - lab.box2d[1]) / stride
    sigma = math.hypot(bw, bh) / sigma_div
    aspect = (bw / bh) ** 2
    ys, xs = np.mgrid[0:shape[0], 0:shape[1]]
    cx, cy = center
    return np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2 * aspect) / (2.0 * sigma * sigma))


def build_masks(labels, image_size, stride, tau=0.3, sigma_div=6.0, calib=None):
    h, w = image_size
    if h % stride or w % stride:
        raise ShapeMismatch("build_masks", image_size, f"multiples of {stride}")
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    shape = (h // stride, w // stride)
    m_of = np.zeros(shape, dtype=bool)
    m_or = np.zeros(shape, dtype=bool)
    dontcare = np.zeros(shape, dtype=bool)
    for lab in labels:
        if lab.is_dontcare:
            dontcare |= box_fill(lab.box2d, stride, shape)
            continue
        m_of |= box_fill(lab.box2d, stride, shape)
        cx, cy = object_center_cell(lab, stride, calib)
        resp = gaussian_response(lab, stride, shape, (cx, cy), sigma_div)
        m_or |= resp >= tau
        if 0 <= cx < shape[1] and 0 <= cy < shape[0]:
            m_or[cy, cx] = True
    return ForegroundMasks(m_of & ~dontcare, m_or & ~dontcare)


# feature and result distillation -------------------------------------------------

def _masked_pixels(x, mask):
    """Gather (M, C) rows of an (N, C, H, W) tensor at the true cells of an (N, H, W) mask."""
    n_idx, y_idx, x_idx = np.nonzero(mask)
    return ops.index(x, (n_idx, slice(None), y_idx, x_idx))


def loss_of(student_blocks, teacher_blocks, masks):
    """Mean over blocks of (1/N_pos) * sum over masked cells of ||F_s - F_t||^2.

    ``masks`` holds one (N, H_i, W_i) boolean array per block.
    """
    terms = []
    for s, t, m in zip(student_blocks, teacher_blocks, masks):
        if s.shape != t.shape:
            raise ShapeMismatch("loss_of", s.shape, t.shape)
        if m.shape != (s.shape[0], *s.shape[2:]):
            raise ShapeMismatch("loss_of.mask", m.shape, (s.shape[0], *s.shape[2:]))
        n_pos = int(m.sum())
        if n_pos == 0:
            terms.append(Tensor(np.array(0.0)))
            continue
        diff = ops.sub(_masked_pixels(s, m), _masked_pixels(t, m))
        terms.append(ops.sum(ops.square(diff)) * (1.0 / n_pos))
    return _mean_terms(terms)


def loss_or(student_heads, teacher_heads, mask):
    """Sum over the seven heads of the masked mean absolute difference."""
    if len(student_heads) != len(teacher_heads):
        raise ShapeMismatch("loss_or", len(student_heads), len(teacher_heads))
    n_sel = int(mask.sum())
    if n_sel == 0:
        return Tensor(np.array(0.0))
    total = None
    for s, t in zip(student_heads, teacher_heads):
        if s.shape != t.shape:
            raise ShapeMismatch("loss_or", s.shape, t.shape)
        term = ops.mean(ops.abs(ops.sub(_masked_pixels(s, mask), _masked_pixels(t, mask))))
        total = term if total is None else total + term
    return total


# source loss -------------------------------------------------------------------

def focal_loss(logits, target, alpha=FOCAL_ALPHA, beta=FOCAL_BETA):
    """Penalty-reduced pixel focal loss, normalised by the number of peaks."""
    if logits.shape != target.shape:
        raise ShapeMismatch("focal_loss", target.shape, logits.shape)
    pos = (target == 1.0).astype(np.float64)
    neg_w = (1.0 - pos) * (1.0 - target) ** beta
    p = ops.sigmoid(logits)
    one_minus_p = ops.sigmoid(ops.neg(logits))
    pos_term = ops.mul(ops.mul(_pow(one_minus_p, alpha), ops.neg(ops.log_sigmoid(logits))),
                       Tensor(pos))
    neg_term = ops.mul(ops.mul(_pow(p, alpha), ops.neg(ops.log_sigmoid(ops.neg(logits)))),
                       Tensor(neg_w))
    n_pos = max(float(pos.sum()), 1.0)
    return ops.sum(pos_term + neg_term) * (1.0 / n_pos)


def _pow(x, k):
    if k == 2.0:
        return ops.square(x)
    return ops.exp(ops.mul(ops.log(x), k))


def laplacian_depth_loss(depth, target, log_sigma):
    """sqrt(2) * exp(-log_sigma) * |d - d*| + log_sigma, averaged."""
    err = ops.abs(ops.sub(depth, Tensor(target)))
    term = ops.mul(ops.mul(ops.exp(ops.neg(log_sigma)), err), math.sqrt(2.0)) + log_sigma
    return ops.mean(term)


def multibin_loss(orient, bins, residuals, num_bins):
    """Per-bin binary cross-entropy plus L1 on the target bin's (sin, cos).

    ``orient`` is (M, 4B): B logit pairs followed by B (sin, cos) pairs.
    """
    m = orient.shape[0]
    rows = np.arange(m)
    neg_logit = ops.index(orient, (slice(None), slice(0, 2 * num_bins, 2)))
    pos_logit = ops.index(orient, (slice(None), slice(1, 2 * num_bins, 2)))
    log_odds = ops.sub(pos_logit, neg_logit)  # (M, B)
    onehot = np.zeros((m, num_bins))
    onehot[rows, bins] = 1.0
    sign = Tensor(2.0 * onehot - 1.0)
    ce = ops.mean(ops.neg(ops.log_sigmoid(ops.mul(log_odds, sign))))
    sin_idx = 2 * num_bins + 2 * np.asarray(bins)
    pred = ops.concat([ops.reshape(ops.index(orient, (rows, sin_idx)), (m, 1)),
                       ops.reshape(ops.index(orient, (rows, sin_idx + 1)), (m, 1))], axis=1)
    tgt = np.stack([np.sin(residuals), np.cos(residuals)], axis=1)
    reg = ops.mean(ops.abs(ops.sub(pred, Tensor(tgt))))
    return ce + reg


def _gather_centers(x, centers):
    """(M, C) values of an (N, C, H, W) tensor at (batch, y, x) index arrays."""
    b, ys, xs = centers
    return ops.index(x, (b, slice(None), ys, xs))


@dataclass
class SourceLoss:
    total: Tensor
    parts: dict = field(default_factory=dict)  # head name -> float


def loss_src(heads, targets, num_bins=4):
    """Detection loss of ``heads`` against batched ``targets`` (see training.targets)."""
    if heads.heatmap_logits.shape != targets.heatmap.shape:
        raise ShapeMismatch("loss_src.heatmap", heads.heatmap_logits.shape, targets.heatmap.shape)
    terms = {"heatmap": focal_loss(heads.heatmap_logits, targets.heatmap)}
    if targets.count:
        idx = targets.index_arrays()
        for name in ("offset2d", "size2d", "offset3d"):
            pred = _gather_centers(getattr(heads, name), idx)
            terms[name] = ops.mean(ops.abs(ops.sub(pred, Tensor(getattr(targets, name)))))
        dep = _gather_centers(heads.depth, idx)  # (M, 2)
        logit = ops.index(dep, (slice(None), 0))
        log_sigma = ops.index(dep, (slice(None), 1))
        terms["depth"] = laplacian_depth_loss(ops.exp(ops.neg(logit)), targets.depth, log_sigma)
        dims = _gather_centers(heads.dims, idx)
        terms["dims"] = ops.mean(ops.abs(ops.sub(dims, Tensor(targets.dims))))
        ori = _gather_centers(heads.orientation, idx)
        terms["orientation"] = multibin_loss(ori, targets.bins, targets.residuals, num_bins)
    total = None
    for name in HEAD_NAMES:
        if name in terms:
            total = terms[name] if total is None else total + terms[name]
    return SourceLoss(total, {k: float(v.data) for k, v in terms.items()})


def auxiliary_depth_loss(pred_depth, gt_depth, valid):
    """L1 between predicted and ground-truth depth over valid pixels.

    ``pred_depth``: (N, 1, H, W) tensor in metres; ``gt_depth``/``valid``: (N, H, W).
    """
    valid = np.asarray(valid, dtype=bool)
    if pred_depth.shape != (valid.shape[0], 1, *valid.shape[1:]):
        raise ShapeMismatch("auxiliary_depth_loss", pred_depth.shape, (valid.shape[0], 1, *valid.shape[1:]))
    if not valid.any():
        raise EmptyInput("no valid depth pixels")
    n_idx, y_idx, x_idx = np.nonzero(valid)
    pred = ops.index(pred_depth, (n_idx, 0, y_idx, x_idx))
    return ops.mean(ops.abs(ops.sub(pred, Tensor(np.asarray(gt_depth)[n_idx, y_idx, x_idx]))))


# combination -------------------------------------------------------------------

@dataclass(frozen=True)
class LossWeights:
    sf: float = 1.0
    of: float = 1.0
    or_: float = 1.0

    def __post_init__(self):
        for v in (self.sf, self.of, self.or_):
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"loss weight must be finite and nonnegative, got {v}")


@dataclass
class LossReport:
    l_src: float
    l_sf: float
    l_of: float
    l_or: float
    total: float
    weights: LossWeights
    src_parts: dict = field(default_factory=dict)
    tensor: Tensor | None = field(default=None, repr=False)

    def row(self):
        return {"l_src": self.l_src, **{f"src_{k}": v for k, v in self.src_parts.items()},
                "l_sf": self.l_sf, "l_of": self.l_of, "l_or": self.l_or, "total": self.total}


def _value(x):
    if x is None:
        return 0.0
    return float(x.data) if isinstance(x, Tensor) else float(x)


def total_loss(l_src, l_sf, l_of, l_or, weights=None, src_parts=None):
    """Weighted sum; terms with zero weight stay out of the graph."""
    weights = weights or LossWeights()
    vals = {"l_src": _value(l_src), "l_sf": _value(l_sf), "l_of": _value(l_of), "l_or": _value(l_or)}
    for name, v in vals.items():
        if not math.isfinite(v):
            raise NonFinite(name)
    total = vals["l_src"] + weights.sf * vals["l_sf"] + weights.of * vals["l_of"] + weights.or_ * vals["l_or"]
    t = l_src if isinstance(l_src, Tensor) else None
    for term, w in ((l_sf, weights.sf), (l_of, weights.of), (l_or, weights.or_)):
        if w != 0.0 and isinstance(term, Tensor) and t is not None:
            t = t + term * w
    return LossReport(vals["l_src"], vals["l_sf"], vals["l_of"], vals["l_or"], total, weights,
                      dict(src_parts or {}), t)
