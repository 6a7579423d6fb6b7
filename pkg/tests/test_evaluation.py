import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depthdistill.data_io import ObjectLabel, generate_synthetic_scene
from depthdistill.detector import Detection
from depthdistill.errors import InsufficientData
from depthdistill.evaluation import Box3D, EvalConfig, ap_r40, evaluate, iou_2d, iou_3d, iou_bev
from depthdistill.evaluation.analysis import (
    cross_model_detections,
    cross_model_eval,
    depth_error_fit,
    fit_line,
    format_table,
    scatter_csv,
    table_csv,
)

import oracles

CLASSES = ("Car", "Pedestrian", "Cyclist")


def random_pair(rng):
    a = Box3D((rng.uniform(-5, 5), rng.uniform(0, 2), rng.uniform(10, 30)),
              tuple(rng.uniform(0.5, 4.5, 3)), rng.uniform(-math.pi, math.pi))
    shift = rng.normal(scale=1.0, size=3)
    b = Box3D(tuple(np.array(a.center) + shift), tuple(rng.uniform(0.5, 4.5, 3)),
              rng.uniform(-math.pi, math.pi))
    return a, b


# iou ------------------------------------------------------------------------------

def test_identical_boxes():
    a = Box3D((1.0, 0.5, 12.0), (1.5, 1.6, 3.9), 0.3)
    assert iou_bev(a, a) == pytest.approx(1.0, abs=1e-12)
    assert iou_3d(a, a) == pytest.approx(1.0, abs=1e-12)


def test_rotated_unit_squares():
    a = Box3D((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), 0.0)
    b = Box3D((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), math.pi / 4)
    assert iou_bev(a, b) == pytest.approx(math.sqrt(2) / 2, abs=1e-12)


def test_half_vertical_overlap():
    a = Box3D((0.0, 0.0, 5.0), (2.0, 1.0, 1.0), 0.0)
    b = Box3D((0.0, 1.0, 5.0), (2.0, 1.0, 1.0), 0.0)
    assert iou_3d(a, b) == pytest.approx(1 / 3, abs=1e-12)


def test_disjoint_and_touching():
    a = Box3D((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), 0.0)
    assert iou_bev(a, Box3D((5.0, 0.0, 0.0), (1.0, 1.0, 1.0), 0.0)) == 0.0
    assert iou_bev(a, Box3D((1.0, 0.0, 0.0), (1.0, 1.0, 1.0), 0.0)) == 0.0
    assert iou_3d(a, Box3D((0.0, 1.0, 0.0), (1.0, 1.0, 1.0), 0.0)) == 0.0


@pytest.mark.parametrize("seed", range(40))
def test_bev_matches_monte_carlo(seed):
    a, b = random_pair(np.random.default_rng(seed))
    assert abs(iou_bev(a, b) - oracles.monte_carlo_iou_bev(a, b, 200_000, seed)) <= 1e-2


@pytest.mark.parametrize("seed", range(5))
def test_3d_matches_voxels(seed):
    a, b = random_pair(np.random.default_rng(100 + seed))
    assert abs(iou_3d(a, b) - oracles.voxel_iou_3d(a, b, 120)) <= 2e-2


def rigid(box, phi, t):
    c, s = math.cos(phi), math.sin(phi)
    x, y, z = box.center
    return Box3D((c * x + s * z + t[0], y + t[1], -s * x + c * z + t[2]), box.dims, box.rotation_y + phi)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.floats(-math.pi, math.pi),
       st.tuples(*[st.floats(-20, 20)] * 3))
def test_iou_symmetric_bounded_and_rigid_invariant(seed, phi, t):
    a, b = random_pair(np.random.default_rng(seed))
    for f in (iou_bev, iou_3d):
        v = f(a, b)
        assert 0.0 <= v <= 1.0
        assert f(b, a) == pytest.approx(v, abs=1e-9)
        assert f(rigid(a, phi, t), rigid(b, phi, t)) == pytest.approx(v, abs=1e-9)


def test_iou_2d():
    assert iou_2d((0, 0, 10, 10), (5, 0, 15, 10)) == pytest.approx(1 / 3)
    assert iou_2d((0, 0, 10, 10), (10, 0, 20, 10)) == 0.0


# ap ---------------------------------------------------------------------------------

def gt(box, cls="Car", occ=0, trunc=0.0, x=0.0, z=10.0, ry=0.0):
    return ObjectLabel(cls, trunc, occ, ry - math.atan2(x, z), tuple(box), (1.5, 1.6, 3.9),
                       (x, 1.0, z), ry)


def det_for(lab, score, class_id=0, ry=None):
    ry = lab.rotation_y if ry is None else ry
    return Detection(class_id, score, tuple(lab.box2d), lab.center3d.copy(), lab.dims, ry, 0.0)


def far_box(k):
    return (1000.0 + 60 * k, 0.0, 1050.0 + 60 * k, 50.0)


def test_perfect_detections_give_100():
    labs = [[gt((0, 0, 50, 50)), gt((100, 0, 150, 60), x=3.0)]]
    dets = [[det_for(lab, 1.0) for lab in labs[0]]]
    for metric in ("2d", "bev", "3d", "aos"):
        assert ap_r40(dets, labs, 0, "Car", metric=metric) == 100.0


def test_no_detections_give_zero():
    assert ap_r40([[]], [[gt((0, 0, 50, 50))]], 0, "Car") == 0.0


def test_half_recall_gives_50():
    labs = [[gt((0, 0, 50, 50)), gt((100, 0, 150, 60), x=3.0)]]
    assert ap_r40([[det_for(labs[0][0], 0.9)]], labs, 0, "Car", metric="2d") == 50.0


def test_no_ground_truth_is_nan():
    assert math.isnan(ap_r40([[]], [[]], 0, "Car"))
    assert math.isnan(ap_r40([[]], [[gt((0, 0, 50, 50), cls="Pedestrian")]], 0, "Car"))


def test_aos_with_opposite_heading_is_zero():
    labs = [[gt((0, 0, 50, 50))]]
    dets = [[det_for(labs[0][0], 1.0, ry=math.pi)]]
    assert ap_r40(dets, labs, 0, "Car", metric="aos") == pytest.approx(0.0, abs=1e-12)
    assert ap_r40(dets, labs, 0, "Car", metric="2d") == 100.0


def test_dontcare_overlap_is_not_a_false_positive():
    car = gt((0, 0, 50, 50))
    dc = ObjectLabel("DontCare", -1, -1, -10, (200, 0, 260, 50), (-1, -1, -1), (-1000, -1000, -1000), -10)
    inside = Detection(0, 0.95, (205.0, 0.0, 255.0, 50.0), np.zeros(3), (1.5, 1.6, 3.9), 0.0, 0.0)
    assert ap_r40([[inside, det_for(car, 0.5)]], [[car, dc]], 0, "Car", metric="2d") == 100.0


def test_van_is_neither_hit_nor_miss():
    car, van = gt((0, 0, 50, 50)), gt((100, 0, 150, 50), cls="Van", x=3.0)
    dets = [[det_for(van, 0.9), det_for(car, 0.5)]]
    assert ap_r40(dets, [[car, van]], 0, "Car", metric="2d") == 100.0


def test_difficulty_filters_by_height():
    short = gt((0, 0, 50, 30))  # 30 px: moderate/hard only
    labs = [[short]]
    dets = [[det_for(short, 0.9)]]
    assert math.isnan(ap_r40(dets, labs, 0, "Car", "easy", "2d"))
    assert ap_r40(dets, labs, 0, "Car", "moderate", "2d") == 100.0


def constructed_scenes(seed):
    """Detections that either copy a GT box exactly or sit far from every object."""
    rng = np.random.default_rng(seed)
    labels, dets, n_gt = [], [], 0
    scores = iter(rng.permutation(1000) / 1000.0 + 1e-3)
    for _ in range(int(rng.integers(1, 5))):
        k = int(rng.integers(0 if labels else 1, 5))
        labs = [gt((60 * i, 0, 60 * i + 50, 45 + 5 * i), x=2.0 * i) for i in range(k)]
        n_gt += k
        scene = []
        for i in rng.permutation(k)[: int(rng.integers(0, k + 1))]:
            scene.append(det_for(labs[i], float(next(scores))))
            if rng.uniform() < 0.3:
                scene.append(det_for(labs[i], float(next(scores))))
        for f in range(int(rng.integers(0, 4))):
            scene.append(Detection(0, float(next(scores)), far_box(f), np.zeros(3), (1.5, 1.6, 3.9),
                                   0.0, 0.0))
        labels.append(labs)
        dets.append(scene)
    return dets, labels, n_gt


def resolve_duplicates(dets, labels):
    """Hand rule: within a scene, the first (highest score) copy of a GT box is the hit."""
    out = []
    for scene, labs in zip(dets, labels):
        seen, flags = set(), []
        for d in sorted(scene, key=lambda d: -d.score):
            key = tuple(d.box2d)
            hit = any(tuple(lab.box2d) == key for lab in labs) and key not in seen
            seen.add(key)
            flags.append((d.score, hit))
        out.append(flags)
    return out


@pytest.mark.parametrize("seed", range(25))
def test_ap_equals_hand_enumeration(seed):
    dets, labels, n_gt = constructed_scenes(seed)
    expect = oracles.enumerated_ap(resolve_duplicates(dets, labels), n_gt)
    assert ap_r40(dets, labels, 0, "Car", metric="2d") == expect


def noisy_detections(seed, drop=0.2, n_fp=2):
    rng = np.random.default_rng(seed)
    scene = generate_synthetic_scene(seed)
    out = []
    for lab in scene.objects:
        if lab.is_dontcare or rng.uniform() < drop:
            continue
        cid = CLASSES.index(lab.class_name)
        c = lab.center3d + rng.normal(scale=[0.2, 0.05, 0.6])
        dims = tuple(np.array(lab.dims) * rng.uniform(0.9, 1.1, 3))
        box = tuple(np.array(lab.box2d) + rng.normal(scale=2.0, size=4))
        out.append(Detection(cid, float(rng.uniform(0.2, 1.0)), box, c, dims,
                             lab.rotation_y + rng.normal(scale=0.2), 0.5))
    for _ in range(n_fp):
        x0, y0 = rng.uniform(0, 250), rng.uniform(0, 50)
        out.append(Detection(int(rng.integers(0, 3)), float(rng.uniform(0, 0.6)),
                             (x0, y0, x0 + 40, y0 + 40), np.array([0.0, 0.0, 20.0]),
                             (1.5, 1.6, 3.9), 0.0, 0.5))
    out.sort(key=lambda d: -d.score)
    return out, [lab for lab in scene.objects]


@pytest.fixture(scope="module")
def synthetic_eval():
    dets, labels = zip(*(noisy_detections(s) for s in range(30)))
    return list(dets), list(labels), EvalConfig.for_focal(200.0)


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(["exp", "cube", "affine"]))
def test_ap_invariant_to_monotone_rescaling(synthetic_eval, kind):
    dets, labels, cfg = synthetic_eval
    f = {"exp": math.exp, "cube": lambda s: s ** 3, "affine": lambda s: 3 * s + 7}[kind]
    rescaled = [[Detection(d.class_id, f(d.score), d.box2d, d.center3d, d.dims, d.rotation_y,
                           d.depth_sigma) for d in scene] for scene in dets]
    for metric in ("2d", "bev"):
        assert (ap_r40(rescaled, labels, 0, "Car", metric=metric, threshold=0.5, cfg=cfg)
                == ap_r40(dets, labels, 0, "Car", metric=metric, threshold=0.5, cfg=cfg))


@pytest.mark.parametrize("scene", range(5))
def test_zero_score_false_positive_never_helps(synthetic_eval, scene):
    dets, labels, cfg = synthetic_eval
    extra = [list(s) for s in dets]
    extra[scene].append(Detection(0, 0.0, (5.0, 5.0, 60.0, 60.0), np.array([0.0, 0.0, 40.0]),
                                  (1.5, 1.6, 3.9), 0.0, 0.5))
    for metric in ("2d", "3d"):
        before = ap_r40(dets, labels, 0, "Car", metric=metric, threshold=0.5, cfg=cfg)
        assert ap_r40(extra, labels, 0, "Car", metric=metric, threshold=0.5, cfg=cfg) <= before


def test_evaluate_table_layout(synthetic_eval):
    dets, labels, cfg = synthetic_eval
    res = evaluate(dets, labels, CLASSES, cfg, thresholds={"Car": [0.7, 0.5]})
    assert set(res["Car"]) == {f"{m}@{t}" for m in ("3d", "bev", "2d", "aos") for t in ("0.7", "0.5")}
    assert set(res["Car"]["3d@0.5"]) == {"easy", "moderate", "hard"}
    text = format_table(res)
    header = next(line for line in text.splitlines() if "Mod." in line)
    assert header.index("Mod.") < header.index("Easy") < header.index("Hard")
    assert table_csv(res).splitlines()[0].split(",")[:3] == ["class", "metric", "Mod."]


# cross-model ----------------------------------------------------------------------------

def test_identity_selector_reproduces_plain(synthetic_eval):
    dets, labels, cfg = synthetic_eval
    other = [noisy_detections(1000 + s)[0] for s in range(30)]
    ident = {k: "A" for k in ("loc", "dim", "ori", "con")}
    assert cross_model_eval(dets, other, ident, labels, CLASSES, cfg) == evaluate(dets, labels, CLASSES, cfg)


def test_same_model_every_selector(synthetic_eval):
    dets, labels, cfg = synthetic_eval
    plain = evaluate(dets, labels, CLASSES, cfg, metrics=("3d",))
    for picks in itertools.product("AB", repeat=4):
        take = dict(zip(("loc", "dim", "ori", "con"), picks))
        got = evaluate(cross_model_detections(dets, dets, take), labels, CLASSES, cfg, metrics=("3d",))
        assert got == plain, take


def test_location_swap_takes_partner_centre():
    a, _ = noisy_detections(3, drop=0.0, n_fp=0)
    b = [Detection(d.class_id, d.score * 0.5, d.box2d, d.center3d + 1.0, d.dims, d.rotation_y + 0.1,
                   d.depth_sigma) for d in a]
    out = cross_model_detections([a], [b], {"loc": "B", "dim": "A", "ori": "A", "con": "A"})[0]
    for d in out:
        src = next(x for x in a if x.box2d == d.box2d)
        assert d.score == src.score and d.rotation_y == src.rotation_y
        assert np.array_equal(d.center3d, src.center3d + 1.0)


def test_location_swap_replays_bit_exactly(synthetic_eval):
    dets, labels, cfg = synthetic_eval
    other = [noisy_detections(2000 + s)[0] for s in range(30)]
    take = {"loc": "B", "dim": "A", "ori": "A", "con": "A"}
    assert repr(cross_model_eval(dets, other, take, labels, CLASSES, cfg)) == \
        repr(cross_model_eval(dets, other, take, labels, CLASSES, cfg))


def test_bad_selector():
    with pytest.raises(ValueError):
        cross_model_detections([[]], [[]], {"loc": "C"})


# depth-error fit ---------------------------------------------------------------------------

def test_fit_exact_line():
    x = [5.0, 10.0, 20.0, 35.0]
    assert fit_line(x, [2 * v + 1 for v in x]) == pytest.approx((2.0, 1.0), abs=1e-12)


def test_fit_constant_error():
    assert fit_line([5.0, 10.0, 20.0], [0.5, 0.5, 0.5]) == pytest.approx((0.0, 0.5), abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_fit_matches_normal_equations(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(5, 40, 50), rng.uniform(0, 3, 50)
    got = fit_line(x, y)
    want = oracles.normal_equation_fit(x.tolist(), y.tolist())
    assert got == pytest.approx(want, rel=1e-10, abs=1e-10)


def test_fit_needs_two_points():
    with pytest.raises(InsufficientData):
        fit_line([1.0], [1.0])
    with pytest.raises(InsufficientData):
        fit_line([2.0, 2.0], [1.0, 3.0])


def test_depth_error_fit_on_matched_detections():
    labs = [gt((60 * i, 0, 60 * i + 50, 50), x=float(i), z=10.0 + 5 * i) for i in range(4)]
    dets = []
    for lab in labs:
        d = det_for(lab, 0.9)
        d.center3d[2] += 0.1 * lab.location[2] + 0.5
        dets.append(d)
    (slope, intercept), pairs = depth_error_fit([dets], [labs], CLASSES)
    assert len(pairs) == 4
    assert (slope, intercept) == pytest.approx((0.1, 0.5), abs=1e-10)
    rows = scatter_csv(pairs).splitlines()
    assert rows[0] == "gt_depth,abs_depth_error" and len(rows) == 5


def test_depth_error_fit_without_matches():
    with pytest.raises(InsufficientData):
        depth_error_fit([[]], [[gt((0, 0, 50, 50))]], CLASSES)
