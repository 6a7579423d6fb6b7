import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from depthdistill.data_io import (
    CameraCalib,
    box_corners,
    SyntheticConfig,
    format_labels,
    generate_synthetic_scene,
    parse_calib,
    parse_labels,
    read_velodyne,
    write_velodyne,
)
from depthdistill.errors import (
    ConfigInvalid,
    FieldCount,
    MalformedNumber,
    MissingKey,
    TruncatedRecord,
)


def naive_calib(text):
    """Independent reader: split on the first colon, float() every token."""
    out = {}
    for line in text.strip().split("\n"):
        head, _, tail = line.partition(":")
        out[head] = [float(t) for t in tail.split()]
    return out


def naive_label(line):
    f = line.split(" ")
    return {
        "type": f[0], "trunc": float(f[1]), "occ": int(f[2]), "alpha": float(f[3]),
        "bbox": [float(v) for v in f[4:8]], "hwl": [float(v) for v in f[8:11]],
        "xyz": [float(v) for v in f[11:14]], "ry": float(f[14]),
    }


MINIMAL = ("P2: 1 0 0 0 0 1 0 0 0 0 1 0\nR0_rect: 1 0 0 0 1 0 0 0 1\n"
           "Tr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n")


def test_identity_calib():
    c = parse_calib(MINIMAL)
    assert np.array_equal(c.p2, np.hstack([np.eye(3), np.zeros((3, 1))]))
    assert np.array_equal(c.r0_rect, np.eye(3))


def test_missing_key():
    text = "P2: 1 0 0 0 0 1 0 0 0 0 1 0\nR0_rect: 1 0 0 0 1 0 0 0 1\n"
    with pytest.raises(MissingKey) as exc:
        parse_calib(text)
    assert exc.value.name == "Tr_velo_to_cam"


def test_malformed_number_reports_position():
    text = MINIMAL.replace("R0_rect: 1 0 0", "R0_rect: 1 0,5 0")
    with pytest.raises(MalformedNumber) as exc:
        parse_calib(text)
    assert (exc.value.line, exc.value.column) == (2, 2)


@pytest.mark.parametrize("token", ["nan", "inf", "1_0", "1,5", "0x10", ""])
def test_rejects_non_decimal_tokens(token):
    with pytest.raises(MalformedNumber):
        parse_calib(MINIMAL.replace("P2: 1 0", f"P2: {token or '.'} 0"))


def test_unknown_keys_ignored(kitti_dir):
    c = parse_calib((kitti_dir / "calib" / "000000.txt").read_text())
    assert c.p2.shape == (3, 4)


def test_sample_calib_matches_independent_reader(kitti_dir):
    text = (kitti_dir / "calib" / "000000.txt").read_text()
    ref = naive_calib(text)
    c = parse_calib(text)
    assert c.p2.reshape(-1).tolist() == ref["P2"]
    assert c.r0_rect.reshape(-1).tolist() == ref["R0_rect"]
    assert c.tr_velo_to_cam.reshape(-1).tolist() == ref["Tr_velo_to_cam"]
    assert len(ref["P2"]) + len(ref["R0_rect"]) + len(ref["Tr_velo_to_cam"]) == 33


def test_sample_calib_invariants(kitti_dir):
    c = parse_calib((kitti_dir / "calib" / "000000.txt").read_text())
    assert np.array_equal(c.p2[2, :3], [0, 0, 1])
    assert np.allclose(c.r0_rect @ c.r0_rect.T, np.eye(3), atol=1e-4)


def test_calib_text_round_trip(kitti_dir):
    c = parse_calib((kitti_dir / "calib" / "000000.txt").read_text())
    again = parse_calib(c.to_text())
    for a, b in ((c.p2, again.p2), (c.r0_rect, again.r0_rect), (c.tr_velo_to_cam, again.tr_velo_to_cam)):
        assert np.array_equal(a, b)


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=12, max_size=12))
def test_calib_round_trip_random(vals):
    c = CameraCalib(np.array(vals).reshape(3, 4), np.eye(3), np.array(vals).reshape(3, 4))
    again = parse_calib(c.to_text())
    assert np.array_equal(again.p2, c.p2)
    assert np.array_equal(again.tr_velo_to_cam, c.tr_velo_to_cam)


def test_empty_labels():
    assert parse_labels("") == []


def test_label_field_count():
    line = "Car 0.00 0 1.0 1 2 3 4 1.5 1.6 3.9 1 2"
    with pytest.raises(FieldCount) as exc:
        parse_labels("Car 0 0 0 0 0 1 1 1 1 1 0 0 10 0\n" + line)
    assert exc.value.line == 2


def test_sample_labels_match_split_oracle(kitti_dir):
    for name in ("000000.txt", "000001.txt"):
        text = (kitti_dir / "label_2" / name).read_text()
        labels = parse_labels(text)
        lines = [ln for ln in text.splitlines() if ln.strip()]
        assert len(labels) == len(lines)
        for lab, line in zip(labels, lines):
            ref = naive_label(line)
            assert lab.class_name == ref["type"]
            assert lab.truncation == ref["trunc"] and lab.occlusion == ref["occ"]
            assert lab.alpha == ref["alpha"] and lab.rotation_y == ref["ry"]
            assert list(lab.box2d) == ref["bbox"]
            assert list(lab.dims) == ref["hwl"]
            assert list(lab.location) == ref["xyz"]


def test_dontcare_rows_retained(kitti_dir):
    labels = parse_labels((kitti_dir / "label_2" / "000001.txt").read_text())
    assert [lab.is_dontcare for lab in labels] == [False, False, False, True, True]


def test_bad_label_leaves_no_partial_result():
    text = "Car 0 0 0 0 0 1 1 1 1 1 0 0 10 0\nCar 0 x 0 0 0 1 1 1 1 1 0 0 10 0\n"
    with pytest.raises(MalformedNumber):
        parse_labels(text)


def test_label_format_round_trip(kitti_dir):
    labels = parse_labels((kitti_dir / "label_2" / "000001.txt").read_text())
    again = parse_labels(format_labels(labels))
    assert [lab.class_name for lab in again] == [lab.class_name for lab in labels]
    for a, b in zip(labels, again):
        assert np.allclose(a.box2d, b.box2d) and np.allclose(a.location, b.location)


def test_velodyne_empty():
    assert len(read_velodyne(b"")) == 0


def test_velodyne_single_point():
    cloud = read_velodyne(struct.pack("<4f", 1.0, 2.0, 3.0, 0.5))
    assert cloud.points.tolist() == [[1.0, 2.0, 3.0, 0.5]]


def test_velodyne_truncated():
    with pytest.raises(TruncatedRecord):
        read_velodyne(bytes(17))


def test_sample_velodyne_matches_struct_oracle(kitti_dir):
    data = (kitti_dir / "velodyne" / "000000.bin").read_bytes()
    cloud = read_velodyne(data)
    ref = [struct.unpack_from("<4f", data, 16 * i) for i in range(len(data) // 16)]
    assert np.array_equal(cloud.points, np.array(ref, dtype=np.float64))
    assert write_velodyne(cloud) == data


# synthetic scenes -----------------------------------------------------------------

def test_synthetic_determinism():
    a = generate_synthetic_scene(0)
    b = generate_synthetic_scene(0)
    assert np.array_equal(a.rgb, b.rgb) and np.array_equal(a.gt_depth, b.gt_depth)
    assert [o.to_line() for o in a.objects] == [o.to_line() for o in b.objects]


def test_synthetic_seeds_differ():
    assert not np.array_equal(generate_synthetic_scene(0).rgb, generate_synthetic_scene(1).rgb)


def test_synthetic_empty_scene():
    cfg = SyntheticConfig(object_count=(0, 0))
    s = generate_synthetic_scene(3, cfg)
    assert s.objects == []
    assert (s.gt_depth > 0).all()


@pytest.mark.parametrize("bad", [dict(depth_range=(0.0, 10.0)), dict(depth_range=(10.0, 5.0)),
                                 dict(object_count=(3, 1)), dict(height=90)])
def test_synthetic_config_invalid(bad):
    with pytest.raises(ConfigInvalid):
        generate_synthetic_scene(0, SyntheticConfig(**bad))


@pytest.mark.parametrize("seed", range(12))
def test_synthetic_scene_invariants(seed):
    s = generate_synthetic_scene(seed)
    h, w = s.gt_depth.shape
    assert s.rgb.shape == (h, w, 3) and s.rgb.min() >= 0 and s.rgb.max() <= 1
    assert (s.gt_depth > 0).all()
    for lab in s.objects:
        uv, z = s.calib.rect_to_image(box_corners(lab.dims, lab.location, lab.rotation_y))
        assert (z > 0).all()
        assert (uv[:, 0] >= 0).all() and (uv[:, 0] <= w).all()
        assert (uv[:, 1] >= 0).all() and (uv[:, 1] <= h).all()
        # projected centre inside the 2-D box
        x0, y0, x1, y1 = lab.box2d
        c = s.calib.rect_to_image(lab.center3d[None, :])[0][0]
        assert x0 <= c[0] <= x1 and y0 <= c[1] <= y1
        assert -np.pi <= lab.rotation_y <= np.pi


@pytest.mark.parametrize("seed", range(12))
def test_synthetic_depth_at_centre(seed):
    s = generate_synthetic_scene(seed)
    for i, lab in enumerate(s.objects):
        c = s.calib.rect_to_image(lab.center3d[None, :])[0][0]
        u, v = int(np.floor(c[0])), int(np.floor(c[1]))
        nearer = [sil for sil in s.silhouettes if sil.index != i and sil.depth < lab.location[2]]
        d = s.gt_depth[v, u]
        if abs(d - lab.location[2]) > 1e-4:
            # only a nearer object may cover the centre pixel
            assert nearer and d < lab.location[2]
