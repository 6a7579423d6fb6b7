import json
from pathlib import Path

import numpy as np
import pytest

from depthdistill import cli
from depthdistill import config as cfgmod
from depthdistill.data_io import read_velodyne
from depthdistill.errors import ConfigInvalid
from depthdistill.geom_depth import decode_depth_png16

KITTI = Path(__file__).parent / "data" / "kitti"

TINY = [
    "data.height=32", "data.width=96", "data.focal=70", "data.train_scenes=4", "data.val_scenes=2",
    "data.min_objects=1", "data.max_objects=2", "train.epochs=1", "train.decay_epochs=",
    "train.warmup_epochs=0", "train.batch_size=2", "loss.regions=2",
]


def sets(*extra):
    out = []
    for s in TINY + list(extra):
        out += ["--set", s]
    return out


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def tree_digest(root):
    """Hashes of every file except the manifest (which records wall-clock time)."""
    return {str(p.relative_to(root)): cli.sha256_file(p) for p in sorted(Path(root).rglob("*"))
            if p.is_file() and p.name != "manifest.json"}


# config --------------------------------------------------------------------------

def test_defaults_resolve():
    cfg = cfgmod.resolve()
    assert cfg["train.epochs"] == 40 and cfg["train.base_lr"] == 1.25e-4
    assert cfg["train.decay_epochs"] == (24, 32)


def test_precedence_cli_over_file():
    cfg = cfgmod.resolve("train.epochs = 30\ntrain.batch_size = 8\n", ["train.epochs=35"])
    assert cfg["train.epochs"] == 35 and cfg["train.batch_size"] == 8


def test_all_problems_reported_together():
    with pytest.raises(ConfigInvalid) as exc:
        cfgmod.resolve("bogus.key = 1\nloss.tau = 2\n", ["loss.lambda_sf=-1", "noequals"])
    msg = str(exc.value)
    for fragment in ("bogus.key", "loss.tau", "loss.lambda_sf", "noequals"):
        assert fragment in msg


def test_dump_round_trips():
    cfg = cfgmod.resolve(None, ["train.decay_epochs=10,20", "switch.sf=true"])
    assert cfgmod.resolve(cfgmod.dump(cfg)) == cfg


# prepare ---------------------------------------------------------------------------

def test_prepare_default_split_counts(tmp_path, capsys):
    code, out, _ = run(["prepare", "--out", tmp_path / "d"], capsys)
    assert code == 0
    d = tmp_path / "d"
    train = (d / "train.txt").read_text().split()
    val = (d / "val.txt").read_text().split()
    assert len(train) == 200 and len(val) == 100 and not set(train) & set(val)
    assert len(list((d / "depth").glob("*_dense.png"))) == 300
    priors = json.loads((d / "priors.json").read_text())
    assert set(priors) == {"Car", "Pedestrian", "Cyclist"}
    assert all(len(v) == 3 and min(v) > 0 for v in priors.values())


def test_prepare_is_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        assert run(["prepare", "--out", tmp_path / name] + sets(), capsys)[0] == 0
    a, b = tree_digest(tmp_path / "a"), tree_digest(tmp_path / "b")
    assert a == b and len(a) == 6 * 2 + 3


def test_prepare_manifest(tmp_path, capsys):
    run(["prepare", "--out", tmp_path] + sets(), capsys)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["command"] == "prepare"
    assert "train.epochs = 1" in man["config"]
    for path, digest in man["outputs"].items():
        assert cli.sha256_file(path) == digest


def test_prepare_kitti(tmp_path, capsys):
    code, out, _ = run(["prepare", "--kitti", KITTI, "--out", tmp_path], capsys)
    assert code == 0
    ids = (tmp_path / "index.txt").read_text().split()
    assert ids == sorted(p.stem for p in (KITTI / "velodyne").glob("*.bin"))
    dense = decode_depth_png16((tmp_path / "depth" / f"{ids[0]}_dense.png").read_bytes())
    assert dense.valid.all() and (dense.depth > 0).all()


def test_prepare_empty_kitti_dir(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    code, out, err = run(["prepare", "--kitti", tmp_path / "empty", "--out", tmp_path / "o"], capsys)
    assert code == 2
    assert err.count("\n") == 1 and err.startswith("error: EmptyInput:")


# train / eval -------------------------------------------------------------------------

def test_train_needs_seed(tmp_path, capsys):
    code, _, err = run(["train", "--phase", "teacher", "--out", tmp_path] + sets(), capsys)
    assert code == 2 and "MissingSeed" in err


def test_student_without_teacher_lists_every_problem(tmp_path, capsys):
    code, _, err = run(["train", "--phase", "student", "--seed", 0, "--out", tmp_path]
                       + sets("loss.tau=5"), capsys)
    assert code == 2 and err.count("\n") == 1
    assert "ConfigInvalid" in err and "--teacher" in err and "loss.tau" in err


def test_missing_teacher_checkpoint(tmp_path, capsys):
    code, _, err = run(["train", "--phase", "student", "--seed", 0, "--teacher", tmp_path / "nope.ckpt",
                        "--out", tmp_path] + sets(), capsys)
    assert code == 2 and "teacher checkpoint not found" in err


@pytest.fixture(scope="module")
def teacher_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("teacher")
    assert cli.main(["train", "--phase", "teacher", "--seed", "0", "--out", str(out)] + sets()) == 0
    return out


def test_teacher_artifacts(teacher_run):
    assert (teacher_run / "model.ckpt").exists()
    rows = (teacher_run / "train_log.csv").read_text().splitlines()
    assert rows[0].startswith("step,") and len(rows) == 1 + 2
    man = json.loads((teacher_run / "manifest.json").read_text())
    assert man["command"] == "train --phase teacher --seed 0"


def test_teacher_lambda_warning(tmp_path, capsys):
    code, out, err = run(["train", "--phase", "teacher", "--seed", 0, "--out", tmp_path]
                         + sets("loss.lambda_sf=2"), capsys)
    assert code == 0 and "loss weights are ignored" in err


def test_train_reproducible_from_seed(teacher_run, tmp_path, capsys):
    run(["train", "--phase", "teacher", "--seed", 0, "--out", tmp_path] + sets(), capsys)
    assert cli.sha256_file(tmp_path / "model.ckpt") == cli.sha256_file(teacher_run / "model.ckpt")


def test_student_and_eval(teacher_run, tmp_path, capsys):
    code, out, _ = run(["train", "--phase", "student", "--seed", 1, "--teacher", teacher_run / "model.ckpt",
                        "--out", tmp_path / "s"] + sets("switch.sf=true", "switch.ff=true"), capsys)
    assert code == 0 and "l_sf=" in out
    code, out, _ = run(["eval", "--checkpoint", tmp_path / "s" / "model.ckpt", "--render", 1,
                        "--out", tmp_path / "e"] + sets(), capsys)
    assert code == 0
    header = next(line for line in out.splitlines() if "Mod." in line)
    assert header.index("Mod.") < header.index("Easy") < header.index("Hard")
    for name in ("report.txt", "report.csv", "overlay_000.png", "bev_000.png", "manifest.json"):
        assert (tmp_path / "e" / name).exists()


def test_cross_eval_with_itself_equals_plain(teacher_run, tmp_path, capsys):
    ckpt = teacher_run / "model.ckpt"
    code, _, _ = run(["eval", "--checkpoint", ckpt, "--cross", ckpt, "--take", "loc=B,dim=B,ori=A,con=B",
                      "--out", tmp_path] + sets(), capsys)
    assert code == 0
    assert (tmp_path / "cross.csv").read_text() == (tmp_path / "report.csv").read_text()


def test_eval_missing_checkpoint(tmp_path, capsys):
    code, _, err = run(["eval", "--checkpoint", tmp_path / "x.ckpt", "--out", tmp_path] + sets(), capsys)
    assert code == 2 and err.startswith("error: MissingFile:")


# ablate -----------------------------------------------------------------------------

def test_ablation_grid_has_nine_suffixed_runs(tmp_path):
    plan = cli.ablation_plan(list(cli.ABLATION_ROWS), tmp_path)
    assert [r for r, _, _ in plan] == list("abcdefghi")
    assert len({p for _, _, p in plan}) == 9 and all(p.name == f"row_{r}" for r, _, p in plan)
    assert plan[0][1] == [] and plan[-1][1] == [f"switch.{k}=true" for k in ("sf", "of", "or", "ff")]


def test_ablate_dry_run(teacher_run, tmp_path, capsys):
    code, out, _ = run(["ablate", "--teacher", teacher_run / "model.ckpt", "--seed", 0, "--dry-run",
                        "--out", tmp_path] + sets(), capsys)
    assert code == 0 and len(out.splitlines()) == 9
    assert not any(tmp_path.iterdir())


def test_ablate_unknown_row(teacher_run, tmp_path, capsys):
    code, _, err = run(["ablate", "--teacher", teacher_run / "model.ckpt", "--seed", 0, "--rows", "z",
                        "--dry-run", "--out", tmp_path], capsys)
    assert code == 2 and "unknown ablation row" in err


# depth tools ----------------------------------------------------------------------------

def test_depth_tools_chain(tmp_path, capsys):
    calib = sorted((KITTI / "calib").glob("*.txt"))[0]
    velo = KITTI / "velodyne" / f"{calib.stem}.bin"
    sparse, dense, thin = tmp_path / "s.png", tmp_path / "d.png", tmp_path / "t.bin"
    assert run(["depth-tools", "project", "--calib", calib, "--velodyne", velo, "--width", 1242,
                "--height", 375, "--out", sparse], capsys)[0] == 0
    assert run(["depth-tools", "densify", "--input", sparse, "--out", dense], capsys)[0] == 0
    assert run(["depth-tools", "beams", "--velodyne", velo, "--keep-every", 2, "--out", thin], capsys)[0] == 0
    s = decode_depth_png16(sparse.read_bytes())
    d = decode_depth_png16(dense.read_bytes())
    assert d.valid.all() and np.array_equal(d.depth[s.valid], s.depth[s.valid])
    assert 0 < len(read_velodyne(thin.read_bytes()).points) < len(read_velodyne(velo.read_bytes()).points)


def test_output_root_env(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(cli.OUT_ROOT_ENV, str(tmp_path))
    monkeypatch.chdir(tmp_path)
    assert run(["prepare", "--out", "rel"] + sets(), capsys)[0] == 0
    assert (tmp_path / "rel" / "train.txt").exists()
