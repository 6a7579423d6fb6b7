"""Command-line entry point: prepare, train, eval, ablate, depth-tools."""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from . import config as cfgmod
from .autograd import load_checkpoint, save_checkpoint
from .data_io import (
    generate_synthetic_scene,
    parse_calib,
    parse_labels,
    read_velodyne,
    synthetic_lidar,
    write_velodyne,
)
from .data_io.kitti import FOREGROUND_CLASSES
from .detector.model import Detector, DetectorConfig
from .errors import ArchMismatch, ConfigInvalid, DepthDistillError, EmptyInput
from .evaluation import analysis, render
from .evaluation.benchmark import DEFAULT_THRESHOLDS, eval_config_for, full_report, predict
from .geom_depth import BeamModel, decode_depth_png16, densify, encode_depth_png16, project_lidar, simulate_beams
from .training import benchmark_seeds, build_dataset, train_student, train_teacher
from .training.data import class_mean_dims

OUT_ROOT_ENV = "DEPTHDISTILL_OUT_ROOT"

ABLATION_ROWS = {
    "a": (),
    "b": ("sf",),
    "c": ("of",),
    "d": ("or",),
    "e": ("sf", "of"),
    "f": ("sf", "or"),
    "g": ("of", "or"),
    "h": ("sf", "of", "or"),
    "i": ("sf", "of", "or", "ff"),
}


class CliError(Exception):
    def __init__(self, kind, message):
        super().__init__(message)
        self.kind = kind


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def out_dir(path):
    p = Path(path)
    root = os.environ.get(OUT_ROOT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    p.mkdir(parents=True, exist_ok=True)
    return p


def atomic_write(path, data):
    path = Path(path)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_bytes(data if isinstance(data, bytes) else data.encode())
    os.replace(tmp, path)


def write_manifest(out, command, resolved, inputs, outputs, started):
    missing = [p for p in outputs if not Path(p).exists()]
    if missing:
        raise CliError("MissingOutput", f"not written: {missing}")
    manifest = {
        "command": command,
        "config": resolved,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {str(p): sha256_file(p) for p in outputs},
        "version": __version__,
        "wall_clock_s": round(time.time() - started, 3),
    }
    atomic_write(Path(out) / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True))


def load_config(args):
    text = Path(args.config).read_text() if getattr(args, "config", None) else None
    return cfgmod.resolve(text, args.set or [])


def datasets_from(cfg, mean_dims=None):
    syn = cfgmod.synthetic_config(cfg)
    tr, va = benchmark_seeds(cfg["data.train_scenes"], cfg["data.val_scenes"], cfg["data.val_offset"])
    mode = cfg["train.teacher_input"]
    dtr = build_dataset(tr, syn, mode, mean_dims=mean_dims, tau=cfg["loss.tau"])
    dva = build_dataset(va, syn, mode, mean_dims=dtr.mean_dims, tau=cfg["loss.tau"])
    return dtr, dva


def load_model(path, expect=None):
    if not Path(path).exists():
        raise CliError("MissingFile", f"checkpoint not found: {path}")
    state, meta = load_checkpoint(str(path))
    det_cfg = DetectorConfig.from_dict(meta.get("detector", DetectorConfig().to_dict()))
    model = Detector(det_cfg, seed=0)
    model.load_state_dict({k: v for k, v in state.items() if not k.startswith("fusion.")})
    if expect is not None and model.manifest() != expect.manifest():
        raise ArchMismatch(f"{path} does not match the expected architecture")
    return model, meta


# commands ----------------------------------------------------------------------

def cmd_prepare(args):
    started = time.time()
    out = out_dir(args.out)
    outputs = []
    if args.kitti:
        return _prepare_kitti(args, out, started)
    cfg = load_config(args)
    syn = cfgmod.synthetic_config(cfg)
    tr, va = benchmark_seeds(cfg["data.train_scenes"], cfg["data.val_scenes"], cfg["data.val_offset"])
    depth_dir = out / "depth"
    depth_dir.mkdir(exist_ok=True)
    train_scenes = []
    for split, seeds in (("train", tr), ("val", va)):
        for seed in seeds:
            scene = generate_synthetic_scene(seed, syn)
            if split == "train":
                train_scenes.append(scene)
            sparse = project_lidar(synthetic_lidar(scene), scene.calib, syn.width, syn.height)
            for kind, dmap in (("sparse", sparse), ("dense", densify(sparse))):
                p = depth_dir / f"{seed:06d}_{kind}.png"
                atomic_write(p, encode_depth_png16(dmap))
                outputs.append(p)
        p = out / f"{split}.txt"
        atomic_write(p, "".join(f"{s}\n" for s in seeds))
        outputs.append(p)
    means = class_mean_dims([sc.objects for sc in train_scenes])
    p = out / "priors.json"
    atomic_write(p, json.dumps({n: list(map(float, m)) for n, m in zip(FOREGROUND_CLASSES, means)},
                               indent=2))
    outputs.append(p)
    write_manifest(out, "prepare", cfgmod.dump(cfg), [], outputs, started)
    print(f"prepared {len(tr) + len(va)} scenes in {out}")
    return 0


def _prepare_kitti(args, out, started):
    root = Path(args.kitti)
    velo_dir, calib_dir = root / "velodyne", root / "calib"
    ids = sorted(p.stem for p in velo_dir.glob("*.bin")) if velo_dir.is_dir() else []
    if not ids:
        raise EmptyInput(f"no velodyne files under {velo_dir}")
    depth_dir = out / "depth"
    depth_dir.mkdir(exist_ok=True)
    outputs, inputs, dims = [], [], {n: [] for n in FOREGROUND_CLASSES}
    for sid in ids:
        calib_path = calib_dir / f"{sid}.txt"
        velo_path = velo_dir / f"{sid}.bin"
        inputs += [calib_path, velo_path]
        calib = parse_calib(calib_path.read_text())
        cloud = read_velodyne(velo_path.read_bytes())
        w, h = _image_size(root, sid, args)
        sparse = project_lidar(cloud, calib, w, h)
        for kind, dmap in (("sparse", sparse), ("dense", densify(sparse))):
            p = depth_dir / f"{sid}_{kind}.png"
            atomic_write(p, encode_depth_png16(dmap))
            outputs.append(p)
        label_path = root / "label_2" / f"{sid}.txt"
        if label_path.exists():
            inputs.append(label_path)
            for lab in parse_labels(label_path.read_text()):
                if lab.class_name in dims:
                    dims[lab.class_name].append(lab.dims)
    p = out / "index.txt"
    atomic_write(p, "".join(f"{s}\n" for s in ids))
    outputs.append(p)
    p = out / "priors.json"
    atomic_write(p, json.dumps({n: (np.mean(v, axis=0).tolist() if v else None)
                                for n, v in dims.items()}, indent=2))
    outputs.append(p)
    write_manifest(out, "prepare --kitti", {"kitti": str(root)}, inputs, outputs, started)
    print(f"prepared {len(ids)} frames in {out}")
    return 0


def _image_size(root, sid, args):
    img = root / "image_2" / f"{sid}.png"
    if img.exists():
        with Image.open(img) as im:
            return im.size
    return args.width, args.height


def cmd_train(args):
    started = time.time()
    if args.seed is None:
        raise CliError("MissingSeed", "--seed is required for training")
    problems = []
    try:
        cfg = load_config(args)
    except ConfigInvalid as exc:
        problems.append(str(exc))
        cfg = None
    if args.phase == "student" and not args.teacher:
        problems.append("student phase needs --teacher CHECKPOINT")
    if args.teacher and not Path(args.teacher).exists():
        problems.append(f"teacher checkpoint not found: {args.teacher}")
    if problems:
        raise ConfigInvalid("; ".join(problems))
    if args.phase == "teacher" and any(s.startswith("loss.lambda") for s in (args.set or [])):
        print("warning: loss weights are ignored when training the teacher", file=sys.stderr)
    out = out_dir(args.out)
    tcfg = cfgmod.train_config(cfg, args.seed)
    dtr, _ = datasets_from(cfg)
    log_path = out / "train_log.csv"

    def progress(epoch, row):
        parts = " ".join(f"{k}={v:.4f}" for k, v in row.items() if k.startswith("l_") or k == "total")
        print(f"epoch {epoch + 1}/{tcfg.epochs} lr={row['lr']:.3g} {parts}", flush=True)

    inputs = []
    if args.phase == "teacher":
        res = train_teacher(dtr, tcfg, log_path=str(log_path), progress=progress)
    else:
        teacher, _ = load_model(args.teacher)
        inputs.append(args.teacher)
        res = train_student(dtr, teacher, tcfg, log_path=str(log_path), progress=progress)
    ckpt = out / "model.ckpt"
    state = res.model.state_dict()
    if res.fusion is not None:
        state.update(res.fusion.state_dict())
    meta = {"phase": args.phase, "detector": res.model.config.to_dict(),
            "mean_dims": dtr.mean_dims.tolist(), "train": tcfg.to_dict() | {"weights": vars(tcfg.weights)}}
    save_checkpoint(str(ckpt), state, meta)
    write_manifest(out, f"train --phase {args.phase} --seed {args.seed}", cfgmod.dump(cfg), inputs,
                   [ckpt, Path(str(ckpt) + ".json"), log_path], started)
    print(f"wrote {ckpt}")
    return 0


def cmd_eval(args):
    started = time.time()
    cfg = load_config(args)
    out = out_dir(args.out)
    model, meta = load_model(args.checkpoint)
    mean_dims = np.asarray(meta["mean_dims"]) if "mean_dims" in meta else None
    dtr, dva = datasets_from(cfg, mean_dims)
    ds = dtr if args.split == "train" else dva
    kind = "depth" if meta.get("phase") == "teacher" else "rgb"
    dets = predict(model, ds, kind, conf_threshold=cfg["eval.conf_threshold"],
                   confidence_mode=cfg["eval.confidence"])
    results = full_report(dets, ds)
    outputs = []
    table = analysis.format_table(results, f"{args.checkpoint} on {args.split}")
    for name, body in (("report.txt", table), ("report.csv", analysis.table_csv(results))):
        atomic_write(out / name, body)
        outputs.append(out / name)
    print(table, end="")
    inputs = [args.checkpoint]
    if args.cross:
        model_b, meta_b = load_model(args.cross, expect=model)
        kind_b = "depth" if meta_b.get("phase") == "teacher" else "rgb"
        dets_b = predict(model_b, ds, kind_b, conf_threshold=cfg["eval.conf_threshold"],
                         confidence_mode=cfg["eval.confidence"])
        take = dict(item.split("=") for item in args.take.split(",")) if args.take else {}
        cross = analysis.cross_model_eval(dets, dets_b, take, [s.labels for s in ds.samples],
                                          ds.class_names, eval_config_for(ds),
                                          thresholds=DEFAULT_THRESHOLDS)
        text = analysis.format_table(cross, f"cross-model take={take}")
        atomic_write(out / "cross.txt", text)
        atomic_write(out / "cross.csv", analysis.table_csv(cross))
        outputs += [out / "cross.txt", out / "cross.csv"]
        inputs.append(args.cross)
        print(text, end="")
    if args.depth_error:
        (slope, intercept), pairs = analysis.depth_error_fit(dets, [s.labels for s in ds.samples],
                                                             ds.class_names)
        atomic_write(out / "depth_error.csv", analysis.scatter_csv(pairs))
        atomic_write(out / "depth_error_fit.json",
                     json.dumps({"slope": slope, "intercept": intercept, "pairs": len(pairs)}))
        outputs += [out / "depth_error.csv", out / "depth_error_fit.json"]
        print(f"depth error fit: |dz| = {slope:.4f} * z + {intercept:.4f} ({len(pairs)} pairs)")
    for i in range(min(args.render, len(ds))):
        v = ds.view(i)
        rgb = v.rgb.transpose(1, 2, 0)
        for name, body in ((f"overlay_{i:03d}.png", render.render_overlay(rgb, v.calib, v.labels, dets[i])),
                           (f"bev_{i:03d}.png", render.render_bev(v.labels, dets[i]))):
            atomic_write(out / name, body)
            outputs.append(out / name)
    write_manifest(out, "eval", cfgmod.dump(cfg), inputs, outputs, started)
    return 0


def ablation_plan(rows, out):
    """(row, switches, output dir) for each requested ablation row."""
    plan = []
    for r in rows:
        if r not in ABLATION_ROWS:
            raise ConfigInvalid(f"unknown ablation row {r!r}")
        sets = [f"switch.{k}=true" for k in ABLATION_ROWS[r]]
        plan.append((r, sets, Path(out) / f"row_{r}"))
    return plan


def cmd_ablate(args):
    rows = args.rows.split(",") if args.rows else list(ABLATION_ROWS)
    plan = ablation_plan(rows, args.out)
    for r, sets, path in plan:
        print(f"row {r}: {' '.join(sets) or 'baseline'} -> {path}", flush=True)
        if args.dry_run:
            continue
        sub = argparse.Namespace(config=args.config, set=(args.set or []) + sets, seed=args.seed,
                                 phase="student", teacher=args.teacher, out=str(path))
        cmd_train(sub)
    return 0


def cmd_depth_tools(args):
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.tool == "project":
        calib = parse_calib(Path(args.calib).read_text())
        cloud = read_velodyne(Path(args.velodyne).read_bytes())
        atomic_write(out, encode_depth_png16(project_lidar(cloud, calib, args.width, args.height)))
    elif args.tool == "densify":
        atomic_write(out, encode_depth_png16(densify(decode_depth_png16(Path(args.input).read_bytes()))))
    else:
        cloud = read_velodyne(Path(args.velodyne).read_bytes())
        atomic_write(out, write_velodyne(simulate_beams(cloud, BeamModel(args.beams), args.keep_every)))
    print(f"wrote {out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="depthdistill", description=__doc__)
    p.add_argument("--jobs", type=int, default=1, help="worker cap (work runs in-process)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="dotted-key config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")

    sp = sub.add_parser("prepare", help="write depth maps, index files and size priors")
    common(sp)
    sp.add_argument("--kitti", help="KITTI split directory (calib/, velodyne/, image_2/, label_2/)")
    sp.add_argument("--width", type=int, default=1242)
    sp.add_argument("--height", type=int, default=375)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_prepare)

    sp = sub.add_parser("train", help="train a teacher or a student")
    common(sp)
    sp.add_argument("--phase", choices=("teacher", "student"), required=True)
    sp.add_argument("--teacher", help="teacher checkpoint (student phase)")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="AP tables and analysis outputs for a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--split", choices=("train", "val"), default="val")
    sp.add_argument("--cross", help="second checkpoint for cross-model evaluation")
    sp.add_argument("--take", help="selectors, e.g. loc=B,dim=A,ori=A,con=A")
    sp.add_argument("--depth-error", action="store_true")
    sp.add_argument("--render", type=int, default=0, help="number of scenes to draw")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="student runs over the distillation switch grid")
    common(sp)
    sp.add_argument("--teacher", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--rows", help="comma-separated subset of a..i")
    sp.add_argument("--dry-run", action="store_true")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("depth-tools", help="single-file depth utilities")
    tools = sp.add_subparsers(dest="tool", required=True)
    t = tools.add_parser("project")
    t.add_argument("--calib", required=True)
    t.add_argument("--velodyne", required=True)
    t.add_argument("--width", type=int, required=True)
    t.add_argument("--height", type=int, required=True)
    t.add_argument("--out", required=True)
    t = tools.add_parser("densify")
    t.add_argument("--input", required=True)
    t.add_argument("--out", required=True)
    t = tools.add_parser("beams")
    t.add_argument("--velodyne", required=True)
    t.add_argument("--keep-every", type=int, required=True)
    t.add_argument("--beams", type=int, default=64)
    t.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_depth_tools)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        kind, msg = exc.kind, str(exc)
    except DepthDistillError as exc:
        kind, msg = type(exc).__name__, str(exc)
    except (OSError, ValueError) as exc:
        kind, msg = type(exc).__name__, str(exc)
    print(f"error: {kind}: {' '.join(msg.split())}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
