"""Plain-text run configuration with dotted keys.

One ``key = value`` per line, ``#`` starts a comment.  Values are typed by
the defaults below; precedence is command line > file > defaults.
"""

from __future__ import annotations

from .errors import ConfigInvalid
from .data_io.synthetic import SyntheticConfig
from .losses import LossWeights
from .training.data import TEACHER_INPUTS
from .training.trainer import SWITCHES, TrainConfig

DEFAULTS = {
    "data.train_scenes": 200,
    "data.val_scenes": 100,
    "data.val_offset": 100_000,
    "data.height": 96,
    "data.width": 320,
    "data.focal": 200.0,
    "data.min_objects": 2,
    "data.max_objects": 5,
    "train.epochs": 40,
    "train.base_lr": 1.25e-4,
    "train.decay_epochs": (24, 32),
    "train.decay_factor": 0.1,
    "train.warmup_epochs": 2,
    "train.batch_size": 4,
    "train.teacher_input": "dense",
    "train.flip": True,
    "loss.lambda_sf": 1.0,
    "loss.lambda_of": 1.0,
    "loss.lambda_or": 1.0,
    "loss.regions": 8,
    "loss.tau": 0.3,
    "switch.sf": False,
    "switch.of": False,
    "switch.or": False,
    "switch.ff": False,
    "switch.aux_depth": False,
    "eval.conf_threshold": 0.05,
    "eval.confidence": "exp",
}


def _coerce(key, raw, like):
    raw = raw.strip()
    if isinstance(like, bool):
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    if isinstance(like, tuple):
        return tuple(int(v) for v in raw.replace(",", " ").split())
    return raw


def parse_config_text(text):
    """``(values, problems)`` for a config file body; unknown keys are problems."""
    values, problems = {}, []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected 'key = value'")
            continue
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            problems.append(f"line {lineno}: unknown key {key!r}")
            continue
        try:
            values[key] = _coerce(key, raw, DEFAULTS[key])
        except ValueError as exc:
            problems.append(f"line {lineno}: {exc}")
    return values, problems


def resolve(file_text=None, overrides=()):
    """Merge defaults, file and ``key=value`` overrides; raises with every problem found."""
    cfg = dict(DEFAULTS)
    problems = []
    if file_text:
        vals, probs = parse_config_text(file_text)
        cfg.update(vals)
        problems += probs
    for item in overrides:
        if "=" not in item:
            problems.append(f"--set {item!r}: expected key=value")
            continue
        key, raw = item.split("=", 1)
        key = key.strip()
        if key not in DEFAULTS:
            problems.append(f"--set: unknown key {key!r}")
            continue
        try:
            cfg[key] = _coerce(key, raw, DEFAULTS[key])
        except ValueError as exc:
            problems.append(f"--set: {exc}")
    problems += validate(cfg)
    if problems:
        raise ConfigInvalid("; ".join(problems))
    return cfg


def validate(cfg):
    problems = []
    if cfg["train.teacher_input"] not in TEACHER_INPUTS:
        problems.append(f"train.teacher_input must be one of {TEACHER_INPUTS}")
    if cfg["eval.confidence"] not in ("exp", "none"):
        problems.append("eval.confidence must be 'exp' or 'none'")
    for key in ("loss.lambda_sf", "loss.lambda_of", "loss.lambda_or"):
        if cfg[key] < 0:
            problems.append(f"{key} must be >= 0")
    if not 0 < cfg["loss.tau"] < 1:
        problems.append("loss.tau must lie in (0, 1)")
    for key in ("data.train_scenes", "data.val_scenes"):
        if cfg[key] < 1:
            problems.append(f"{key} must be >= 1")
    try:
        synthetic_config(cfg).validate()
    except ConfigInvalid as exc:
        problems.append(str(exc))
    if not problems:
        try:
            train_config(cfg, seed=0).validate()
        except ConfigInvalid as exc:
            problems.append(str(exc))
    return problems


def synthetic_config(cfg):
    return SyntheticConfig(height=cfg["data.height"], width=cfg["data.width"],
                           focal=cfg["data.focal"],
                           object_count=(cfg["data.min_objects"], cfg["data.max_objects"]))


def train_config(cfg, seed):
    return TrainConfig(
        epochs=cfg["train.epochs"], base_lr=cfg["train.base_lr"],
        decay_epochs=tuple(cfg["train.decay_epochs"]), decay_factor=cfg["train.decay_factor"],
        warmup_epochs=cfg["train.warmup_epochs"], batch_size=cfg["train.batch_size"], seed=seed,
        weights=LossWeights(cfg["loss.lambda_sf"], cfg["loss.lambda_of"], cfg["loss.lambda_or"]),
        switches={k: cfg[f"switch.{k}"] for k in SWITCHES},
        teacher_input=cfg["train.teacher_input"], regions=cfg["loss.regions"],
        tau=cfg["loss.tau"], flip=cfg["train.flip"],
    )


def dump(cfg):
    def fmt(v):
        if isinstance(v, tuple):
            return ",".join(str(x) for x in v)
        if isinstance(v, bool):
            return "true" if v else "false"
        return repr(v) if isinstance(v, float) else str(v)
    return "".join(f"{k} = {fmt(cfg[k])}\n" for k in sorted(cfg))
