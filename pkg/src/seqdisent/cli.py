"""Command-line entry point: ``seqdisent <command> [flags]``.

Commands read an optional YAML run config with sections ``data``, ``model``,
``train`` and ``eval``.  Every key is optional; a preset supplies defaults,
then the config file, then command-line flags override.  The resolved config
is written to the run directory as ``config.yaml`` and is enough to rerun.
"""

import argparse
import copy
import json
import logging
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import torch
import yaml

from . import data as data_mod
from .data import ShapeMotionSpec, TimeSeriesSpec
from .model import ModelConfig
from .objective import REFERENCE_WEIGHTS, LossWeights
from .trainer import TrainConfig
from .views import NegativeMode

log = logging.getLogger("seqdisent")

RUN_ROOT_ENV = "SEQDISENT_RUN_ROOT"
COMMANDS = ("generate-data", "train", "eval", "swap", "analyze-views", "ablate")


class ConfigError(ValueError):
    """The run config names an unknown key or an invalid value."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _weights(name: str) -> dict:
    return asdict(REFERENCE_WEIGHTS[name])


# Per-preset defaults.  The dataset-named presets carry the reference per-dataset
# weights, learning rate, batch size and latent sizes; only the data are synthetic.
PRESETS: Dict[str, dict] = {
    "shapes-tiny": {
        "data": {"kind": "shape_motion", **asdict(data_mod.PRESETS["shapes-tiny"])},
        "model": {"static_dim": 32, "dynamic_dim": 8},
        # a heavier static KL keeps motion out of s; the contrastive terms start once reconstructions are sharp
        "train": {"weights": {**_weights("sprites"), "lambda2": 20.0}, "learning_rate": 2e-3, "batch_size": 16,
                  "epochs": 90, "warmup_epochs_contrastive": 60, "n_negatives": 8},
    },
    "sprites-like": {
        "data": {"kind": "shape_motion", **asdict(data_mod.PRESETS["sprites-like"])},
        "model": {"static_dim": 256, "dynamic_dim": 32},
        "train": {"weights": _weights("sprites"), "learning_rate": 2e-3, "batch_size": 100, "epochs": 600},
    },
    "mug-like": {
        "data": {"kind": "shape_motion", **asdict(data_mod.PRESETS["mug-like"])},
        "model": {"static_dim": 256, "dynamic_dim": 64},
        "train": {"weights": _weights("mug"), "learning_rate": 1.5e-3, "batch_size": 16, "epochs": 600},
    },
    "timeseries": {
        "data": {"kind": "timeseries", **asdict(data_mod.PRESETS["timeseries"])},
        "model": {"static_dim": 12, "dynamic_dim": 4},
        "train": {"weights": _weights("air_quality"), "learning_rate": 1e-3, "batch_size": 10, "epochs": 600},
    },
}
DEFAULT_PRESET = "shapes-tiny"

EVAL_KEYS = {"classifier": "svm", "n_swap_pairs": 8}
SECTIONS = ("data", "model", "train", "eval")


def _allowed(section: str, kind: str) -> set:
    if section == "data":
        spec = ShapeMotionSpec if kind == "shape_motion" else TimeSeriesSpec
        return {f.name for f in fields(spec)} | {"kind"}
    if section == "model":
        return {f.name for f in fields(ModelConfig)} - {"seq_len", "frame_shape"}
    if section == "train":
        return {f.name for f in fields(TrainConfig)}
    return set(EVAL_KEYS)


def _merge(base: dict, override: dict, path: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value, f"{path}.{key}")
        else:
            out[key] = value
    return out


def resolve_config(preset: Optional[str] = None, document: Optional[dict] = None,
                   overrides: Optional[dict] = None) -> dict:
    """Preset defaults <- config document <- flag overrides, with unknown keys rejected."""
    document = dict(document or {})
    preset = preset or document.pop("preset", None) or DEFAULT_PRESET
    document.pop("preset", None)
    if preset not in PRESETS:
        raise ConfigError("preset", f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    for key in document:
        if key not in SECTIONS and key != "seed":
            raise ConfigError(key, "unknown top-level key")
    cfg = {"preset": preset, "seed": 0, **copy.deepcopy(PRESETS[preset]), "eval": dict(EVAL_KEYS)}
    cfg = _merge(cfg, document, "")
    cfg = _merge(cfg, overrides or {}, "")
    kind = cfg["data"].get("kind")
    if kind not in ("shape_motion", "timeseries"):
        raise ConfigError("data.kind", f"must be 'shape_motion' or 'timeseries', got {kind!r}")
    for section in SECTIONS:
        if not isinstance(cfg.get(section), dict):
            raise ConfigError(section, "must be a mapping")
        unknown = set(cfg[section]) - _allowed(section, kind)
        if unknown:
            raise ConfigError(f"{section}.{sorted(unknown)[0]}", "unknown key")
    weights = cfg["train"].get("weights", {})
    if not isinstance(weights, dict):
        raise ConfigError("train.weights", "must be a mapping")
    bad = set(weights) - {f.name for f in fields(LossWeights)}
    if bad:
        raise ConfigError(f"train.weights.{sorted(bad)[0]}", "unknown key")
    # the run seed drives training; the data section keeps its own generator seed
    cfg["train"]["seed"] = cfg["seed"]
    return cfg


def build_objects(cfg: dict):
    """``(data_spec, ModelConfig kwargs, TrainConfig)`` from a resolved config."""
    d = dict(cfg["data"])
    kind = d.pop("kind")
    try:
        spec = (ShapeMotionSpec if kind == "shape_motion" else TimeSeriesSpec)(**d)
        spec.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError("data", str(exc)) from exc
    try:
        train_cfg = TrainConfig(**cfg["train"])
    except (TypeError, ValueError) as exc:
        raise ConfigError("train", str(exc)) from exc
    return spec, dict(cfg["model"]), train_cfg


def model_config_for(model_kwargs: dict, dataset) -> ModelConfig:
    try:
        return ModelConfig(seq_len=dataset.seq_len, frame_shape=dataset.frame_shape, **model_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError("model", str(exc)) from exc


def _load_document(path: Optional[str]) -> dict:
    if path is None:
        return {}
    text = Path(path).read_text()
    try:
        doc = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config", "top level must be a mapping")
    return doc


def _flag_overrides(args) -> dict:
    out: dict = {}
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    train = {}
    if getattr(args, "negative_mode", None):
        train["negative_mode"] = args.negative_mode
    if getattr(args, "view_trick", None):
        train["view_trick"] = args.view_trick
    if getattr(args, "epochs", None) is not None:
        train["epochs"] = args.epochs
    if train:
        out["train"] = train
    return out


def _run_dir(args, default_name: str) -> Path:
    out = Path(args.out) if args.out else Path(os.environ.get(RUN_ROOT_ENV, "runs")) / default_name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(cfg: dict, out: Path):
    (out / "config.yaml").write_text(yaml.safe_dump(cfg, sort_keys=True))


def _dataset_for(cfg: dict, args):
    if getattr(args, "data", None):
        return data_mod.load_dataset(args.data)
    spec, _, _ = build_objects(cfg)
    return data_mod.generate(spec)


# --------------------------------------------------------------------------- commands


def cmd_generate_data(args, cfg) -> int:
    spec, _, _ = build_objects(cfg)
    ds = data_mod.generate(spec)
    out = _run_dir(args, "data")
    _echo_config(cfg, out)
    path = data_mod.save_dataset(ds, out / "dataset.sqds")
    if isinstance(spec, TimeSeriesSpec):
        data_mod.export_timeseries_csv(ds, out / "dataset.csv")
    print(f"wrote {len(ds)} sequences to {path}")
    return 0


def cmd_train(args, cfg) -> int:
    from .trainer import resume, train

    _, model_kwargs, train_cfg = build_objects(cfg)
    ds = _dataset_for(cfg, args)
    out = _run_dir(args, "train")
    _echo_config(cfg, out)
    state = None
    if args.checkpoint:
        state = resume(args.checkpoint)
        train_cfg = state.config
    state = train(train_cfg, ds, model_config_for(model_kwargs, ds), run_dir=out, state=state)
    last = state.metrics[-1] if state.metrics else {}
    print(json.dumps({"epochs": state.epoch, "steps": state.global_step, "final_total": last.get("total")}))
    return 0


def _load_checkpoint_model(args):
    from .trainer import load_model

    if not args.checkpoint:
        raise ConfigError("checkpoint", "--checkpoint is required for this command")
    return load_model(args.checkpoint)


def cmd_eval(args, cfg) -> int:
    from .evaluation import evaluate, posterior_means, write_report

    model = _load_checkpoint_model(args)
    ds = _dataset_for(cfg, args)
    report = evaluate(model, ds, seed=cfg["seed"], classifier_kind=cfg["eval"]["classifier"])
    out = Path(args.report) if args.report else _run_dir(args, "eval")
    test = ds.test() if ds.is_test.any() else ds
    s, d = posterior_means(model, test.data)
    write_report(report, out, embeddings={"static": s, "dynamic": d})
    _echo_config(cfg, out)
    print(json.dumps(report.summary()["lacc"]))
    return 0


def cmd_swap(args, cfg) -> int:
    from .evaluation import save_swap_csv, save_swap_grid, swap_generate

    model = _load_checkpoint_model(args)
    ds = _dataset_for(cfg, args)
    test = ds.test() if ds.is_test.any() else ds
    rng = np.random.default_rng(cfg["seed"])
    out = _run_dir(args, "swap")
    _echo_config(cfg, out)
    for k in range(int(cfg["eval"]["n_swap_pairs"])):
        i, j = rng.choice(len(test), size=2, replace=False)
        res = swap_generate(model, test.data[i], test.data[j])
        save_swap_csv(res, out / f"swap_{k:02d}.csv")
        if len(test.frame_shape) == 3:
            save_swap_grid(res, out / f"swap_{k:02d}.png")
    print(f"wrote {cfg['eval']['n_swap_pairs']} swaps to {out}")
    return 0


def cmd_analyze_views(args, cfg) -> int:
    from .evaluation import analyze_view_quality, write_thirds_csv

    model = _load_checkpoint_model(args)
    ds = _dataset_for(cfg, args)
    test = ds.test() if ds.is_test.any() else ds
    rep = analyze_view_quality(model, test, seed=cfg["seed"], classifier_kind=cfg["eval"]["classifier"])
    out = _run_dir(args, "views")
    _echo_config(cfg, out)
    write_thirds_csv(rep.static_thirds, out / "thirds_static.csv")
    write_thirds_csv(rep.dynamic_thirds, out / "thirds_dynamic.csv")
    summary = {"static_view": rep.static_view_lacc, "dynamic_view": rep.dynamic_view_lacc,
               "static_thirds_means": rep.static_thirds.means, "dynamic_thirds_means": rep.dynamic_thirds.means}
    (out / "views.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    print(json.dumps(summary))
    return 0


def cmd_ablate(args, cfg) -> int:
    from .evaluation import run_negative_mode_ablation

    _, model_kwargs, train_cfg = build_objects(cfg)
    ds = _dataset_for(cfg, args)
    out = _run_dir(args, "ablate")
    _echo_config(cfg, out)
    rows = run_negative_mode_ablation(train_cfg, ds, model_config_for(model_kwargs, ds), seed=cfg["seed"])
    with (out / "ablation.csv").open("w") as fh:
        fh.write("negative_mode,swap_accuracy,final_total\n")
        for r in rows:
            fh.write(f"{r['negative_mode']},{r['swap_accuracy']!r},{r['final_total']!r}\n")
    for r in rows:
        print(f"{r['negative_mode']:>22s}  acc={r['swap_accuracy']:.3f}")
    return 0


HANDLERS = {
    "generate-data": cmd_generate_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "swap": cmd_swap,
    "analyze-views": cmd_analyze_views,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqdisent", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML run config")
        p.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help=f"run directory (default: ${RUN_ROOT_ENV}/<command>)")
        p.add_argument("--checkpoint")
        p.add_argument("--data", help="dataset file written by generate-data (default: regenerate from config)")
        p.add_argument("--negative-mode", choices=[m.value for m in NegativeMode])
        p.add_argument("--view-trick", choices=["predictive", "plain_reparam"])
        p.add_argument("--epochs", type=int)
        if name == "eval":
            p.add_argument("--report", help="report directory (default: --out)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    if not argv or argv[0] not in COMMANDS:
        if argv and argv[0] in ("-h", "--help"):
            parser.print_help()
            return 0
        parser.print_usage(sys.stderr)
        print(f"seqdisent: unknown command {argv[0] if argv else ''!r}; choose from {', '.join(COMMANDS)}",
              file=sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.preset, _load_document(args.config), _flag_overrides(args))
        if cfg["seed"] is not None:
            torch.manual_seed(cfg["seed"])
        return HANDLERS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"seqdisent: config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"seqdisent: missing file: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure: report category and message
        print(f"seqdisent: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
