"""Command-line entry point: ``quadfuse <command> [options]``.

Exit codes: 0 success, 2 invalid arguments or configuration, 3 I/O failure,
4 training aborted on a non-finite loss.
"""
import argparse
import json
import logging
import os
import sys

from . import checkpoint
from .config import MODES, PRESETS, ConfigError, from_flat, load_config_file, resolve
from .data import DataError, generate_synthetic, load_split, preprocess, read_manifest, read_pgm
from .evalviz import (HeatmapUnavailable, extract_heatmap, metrics_csv_header, metrics_csv_row,
                      metrics_table, render_overlay)
from .model import HybridModel
from .train import TrainingDiverged, evaluate, train

log = logging.getLogger("quadfuse")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NAN = 0, 2, 3, 4
SEED_ENV = "QUADFUSE_SEED"

ABLATION_ROWS = (("ViT-only", "vit_only"), ("GNN-only", "gnn_only"),
                 ("w/o Attention", "no_attention"), ("Full", "full"))
SWEEP_DEFAULTS = {"lr": (1e-5, 5e-6, 1e-6), "tau": (0.1, 0.5, 1.0)}


class UsageError(Exception):
    pass


def env_seed():
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return None
    try:
        seed = int(raw, 0)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None
    if not 0 <= seed < 2 ** 64:
        raise UsageError(f"{SEED_ENV} must fit in an unsigned 64-bit integer")
    return seed


def _u64(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _key_value(text):
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def _write_text(path, text):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# ---------------------------------------------------------------- config

def run_config(args, extra=None):
    """Resolve preset < config file < QUADFUSE_SEED fallback < CLI flags."""
    overrides = dict(args.set or [])
    file_values = load_config_file(args.config) if args.config else {}
    if args.seed is not None:
        overrides["train.seed"] = args.seed
    elif "train.seed" not in file_values and "train.seed" not in overrides:
        seed = env_seed()
        if seed is not None:
            overrides["train.seed"] = seed
    for key, attr in (("train.epochs", "epochs"), ("train.lr", "lr"),
                      ("train.batch_size", "batch_size"), ("train.tau", "tau")):
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = value
    overrides.update(extra or {})
    preset_name = args.preset or file_values.get("preset", "desk")
    return resolve(preset_name, args.config, overrides)


def _load_data(root, cfg):
    manifest = read_manifest(root)
    if manifest.size != cfg.vit.image_size:
        raise UsageError(f"dataset images are {manifest.size}px but the model expects "
                         f"{cfg.vit.image_size}px (set vit.image_size)")
    return manifest, {s: load_split(manifest, s, cfg.vit.channels) for s in ("train", "val", "test")}


def _fit(cfg, mode, splits):
    model = HybridModel(cfg, mode, cfg.train.seed)
    history = train(model, splits["train"], splits["val"], cfg.train)
    return model, history


def save_model(path, model, history=None):
    """Checkpoint plus ``<path>.json`` (config and mode) and, if given, the history CSV."""
    if os.path.dirname(path):
        os.makedirs(os.path.dirname(path), exist_ok=True)
    checkpoint.save(path, model.params.state_dict())
    meta = {"mode": model.mode, "config": model.cfg.to_flat()}
    _write_text(path + ".json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    if history is not None:
        _write_text(history_path(path), history.to_csv())


def history_path(ckpt_path):
    root, _ = os.path.splitext(ckpt_path)
    return root + ".history.csv"


def load_model(path):
    if not os.path.isfile(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    side = path + ".json"
    if not os.path.isfile(side):
        raise FileNotFoundError(f"checkpoint metadata not found: {side}")
    with open(side, encoding="utf-8") as fh:
        meta = json.load(fh)
    cfg = from_flat(meta["config"])
    model = HybridModel(cfg, meta["mode"], cfg.train.seed)
    try:
        model.params.load_state_dict(checkpoint.load(path))
    except (KeyError, ValueError) as exc:
        raise checkpoint.CheckpointError(f"{path}: {exc}") from exc
    return model


# ---------------------------------------------------------------- commands

def cmd_gen_data(args):
    seed = args.seed if args.seed is not None else env_seed()
    seed = 0 if seed is None else seed
    if args.n < 10:
        raise UsageError(f"--n must be at least 10, got {args.n}")
    if args.size < 2 or args.size % 2:
        raise UsageError("--size must be a positive even number")
    if not 0 < args.abnormal_frac < 1:
        raise UsageError("--abnormal-frac must lie strictly between 0 and 1")
    m = generate_synthetic(args.n, args.size, args.abnormal_frac, seed, args.out)
    counts = {s: len(m.split(s)) for s in ("train", "val", "test")}
    print(f"wrote {len(m.rows)} images to {args.out} "
          f"(train {counts['train']}, val {counts['val']}, test {counts['test']})")
    return EXIT_OK


def cmd_train(args):
    cfg = run_config(args)
    _, splits = _load_data(args.data, cfg)
    model, history = _fit(cfg, args.mode, splits)
    save_model(args.out, model, history)
    best = history.epochs[history.best_epoch - 1].metrics
    print(f"epochs run {len(history.epochs)}, best epoch {history.best_epoch}"
          + (" (stopped early)" if history.stopped_early else ""))
    print(metrics_csv_header())
    print(metrics_csv_row(f"{args.mode}/val", best))
    return EXIT_OK


def cmd_eval(args):
    model = load_model(args.ckpt)
    _, splits = _load_data(args.data, model.cfg)
    if len(splits[args.split]) == 0:
        raise UsageError(f"split {args.split!r} is empty")
    m = evaluate(model, splits[args.split])
    row = metrics_csv_row(model.mode, m)
    print(metrics_csv_header())
    print(row)
    if args.out:
        _write_text(args.out, metrics_csv_header() + "\n" + row + "\n")
    return EXIT_OK


def cmd_ablate(args):
    cfg = run_config(args)
    _, splits = _load_data(args.data, cfg)
    out_dir = args.out or os.path.join(args.data, "ablation")
    rows = []
    for name, mode in ABLATION_ROWS:
        log.info("ablation: training %s", mode)
        model, history = _fit(cfg, mode, splits)
        save_model(os.path.join(out_dir, f"{mode}.vgck"), model, history)
        rows.append((name, evaluate(model, splits["test"])))
    csv_text = "\n".join([metrics_csv_header()] + [metrics_csv_row(n, m) for n, m in rows]) + "\n"
    table = metrics_table(rows)
    _write_text(os.path.join(out_dir, "ablation.csv"), csv_text)
    _write_text(os.path.join(out_dir, "ablation.txt"), table + "\n")
    print(table)
    return EXIT_OK


def _parse_values(text, param):
    if text is None:
        return list(SWEEP_DEFAULTS[param])
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--values must be comma-separated numbers, got {text!r}") from None
    if not values:
        raise UsageError("--values is empty")
    return values


def cmd_sweep(args):
    values = _parse_values(args.values, args.param)
    cfgs = [run_config(args, {f"train.{args.param}": v}) for v in values]
    _, splits = _load_data(args.data, cfgs[0])
    lines = [metrics_csv_header()]
    print(lines[0])
    for v, cfg in zip(values, cfgs):
        model, _ = _fit(cfg, args.mode, splits)
        row = metrics_csv_row(f"{args.param}={v:g}", evaluate(model, splits["test"]))
        lines.append(row)
        print(row, flush=True)
    if args.out:
        _write_text(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_heatmap(args):
    model = load_model(args.ckpt)
    raw = read_pgm(args.image)
    size = model.cfg.vit.image_size
    if raw.shape != (size, size):
        raise UsageError(f"image is {raw.shape[1]}x{raw.shape[0]}, model expects {size}x{size}")
    out = model(preprocess(raw, model.cfg.vit.channels)[None], None, False)
    try:
        hm = extract_heatmap(out, args.mode, model.cfg.vit.grid)
    except HeatmapUnavailable as exc:
        raise UsageError(f"{exc}; checkpoint mode is {model.mode}") from None
    viz = model.cfg.viz
    render_overlay(raw, hm, viz.alpha, args.out, viz.low, viz.high)
    print(f"wrote {args.mode} heatmap to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _add_config_args(p, mode=True):
    p.add_argument("--data", required=True, help="dataset directory (from gen-data)")
    p.add_argument("--preset", choices=PRESETS, help="base configuration (default desk)")
    p.add_argument("--config", help="JSON file of dotted keys, e.g. {\"train.lr\": 1e-4}")
    p.add_argument("--set", action="append", type=_key_value, metavar="KEY=VALUE",
                   help="override one config key; repeatable")
    p.add_argument("--seed", type=_u64, help=f"training seed (fallback: ${SEED_ENV})")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    if mode:
        p.add_argument("--mode", choices=MODES, default="full")


def build_parser():
    parser = argparse.ArgumentParser(prog="quadfuse", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=600)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--abnormal-frac", type=float, default=0.5, dest="abnormal_frac")
    p.add_argument("--seed", type=_u64)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model variant")
    _add_config_args(p)
    p.add_argument("--lr", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out", help="also write the metrics CSV here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and evaluate all four variants")
    _add_config_args(p, mode=False)
    p.add_argument("--lr", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--out", help="report directory (default DATA/ablation)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="vary the learning rate or temperature")
    _add_config_args(p)
    p.add_argument("--param", choices=tuple(SWEEP_DEFAULTS), required=True)
    p.add_argument("--values", help="comma-separated values (defaults: lr 1e-5,5e-6,1e-6; tau 0.1,0.5,1.0)")
    p.add_argument("--out", help="also write the metrics CSV here")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("heatmap", help="export an attention overlay as PPM")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True, help="grayscale PGM")
    p.add_argument("--mode", choices=("quadrant", "patch"), default="quadrant")
    p.add_argument("--out", required=True, help="output .ppm")
    p.set_defaults(func=cmd_heatmap)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"quadfuse {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, DataError, checkpoint.CheckpointError, json.JSONDecodeError) as exc:
        print(f"quadfuse {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except TrainingDiverged as exc:
        print(f"quadfuse {args.command}: {exc}", file=sys.stderr)
        return EXIT_NAN


if __name__ == "__main__":
    sys.exit(main())
