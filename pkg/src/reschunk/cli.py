"""Command-line entry points.

Exit codes: 0 success, 1 runtime failure (one ``error:`` line on stderr),
2 usage error (bad flag, subcommand or config syntax).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .ablation import parse_variants, run_ablation, samples_by_action
from .config import (ConfigSyntaxError, RunConfig, format_value, load_config, parse_config_text,
                     resolve)
from .edge_inference import format_partitions
from .evaluation import HorizonSpec, ResultsTable, emit_table, mpjpe_curve, zero_velocity_baseline
from .model import CheckpointError, ModelConfig, load_checkpoint, save_checkpoint
from .motion_data import (ConfigurationError, MotionSequence, WindowingConfig, limb_partition,
                          load_sequence, load_split_manifest, save_sequence, split_by_index,
                          synth_dataset)
from .plotting import plot_prediction
from .training import WindowDataset, grad_check, train

MANIFEST_NAME = "splits.txt"
SPLITS = ("train", "validation", "test")


class UsageError(Exception):
    pass


# --- data helpers ----------------------------------------------------------------

def load_directory(path) -> list[MotionSequence]:
    files = sorted(Path(path).glob("*.mtf"))
    if not files:
        raise ConfigurationError(f"no .mtf files in {path}")
    return [load_sequence(f) for f in files]


def split_directory(path, manifest=None) -> dict[str, list[MotionSequence]]:
    """Train/validation/test sequences of a data directory.

    Uses ``manifest`` or ``<dir>/splits.txt`` when present (names are file
    stems or header names), otherwise the index-modulo-10 rule.
    """
    seqs = load_directory(path)
    manifest = manifest or (Path(path) / MANIFEST_NAME if (Path(path) / MANIFEST_NAME).exists() else None)
    if manifest is None:
        return dict(zip(SPLITS, split_by_index(seqs)))
    by_name = {s.name: s for s in seqs}
    out = {}
    for split, names in load_split_manifest(manifest).items():
        missing = [n for n in names if n not in by_name]
        if missing:
            raise ConfigurationError(f"split manifest names unknown sequences: {', '.join(missing)}")
        out[split] = [by_name[n] for n in names]
    return out


def run_config(args, seq: MotionSequence) -> RunConfig:
    values = load_config(args.config) if getattr(args, "config", None) else {}
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        try:
            values.update(parse_config_text(f"{key.strip()} = {value}", "--set"))
        except ConfigSyntaxError as exc:
            raise UsageError(str(exc)) from None
    if values.get("grouping") == "fixed" and "fixed_partition" not in values:
        values["fixed_partition"] = limb_partition(seq.skeleton)
    return resolve(values, seq.skeleton.J, seq.skeleton.D, seq.fps)


def print_config(cfg: RunConfig, seed: int, out=None) -> None:
    out = out or sys.stdout
    out.write("# resolved config\n")
    out.write(f"# seed = {seed}\n")
    for key, value in cfg.items():
        out.write(f"# {key} = {format_value(value)}\n")


def datasets(splits, cfg: RunConfig, names=("train", "validation")):
    out = []
    for name in names:
        if not splits.get(name):
            raise ConfigurationError(f"the {name} split is empty")
        out.append(WindowDataset(splits[name], cfg.windowing))
    return out


# --- subcommands -----------------------------------------------------------------

def cmd_synth(args) -> int:
    rng = np.random.default_rng(args.seed)
    seqs = synth_dataset(args.sequences, args.joints, args.fps, args.seconds, rng,
                         n_groups=args.groups, amplitude=args.amplitude, noise=args.noise)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for seq in seqs:
        save_sequence(seq, out / f"{seq.name}.mtf")
    print(f"wrote {len(seqs)} sequences to {out}")
    return 0


def cmd_train(args) -> int:
    splits = split_directory(args.data, args.split_manifest)
    cfg = run_config(args, splits["train"][0] if splits.get("train") else load_directory(args.data)[0])
    print_config(cfg, args.seed)
    train_set, val_set = datasets(splits, cfg)
    log_path = Path(args.log) if args.log else Path(str(args.out) + ".log")
    with open(log_path, "w", encoding="utf-8", newline="\n") as fh:
        result = train(train_set, val_set, cfg.model, cfg.optimizer, seed=args.seed,
                       horizons=cfg.horizons, log_file=fh)
    save_checkpoint(result.model, args.out, extra=_extra(cfg, args.seed, train_set))
    print(f"trained {result.steps} steps over {result.epochs} epochs, best epoch {result.best_epoch}")
    print(f"checkpoint {args.out}, metrics log {log_path}")
    return 0


def _extra(cfg: RunConfig, seed, dataset) -> dict:
    return {"seed": seed, "fps": dataset.sequences[0].fps,
            "horizons_ms": list(cfg.horizons.horizons_ms),
            "clamp_to_output": cfg.horizons.clamp_to_output,
            "windowing": {k: v for k, v in vars(cfg.windowing).items()},
            "skeleton": {"joint_names": list(dataset.skeleton.joint_names),
                         "parent_index": dataset.skeleton.parent_index}}


def _restore(args):
    model, header = load_checkpoint(args.checkpoint)
    extra = header.get("extra", {})
    horizons = HorizonSpec(extra.get("fps", 25.0), extra.get("horizons_ms", [80, 160, 320, 400, 1000]),
                           extra.get("clamp_to_output", True))
    windowing = WindowingConfig(**extra["windowing"]) if "windowing" in extra else None
    return model, header, horizons, windowing


def cmd_eval(args) -> int:
    model, header, horizons, windowing = _restore(args)
    print(f"# checkpoint {args.checkpoint}")
    for key, value in header["config"].items():
        print(f"# {key} = {format_value(value)}")
    splits = split_directory(args.data, args.split_manifest)
    if not splits.get(args.split):
        raise ConfigurationError(f"the {args.split} split is empty")
    dataset = WindowDataset(splits[args.split], windowing)
    frames = horizons.frame_indices(model.cfg.p)
    table = ResultsTable(sorted(horizons.horizons_ms))
    all_parts, labels = [], []
    for action, samples in samples_by_action(dataset).items():
        x0 = np.stack([s.x0 for s in samples])
        y0 = np.stack([s.y0 for s in samples])
        pred, parts = model.predict(x0)
        table.add(args.name, action, mpjpe_curve(pred, y0, dataset.skeleton, frames).mean(axis=0))
        table.add("zero-velocity", action,
                  mpjpe_curve(zero_velocity_baseline(x0, model.cfg.p), y0, dataset.skeleton, frames).mean(axis=0))
        all_parts += parts
        labels += [f"{s.source_id}@{s.start_frame}" for s in samples]
    text = emit_table(table, args.format)
    _write_or_print(text, args.out)
    if args.partitions:
        Path(args.partitions).write_text(format_partitions(all_parts, labels), encoding="utf-8")
    return 0


def cmd_ablate(args) -> int:
    splits = split_directory(args.data, args.split_manifest)
    cfg = run_config(args, splits["train"][0] if splits.get("train") else load_directory(args.data)[0])
    print_config(cfg, args.seed)
    variants = parse_variants(args.variants)
    train_set, val_set, test_set = datasets(splits, cfg, SPLITS)
    table = run_ablation(train_set, val_set, test_set, cfg.model, variants, cfg.optimizer,
                         seed=args.seed, horizons=cfg.horizons)
    _write_or_print(emit_table(table, args.format), args.out)
    return 0


def _window(args, model, seq: MotionSequence):
    T, p = model.cfg.T, model.cfg.p
    start = args.start
    if start < 0 or start + T > len(seq):
        raise ConfigurationError(f"{seq.name}: need {T} input frames from frame {start}, have {len(seq)}")
    return seq.frames[start:start + T], seq.frames[start + T:start + T + p]


def cmd_predict(args) -> int:
    model, header, _, _ = _restore(args)
    seq = load_sequence(args.input)
    x0, _ = _window(args, model, seq)
    pred, partition = model.predict(x0)
    out = MotionSequence(seq.skeleton, seq.fps, pred, name=f"{seq.name}_prediction",
                         metadata={"source": seq.name, "start_frame": args.start})
    save_sequence(out, args.out)
    print(f"groups {' '.join(str(g) for g in partition.group_id)}")
    if args.partitions:
        Path(args.partitions).write_text(format_partitions([partition], [f"{seq.name}@{args.start}"]),
                                         encoding="utf-8")
    return 0


def cmd_plot(args) -> int:
    model, header, _, _ = _restore(args)
    seq = load_sequence(args.input)
    x0, y0 = _window(args, model, seq)
    if len(y0) < model.cfg.p:
        raise ConfigurationError(f"{seq.name}: fewer than {model.cfg.p} ground-truth frames after the input")
    pred, _ = model.predict(x0)
    frames = [int(f) for f in args.frames.split(",") if f.strip()] if args.frames else list(range(model.cfg.p))
    bad = [f for f in frames if not 0 <= f < model.cfg.p]
    if bad:
        raise ConfigurationError(f"frame indices out of range 0..{model.cfg.p - 1}: {bad}")
    svg = plot_prediction(y0, pred, seq.skeleton, frames, scale=args.scale)
    Path(args.out).write_text(svg, encoding="utf-8")
    print(f"wrote {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    values = load_config(args.config) if args.config else {}
    defaults = dict(J=4, D=3, T=12, p=12, F=8, n_chunks=3, encoder_hidden=8)
    model_fields = set(ModelConfig.__dataclass_fields__)
    cfg = ModelConfig(**{**defaults, **{k: v for k, v in values.items() if k in model_fields}})
    print("# resolved config")
    print(f"# seed = {args.seed}")
    for key, value in cfg.to_dict().items():
        print(f"# {key} = {format_value(value)}")
    report = grad_check(cfg, tolerance=args.tolerance, seed=args.seed,
                        max_entries=None if args.all_entries else args.max_entries)
    print(report.summary())
    return 0 if report.passed else 1


def _write_or_print(text, path):
    if path:
        Path(path).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


# --- parser ------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="reschunk", description="Two-scale residual-chunk motion prediction.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, data=True):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--seed", type=int, default=0)
        if data:
            p.add_argument("--data", required=True, help="directory of .mtf files")
            p.add_argument("--split-manifest", help="split manifest (default <data>/splits.txt if present)")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--joints", type=int, default=8)
    p.add_argument("--sequences", type=int, default=16)
    p.add_argument("--groups", type=int, default=2)
    p.add_argument("--fps", type=float, default=25.0)
    p.add_argument("--seconds", type=float, default=6.0)
    p.add_argument("--amplitude", type=float, default=60.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    common(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="metrics log path (default <out>.log)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="MPJPE table of a checkpoint against zero velocity")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split-manifest")
    p.add_argument("--split", default="test", choices=SPLITS)
    p.add_argument("--format", default="markdown", choices=("markdown", "csv"))
    p.add_argument("--name", default="ReSChunk", help="model row label")
    p.add_argument("--out", help="also write the table here")
    p.add_argument("--partitions", help="write the per-window partition dump here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and evaluate architecture variants")
    common(p)
    p.add_argument("--variants", default="full,1L,Fixed,1ch,4ch,NoPONO")
    p.add_argument("--format", default="markdown", choices=("markdown", "csv"))
    p.add_argument("--out", help="also write the table here")
    p.set_defaults(func=cmd_ablate)

    for name, func, helptext in (("predict", cmd_predict, "predict the frames after an input window"),
                                 ("plot", cmd_plot, "SVG of ground truth and prediction")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--input", required=True, help=".mtf sequence")
        p.add_argument("--start", type=int, default=0, help="first input frame")
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=0, help="unused; inference is deterministic")
        p.set_defaults(func=func)
    sub.choices["predict"].add_argument("--partitions", help="write the partition dump here")
    sub.choices["plot"].add_argument("--frames", help="comma-separated 0-based predicted frames")
    sub.choices["plot"].add_argument("--scale", type=float, help="pixels per millimeter")

    p = sub.add_parser("gradcheck", help="finite-difference check of the loss gradient")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--max-entries", type=int, default=16, help="entries sampled per tensor")
    p.add_argument("--all-entries", action="store_true", help="check every entry")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigSyntaxError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except (ConfigurationError, CheckpointError, ValueError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
