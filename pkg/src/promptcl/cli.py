"""Command line entry points.

Subcommands: gen-data, pretrain, run, report, dump-prompts. The output
directory can always be forced with the PROMPTCL_OUT_DIR environment
variable, which takes precedence over flags and config values.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

from .checkpoint import load_checkpoint, save_checkpoint
from .config import build_run_config, parse_config_file, print_config
from .datagen import ShiftParams, SyntheticSpec, generate_dataset, load_dataset
from .model import build_model
from .reporting import load_report, render_report, write_report
from .training import run_benchmark, simulate_pretraining


def _resolve_out_dir(flag_value, config_value=None, default="runs"):
    env = os.environ.get("PROMPTCL_OUT_DIR")
    if env:
        return env
    if flag_value:
        return flag_value
    if config_value:
        return config_value
    return default


def _cmd_gen_data(args) -> int:
    shift = None
    if args.shift_contrast != 1.0 or args.shift_offset != 0.0 or args.shift_cells is not None:
        shift = ShiftParams(
            contrast=args.shift_contrast,
            offset=args.shift_offset,
            cell_perm_seed=args.shift_cells,
            cell_side=args.cell_side,
        )
    spec = SyntheticSpec(
        n_classes=args.classes,
        image_side=args.image_side,
        stamp_side=args.stamp_side,
        n_train=args.train,
        n_test=args.test,
        min_labels=args.min_labels,
        max_labels=args.max_labels,
        min_positive=args.min_positive,
        noise_sigma=args.noise_sigma,
        stamp_seed=args.stamp_seed,
        shift=shift,
    )
    out = _resolve_out_dir(args.out)
    ds = generate_dataset(spec, args.seed, out_dir=out)
    print(f"wrote {ds.train_images.shape[0]} train / {ds.test_images.shape[0]} test samples "
          f"({ds.n_classes} classes) to {out}")
    return 0


def _cmd_pretrain(args) -> int:
    values = parse_config_file(args.config)
    if not values["pretrain_dataset"]:
        raise ValueError("pretrain: config must set pretrain_dataset")
    cfg = build_run_config(values)
    dataset = load_dataset(values["pretrain_dataset"])
    state = build_model(cfg.model, use_adapters=False)
    state.adapters = None
    stats = simulate_pretraining(state, dataset, cfg)
    out_dir = _resolve_out_dir(args.out_dir, values["out_dir"])
    os.makedirs(out_dir, exist_ok=True)
    path = args.out or os.path.join(out_dir, "backbone.npz")
    save_checkpoint(path, state)
    print(f"pretrained backbone for {stats['steps']} steps, saved to {path}")
    return 0


def _cmd_run(args) -> int:
    if args.print_config:
        print(print_config(), end="")
        return 0
    if not args.config:
        raise ValueError("run: --config is required (or use --print-config)")
    values = parse_config_file(args.config)
    if args.method:
        values["method"] = args.method
    cfg = build_run_config(values)
    if not values["dataset"]:
        raise ValueError("run: config must set dataset")
    dataset = load_dataset(values["dataset"])

    donor = None
    pretrain_ds = None
    if values["pretrain_checkpoint"]:
        donor = load_checkpoint(values["pretrain_checkpoint"])
    elif values["pretrain_dataset"]:
        pretrain_ds = load_dataset(values["pretrain_dataset"])

    out_dir = _resolve_out_dir(args.out_dir, values["out_dir"])
    report = run_benchmark(cfg, dataset, pretrain=pretrain_ds, out_dir=out_dir, backbone_from=donor)
    paths = write_report(report, out_dir)
    print(render_report(report.payload), end="")
    print(f"report written to {paths['report']}")
    return 0


def _cmd_report(args) -> int:
    payload = load_report(args.report)
    print(render_report(payload), end="")
    return 0


def _cmd_dump_prompts(args) -> int:
    state = load_checkpoint(args.checkpoint)
    rows = list(state.pool.entries)
    if not rows:
        raise ValueError(f"dump-prompts: {args.checkpoint} holds no prompts")
    out = args.out
    fh = open(out, "w", encoding="utf-8", newline="") if out else sys.stdout
    try:
        writer = csv.writer(fh, lineterminator="\n")
        d = state.config.embed_dim
        writer.writerow(["class_id", "stage_added", "frozen"] + [f"v{i}" for i in range(d)])
        for e in rows:
            writer.writerow([e.class_id, e.stage_added, int(e.frozen)]
                            + [f"{v!r}" for v in e.vector.data.tolist()])
    finally:
        if out:
            fh.close()
    if out:
        print(f"wrote {len(rows)} prompt vectors to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptcl",
        description="Continual multi-label image classification with class prompts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    g.add_argument("--out", required=True)
    g.add_argument("--classes", type=int, default=12)
    g.add_argument("--image-side", type=int, default=16)
    g.add_argument("--stamp-side", type=int, default=4)
    g.add_argument("--train", type=int, default=600)
    g.add_argument("--test", type=int, default=300)
    g.add_argument("--min-labels", type=int, default=1)
    g.add_argument("--max-labels", type=int, default=3)
    g.add_argument("--min-positive", type=int, default=20)
    g.add_argument("--noise-sigma", type=float, default=0.05)
    g.add_argument("--stamp-seed", type=int, default=7)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--shift-contrast", type=float, default=1.0)
    g.add_argument("--shift-offset", type=float, default=0.0)
    g.add_argument("--shift-cells", type=int, default=None,
                   help="seed for a fixed cell permutation (omit to disable)")
    g.add_argument("--cell-side", type=int, default=4)
    g.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("pretrain", help="train and freeze a backbone once")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="checkpoint path (default <out_dir>/backbone.npz)")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=_cmd_pretrain)

    r = sub.add_parser("run", help="run the incremental benchmark")
    r.add_argument("--config", default=None)
    r.add_argument("--method", default=None, choices=["p2l_ca", "p2l_ca_plus", "fine_tuning"])
    r.add_argument("--out-dir", default=None)
    r.add_argument("--print-config", action="store_true",
                   help="print the config schema with defaults and exit")
    r.set_defaults(func=_cmd_run)

    t = sub.add_parser("report", help="render a report.json as a table")
    t.add_argument("report")
    t.set_defaults(func=_cmd_report)

    d = sub.add_parser("dump-prompts", help="export prompt vectors from a checkpoint")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--out", default=None, help="CSV path (default: stdout)")
    d.set_defaults(func=_cmd_dump_prompts)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
