"""Command-line pipeline: gen-data, train, eval, tune, export-plots.

Every command writes a replay manifest (resolved configuration, seeds, and
paths) next to its outputs before doing any work. Exit codes: 0 on success,
1 on runtime failure, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, checkpoint, plots
from . import dataset as dsm
from .fno import Fno, FnoConfig, count_params
from .train import TrainConfig, evaluate, fit, prepare
from .tune import SearchSpace, run_search

# Published optima: (model, train settings, architecture). The ORd rows are
# accepted by the parser but rejected at run time (no built-in ORd solver).
PRESETS = {
    "fhn-constrained": {
        "model": "fhn",
        "train": dict(lr=1.7e-3, weight_decay=4.8e-4, scheduler_factor=0.93),
        "fno": dict(width=64, depth=5, modes=12, activation="gelu", padding=5, variant="mlp"),
    },
    "fhn-unconstrained": {
        "model": "fhn",
        "train": dict(lr=6.2e-4, weight_decay=9.7e-4, scheduler_factor=0.85),
        "fno": dict(width=224, depth=4, modes=20, activation="leaky_relu", padding=15, variant="mlp"),
    },
    "hh-constrained": {
        "model": "hh",
        "train": dict(lr=7.6e-3, weight_decay=5.1e-4, scheduler_factor=0.92),
        "fno": dict(width=96, depth=5, modes=5, activation="gelu", padding=7, variant="mlp"),
    },
    "hh-unconstrained": {
        "model": "hh",
        "train": dict(lr=4.4e-4, weight_decay=7.5e-4, scheduler_factor=0.88),
        "fno": dict(width=256, depth=4, modes=24, activation="leaky_relu", padding=15, variant="mlp"),
    },
    "ord-constrained": {
        "model": "ord",
        "train": dict(lr=4.2e-3, weight_decay=4.9e-4, scheduler_factor=0.93),
        "fno": dict(width=32, depth=5, modes=48, activation="gelu", padding=15, variant="classic"),
    },
    "ord-unconstrained": {
        "model": "ord",
        "train": dict(lr=8.3e-4, weight_decay=1e-3, scheduler_factor=0.93),
        "fno": dict(width=192, depth=5, modes=32, activation="gelu", padding=14, variant="mlp"),
    },
}

OUT_CHANNELS = {"fhn": 2, "hh": 4, "ord": 41}


def _write_manifest(path: Path, command: str, args: argparse.Namespace, resolved: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "tool": "ionop",
        "version": __version__,
        "command": command,
        "argv": sys.argv[1:],
        "resolved": resolved,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


# ---------------------------------------------------------------------------
# gen-data


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    plan = dsm.build_plan(args.model, args.split, args.scale)
    _write_manifest(
        Path(str(out) + ".manifest.json"),
        "gen-data",
        args,
        {
            "model": args.model,
            "split": args.split,
            "scale": args.scale,
            "seed": args.seed,
            "n_points": args.points,
            "rtol": args.rtol,
            "atol": args.atol,
            "subset_counts": {s.name: s.count for s in plan.subsets},
            "out": str(out.resolve()),
        },
    )
    ds = dsm.generate(plan, seed=args.seed, n_points=args.points, rtol=args.rtol, atol=args.atol)
    dsm.save(ds, out)
    print(f"wrote {len(ds)} {args.model}/{args.split} records to {out}")
    return 0


# ---------------------------------------------------------------------------
# train


def _resolve_train_setup(args):
    if args.preset:
        preset = PRESETS[args.preset]
        model_name = preset["model"]
        train_kw = dict(preset["train"])
        fno_kw = dict(preset["fno"])
    else:
        spec = json.loads(Path(args.config).read_text())
        model_name = spec["model"]
        train_kw = spec["train"]
        fno_kw = spec["fno"]
    if args.width:
        fno_kw["width"] = args.width
    if args.depth:
        fno_kw["depth"] = args.depth
    if args.modes:
        fno_kw["modes"] = args.modes
    in_channels = 1 if args.no_coord_channel else 2
    fno_cfg = FnoConfig(
        in_channels=in_channels, out_channels=OUT_CHANNELS[model_name], **fno_kw
    ).validate()
    train_cfg = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, seed=args.seed, **train_kw
    ).validate()
    return model_name, fno_cfg, train_cfg


def _load_splits(data_dir: Path, model_name: str):
    paths = {split: data_dir / f"{model_name}-{split}.ds" for split in ("train", "val", "test")}
    missing = [str(p) for p in paths.values() if not p.exists()]
    if missing:
        raise FileNotFoundError(f"missing dataset files: {', '.join(missing)}")
    return (dsm.load(paths["train"]), dsm.load(paths["val"]), dsm.load(paths["test"]))


def cmd_train(args) -> int:
    model_name, fno_cfg, train_cfg = _resolve_train_setup(args)
    if model_name == "ord":
        raise NotImplementedError(
            "the ORd model is data-compatible but has no built-in solver or presets wired "
            "for training in this build"
        )
    out = Path(args.out)
    _write_manifest(
        Path(str(out) + ".manifest.json"),
        "train",
        args,
        {
            "model": model_name,
            "preset": args.preset,
            "fno": fno_cfg.to_dict(),
            "train": train_cfg.to_dict(),
            "data": str(Path(args.data).resolve()),
            "out": str(out.resolve()),
            "param_count": count_params(fno_cfg),
        },
    )
    train_ds, val_ds, test_ds = _load_splits(Path(args.data), model_name)
    data = prepare(train_ds, val_ds, test_ds, coord_channel=not args.no_coord_channel)
    model = Fno.create(fno_cfg, seed=train_cfg.seed)
    best_params, history = fit(model, data, train_cfg)
    provenance = {
        "model": model_name,
        "preset": args.preset,
        "seed": train_cfg.seed,
        "epochs": train_cfg.epochs,
        "train": train_cfg.to_dict(),
        "best_epoch": history.best_epoch,
        "best_val_l2": history.best_val_l2,
        "final_train_l2": history.train_l2[-1],
        "final_test_l2": history.test_l2[-1],
        "final_channel_errors": history.final_channel_errors,
    }
    checkpoint.save(out, Fno(fno_cfg, best_params), normalization={k: list(v) for k, v in data.stats.items()}, provenance=provenance)
    history.to_csv(Path(str(out) + ".history.csv"))
    print(
        f"trained {model_name} ({count_params(fno_cfg)} params) for {train_cfg.epochs} epochs: "
        f"train L2 {history.train_l2[-1]:.4f}, test L2 {history.test_l2[-1]:.4f}, "
        f"best val L2 {history.best_val_l2:.4f} @ epoch {history.best_epoch}"
    )
    return 0


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    out_dir = Path(args.out)
    _write_manifest(
        out_dir / "manifest.json",
        "eval",
        args,
        {"checkpoints": [str(Path(p).resolve()) for p in args.model_ckpt],
         "data": str(Path(args.data).resolve()), "out": str(out_dir.resolve())},
    )
    ds = dsm.load(args.data)
    summaries = []
    for i, ckpt_path in enumerate(args.model_ckpt):
        model, stats, _prov = checkpoint.load(ckpt_path)
        if stats is None:
            raise ValueError(f"{ckpt_path}: checkpoint carries no normalization statistics")
        stats = {k: tuple(v) for k, v in stats.items()}
        report = evaluate(model, ds, stats, coord_channel=model.config.in_channels == 2)
        target = out_dir if len(args.model_ckpt) == 1 else out_dir / f"ckpt_{i}"
        report.write_csv(target)
        summaries.append(report.aggregate)
    agg = {
        "checkpoints": list(args.model_ckpt),
        "per_checkpoint": summaries,
    }
    if len(summaries) > 1:
        for key in ("mean_l2_norm", "mean_h1_norm", "mean_l2_phys"):
            vals = np.array([s[key] for s in summaries])
            agg[f"seeds_mean_{key}"] = float(vals.mean())
            agg[f"seeds_std_{key}"] = float(vals.std())
    (out_dir / "summary.json").write_text(json.dumps(agg, indent=2, sort_keys=True) + "\n")
    print(f"evaluated {len(args.model_ckpt)} checkpoint(s) on {len(ds)} records -> {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# tune


def cmd_tune(args) -> int:
    out_dir = Path(args.out)
    rungs = tuple(int(r) for r in args.rungs.split(","))
    _write_manifest(
        out_dir / "manifest.json",
        "tune",
        args,
        {"model": args.model, "trials": args.trials, "mode": args.mode,
         "rungs": list(rungs), "seed": args.seed, "data": str(Path(args.data).resolve())},
    )
    train_ds, val_ds, test_ds = _load_splits(Path(args.data), args.model)
    data = prepare(train_ds, val_ds, test_ds)
    result = run_search(
        SearchSpace(), args.trials, rungs, args.mode, data,
        master_seed=args.seed, out_dir=out_dir,
    )
    best_cfg = FnoConfig.from_dict(result.best.fno_config)
    checkpoint.save(
        out_dir / "best",
        Fno(best_cfg, result.best_params),
        normalization={k: list(v) for k, v in data.stats.items()},
        provenance={"trial": result.best.trial, "seed": result.best.seed,
                    "train": result.best.train_config, "val_l2": result.best.last_val(),
                    "test_l2": result.best.final_test_l2},
    )
    print(
        f"best trial {result.best.trial}: val L2 {result.best.last_val():.4f}, "
        f"test L2 {result.best.final_test_l2}, params {result.best.param_count}"
    )
    return 0


# ---------------------------------------------------------------------------
# export-plots


def cmd_export_plots(args) -> int:
    out_dir = Path(args.out)
    _write_manifest(out_dir / "manifest.json", "export-plots", args,
                    {"history": args.history, "eval": args.eval, "out": str(out_dir.resolve())})
    wrote = []
    if args.history:
        wrote.append(plots.history_svg(args.history, out_dir / "loss_curves.svg"))
    if args.eval:
        import csv as _csv

        with open(args.eval, newline="") as fh:
            rows = list(_csv.DictReader(fh))
        groups: dict = {}
        for row in rows:
            groups.setdefault(row.get("subset") or "all", []).append(float(row["l2_norm"]))
        wrote.append(plots.box_svg(groups, out_dir / "error_box.svg"))
        chan_csv = Path(args.eval).parent / "per_channel.csv"
        if chan_csv.exists():
            with open(chan_csv, newline="") as fh:
                crows = list(_csv.DictReader(fh))
            wrote.append(
                plots.bar_svg(
                    [r["channel"] for r in crows],
                    [float(r["rel_l2_normalized"]) for r in crows],
                    out_dir / "channel_bars.svg",
                )
            )
    if not wrote:
        raise ValueError("nothing to plot: pass --history and/or --eval")
    print("wrote " + ", ".join(str(p) for p in wrote))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ionop",
        description="Learn stimulus-to-trajectory operators of stiff ionic models with a 1-D FNO.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="synthesize a dataset split with the stiff solver")
    g.add_argument("--model", choices=("fhn", "hh", "ord"), required=True)
    g.add_argument("--split", choices=("train", "val", "test"), required=True)
    g.add_argument("--scale", type=float, default=1.0, help="subset-count scale factor")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--rtol", type=float, default=1e-6)
    g.add_argument("--atol", type=float, default=1e-8)
    g.add_argument("--points", type=int, default=256)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train an FNO on generated splits")
    src = t.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=sorted(PRESETS))
    src.add_argument("--config", help="JSON file with {model, train, fno} settings")
    t.add_argument("--data", required=True, help="directory holding <model>-{train,val,test}.ds")
    t.add_argument("--epochs", type=int, default=1000)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="checkpoint base path")
    t.add_argument("--width", type=int, help="override preset width")
    t.add_argument("--depth", type=int, help="override preset depth")
    t.add_argument("--modes", type=int, help="override preset mode count")
    t.add_argument("--no-coord-channel", action="store_true",
                   help="feed only the stimulus channel (no t/T coordinate)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="error report for trained checkpoints")
    e.add_argument("--model-ckpt", action="append", required=True,
                   help="checkpoint base path (repeat for a multi-seed report)")
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    u = sub.add_parser("tune", help="random search with successive halving")
    u.add_argument("--model", choices=("fhn", "hh"), required=True)
    u.add_argument("--data", required=True)
    u.add_argument("--trials", type=int, required=True)
    u.add_argument("--mode", choices=("constrained", "unconstrained"), required=True)
    u.add_argument("--rungs", default="30,90,270", help="comma-separated epoch budgets")
    u.add_argument("--seed", type=int, default=0)
    u.add_argument("--out", required=True)
    u.set_defaults(func=cmd_tune)

    p = sub.add_parser("export-plots", help="SVG renderings of history/eval CSV files")
    p.add_argument("--history", help="history CSV from train")
    p.add_argument("--eval", help="per-sample CSV from eval")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_plots)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # runtime failure -> exit 1 with a diagnostic
        print(f"ionop {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
