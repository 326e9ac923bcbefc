"""Command-line pipeline: synthesize, sample, train-fusion, evaluate, smooth, report.

Settings come from an INI file (``--config``) and command-line flags; flags win.
Exit codes: 0 success, 1 domain or I/O error, 2 usage error.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from fusionfer import checkpoint, features, fusion, metrics, regions
from fusionfer._io import atomic_write_text


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class Option:
    flag: str
    section: str
    key: str
    type: type
    default: object
    help: str
    is_input: bool = False  # must exist when the command starts


OPTIONS = {
    o.key: o
    for o in [
        Option("--seed", "run", "seed", int, 0, "PRNG seed (PCG64)"),
        Option("--threads", "run", "threads", int, 1, "upper bound on BLAS threads"),
        Option("--manifest", "paths", "keypoint_manifest", str, None, "JSON-lines keypoint manifest", True),
        Option("--out-dir", "paths", "synth_dir", str, None, "directory for auxiliary views and pairs.csv"),
        Option("--regions", "synth", "regions", str, "Eye,Mouth", "comma-separated regions: Eye, Mouth, Nose"),
        Option("--input", "paths", "embeddings", str, None, "embedding file to sample from", True),
        Option("--output", "paths", "sampled", str, None, "sampled embedding file to write"),
        Option("--n-per-class", "sample", "n_per_class", int, 8000, "records drawn per class"),
        Option("--main", "paths", "main_embeddings", str, None, "main-view embedding file", True),
        Option("--aux", "paths", "aux_embeddings", str, None, "auxiliary-view embedding file", True),
        Option("--checkpoint", "paths", "checkpoint", str, None, "model checkpoint path"),
        Option("--loss-csv", "paths", "loss_history", str, None, "loss history CSV (iter,loss)"),
        Option("--pair-report", "paths", "pair_report", str, "", "optional join/drop report"),
        Option("--dim", "model", "dim", int, 0, "expected embedding dimension (0: take from data)"),
        Option("--n-heads", "model", "n_heads", int, 2, "attention heads; must divide dim"),
        Option("--strategy", "model", "strategy", str, "Concat", "key generator: " + ", ".join(fusion.STRATEGIES)),
        Option("--hidden", "model", "hidden", int, 0, "classifier hidden width (0: dim)"),
        Option("--lr", "train", "lr", float, 1e-4, "Adam learning rate"),
        Option("--iters", "train", "iters", int, 100, "training iterations"),
        Option("--batch", "train", "batch", int, 512, "batch size, capped at dataset size"),
        Option("--predictions", "paths", "predictions", str, None, "predictions CSV"),
        Option("--report", "paths", "report", str, None, "text report path"),
        Option("--report-csv", "paths", "report_csv", str, "", "CSV report path"),
        Option("--smoothed", "paths", "smoothed", str, None, "smoothed predictions CSV to write"),
        Option("--window", "smooth", "window", int, metrics.DEFAULT_WINDOW, "sliding window size"),
        Option("--mode", "smooth", "mode", str, "majority", "smoothing rule: majority or logits"),
    ]
}

COMMON = ["seed", "threads"]
COMMANDS = {
    "synthesize": (
        "build auxiliary-view images from a keypoint manifest",
        ["keypoint_manifest", "synth_dir", "regions"],
    ),
    "sample": (
        "draw a class-balanced subset of an embedding file",
        ["embeddings", "sampled", "n_per_class"],
    ),
    "train-fusion": (
        "train the fusion attention model on paired embeddings",
        ["main_embeddings", "aux_embeddings", "checkpoint", "loss_history", "pair_report",
         "dim", "n_heads", "strategy", "hidden", "lr", "iters", "batch"],
    ),
    "evaluate": (
        "predict with a checkpoint and score against labels",
        ["main_embeddings", "aux_embeddings", "checkpoint", "predictions", "report", "report_csv", "dim"],
    ),
    "smooth": (
        "apply sliding-window smoothing to a predictions CSV",
        ["predictions", "smoothed", "window", "mode"],
    ),
    "report": (
        "score a predictions CSV that carries ground truth",
        ["predictions", "report", "report_csv"],
    ),
}
# keys read (not written) by a command; checked for existence up front
INPUTS = {
    "evaluate": {"checkpoint"},
    "smooth": {"predictions"},
    "report": {"predictions"},
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fusionfer",
        description=__doc__.split("\n\n")[0],
        epilog="Every flag can also be set in the --config INI file under the [section] key shown.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (summary, keys) in COMMANDS.items():
        p = sub.add_parser(name, help=summary, description=summary)
        p.add_argument("--config", help="INI config file; flags override its values")
        for key in keys + COMMON:
            o = OPTIONS[key]
            default = "required" if o.default is None else repr(o.default)
            p.add_argument(
                o.flag, dest=o.key, type=o.type, default=None,
                help=f"{o.help} [config: [{o.section}] {o.key}; default: {default}]",
            )
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge flags over the config file over defaults for the keys of ``args.command``."""
    cp = configparser.ConfigParser()
    if args.config:
        if not Path(args.config).is_file():
            raise FileNotFoundError(f"config file not found: {args.config}")
        cp.read(args.config, encoding="utf-8")
    keys = COMMANDS[args.command][1] + COMMON
    out = {}
    for key in keys:
        o = OPTIONS[key]
        value = getattr(args, key)
        if value is None and cp.has_option(o.section, o.key):
            raw = cp.get(o.section, o.key)
            try:
                value = o.type(raw)
            except ValueError as exc:
                raise UsageError(f"config [{o.section}] {o.key}: {exc}") from exc
        if value is None:
            value = o.default
        if value is None:
            raise UsageError(f"{args.command}: missing {o.flag} (or [{o.section}] {o.key} in the config)")
        out[key] = value
    for key in keys:
        o = OPTIONS[key]
        if (o.is_input or key in INPUTS.get(args.command, ())) and out[key] and not Path(out[key]).exists():
            raise FileNotFoundError(f"{o.flag}: no such file: {out[key]}")
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_synthesize(cfg: dict) -> int:
    comp = regions.ViewComposition.from_names([s.strip() for s in cfg["regions"].split(",") if s.strip()])
    rep = regions.synthesize_manifest(cfg["keypoint_manifest"], cfg["synth_dir"], comp)
    print(f"written: {len(rep.written)}")
    print(f"filtered: {len(rep.filtered)}")
    for sid, reason in rep.filtered:
        print(f"  {sid}: {reason}")
    return 0


def cmd_sample(cfg: dict) -> int:
    ds = features.load_embeddings(cfg["embeddings"])
    out = features.uniform_class_sample(ds, cfg["n_per_class"], cfg["seed"])
    if cfg["sampled"].endswith(".csv"):
        features.save_embeddings_csv(out, cfg["sampled"])
    else:
        features.save_embeddings(out, cfg["sampled"])
    print(f"sampled {len(out)} of {len(ds)} records")
    return 0


def _paired(cfg: dict) -> features.PairedDataset:
    main = features.load_embeddings(cfg["main_embeddings"])
    aux = features.load_embeddings(cfg["aux_embeddings"])
    if len(main) and len(aux) and main.dim != aux.dim:
        raise features.DimensionMismatch(f"main dim {main.dim} != aux dim {aux.dim}")
    paired = features.pair_views(main, aux)
    if cfg.get("dim") and len(paired) and paired.main.dim != cfg["dim"]:
        raise features.DimensionMismatch(f"embeddings have dim {paired.main.dim}, config says {cfg['dim']}")
    return paired


def cmd_train_fusion(cfg: dict) -> int:
    paired = _paired(cfg)
    if len(paired) == 0:
        raise fusion.EmptyDataset("no paired samples to train on")
    if cfg["pair_report"]:
        atomic_write_text(cfg["pair_report"], paired.report())
    model_cfg = fusion.FusionConfig(paired.main.dim, cfg["n_heads"], cfg["strategy"], cfg["hidden"])
    hyper = fusion.TrainConfig(iters=cfg["iters"], batch=cfg["batch"], lr=cfg["lr"], seed=cfg["seed"])
    model, history = fusion.train_fusion(paired, hyper, model_cfg)
    checkpoint.save_checkpoint(model, cfg["checkpoint"])
    lines = ["iter,loss"] + [f"{i},{loss!r}" for i, loss in enumerate(history, 1)]
    atomic_write_text(cfg["loss_history"], "\n".join(lines) + "\n")
    print(f"trained {cfg['strategy']} on {len(paired)} pairs; final loss {history[-1]:.6g}")
    return 0


def _write_report(cfg: dict, s: metrics.Scores) -> None:
    atomic_write_text(cfg["report"], metrics.format_report(s))
    if cfg["report_csv"]:
        atomic_write_text(cfg["report_csv"], metrics.report_csv(s))
    sys.stdout.write(metrics.format_report(s))


def cmd_evaluate(cfg: dict) -> int:
    model = checkpoint.load_checkpoint(cfg["checkpoint"])
    paired = _paired(cfg)
    if len(paired) == 0:
        raise metrics.EmptyInput("no paired samples to evaluate")
    if paired.main.dim != model.config.d_model:
        raise features.DimensionMismatch(
            f"checkpoint expects dim {model.config.d_model}, embeddings have {paired.main.dim}"
        )
    logits, _ = fusion.fusion_forward(paired.main.vectors, paired.aux.vectors, model)
    pred = logits.argmax(axis=1)
    gt = paired.labels

    main = paired.main
    seqs = []
    for vid in dict.fromkeys(main.video_ids):
        idx = np.array([i for i, v in enumerate(main.video_ids) if v == vid])
        idx = idx[np.argsort(main.frame_index[idx], kind="stable")]
        seqs.append(metrics.PredictionSequence(vid, main.frame_index[idx], pred[idx], gt[idx], logits[idx]))
    metrics.write_predictions(cfg["predictions"], seqs)
    _write_report(cfg, metrics.score(pred, gt))
    return 0


def cmd_smooth(cfg: dict) -> int:
    seqs = metrics.read_predictions(cfg["predictions"])
    out = [metrics.sliding_window_smooth(s, cfg["window"], cfg["mode"]) for s in seqs]
    metrics.write_predictions(cfg["smoothed"], out)
    changed = sum(int(np.count_nonzero(a.pred != b.pred)) for a, b in zip(seqs, out))
    print(f"smoothed {sum(len(s.pred) for s in seqs)} frames in {len(seqs)} videos; {changed} labels changed")
    return 0


def cmd_report(cfg: dict) -> int:
    seqs = metrics.read_predictions(cfg["predictions"])
    if any(s.gt is None for s in seqs):
        raise ValueError(f"{cfg['predictions']}: ground-truth column missing or incomplete")
    pred = np.concatenate([s.pred for s in seqs]) if seqs else np.zeros(0, dtype=np.intp)
    gt = np.concatenate([s.gt for s in seqs]) if seqs else np.zeros(0, dtype=np.intp)
    _write_report(cfg, metrics.score(pred, gt))
    return 0


HANDLERS = {
    "synthesize": cmd_synthesize,
    "sample": cmd_sample,
    "train-fusion": cmd_train_fusion,
    "evaluate": cmd_evaluate,
    "smooth": cmd_smooth,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        with threadpool_limits(limits=max(1, cfg["threads"])):
            return HANDLERS[args.command](cfg)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
