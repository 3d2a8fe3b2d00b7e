"""Command-line front end.

Commands: validate, train, eval, sweep-depth, repeats, embed. Exit codes are
a stable contract: 0 success, 2 input/validation error, 3 training
divergence. Every artifact embeds the full run config echo and the seed;
GSAN_THREADS caps the worker threads used by `repeats`.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import RunConfig
from .graph import GraphFormatError, load_bundle, standard_splits, validate
from .layers import gsan_forward
from .svgplot import line_chart
from .training import (
    DivergenceError,
    TrainReport,
    accuracy,
    micro_f1,
    run_repeats,
    train,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DIVERGED = 3


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool" or isinstance(f.default, bool):
            p.add_argument(flag, type=lambda s: s.lower() in ("1", "true", "yes"),
                           default=None, metavar="BOOL")
        elif f.name == "split_sizes":
            p.add_argument(flag, type=str, default=None,
                           metavar="TRAIN,VAL,TEST")
        else:
            typ = float if isinstance(f.default, float) else (
                int if isinstance(f.default, int) else str)
            p.add_argument(flag, type=typ, default=None)


def _resolve_config(args) -> RunConfig:
    """Precedence: command-line flags > config file > defaults."""
    base: dict = {}
    if args.config:
        base = json.loads(Path(args.config).read_text(encoding="utf-8"))
    for f in dataclasses.fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is None:
            continue
        if f.name == "split_sizes":
            v = [int(x) for x in str(v).split(",")]
        base[f.name] = v
    cfg = RunConfig.from_dict(base)
    return cfg


def _load_split_bundle(cfg: RunConfig):
    bundle = load_bundle(cfg.data, row_normalize=cfg.row_normalize)
    if bundle.task == "transductive":
        if cfg.split == "random":
            bundle = standard_splits(bundle, "random", seed=cfg.seed,
                                     sizes=tuple(cfg.split_sizes))
        else:
            bundle = standard_splits(bundle, "planetoid-standard")
    return bundle


def _write_metrics_csv(path: Path, report: TrainReport, echo: str) -> None:
    lines = [f"# config {echo}", "epoch,train_loss,val_loss,val_acc,val_f1"]
    for epoch, tl, vl, va, vf in report.metrics_rows():
        lines.append(f"{epoch},{tl:.9g},{vl:.9g},{va:.9g},{vf:.9g}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_report_json(path: Path, report: TrainReport) -> None:
    path.write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n",
                    encoding="utf-8")


def cmd_validate(args) -> int:
    try:
        bundle = load_bundle(args.dataset)
    except GraphFormatError as e:
        print(f"INVALID: {e}")
        return EXIT_INPUT
    problems = validate(bundle)
    if problems:
        for p in problems:
            print(f"VIOLATION: {p}")
        return EXIT_INPUT
    stats = {
        "task": bundle.task,
        "graphs": len(bundle.graphs),
        "n_features": bundle.n_features,
        "n_classes": bundle.n_classes,
        "multilabel": bundle.multilabel,
        "nodes": int(sum(g.n for g in bundle.graphs)),
        "undirected_edges": int(sum(g.n_undirected for g in bundle.graphs)),
        "directed_edge_slots": int(sum(g.n_directed_slots for g in bundle.graphs)),
    }
    print(json.dumps(stats, indent=1, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    try:
        cfg = _resolve_config(args)
        if not cfg.data or not cfg.out:
            raise ValueError("train needs --data and --out (or config entries)")
        bundle = _load_split_bundle(cfg)
    except (GraphFormatError, ValueError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        report = train(bundle, cfg, cfg.seed)
    except DivergenceError as e:
        print(f"diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    echo = cfg.to_json()
    _write_report_json(out / "report.json", report)
    _write_metrics_csv(out / "metrics.csv", report, echo)
    save_checkpoint(out / "ckpt", report.final_params, cfg)
    print(json.dumps(report.test_metrics, sort_keys=True))
    return EXIT_OK


def _eval_checkpoint(ckpt_path: str, data_path: str, row_normalize: bool | None = None):
    params, cfg = load_checkpoint(ckpt_path)
    rn = cfg.row_normalize if row_normalize is None else row_normalize
    bundle = load_bundle(data_path, row_normalize=rn)
    if bundle.n_features != params.n_features or bundle.n_classes != params.n_classes:
        raise ValueError(
            f"checkpoint expects {params.n_features} features / {params.n_classes} "
            f"classes, dataset has {bundle.n_features} / {bundle.n_classes}")
    return params, cfg, bundle


def cmd_eval(args) -> int:
    try:
        params, cfg, bundle = _eval_checkpoint(args.ckpt, args.dataset)
    except (CheckpointError, GraphFormatError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    from . import tensor as tz
    tz.set_default_dtype(cfg.dtype)
    metrics: dict = {"config": cfg.to_dict(), "seed": cfg.seed}
    if bundle.task == "transductive":
        g = bundle.graph
        logits, _ = gsan_forward(g, params, cfg, rng=None, training=False)
        from .graph import MASK_TEST, MASK_TRAIN, MASK_VAL
        for name, code in (("train", MASK_TRAIN), ("val", MASK_VAL), ("test", MASK_TEST)):
            mask = g.masks == code
            if mask.any():
                metrics[f"{name}_acc"] = accuracy(logits, g.labels, mask)
    else:
        for split in ("train", "val", "test"):
            graphs = bundle.graphs_for(split)
            if not graphs:
                continue
            logit_blocks = []
            target_blocks = []
            for g in graphs:
                logits, _ = gsan_forward(g, params, cfg, rng=None, training=False)
                logit_blocks.append(logits.data)
                target_blocks.append(g.labels)
            metrics[f"{split}_micro_f1"] = micro_f1(np.vstack(logit_blocks),
                                                    np.vstack(target_blocks))
    print(json.dumps(metrics, indent=1, sort_keys=True))
    return EXIT_OK


def cmd_sweep_depth(args) -> int:
    try:
        cfg = _resolve_config(args)
        if not cfg.data or not cfg.out:
            raise ValueError("sweep-depth needs --data and --out")
        depths = [int(d) for d in args.depths.split(",")]
        bundle = _load_split_bundle(cfg)
    except (GraphFormatError, ValueError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    echo = cfg.to_json()
    rows = []
    for depth in depths:
        dcfg = RunConfig.from_dict({**cfg.to_dict(), "layers": depth})
        try:
            report = train(bundle, dcfg, dcfg.seed)
        except DivergenceError as e:
            print(f"diverged at depth {depth}: {e}", file=sys.stderr)
            return EXIT_DIVERGED
        from .training import final_metric
        rows.append((depth, report.best_val_metric, final_metric(report)))
        print(f"depth {depth}: val={rows[-1][1]:.4f} test={rows[-1][2]:.4f}")
    lines = [f"# config {echo}", "depth,val_acc,test_acc"]
    for depth, va, ta in rows:
        lines.append(f"{depth},{va:.9g},{ta:.9g}")
    (out / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    svg = line_chart([r[0] for r in rows],
                     {"val": [r[1] for r in rows], "test": [r[2] for r in rows]},
                     title="Accuracy vs depth", xlabel="layers", ylabel="accuracy",
                     desc=f"config {echo}")
    (out / "sweep.svg").write_text(svg, encoding="utf-8")
    return EXIT_OK


def cmd_repeats(args) -> int:
    try:
        cfg = _resolve_config(args)
        if not cfg.data:
            raise ValueError("repeats needs --data")
        bundle = _load_split_bundle(cfg)
    except (GraphFormatError, ValueError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    workers = int(os.environ.get("GSAN_THREADS", "1"))
    try:
        agg = run_repeats(bundle, cfg, args.k, cfg.seed, max_workers=max(workers, 1))
    except DivergenceError as e:
        print(f"diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    agg["config"] = cfg.to_dict()
    text = json.dumps(agg, indent=1, sort_keys=True)
    print(text)
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "repeats.json").write_text(text + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_embed(args) -> int:
    try:
        params, cfg, bundle = _eval_checkpoint(args.ckpt, args.dataset)
        out = Path(args.out) if args.out else Path(cfg.out)
        if str(out) == ".":
            raise ValueError("embed needs --out (or config entry)")
    except (CheckpointError, GraphFormatError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    from . import tensor as tz
    tz.set_default_dtype(cfg.dtype)
    out.mkdir(parents=True, exist_ok=True)
    echo = cfg.to_json()
    width = cfg.penultimate_width
    lines = [f"# config {echo}",
             "node," + ",".join(f"dim_{i}" for i in range(width)) + ",label"]
    row_base = 0
    for g in bundle.graphs:
        _, emb = gsan_forward(g, params, cfg, rng=None, training=False)
        for i in range(g.n):
            if bundle.multilabel:
                label = "".join(str(int(b)) for b in g.labels[i])
            else:
                label = str(int(g.labels[i]))
            vec = ",".join(f"{v:.9g}" for v in emb.data[i])
            lines.append(f"{row_base + i},{vec},{label}")
        row_base += g.n
    (out / "embeddings.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {out / 'embeddings.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gsan", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a dataset bundle directory")
    p.add_argument("dataset")
    p.set_defaults(fn=cmd_validate)

    for name, fn in (("train", cmd_train), ("sweep-depth", cmd_sweep_depth),
                     ("repeats", cmd_repeats)):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="flat JSON config file")
        _add_config_flags(p)
        if name == "sweep-depth":
            p.add_argument("--depths", default="2,4,8,16")
        if name == "repeats":
            p.add_argument("-k", type=int, default=5)
        p.set_defaults(fn=fn)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dataset", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("embed", help="export penultimate embeddings as CSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_embed)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
