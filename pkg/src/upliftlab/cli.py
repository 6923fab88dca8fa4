"""Command-line entry point: ``upliftlab <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 training failure,
4 evaluation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import datagen, grouping, metrics
from .datagen import Dataset, GenConfig
from .errors import ConfigError, UpliftLabError
from .grouping import GroupingConfig
from .harness import ExperimentConfig, load_config, merge_reports, render_report, run_pipeline, run_search
from .harness.pipeline import Timer, evaluate_model, run_grouping, write_preds
from .harness.report import dumps_report, load_report
from .models import (BASELINES, BaselineConfig, Records, UpliftConfig, build_baseline, build_uplift_model, fit,
                     load_model, save_model)


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load_records(path: str, raw: bool) -> Records:
    """A directory holding ``grouped.csv`` (grouped) or split CSVs (raw)."""
    src = Path(path)
    if (src / "grouped.csv").exists() and not raw:
        return Records.from_grouped(grouping.load_grouped(src))
    if raw:
        return Records.from_raw(Dataset.load(src))
    raise ConfigError(f"{src} holds no grouped.csv; pass --no-rcg to train on raw samples")


# -- commands -----------------------------------------------------------------

def cmd_gen(args) -> dict:
    doc = {}
    if args.config:
        doc = load_config(args.config).to_dict()["data"] or {}
    for key in ("n_users", "pool_multiplier", "seed"):
        if getattr(args, key) is not None:
            doc[key] = getattr(args, key)
    if args.noiseless:
        doc["noise"] = False
    cfg = GenConfig.from_dict(doc)
    ds = datagen.generate(cfg)
    ds.save(args.out)
    return {"samples": len(ds), "users": int(len(ds.xu)), "contexts": int(len(ds.xc)), "out": args.out}


def _grouping_cfg(args) -> GroupingConfig:
    doc = {}
    if args.config:
        doc = load_config(args.config).grouping.to_dict()
    if args.k is not None:
        doc["k"] = args.k
    if args.epochs is not None:
        doc["max_epochs"] = args.epochs
    return GroupingConfig.from_dict(doc)


def cmd_group(args) -> dict:
    ds = Dataset.load(args.data)
    if ds.split is None:
        datagen.split(ds, args.seed)
    gcfg = _grouping_cfg(args)
    sweep = args.sweep or []
    cfg = ExperimentConfig(data=None, data_path=args.data, grouping=gcfg, sweep_ks=sweep,
                           models=[], seeds=[args.seed])
    timer = Timer()
    grp = run_grouping(cfg, ds, args.seed, timer)
    out = Path(args.out)
    grouping.save_grouping_model(out / "grouping.json", grp.model, ds.schema, gcfg, args.seed)
    grouping.save_grouped(grp.gds, out)
    _write_json(out / "group_stats.json", {"stats": grp.stats, "regressor": grp.regressor})
    if args.dump_embeddings:
        rows, first = np.unique(ds.crow, return_index=True)
        emb = grp.model.embed(ds.xc[rows])
        cols = ["ctx_id", "g"] + [f"e_{i}" for i in range(emb.shape[1])]
        table = np.column_stack([ds.ctx_id[first], grouping.nearest(emb, grp.model.centroids), emb])
        fmt = ["%d", "%d"] + ["%.17g"] * emb.shape[1]
        np.savetxt(out / "embeddings.csv", table, delimiter=",", header=",".join(cols), comments="", fmt=fmt)
    return grp.stats


def cmd_group_sweep(args) -> dict:
    ds = Dataset.load(args.data)
    if ds.split is None:
        datagen.split(ds, args.seed)
    gcfg = _grouping_cfg(args)
    cfg = ExperimentConfig(data=None, data_path=args.data, grouping=gcfg, sweep_ks=list(args.ks),
                           models=[], seeds=[args.seed])
    grp = run_grouping(cfg, ds, args.seed, Timer())
    rows = [{"k": k, "alignment": grp.stats[f"alignment_k{k}"], "purity": grp.stats[f"purity_k{k}"]}
            for k in args.ks]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        fh.write("k,alignment,purity\n")
        for r in rows:
            purity = "" if r["purity"] is None else repr(r["purity"])
            fh.write(f"{r['k']},{r['alignment']!r},{purity}\n")
    return {"sweep": rows}


def cmd_train(args) -> dict:
    raw = args.no_rcg
    rec = _load_records(args.data, raw)
    params = json.loads(args.params) if args.params else {}
    for key in ("lr", "batch_size", "max_epochs", "max_steps"):
        if getattr(args, key) is not None:
            params[key] = getattr(args, key)
    if args.model == "umlc":
        params.update(base=args.base, rcg=not args.no_rcg, uci=not args.no_uci, tfi=not args.no_tfi)
        mcfg = UpliftConfig.from_dict(params)
        model = build_uplift_model(mcfg, rec, args.seed)
        stream = "uplift"
    else:
        mcfg = BaselineConfig.from_dict(dict(params, kind=args.model))
        model = build_baseline(mcfg, rec, args.seed)
        stream = f"baseline-{args.model}"
    hist = fit(model, rec, mcfg, args.seed, stream=stream)
    save_model(args.out, model, args.seed, {"representation": rec.kind})
    return {"best_val_qini": hist.best_val_qini, "best_epoch": hist.best_epoch, "epochs": len(hist.val_qini),
            "checkpoint": args.out}


def cmd_eval(args) -> dict:
    model, manifest = load_model(args.checkpoint)
    rec = _load_records(args.data, manifest.get("representation") == "raw")
    idx = rec.indices(args.split) if rec.split is not None else np.arange(len(rec))
    ev, pred = evaluate_model(model, rec, idx)
    out = Path(args.out)
    truth = (rec.y0[idx], rec.y1[idx]) if rec.has_truth else (None, None)
    metrics.export_curves(out, pred, rec.t[idx], rec.y[idx], *truth)
    write_preds(out / "preds.csv", model, rec, idx, pred)
    _write_json(out / "metrics.json", ev)
    return ev


def cmd_pipeline(args) -> dict:
    report = run_pipeline(load_config(args.config), args.out)
    return {"summary": report["summary"], "out": args.out}


def cmd_search(args) -> dict:
    result = run_search(load_config(args.config), args.out)
    return {seed: {name: m["best"] for name, m in per.items()} for seed, per in result["seeds"].items()}


def cmd_report(args) -> dict:
    report = merge_reports([load_report(p) for p in args.reports])
    text = render_report(report)
    if args.markdown:
        Path(args.markdown).write_text(text)
    if args.out:
        Path(args.out).write_text(dumps_report(report))
    if not args.quiet:
        sys.stdout.write(text)
    return {}


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="upliftlab", description="Uplift modeling with large-scale contexts.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic RCT dataset")
    g.add_argument("--config")
    g.add_argument("--n-users", dest="n_users", type=int)
    g.add_argument("--pool-multiplier", dest="pool_multiplier", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--noiseless", action="store_true")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    for name, func, helptext in (("group", cmd_group, "train the regressor, cluster contexts, aggregate"),
                                 ("group-sweep", cmd_group_sweep, "alignment and purity over several K")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--data", required=True, help="dataset directory written by gen")
        s.add_argument("--config")
        s.add_argument("--epochs", type=int)
        s.add_argument("--seed", type=int, default=0)
        if name == "group":
            s.add_argument("--k", type=int)
            s.add_argument("--sweep", type=int, nargs="*")
            s.add_argument("--dump-embeddings", action="store_true")
            s.add_argument("--out", required=True, help="output directory")
        else:
            s.add_argument("--ks", type=int, nargs="+", default=[2, 4, 6, 8, 10, 12])
            s.add_argument("--out", required=True, help="output CSV")
            s.set_defaults(k=None)
        s.set_defaults(func=func)

    t = sub.add_parser("train", help="train one uplift model")
    t.add_argument("--data", required=True, help="grouped directory, or a dataset directory with --no-rcg")
    t.add_argument("--model", default="umlc", choices=("umlc",) + BASELINES)
    t.add_argument("--base", default="cfrnet_mmd", choices=("mlp", "tarnet", "cfrnet_mmd"))
    t.add_argument("--no-rcg", action="store_true", help="train on raw contexts instead of groups")
    t.add_argument("--no-uci", action="store_true", help="mean pooling instead of co-attention")
    t.add_argument("--no-tfi", action="store_true", help="drop the treatment interaction")
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--epochs", dest="max_epochs", type=int)
    t.add_argument("--max-steps", dest="max_steps", type=int)
    t.add_argument("--params", help="extra model parameters as JSON")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test", choices=datagen.SPLITS)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    for name, func, helptext in (("pipeline", cmd_pipeline, "run the full experiment"),
                                 ("search", cmd_search, "random hyperparameter search")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", required=True)
        s.add_argument("--out", required=True)
        s.set_defaults(func=func)

    r = sub.add_parser("report", help="aggregate report.json files into a table")
    r.add_argument("reports", nargs="+", help="report.json files or run directories")
    r.add_argument("--markdown")
    r.add_argument("--out", help="write the merged report JSON here")
    r.add_argument("--quiet", action="store_true")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        result = args.func(args)
    except UpliftLabError as exc:
        print(f"upliftlab {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    if result and args.command != "report":
        print(json.dumps(result, indent=2, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
