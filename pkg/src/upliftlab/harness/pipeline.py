"""End-to-end runs: data, grouping, model training and evaluation per seed.

Output layout under ``out_dir``::

    report.json  report.md  timings.json
    seed_<s>/grouping.json                   grouping checkpoint
    seed_<s>/<model>/checkpoint.json
    seed_<s>/<model>/preds.csv               test-split predictions
    seed_<s>/<model>/{uplift,qini,gain}_curve.csv

Everything except ``timings.json`` is a function of (config, seed) only.
"""

from __future__ import annotations

import csv
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .. import datagen, grouping, metrics
from ..datagen import Dataset
from ..errors import MetricError, TrainingError, UpliftLabError
from ..models import Records, build_baseline, build_uplift_model, fit, predict_uplift, save_model
from .config import ExperimentConfig, ModelSpec
from .report import dumps_report, finish_report, render_report
from .search import random_search

log = logging.getLogger(__name__)


class Timer:
    def __init__(self):
        self.stages: dict[str, float] = {}

    @contextmanager
    def stage(self, name: str):
        """Time a stage and tag any failure inside it with the stage name."""
        start = time.perf_counter()
        try:
            yield
        except UpliftLabError as exc:
            raise type(exc)(f"[{name}] {exc}") from exc
        except Exception as exc:
            wrap = MetricError if name.startswith("eval") else TrainingError
            raise wrap(f"[{name}] {type(exc).__name__}: {exc}") from exc
        finally:
            self.stages[name] = self.stages.get(name, 0.0) + time.perf_counter() - start


@dataclass
class Grouping:
    model: grouping.GroupingModel
    gds: grouping.GroupedDataset
    g_sample: np.ndarray
    stats: dict
    regressor: dict


# -- stages -------------------------------------------------------------------

def load_data(cfg: ExperimentConfig, seed: int) -> Dataset:
    """Generated data uses the run seed; loaded data keeps its split, or is split with the run seed."""
    if cfg.data is not None:
        return datagen.generate(replace(cfg.data, seed=seed))
    ds = Dataset.load(cfg.data_path)
    return ds if ds.split is not None else datagen.split(ds, seed)


def context_latent(ds: Dataset) -> np.ndarray | None:
    """Latent group per row of the context table (None without ground truth)."""
    if ds.latent_group is None:
        return None
    out = np.full(len(ds.xc), -1, dtype=np.int64)
    out[ds.crow] = ds.latent_group
    return out


def group_stats(ds: Dataset, rows: np.ndarray, labels: np.ndarray,
                g_sample: np.ndarray, mode: str) -> dict:
    gds = grouping.aggregate(ds, g_sample)
    latent = context_latent(ds)
    return {"alignment": grouping.alignment(gds, mode),
            "purity": None if latent is None else grouping.purity(labels, latent[rows]),
            "n_records": len(gds)}


def run_grouping(cfg: ExperimentConfig, ds: Dataset, seed: int, timer: Timer) -> Grouping:
    gcfg = cfg.grouping
    with timer.stage("group:regressor"):
        model, hist = grouping.train_regressor(ds, gcfg, seed)
    with timer.stage("group:certificate"):
        cert = grouping.check_proposition1(model, ds, seed=seed)
    with timer.stage("group:kmeans"):
        km = grouping.fit_groups(model, ds, gcfg.k, seed=seed, max_iter=gcfg.kmeans_max_iter, tol=gcfg.kmeans_tol)
        g_sample = grouping.assign_groups(model, ds)
        gds = grouping.aggregate(ds, g_sample)
        gds.k = gcfg.k
    with timer.stage("group:stats"):
        train = ds.split_mask("train")
        rows = np.unique(ds.crow[train])
        emb = model.embed(ds.xc[rows])
        stats = {"k": gcfg.k, "inertia": km.inertia, "lipschitz_bound": cert["C"],
                 "certificate_violations": cert["violations"]}
        base = group_stats(ds, rows, km.labels, g_sample, gcfg.alignment_mode)
        stats.update(base)
        all_rows, inverse = np.unique(ds.crow, return_inverse=True)
        all_emb = model.embed(ds.xc[all_rows])
        for k in cfg.sweep_ks:
            res = km if k == gcfg.k else grouping.kmeans(emb, k, seed=seed, max_iter=gcfg.kmeans_max_iter,
                                                         tol=gcfg.kmeans_tol)
            g_k = grouping.nearest(all_emb, res.centroids)[inverse]
            sweep = group_stats(ds, rows, res.labels, g_k, gcfg.alignment_mode)
            stats[f"alignment_k{k}"] = sweep["alignment"]
            stats[f"purity_k{k}"] = sweep["purity"]
    regressor = {"train_loss": hist.train_loss, "val_pred": hist.val_pred, "best_epoch": hist.best_epoch,
                 "lipschitz_bound": hist.lip, "mu_hat": cert["mu_hat"]}
    return Grouping(model, gds, g_sample, stats, regressor)


def sample_records(ds: Dataset, grp: Grouping | None, kind: str) -> Records:
    """Per-sample records: the common evaluation level for every representation."""
    if kind == "raw":
        return Records.from_raw(ds)
    return Records(kind="grouped", user_id=ds.user_id, urow=ds.urow, t=ds.t, y=ds.y, xu=ds.xu,
                   g=grp.g_sample, k=grp.gds.k, split=ds.split, y0=ds.y0, y1=ds.y1)


def build_model(cfg: ExperimentConfig, spec: ModelSpec, rec: Records, seed: int, overrides=None):
    mcfg = cfg.model_config(spec, overrides)
    if spec.is_umlc:
        return build_uplift_model(mcfg, rec, seed), mcfg
    return build_baseline(mcfg, rec, seed), mcfg


def train_model(cfg: ExperimentConfig, spec: ModelSpec, rec: Records, seed: int, overrides=None):
    model, mcfg = build_model(cfg, spec, rec, seed, overrides)
    stream = "uplift" if spec.is_umlc else f"baseline-{spec.kind}"
    hist = fit(model, rec, mcfg, seed, stream=stream)
    return model, mcfg, hist


def applicable_ranges(cfg: ExperimentConfig, spec: ModelSpec) -> dict:
    mcfg = cfg.model_config(spec)
    return {k: v for k, v in cfg.search.ranges.items() if hasattr(mcfg, k)}


def tune(cfg: ExperimentConfig, spec: ModelSpec, rec: Records, seed: int,
         keep: bool = False) -> tuple[dict, list, tuple | None]:
    """Random search for one model.

    Returns the best overrides, the trial log and, with ``keep``, the trained
    ``(model, config, history)`` of the best trial.  Training is deterministic
    given the overrides, so the kept model equals a retrained one.
    """
    ranges = applicable_ranges(cfg, spec)
    if cfg.search.n_trials < 1 or not ranges:
        return {}, [], None
    fitted = {}

    def objective(params):
        out = train_model(cfg, spec, rec, seed, params)
        if keep:
            fitted[len(fitted)] = out
        return out[2].best_val_qini

    best, trials = random_search(objective, ranges, cfg.search.n_trials, seed=cfg.search.seed + seed,
                                 stream=f"search-{spec.name}")
    winner = None
    if keep:
        idx = next(t.index for t in trials if t.params == best)
        winner = fitted[idx]
    return best, [t.as_dict() for t in trials], winner


def write_preds(path: Path, model, rec: Records, idx: np.ndarray, tau_hat: np.ndarray) -> None:
    cols = {"user_id": rec.user_id[idx]}
    if rec.grouped:
        cols["g"] = rec.g[idx]
    else:
        cols["ctx_row"] = rec.crow[idx]
    cols["t"] = rec.t[idx]
    cols["y_bar" if rec.grouped else "y"] = rec.y[idx]
    cols["tau_hat"] = tau_hat
    if getattr(model, "cfg", None) is not None and getattr(model.cfg, "tfi", False):
        cols["tau_tilde"] = predict_uplift(model, rec, "tau_tilde", idx)
    cols["mu0"] = predict_uplift(model, rec, "mu0", idx)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(cols))
        for row in zip(*cols.values()):
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else int(v) for v in row])


def evaluate_model(model, rec: Records, idx: np.ndarray) -> tuple[dict, np.ndarray]:
    pred = predict_uplift(model, rec, idx=idx)
    truth = (rec.y0[idx], rec.y1[idx]) if rec.has_truth else (None, None)
    ev = metrics.evaluate(pred, rec.t[idx], rec.y[idx], *truth)
    return ev.as_dict(), pred


# -- orchestration ------------------------------------------------------------

def run_seed(cfg: ExperimentConfig, seed: int, out_dir: Path, timer: Timer) -> dict:
    seed_dir = out_dir / f"seed_{seed}"
    with timer.stage("gen"):
        ds = load_data(cfg, seed)
    grp = None
    run: dict = {"seed": seed, "n_samples": len(ds), "models": {}}
    if cfg.uses_grouping():
        grp = run_grouping(cfg, ds, seed, timer)
        grouping.save_grouping_model(seed_dir / "grouping.json", grp.model, ds.schema, cfg.grouping, seed)
        run["grouping"] = {"stats": grp.stats, "regressor": grp.regressor}
    records = {}
    if grp is not None:
        records["grouped"] = Records.from_grouped(grp.gds)
    if cfg.uses_raw():
        records["raw"] = Records.from_raw(ds)
    samples = {kind: sample_records(ds, grp, kind) for kind in records}
    sample_test = np.flatnonzero(ds.split_mask("test"))

    for spec in cfg.models:
        kind = cfg.representation(spec)
        rec = records[kind]
        with timer.stage(f"search:{spec.name}"):
            best, trials, winner = tune(cfg, spec, rec, seed, keep=True)
        with timer.stage(f"train:{spec.name}"):
            model, mcfg, hist = winner or train_model(cfg, spec, rec, seed, best)
            save_model(seed_dir / spec.name / "checkpoint.json", model, seed, {"representation": kind})
        with timer.stage(f"eval:{spec.name}"):
            test = rec.indices("test")
            ev, pred = evaluate_model(model, rec, test)
            ev_samples, _ = evaluate_model(model, samples[kind], sample_test)
            truth = (rec.y0[test], rec.y1[test]) if rec.has_truth else (None, None)
            metrics.export_curves(seed_dir / spec.name, pred, rec.t[test], rec.y[test], *truth)
            write_preds(seed_dir / spec.name / "preds.csv", model, rec, test, pred)
        run["models"][spec.name] = {
            "kind": spec.kind, "representation": kind, "config": mcfg.to_dict(), "search": trials,
            "tuned": best, "history": hist.as_dict(), "val_qini": hist.best_val_qini,
            "test": ev, "test_samples": ev_samples,
        }
        log.info("seed %d %s: test qini %.5f", seed, spec.name, ev["qini"])
    return run


def run_pipeline(cfg: ExperimentConfig, out_dir) -> dict:
    """Run every seed, write the report, timings and Markdown summary; return the report."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.validate()
    runs, timings = [], {}
    for seed in cfg.seeds:
        timer = Timer()
        runs.append(run_seed(cfg, seed, out_dir, timer))
        timings[str(seed)] = timer.stages
    report = finish_report(cfg.to_dict(), runs)
    (out_dir / "report.json").write_text(dumps_report(report))
    (out_dir / "report.md").write_text(render_report(report))
    total = sum(sum(st.values()) for st in timings.values())
    (out_dir / "timings.json").write_text(dumps_report({"seconds": timings, "total": total}))
    return report


def run_search(cfg: ExperimentConfig, out_dir) -> dict:
    """Tuning only: the trial log and best parameters per model and seed."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.search.n_trials < 1:
        cfg.search.n_trials = 1
    result = {"config": cfg.to_dict(), "seeds": {}}
    for seed in cfg.seeds:
        timer = Timer()
        with timer.stage("gen"):
            ds = load_data(cfg, seed)
        grp = run_grouping(cfg, ds, seed, timer) if cfg.uses_grouping() else None
        records = {"grouped": Records.from_grouped(grp.gds)} if grp else {}
        if cfg.uses_raw():
            records["raw"] = Records.from_raw(ds)
        per_model = {}
        for spec in cfg.models:
            with timer.stage(f"search:{spec.name}"):
                best, trials, _ = tune(cfg, spec, records[cfg.representation(spec)], seed)
            per_model[spec.name] = {"best": best, "trials": trials}
        result["seeds"][str(seed)] = per_model
    (out_dir / "search.json").write_text(dumps_report(result))
    return result
