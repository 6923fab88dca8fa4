"""Seed aggregation and rendering of run reports."""

from __future__ import annotations

import json
import math
from pathlib import Path

from ..errors import ConfigError

TABLE_METRICS = ("auuc", "qini", "kendall", "eps_ate", "eps_pehe")


def aggregate_seeds(reports: list[dict]) -> dict:
    """Per-metric sample mean and (n-1)-denominator standard deviation.

    Every report must carry the same metric keys.  ``None`` entries (a
    metric that was undefined for that seed) are left out of that metric's
    statistics; ``n`` records how many values were used and ``std`` is
    ``None`` when fewer than two remain.
    """
    if not reports:
        raise ConfigError("aggregate_seeds needs at least one report")
    keys = set(reports[0])
    for i, rep in enumerate(reports[1:], start=1):
        if set(rep) != keys:
            raise ConfigError(f"report {i} has metric keys {sorted(rep)}, expected {sorted(keys)}")
    out = {}
    for key in sorted(keys):
        vals = [float(r[key]) for r in reports if r[key] is not None]
        n = len(vals)
        mean = math.fsum(vals) / n if n else None
        std = None
        if n >= 2:
            std = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / (n - 1))
        out[key] = {"mean": mean, "std": std, "n": n}
    return out


def summarise(runs: list[dict], section: str = "test") -> dict:
    """``{model: aggregate_seeds(...)}`` over one evaluation section of every seed."""
    names = list(runs[0]["models"]) if runs else []
    out = {}
    for name in names:
        per_seed = [run["models"][name][section] for run in runs if run["models"][name].get(section)]
        if per_seed:
            out[name] = aggregate_seeds(per_seed)
    return out


def _cell(stat: dict | None) -> str:
    if not stat or stat["mean"] is None:
        return "n/a"
    if stat["std"] is None:
        return f"{stat['mean']:.4f}"
    return f"{stat['mean']:.4f} ± {stat['std']:.4f}"


def markdown_table(summary: dict, metrics=TABLE_METRICS) -> str:
    """One row per model, ``mean ± std`` per metric."""
    cols = [m for m in metrics if any(m in stats for stats in summary.values())]
    lines = ["| model | " + " | ".join(cols) + " |", "|---" * (len(cols) + 1) + "|"]
    for name, stats in summary.items():
        lines.append(f"| {name} | " + " | ".join(_cell(stats.get(m)) for m in cols) + " |")
    return "\n".join(lines) + "\n"


def render_report(report: dict) -> str:
    parts = [f"# Run report\n\nSeeds: {', '.join(str(s) for s in report['seeds'])}\n"]
    for section, title in (("summary", "Test records"), ("summary_samples", "Test samples")):
        if report.get(section):
            parts.append(f"\n## {title}\n\n" + markdown_table(report[section]))
    if report.get("grouping_summary"):
        lines = ["| statistic | value |", "|---|---|"]
        for key, stat in report["grouping_summary"].items():
            lines.append(f"| {key} | {_cell(stat)} |")
        parts.append("\n## Grouping\n\n" + "\n".join(lines) + "\n")
    return "".join(parts)


def merge_reports(reports: list[dict]) -> dict:
    """Combine reports of disjoint seed sets that share one configuration."""
    if not reports:
        raise ConfigError("no reports to merge")
    base = dict(reports[0])
    strip = lambda c: {k: v for k, v in c.items() if k != "seeds"}
    runs = list(base["runs"])
    for rep in reports[1:]:
        if strip(rep["config"]) != strip(base["config"]):
            raise ConfigError("reports were produced by different configurations")
        runs.extend(rep["runs"])
    seeds = [r["seed"] for r in runs]
    if len(set(seeds)) != len(seeds):
        raise ConfigError(f"reports overlap in seeds: {seeds}")
    return finish_report(base["config"], runs)


def finish_report(config: dict, runs: list[dict]) -> dict:
    runs = sorted(runs, key=lambda r: r["seed"])
    report = {"config": config, "seeds": [r["seed"] for r in runs], "runs": runs,
              "summary": summarise(runs, "test"), "summary_samples": summarise(runs, "test_samples")}
    grouping = [r["grouping"]["stats"] for r in runs if r.get("grouping")]
    if grouping:
        report["grouping_summary"] = aggregate_seeds(grouping)
    return report


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def load_report(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    if not path.exists():
        raise ConfigError(f"no report at {path}")
    return json.loads(path.read_text())
