"""Summarise desk-scale runs (one pipeline directory per seed) against the
group-recovery, alignment and model-ordering checks.

Usage: python notebooks/04_acceptance_summary.py <dir> [<dir> ...]
"""

import json
import sys
from pathlib import Path

import numpy as np

from upliftlab.harness import merge_reports
from upliftlab.harness.report import load_report, markdown_table

dirs = [Path(p) for p in sys.argv[1:]]
if not dirs:
    sys.exit(__doc__)
report = merge_reports([load_report(d) for d in dirs])
runs = report["runs"]


def mean(values):
    return float(np.mean(values))


stats = [r["grouping"]["stats"] for r in runs]
print(f"seeds {report['seeds']}")
print(f"purity K=6      {mean([s['purity_k6'] for s in stats]):.4f}  (chance is about 0.2)")
print(f"alignment K=6   {mean([s['alignment_k6'] for s in stats]):.4f}")
print(f"alignment K=12  {mean([s['alignment_k12'] for s in stats]):.4f}")
print(f"certificate violations {sum(s['certificate_violations'] for s in stats)}")


def qini(name, section):
    return mean([r["models"][name][section]["qini"] for r in runs])


print("\nordering on grouped test records")
for a, b in (("umlc_cfrnet", "cfrnet"), ("umlc_mlp", "s_learner")):
    print(f"  {a:12s} {qini(a, 'test'):.4f}  vs {b:12s} {qini(b, 'test'):.4f}")
print("\nablations on test samples")
full = qini("umlc_cfrnet", "test_samples")
for name in ("wo_rcg", "wo_uci", "wo_tfi"):
    print(f"  {name:8s} {qini(name, 'test_samples'):.4f}  vs full {full:.4f}")

print("\n" + markdown_table(report["summary_samples"]))
seconds = {}
for d in dirs:
    for seed, st in json.loads((d / "timings.json").read_text())["seconds"].items():
        seconds[seed] = sum(st.values()) / 60.0
print("minutes per seed", {k: round(v, 1) for k, v in seconds.items()})
