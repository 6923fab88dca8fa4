"""End-to-end run of the small config and its summary tables.

Usage: python notebooks/03_pipeline.py [config.yaml] [out_dir]
"""

import logging
import sys
from pathlib import Path

from upliftlab.harness import load_config, run_pipeline

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

here = Path(__file__).parent
config = Path(sys.argv[1]) if len(sys.argv) > 1 else here / "small.yaml"
out = Path(sys.argv[2]) if len(sys.argv) > 2 else Path("runs") / config.stem

report = run_pipeline(load_config(config), out)
print((out / "report.md").read_text())

for run in report["runs"]:
    print(f"seed {run['seed']}")
    for name, m in run["models"].items():
        print(f"  {name:12s} {m['representation']:7s} best epoch {m['history']['best_epoch']:2d} "
              f"val qini {m['val_qini']:.4f}  test qini {m['test']['qini']:.4f}  "
              f"sample qini {m['test_samples']['qini']:.4f}")
