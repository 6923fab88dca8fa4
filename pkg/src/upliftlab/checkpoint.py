"""Named-tensor checkpoints.

A checkpoint is one JSON document::

    {"format": "upliftlab-checkpoint", "version": 1,
     "manifest": {...hyperparameters, seed, anything JSON...},
     "tensors": [{"name": str, "shape": [int, ...], "data": [float, ...]}, ...]}

``data`` is the row-major flattening.  Floats are written with Python's
shortest round-trip repr and keys are sorted, so identical tensors always
serialise to identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT = "upliftlab-checkpoint"
VERSION = 1


def dumps(tensors: dict[str, np.ndarray], manifest: dict) -> str:
    items = []
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        items.append({"name": name, "shape": list(arr.shape), "data": arr.reshape(-1).tolist()})
    doc = {"format": FORMAT, "version": VERSION, "manifest": manifest, "tensors": items}
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def save(path, tensors: dict[str, np.ndarray], manifest: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(dumps(tensors, manifest))


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FORMAT:
        raise ValueError(f"{path} is not an upliftlab checkpoint")
    tensors = {t["name"]: np.asarray(t["data"], dtype=np.float64).reshape(t["shape"])
               for t in doc["tensors"]}
    return tensors, doc["manifest"]
