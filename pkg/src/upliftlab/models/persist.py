"""Save and restore trained uplift models as named-tensor checkpoints."""

from __future__ import annotations

import numpy as np

from .. import checkpoint
from ..errors import ConfigError
from .baselines import BASELINES, BaselineConfig, _CLASSES
from .umlc import UpliftConfig, UpliftModel


def save_model(path, model, seed: int, extra: dict | None = None) -> None:
    manifest = dict(model.manifest(), seed=seed, **(extra or {}))
    checkpoint.save(path, model.state_dict(), manifest)


def load_model(path):
    tensors, manifest = checkpoint.load(path)
    kind = manifest.get("model")
    rng = np.random.default_rng(0)   # placeholder init, overwritten below
    if kind == "umlc":
        cfg = UpliftConfig.from_dict(manifest["config"])
        model = UpliftModel(cfg, manifest["p"], rng, k=manifest["k"], q=manifest["q"])
    elif kind in BASELINES:
        cfg = BaselineConfig.from_dict(manifest["config"])
        model = _CLASSES[kind](cfg, manifest["n_in"], rng)
    else:
        raise ConfigError(f"{path}: unknown model kind {kind!r}")
    model.load_state_dict(tensors)
    model.y_mean = float(manifest["y_mean"])
    model.y_scale = float(manifest["y_scale"])
    model.fitted = True
    return model, manifest
