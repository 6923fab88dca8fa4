"""Seeded random hyperparameter search, scored by validation QINI."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .. import diffkernel as dk
from ..errors import ConfigError


@dataclass
class Trial:
    index: int
    params: dict
    val_qini: float

    def as_dict(self) -> dict:
        return {"trial": self.index, "params": self.params, "val_qini": self.val_qini}


def sample_params(ranges: dict, rng: np.random.Generator) -> dict:
    """Draw one value per range, in sorted key order.

    A range is ``{choices: [...]}``, or ``{low, high}`` with optional
    ``log: true`` (log-uniform) and ``int: true`` (rounded, inclusive).
    """
    out = {}
    for name in sorted(ranges):
        spec = ranges[name]
        if "choices" in spec:
            out[name] = spec["choices"][int(rng.integers(len(spec["choices"])))]
            continue
        lo, hi = float(spec["low"]), float(spec["high"])
        if spec.get("int"):
            out[name] = int(rng.integers(int(lo), int(hi) + 1))
        elif spec.get("log"):
            out[name] = float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
        else:
            out[name] = float(rng.uniform(lo, hi))
    return out


def random_search(objective: Callable[[dict], float], ranges: dict, n_trials: int, seed: int = 0,
                  stream: str = "search") -> tuple[dict, list[Trial]]:
    """Evaluate ``n_trials`` sampled parameter sets and keep the best.

    Trial ``i`` draws from its own substream, so the sequence of sampled
    parameters depends only on ``(seed, stream, i)``.  Ties keep the
    earliest trial.
    """
    if n_trials < 1:
        raise ConfigError("random search needs n_trials >= 1")
    trials = []
    for i in range(n_trials):
        params = sample_params(ranges, dk.substream(seed, stream, i))
        trials.append(Trial(i, params, float(objective(params))))
    best = max(trials, key=lambda tr: (tr.val_qini, -tr.index))
    return best.params, trials
