"""Experiment configuration: one declarative YAML or JSON document.

Example::

    data: {n_users: 5000, pool_multiplier: 10}     # or data_path: some/dir
    grouping: {k: 6, hidden: [64], sweep_ks: [6, 12]}
    training: {max_epochs: 50, patience: 5}          # defaults for every model
    ablations: {rcg: true, uci: true, tfi: true}
    models:
      - {name: umlc_cfrnet, kind: umlc, base: cfrnet_mmd}
      - {name: cfrnet, kind: cfrnet_mmd}
    search: {n_trials: 4, seed: 0, ranges: {lr: {low: 1.0e-4, high: 1.0e-2, log: true}}}
    seeds: [0, 1, 2]

``UPLIFTLAB_SEED`` (comma-separated integers) replaces ``seeds``.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from ..datagen import GenConfig
from ..errors import ConfigError
from ..grouping import GroupingConfig
from ..models import BASELINES, BaselineConfig, UpliftConfig

SEED_ENV = "UPLIFTLAB_SEED"
ABLATIONS = ("rcg", "uci", "tfi")
TRAINING_KEYS = ("lr", "batch_size", "max_epochs", "patience", "max_steps")


@dataclass
class ModelSpec:
    """One model entry.  ``params`` are the entry's own keys (no defaults merged)."""

    name: str
    kind: str
    params: dict = field(default_factory=dict)

    @property
    def is_umlc(self) -> bool:
        return self.kind == "umlc"


@dataclass
class SearchConfig:
    n_trials: int = 0                 # 0 disables tuning
    seed: int = 0
    ranges: dict = field(default_factory=dict)

    def validate(self) -> "SearchConfig":
        if self.n_trials < 0:
            raise ConfigError("search.n_trials must be >= 0")
        for name, spec in self.ranges.items():
            if not isinstance(spec, dict):
                raise ConfigError(f"search range {name!r} must be a mapping")
            if "choices" in spec:
                if not spec["choices"]:
                    raise ConfigError(f"search range {name!r} has no choices")
            elif not {"low", "high"} <= set(spec):
                raise ConfigError(f"search range {name!r} needs low/high or choices")
            elif float(spec["low"]) > float(spec["high"]):
                raise ConfigError(f"search range {name!r} has low > high")
            elif spec.get("log") and float(spec["low"]) <= 0:
                raise ConfigError(f"log-scale range {name!r} must be positive")
        return self


@dataclass
class ExperimentConfig:
    data: GenConfig | None = field(default_factory=GenConfig)
    data_path: str | None = None
    grouping: GroupingConfig = field(default_factory=GroupingConfig)
    sweep_ks: list = field(default_factory=list)
    training: dict = field(default_factory=dict)
    ablations: dict = field(default_factory=lambda: {a: True for a in ABLATIONS})
    models: list = field(default_factory=list)
    search: SearchConfig = field(default_factory=SearchConfig)
    seeds: list = field(default_factory=lambda: [0])

    def validate(self) -> "ExperimentConfig":
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"duplicate seeds: {self.seeds}")
        if (self.data is None) == (self.data_path is None):
            raise ConfigError("give exactly one of data or data_path")
        if not self.models:
            raise ConfigError("at least one model is required")
        names = [m.name for m in self.models]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate model names: {names}")
        self.grouping.validate()
        if any(int(k) < 2 for k in self.sweep_ks):
            raise ConfigError("sweep_ks entries must be >= 2")
        self.search.validate()
        for spec in self.models:
            self.model_config(spec)
        return self

    def uses_grouping(self) -> bool:
        return any(self.representation(m) == "grouped" for m in self.models)

    def uses_raw(self) -> bool:
        return any(self.representation(m) == "raw" for m in self.models)

    def representation(self, spec: ModelSpec) -> str:
        rcg = spec.params.get("rcg", self.ablations.get("rcg", True))
        return "grouped" if rcg else "raw"

    def model_config(self, spec: ModelSpec, overrides: dict | None = None):
        """Concrete model config: training defaults < ablations < entry < overrides."""
        params = {k: v for k, v in self.training.items()}
        if spec.is_umlc:
            params.update({a: self.ablations.get(a, True) for a in ABLATIONS})
            params.update(spec.params)
            params.update(overrides or {})
            return UpliftConfig.from_dict(params)
        if spec.kind not in BASELINES:
            raise ConfigError(f"model {spec.name!r}: unknown kind {spec.kind!r}")
        params.update({k: v for k, v in spec.params.items() if k != "rcg"})
        params.update(overrides or {})
        params["kind"] = spec.kind
        return BaselineConfig.from_dict(params)

    def to_dict(self) -> dict:
        return {
            "data": None if self.data is None else _plain(self.data),
            "data_path": self.data_path,
            "grouping": dict(self.grouping.to_dict(), sweep_ks=list(self.sweep_ks)),
            "training": dict(self.training),
            "ablations": dict(self.ablations),
            "models": [dict(name=m.name, kind=m.kind, **m.params) for m in self.models],
            "search": {"n_trials": self.search.n_trials, "seed": self.search.seed, "ranges": self.search.ranges},
            "seeds": list(self.seeds),
        }

    @classmethod
    def from_dict(cls, doc: dict, env: dict | None = None) -> "ExperimentConfig":
        doc = copy.deepcopy(doc or {})
        known = {"data", "data_path", "grouping", "training", "ablations", "model", "models", "search", "seeds"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        data_path = doc.get("data_path")
        data = None if data_path is not None else GenConfig.from_dict(doc.get("data") or {})
        grouping = dict(doc.get("grouping") or {})
        sweep_ks = [int(k) for k in grouping.pop("sweep_ks", [])]
        training = dict(doc.get("training") or {})
        bad = set(training) - set(TRAINING_KEYS)
        if bad:
            raise ConfigError(f"unknown training keys: {sorted(bad)}")
        ablations = {a: True for a in ABLATIONS}
        extra = set(doc.get("ablations") or {}) - set(ABLATIONS)
        if extra:
            raise ConfigError(f"unknown ablation flags: {sorted(extra)}")
        ablations.update({k: bool(v) for k, v in (doc.get("ablations") or {}).items()})
        entries = doc.get("models")
        if entries is None:
            entries = [doc["model"]] if doc.get("model") else [{"name": "umlc", "kind": "umlc"}]
        models = []
        for i, entry in enumerate(entries):
            entry = dict(entry)
            kind = entry.pop("kind", "umlc")
            name = entry.pop("name", f"{kind}_{i}")
            models.append(ModelSpec(str(name), str(kind), entry))
        search_doc = dict(doc.get("search") or {})
        bad = set(search_doc) - {f.name for f in fields(SearchConfig)}
        if bad:
            raise ConfigError(f"unknown search keys: {sorted(bad)}")
        seeds = doc.get("seeds", [0])
        if isinstance(seeds, int):
            seeds = [seeds]
        env = os.environ if env is None else env
        if env.get(SEED_ENV):
            try:
                seeds = [int(s) for s in env[SEED_ENV].split(",") if s.strip()]
            except ValueError as exc:
                raise ConfigError(f"{SEED_ENV} must be comma-separated integers") from exc
        try:
            cfg = cls(data=data, data_path=data_path, grouping=GroupingConfig.from_dict(grouping),
                      sweep_ks=sweep_ks, training=training, ablations=ablations, models=models,
                      search=SearchConfig(**search_doc), seeds=[int(s) for s in seeds])
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return cfg.validate()


def _plain(gen: GenConfig) -> dict:
    return {f.name: getattr(gen, f.name) for f in fields(gen)}


def load_config(path, env: dict | None = None) -> ExperimentConfig:
    """Read a YAML or JSON config file (JSON is valid YAML)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if doc is not None and not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return ExperimentConfig.from_dict(doc or {}, env=env)
