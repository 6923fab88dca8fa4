"""Synthetic real-time-marketing RCT data with large context pools.

Users and contexts are generated independently, every user is paired with
60-130 distinct contexts from a pool that is much larger than the user
base, treatment is randomised per user, and the potential responses carry a
group effect ``z`` whose distribution depends on a latent context group.

Storage is normalised: a :class:`Dataset` keeps one feature row per user
and one per context plus per-sample index arrays, so the 10^5-10^6 sample
desk-scale sets never materialise a dense sample-by-feature matrix.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .diffkernel.rng import substream
from .errors import ConfigError

SPLITS = ("train", "val", "test")
SPLIT_FRACTIONS = (0.7, 0.2, 0.1)
_BLOCK = 4096  # rows per RNG substream for user/context tables


@dataclass
class GenConfig:
    n_users: int = 5000
    pool_multiplier: int = 100
    contexts_per_user_min: int = 60
    contexts_per_user_max: int = 130
    p_b: int = 34
    p_c: int = 66
    q_b: int = 34
    q_c: int = 66
    q_m: int = 3
    n_groups: int = 6
    group_probs: list = field(default_factory=lambda: [0.2, 0.16, 0.16, 0.16, 0.16, 0.16])
    # z ~ N(mean, var) per latent group
    group_means: list = field(default_factory=lambda: [0.0, 2.0, -1.0, 3.0, -2.0, 1.0])
    group_vars: list = field(default_factory=lambda: [1.0, 0.5, 2.0, 1.5, 0.8, 2.0])
    shared_z: bool = False
    noise: bool = True
    observable_group: bool = False
    seed: int = 0

    @property
    def p(self) -> int:
        return self.p_b + self.p_c

    @property
    def q(self) -> int:
        return self.q_b + self.q_c + self.q_m + int(self.observable_group)

    @property
    def pool_size(self) -> int:
        return self.n_users * self.pool_multiplier

    def validate(self) -> "GenConfig":
        counts = dict(n_users=self.n_users, pool_multiplier=self.pool_multiplier,
                      contexts_per_user_min=self.contexts_per_user_min,
                      p_b=self.p_b, p_c=self.p_c, q_b=self.q_b, q_c=self.q_c, q_m=self.q_m,
                      n_groups=self.n_groups)
        bad = [k for k, v in counts.items() if int(v) <= 0]
        if bad:
            raise ConfigError(f"counts must be positive: {bad}")
        if self.contexts_per_user_min > self.contexts_per_user_max:
            raise ConfigError("contexts_per_user_min > contexts_per_user_max")
        for name in ("group_probs", "group_means", "group_vars"):
            if len(getattr(self, name)) != self.n_groups:
                raise ConfigError(f"{name} needs {self.n_groups} entries")
        probs = np.asarray(self.group_probs, dtype=float)
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ConfigError(f"group_probs must be a distribution, sums to {probs.sum()}")
        if np.any(np.asarray(self.group_vars) < 0):
            raise ConfigError("group_vars must be non-negative")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown data config keys: {sorted(unknown)}")
        return cls(**d).validate()


@dataclass
class Dataset:
    """Samples in canonical (user_id, ctx_id) order over shared feature tables."""

    user_id: np.ndarray
    ctx_id: np.ndarray
    urow: np.ndarray          # row of ``xu`` per sample
    crow: np.ndarray          # row of ``xc`` per sample
    t: np.ndarray
    y: np.ndarray
    xu: np.ndarray
    xc: np.ndarray
    y0: np.ndarray | None = None
    y1: np.ndarray | None = None
    latent_group: np.ndarray | None = None
    split: np.ndarray | None = None   # codes into SPLITS
    schema: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.y)

    @property
    def has_truth(self) -> bool:
        return self.y0 is not None and self.y1 is not None

    @property
    def tau_true(self) -> np.ndarray:
        return self.y1 - self.y0

    def split_mask(self, name: str) -> np.ndarray:
        if self.split is None:
            raise ConfigError("dataset has no split tags")
        return self.split == SPLITS.index(name)

    def subset(self, mask) -> "Dataset":
        pick = lambda a: None if a is None else a[mask]
        return replace(self, user_id=self.user_id[mask], ctx_id=self.ctx_id[mask],
                       urow=self.urow[mask], crow=self.crow[mask], t=self.t[mask], y=self.y[mask],
                       y0=pick(self.y0), y1=pick(self.y1), latent_group=pick(self.latent_group),
                       split=pick(self.split))

    # -- persistence ---------------------------------------------------------

    def columns(self) -> list[str]:
        p, q = self.xu.shape[1], self.xc.shape[1]
        return (["user_id", "ctx_id", "split", "t", "y", "y0", "y1", "latent_group"]
                + [f"xu_{i}" for i in range(p)] + [f"xc_{j}" for j in range(q)])

    def to_frame(self, mask=None) -> pd.DataFrame:
        ds = self if mask is None else self.subset(mask)
        n = len(ds)
        nan = np.full(n, np.nan)
        cols = {
            "user_id": ds.user_id, "ctx_id": ds.ctx_id,
            "split": np.array(SPLITS, dtype=object)[ds.split] if ds.split is not None else np.full(n, ""),
            "t": ds.t, "y": ds.y,
            "y0": ds.y0 if ds.y0 is not None else nan,
            "y1": ds.y1 if ds.y1 is not None else nan,
            "latent_group": ds.latent_group if ds.latent_group is not None else np.full(n, -1),
        }
        frame = pd.DataFrame(cols)
        xu = pd.DataFrame(self.xu[ds.urow], columns=[f"xu_{i}" for i in range(self.xu.shape[1])])
        xc = pd.DataFrame(self.xc[ds.crow], columns=[f"xc_{j}" for j in range(self.xc.shape[1])])
        return pd.concat([frame, xu, xc], axis=1)

    def save(self, out_dir) -> None:
        """One CSV per split plus ``schema.json``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if self.split is None:
            self.to_frame().to_csv(out / "data.csv", index=False)
        else:
            for code, name in enumerate(SPLITS):
                self.to_frame(self.split == code).to_csv(out / f"{name}.csv", index=False)
        (out / "schema.json").write_text(json.dumps(self.schema, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, data_dir) -> "Dataset":
        src = Path(data_dir)
        schema_path = src / "schema.json"
        if not schema_path.exists():
            raise ConfigError(f"{src} has no schema.json")
        schema = json.loads(schema_path.read_text())
        files = [src / f"{s}.csv" for s in SPLITS if (src / f"{s}.csv").exists()]
        if not files and (src / "data.csv").exists():
            files = [src / "data.csv"]
        if not files:
            raise ConfigError(f"{src} holds no data CSVs")
        frame = pd.concat([pd.read_csv(f, float_precision="round_trip") for f in files], ignore_index=True)
        return cls.from_frame(frame, schema)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, schema: dict) -> "Dataset":
        frame = frame.sort_values(["user_id", "ctx_id"], kind="stable").reset_index(drop=True)
        xu_cols = [c for c in frame.columns if c.startswith("xu_")]
        xc_cols = [c for c in frame.columns if c.startswith("xc_")]
        user_id = frame["user_id"].to_numpy(np.int64)
        ctx_id = frame["ctx_id"].to_numpy(np.int64)
        users, u_first, urow = np.unique(user_id, return_index=True, return_inverse=True)
        ctxs, c_first, crow = np.unique(ctx_id, return_index=True, return_inverse=True)
        xu = frame[xu_cols].to_numpy(np.float64)[u_first]
        xc = frame[xc_cols].to_numpy(np.float64)[c_first]
        split = None
        if "split" in frame and frame["split"].notna().all() and (frame["split"] != "").all():
            split = frame["split"].map({s: i for i, s in enumerate(SPLITS)}).to_numpy(np.int8)
        opt = lambda c: frame[c].to_numpy(np.float64) if c in frame and frame[c].notna().all() else None
        latent = None
        if "latent_group" in frame and (frame["latent_group"] >= 0).all():
            latent = frame["latent_group"].to_numpy(np.int64)
        return cls(user_id=user_id, ctx_id=ctx_id, urow=urow.astype(np.int64),
                   crow=crow.astype(np.int64), t=frame["t"].to_numpy(np.int8),
                   y=frame["y"].to_numpy(np.float64), xu=xu, xc=xc, y0=opt("y0"), y1=opt("y1"),
                   latent_group=latent, split=split, schema=schema)


# -- generation ---------------------------------------------------------------

def _blocked(cfg: GenConfig, label: str, n_rows: int, draw) -> np.ndarray:
    parts = []
    for b, start in enumerate(range(0, n_rows, _BLOCK)):
        parts.append(draw(substream(cfg.seed, label, b), min(_BLOCK, n_rows - start)))
    return np.concatenate(parts, axis=0)


def generate_users(cfg: GenConfig) -> np.ndarray:
    """``(n_users, p_b + p_c)``: Bernoulli(0.5) columns then N(0, 1) columns."""
    cfg.validate()

    def draw(rng, n):
        return np.hstack([rng.integers(0, 2, size=(n, cfg.p_b)).astype(np.float64),
                          rng.standard_normal((n, cfg.p_c))])

    return _blocked(cfg, "users", cfg.n_users, draw)


def generate_context_pool(cfg: GenConfig) -> tuple[np.ndarray, np.ndarray]:
    """Observable context table and the latent group of every pooled context."""
    cfg.validate()
    probs = np.asarray(cfg.group_probs, dtype=float)

    def draw(rng, n):
        binary = rng.integers(0, 2, size=(n, cfg.q_b)).astype(np.float64)
        cont = rng.standard_normal((n, cfg.q_c))
        cat = rng.integers(0, 4, size=(n, cfg.q_m)).astype(np.float64)
        group = rng.choice(cfg.n_groups, size=(n, 1), p=probs).astype(np.float64)
        return np.hstack([binary, cont, cat, group])

    table = _blocked(cfg, "contexts", cfg.pool_size, draw)
    latent = table[:, -1].astype(np.int64)
    xc = table if cfg.observable_group else table[:, :-1]
    return np.ascontiguousarray(xc), latent


def assign_contexts(cfg: GenConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per user, a uniform count in [min, max] of distinct pool contexts."""
    cfg.validate()
    pool = cfg.pool_size
    if pool < cfg.contexts_per_user_max:
        raise ConfigError(f"context pool ({pool}) smaller than contexts_per_user_max "
                          f"({cfg.contexts_per_user_max})")
    users, ctxs = [], []
    for u in range(cfg.n_users):
        rng = substream(cfg.seed, "assign", u)
        k = int(rng.integers(cfg.contexts_per_user_min, cfg.contexts_per_user_max + 1))
        chosen = np.sort(rng.choice(pool, size=k, replace=False))
        users.append(np.full(k, u, dtype=np.int64))
        ctxs.append(chosen.astype(np.int64))
    return np.concatenate(users), np.concatenate(ctxs)


def response_terms(sum_u, sum_c, sum_cat, z0, eps0, z1, eps1) -> tuple[np.ndarray, np.ndarray]:
    """Potential responses from the feature sums.

    ``sum_u`` sums all user features, ``sum_c`` the binary and continuous
    context features, ``sum_cat`` the ordinal categorical context features.
    """
    base = sum_u + sum_c + sum_u * sum_c + sum_cat
    y0 = 0.5 * base + z0 + eps0
    y1 = y0 + 0.2 * base + z1 + eps1
    return y0, y1


def generate_responses(user_id, ctx_id, xu, xc, latent, cfg: GenConfig) -> Dataset:
    n = len(user_id)
    means = np.asarray(cfg.group_means, dtype=float)
    sds = np.sqrt(np.asarray(cfg.group_vars, dtype=float))
    t_user = np.empty(cfg.n_users, dtype=np.int8)
    draws = np.empty((4, n))
    bounds = np.searchsorted(user_id, np.arange(cfg.n_users + 1))
    for u in range(cfg.n_users):
        rng = substream(cfg.seed, "response", u)
        t_user[u] = rng.integers(0, 2)
        lo, hi = bounds[u], bounds[u + 1]
        draws[:, lo:hi] = rng.standard_normal((4, hi - lo))
    g = latent[ctx_id]
    z0 = means[g] + sds[g] * draws[0]
    z1 = z0 if cfg.shared_z else means[g] + sds[g] * draws[2]
    eps0 = draws[1] if cfg.noise else np.zeros(n)
    eps1 = draws[3] if cfg.noise else np.zeros(n)

    nb = cfg.q_b + cfg.q_c
    sum_u = xu.sum(axis=1)[user_id]
    sum_c = xc[:, :nb].sum(axis=1)[ctx_id]
    sum_cat = xc[:, nb:nb + cfg.q_m].sum(axis=1)[ctx_id]
    y0, y1 = response_terms(sum_u, sum_c, sum_cat, z0, eps0, z1, eps1)
    t = t_user[user_id]
    y = np.where(t == 1, y1, y0)
    schema = {"p_b": cfg.p_b, "p_c": cfg.p_c, "q_b": cfg.q_b, "q_c": cfg.q_c, "q_m": cfg.q_m,
              "k_true": cfg.n_groups, "seed": cfg.seed, "n_users": cfg.n_users,
              "observable_group": cfg.observable_group}
    return Dataset(user_id=user_id, ctx_id=ctx_id, urow=user_id.copy(), crow=ctx_id.copy(), t=t,
                   y=y, xu=xu, xc=xc, y0=y0, y1=y1, latent_group=g, schema=schema)


def split(ds: Dataset, seed: int) -> Dataset:
    """Tag users 70/20/10 into train/val/test; a user's samples share one tag."""
    users = np.unique(ds.user_id)
    order = substream(seed, "split").permutation(len(users))
    n_train = int(round(SPLIT_FRACTIONS[0] * len(users)))
    n_val = int(round(SPLIT_FRACTIONS[1] * len(users)))
    code = np.empty(len(users), dtype=np.int8)
    code[order[:n_train]] = 0
    code[order[n_train:n_train + n_val]] = 1
    code[order[n_train + n_val:]] = 2
    ds.split = code[np.searchsorted(users, ds.user_id)]
    return ds


def generate(cfg: GenConfig) -> Dataset:
    cfg.validate()
    xu = generate_users(cfg)
    xc, latent = generate_context_pool(cfg)
    user_id, ctx_id = assign_contexts(cfg)
    ds = generate_responses(user_id, ctx_id, xu, xc, latent, cfg)
    ds.schema["gen_config"] = asdict(cfg)
    return split(ds, cfg.seed)
