"""Response-guided context grouping.

A Lipschitz-regularised regressor ``f(x_u, xi(x_c), t)`` is trained so that
distances between context embeddings ``xi(x_c)`` track differences in
response.  The embeddings are clustered with k-means, every sample is
relabelled with its context group, and samples sharing (user, group,
treatment) are averaged into one record.

Lipschitz control is by weight normalisation: each layer rescales the rows
of its weight matrix so that every row's absolute sum is at most
``softplus(c)`` for a trainable scalar ``c``.  Under the infinity norm that
makes the layer ``softplus(c)``-Lipschitz, tanh is 1-Lipschitz, and the
network constant is bounded by the product over layers.  Because
``||v||_inf <= ||v||_2`` the same constant certifies the Euclidean form.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import checkpoint
from . import diffkernel as dk
from .datagen import SPLITS, Dataset
from .diffkernel import Module, Tensor
from .errors import ConfigError, InvariantError, MetricError, TrainingError
from .features import ContextEmbedding

log = logging.getLogger(__name__)

ALPHA = 1e-4


def _inv_softplus(s: float) -> float:
    return float(np.log(np.expm1(s)))


class LipschitzLayer(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, activation: str | None = "tanh"):
        bound = 1.0 / np.sqrt(n_in)
        self.weight = dk.uniform_param(rng, (n_out, n_in), bound)
        self.bias = dk.uniform_param(rng, (n_out,), bound)
        # start at the current row-sum bound so normalisation is initially a no-op
        start = float(np.abs(self.weight.data).sum(axis=1).max())
        self.c = Tensor(np.array(_inv_softplus(start)), requires_grad=True)
        self.activation = activation

    def bound(self) -> Tensor:
        return dk.softplus(self.c)

    def effective_weight(self) -> Tensor:
        s = self.bound()
        rowsum = dk.tsum(dk.tabs(self.weight), axis=1, keepdims=True)
        return self.weight * (s / dk.maximum(rowsum, s))

    def __call__(self, x: Tensor) -> Tensor:
        out = x @ self.effective_weight().T + self.bias
        return dk.tanh(out) if self.activation == "tanh" else out


@dataclass
class GroupingConfig:
    k: int = 6
    alpha: float = ALPHA
    d: int = 4
    hidden: list = field(default_factory=lambda: [64])
    lr: float = 1e-3
    batch_size: int = 1024
    max_epochs: int = 50
    patience: int = 5
    kmeans_max_iter: int = 100
    kmeans_tol: float = 1e-6
    alignment_mode: str = "set"

    def validate(self) -> "GroupingConfig":
        if self.k < 2:
            raise ConfigError("grouping needs k >= 2")
        if self.alignment_mode not in ("set", "multiset", "majority"):
            raise ConfigError(f"unknown alignment mode {self.alignment_mode!r}")
        for name in ("d", "batch_size", "max_epochs", "patience"):
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.alpha < 0 or self.lr <= 0:
            raise ConfigError("alpha must be non-negative and lr positive")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "GroupingConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown grouping config keys: {sorted(unknown)}")
        return cls(**d).validate()

    def to_dict(self) -> dict:
        return asdict(self)


class GroupingModel(Module):
    """Context embedding, Lipschitz regressor and (once fitted) k-means centroids."""

    def __init__(self, p: int, n_numeric_ctx: int, cat_cards: list[int], d: int,
                 hidden: list[int], rng: np.random.Generator):
        self.context = ContextEmbedding(n_numeric_ctx, cat_cards, d, rng)
        sizes = [p + self.context.out_dim + 1, *hidden]
        self.layers = [LipschitzLayer(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]
        self.layers.append(LipschitzLayer(sizes[-1], 1, rng, activation=None))
        self.p = p
        self.d = d
        self.y_mean = 0.0
        self.y_scale = 1.0
        self.centroids: np.ndarray | None = None

    @classmethod
    def for_schema(cls, schema: dict, d: int, hidden: list[int], rng) -> "GroupingModel":
        cards = [4] * schema["q_m"] + ([schema["k_true"]] if schema.get("observable_group") else [])
        return cls(schema["p_b"] + schema["p_c"], schema["q_b"] + schema["q_c"], cards, d, hidden, rng)

    @property
    def trained(self) -> bool:
        return self.centroids is not None

    @property
    def k(self) -> int:
        if self.centroids is None:
            raise ConfigError("grouping model has no centroids yet")
        return self.centroids.shape[0]

    def f(self, z: Tensor) -> Tensor:
        """Network output (standardised response units) for concatenated inputs."""
        for layer in self.layers:
            z = layer(z)
        return z.reshape(z.shape[0])

    def inputs(self, xu, xi: Tensor, t) -> Tensor:
        t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
        return dk.concat([Tensor(np.asarray(xu, dtype=np.float64)), xi, Tensor(t)], axis=1)

    def __call__(self, xu, xc, t) -> Tensor:
        # Same function as f(inputs(xu, context(xc), t)).  The numeric part of
        # the context embedding is affine per feature, so it is folded into the
        # first layer's weights instead of materialising a (batch, q*d) input.
        xu = np.asarray(xu, dtype=np.float64)
        xc = np.asarray(xc, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
        first = self.layers[0]
        w = first.effective_weight()
        n_hidden, p, d = w.shape[0], self.p, self.d
        n_num = self.context.numeric.n_features
        lo, hi = p, p + n_num * d
        w_num = w[:, lo:hi].reshape(n_hidden, n_num, d)
        num = self.context.numeric
        w_x = dk.tsum(w_num * num.weight, axis=2)
        w_1 = dk.tsum(dk.tsum(w_num * num.bias, axis=2), axis=1)
        h = Tensor(xu) @ w[:, :p].T + Tensor(xc[:, :n_num]) @ w_x.T + w_1 + Tensor(t) @ w[:, -1:].T
        if self.context.categorical is not None:
            cat = self.context.categorical(xc[:, n_num:])
            cat = cat.reshape(cat.shape[0], cat.shape[1] * d)
            h = h + cat @ w[:, hi:w.shape[1] - 1].T
        z = dk.tanh(h + first.bias)
        for layer in self.layers[1:]:
            z = layer(z)
        return z.reshape(z.shape[0])

    def lipschitz_penalty(self) -> Tensor:
        out = self.layers[0].bound()
        for layer in self.layers[1:]:
            out = out * layer.bound()
        return out

    def embed(self, xc, batch_size: int = 8192) -> np.ndarray:
        xc = np.asarray(xc, dtype=np.float64)
        with dk.no_grad():
            parts = [self.context(xc[i:i + batch_size]).data for i in range(0, len(xc), batch_size)]
        return np.concatenate(parts, axis=0) if parts else np.zeros((0, self.context.out_dim))

    def predict(self, xu, xc, t, batch_size: int = 8192) -> np.ndarray:
        """Response prediction in original units."""
        out = []
        with dk.no_grad():
            for i in range(0, len(t), batch_size):
                s = slice(i, i + batch_size)
                out.append(self(xu[s], xc[s], t[s]).data)
        return self.y_mean + self.y_scale * np.concatenate(out)


def lipschitz_bound(model: GroupingModel) -> float:
    """Certified Lipschitz constant of ``f``: product of per-layer softplus(c)."""
    return float(np.prod([layer.bound().item() for layer in model.layers]))


# -- regressor training -------------------------------------------------------

@dataclass
class RegressorHistory:
    train_loss: list = field(default_factory=list)
    val_pred: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_pred: float = float("inf")
    lip: float = float("nan")


def _batch(ds: Dataset, idx):
    return ds.xu[ds.urow[idx]], ds.xc[ds.crow[idx]], ds.t[idx]


def _val_loss(model: GroupingModel, ds: Dataset, idx, target, batch_size) -> float:
    total = 0.0
    with dk.no_grad():
        for i in range(0, len(idx), batch_size):
            b = idx[i:i + batch_size]
            pred = model(*_batch(ds, b)).data
            total += float(np.sum((pred - target[b]) ** 2))
    return total / max(len(idx), 1)


def train_regressor(ds: Dataset, cfg: GroupingConfig | None = None, seed: int = 0
                    ) -> tuple[GroupingModel, RegressorHistory]:
    """Minimise ``L_pred + alpha * prod softplus(c_i)`` with Adam and early stopping.

    ``L_pred`` is the MSE on standardised responses; early stopping watches
    validation ``L_pred`` with the configured patience and the best epoch's
    parameters are restored.
    """
    cfg = (cfg or GroupingConfig()).validate()
    train_idx = np.flatnonzero(ds.split_mask("train")) if ds.split is not None else np.arange(len(ds))
    if len(train_idx) == 0:
        raise TrainingError("train split is empty")
    val_idx = np.flatnonzero(ds.split_mask("val")) if ds.split is not None else train_idx
    if len(val_idx) == 0:
        val_idx = train_idx

    model = GroupingModel.for_schema(ds.schema, cfg.d, list(cfg.hidden), dk.substream(seed, "regressor", "init"))
    model.y_mean = float(ds.y[train_idx].mean())
    model.y_scale = float(ds.y[train_idx].std()) or 1.0
    target = (ds.y - model.y_mean) / model.y_scale

    params = model.parameters()
    opt = dk.Adam(params, lr=cfg.lr)
    hist = RegressorHistory()
    best_state, since_best = model.state_dict(), 0
    for epoch in range(cfg.max_epochs):
        order = train_idx[dk.substream(seed, "regressor", "epoch", epoch).permutation(len(train_idx))]
        running, seen = 0.0, 0
        for i in range(0, len(order), cfg.batch_size):
            b = order[i:i + cfg.batch_size]
            opt.zero_grad()
            with dk.fresh_tape() as tape:
                pred = model(*_batch(ds, b))
                l_pred = dk.mse(pred, Tensor(target[b]))
                loss = l_pred + cfg.alpha * model.lipschitz_penalty()
                if not np.isfinite(loss.item()):
                    raise TrainingError(f"non-finite regressor loss at epoch {epoch}, step {i // cfg.batch_size}: "
                                        f"L_pred={l_pred.item()}, L_lip={model.lipschitz_penalty().item()}")
                tape.backward(loss)
            opt.step()
            running += l_pred.item() * len(b)
            seen += len(b)
        hist.train_loss.append(running / seen)
        val = _val_loss(model, ds, val_idx, target, 8192)
        hist.val_pred.append(val)
        log.info("regressor epoch %d train %.4f val %.4f", epoch, hist.train_loss[-1], val)
        if val < hist.best_val_pred:
            hist.best_val_pred, hist.best_epoch = val, epoch
            best_state, since_best = model.state_dict(), 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    model.load_state_dict(best_state)
    hist.lip = model.lipschitz_penalty().item()
    return model, hist


# -- certificate checks -------------------------------------------------------

def lipschitz_violations(model: GroupingModel, z1: np.ndarray, z2: np.ndarray) -> dict:
    """Count pairs breaking ``|f(z1) - f(z2)| <= C * ||z1 - z2||_inf`` (zero tolerance)."""
    C = lipschitz_bound(model)
    with dk.no_grad():
        lhs = np.abs(model.f(Tensor(z1)).data - model.f(Tensor(z2)).data)
    dist = np.abs(z1 - z2).max(axis=1)
    rhs = C * dist
    ratio = np.divide(lhs, rhs, out=np.zeros_like(lhs), where=rhs > 0)
    return {"C": C, "n_pairs": int(len(lhs)), "violations": int(np.sum(lhs > rhs)),
            "max_ratio": float(ratio.max(initial=0.0))}


def check_proposition1(model: GroupingModel, ds: Dataset, n_pairs: int = 10_000, seed: int = 0,
                       mu_samples: int = 50_000) -> dict:
    """Pairwise bound check for contexts sharing (x_u, t).

    The Lipschitz inequality of ``f`` on the context embedding is certified
    by construction, so any violation raises :class:`InvariantError`.  The
    uniform approximation error ``mu`` is not observable; ``mu_hat`` is the
    largest absolute residual of ``f`` (standardised units) over at most
    ``mu_samples`` samples, and the reported empirical constants are
    ``zeta = C`` and ``eta = 2 * mu_hat``.
    """
    rng = dk.substream(seed, "proposition1")
    C = lipschitz_bound(model)
    anchor = rng.integers(0, len(ds), size=n_pairs)
    ci = ds.crow[rng.integers(0, len(ds), size=n_pairs)]
    cj = ds.crow[rng.integers(0, len(ds), size=n_pairs)]
    xu = ds.xu[ds.urow[anchor]]
    t = ds.t[anchor]
    xi_i = model.embed(ds.xc[ci])
    xi_j = model.embed(ds.xc[cj])
    with dk.no_grad():
        fi = model.f(model.inputs(xu, Tensor(xi_i), t)).data
        fj = model.f(model.inputs(xu, Tensor(xi_j), t)).data
    lhs = np.abs(fi - fj)
    d_inf = np.abs(xi_i - xi_j).max(axis=1)
    d_2 = np.sqrt(((xi_i - xi_j) ** 2).sum(axis=1))
    viol_inf = int(np.sum(lhs > C * d_inf))
    viol_2 = int(np.sum(lhs > C * d_2))
    if viol_inf or viol_2:
        raise InvariantError(f"Lipschitz certificate broken on {viol_inf} (inf-norm) / {viol_2} (l2) pairs")

    pick = np.arange(len(ds)) if len(ds) <= mu_samples else rng.choice(len(ds), mu_samples, replace=False)
    pred = (model.predict(ds.xu[ds.urow[pick]], ds.xc[ds.crow[pick]], ds.t[pick]) - model.y_mean) / model.y_scale
    mu_hat = float(np.max(np.abs(pred - (ds.y[pick] - model.y_mean) / model.y_scale)))
    return {"C": C, "zeta": C, "mu_hat": mu_hat, "eta": 2.0 * mu_hat, "n_pairs": n_pairs,
            "violations": viol_inf, "violations_l2": viol_2,
            "max_gap": float(lhs.max(initial=0.0)),
            "mean_assumption_slack": float(np.mean(C * d_2 + 2.0 * mu_hat - lhs))}


# -- clustering ---------------------------------------------------------------

def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(axis=1)[:, None] - 2.0 * x @ c.T + (c * c).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def nearest(x: np.ndarray, centroids: np.ndarray, chunk: int = 16384) -> np.ndarray:
    """Index of the nearest centroid; ties go to the lowest index."""
    out = np.empty(len(x), dtype=np.int64)
    for i in range(0, len(x), chunk):
        out[i:i + chunk] = np.argmin(_sq_dists(x[i:i + chunk], centroids), axis=1)
    return out


def _inertia(x, centroids, labels) -> float:
    return float(((x - centroids[labels]) ** 2).sum())


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    history: list
    n_iter: int


def kmeans(x: np.ndarray, k: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-6) -> KMeansResult:
    """k-means++ seeding followed by Lloyd iterations.

    Stops when no centroid moves more than ``tol`` (Euclidean) or after
    ``max_iter`` updates.  An empty cluster keeps its previous centroid.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n < k:
        raise ConfigError(f"k-means needs at least k={k} points, got {n}")
    rng = dk.substream(seed, "kmeans", k)
    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    closest = _sq_dists(x, centroids[:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        pick = rng.integers(n) if total <= 0 else rng.choice(n, p=closest / total)
        centroids[j] = x[pick]
        closest = np.minimum(closest, _sq_dists(x, centroids[j:j + 1])[:, 0])

    history = []
    labels = nearest(x, centroids)
    it = 0
    for it in range(1, max_iter + 1):
        history.append(_inertia(x, centroids, labels))
        new = centroids.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new[j] = x[members].mean(axis=0)
        shift = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        labels = nearest(x, centroids)
        if shift < tol:
            break
    inertia = _inertia(x, centroids, labels)
    history.append(inertia)
    return KMeansResult(centroids, labels, inertia, history, it)


def purity(labels: np.ndarray, truth: np.ndarray) -> float:
    labels = np.asarray(labels)
    truth = np.asarray(truth)
    total = 0
    for lab in np.unique(labels):
        total += np.bincount(truth[labels == lab]).max()
    return total / len(labels)


def fit_groups(model: GroupingModel, ds: Dataset, k: int, seed: int = 0, max_iter: int = 100,
               tol: float = 1e-6) -> KMeansResult:
    """Cluster the embeddings of train-split contexts and store the centroids."""
    mask = ds.split_mask("train") if ds.split is not None else np.ones(len(ds), bool)
    rows = np.unique(ds.crow[mask])
    res = kmeans(model.embed(ds.xc[rows]), k, seed=seed, max_iter=max_iter, tol=tol)
    model.centroids = res.centroids
    return res


def assign_groups(model: GroupingModel, ds: Dataset) -> np.ndarray:
    """Group id per sample: nearest centroid of its context embedding."""
    if not model.trained:
        raise ConfigError("grouping model is not fitted (no centroids)")
    rows, inverse = np.unique(ds.crow, return_inverse=True)
    g_ctx = nearest(model.embed(ds.xc[rows]), model.centroids)
    return g_ctx[inverse]


# -- aggregation --------------------------------------------------------------

@dataclass
class GroupedDataset:
    """One record per distinct (user, group, treatment), canonical (user_id, g) order."""

    user_id: np.ndarray
    urow: np.ndarray
    g: np.ndarray
    t: np.ndarray
    y_bar: np.ndarray
    n_merged: np.ndarray
    xu: np.ndarray
    k: int
    split: np.ndarray | None = None
    y0_bar: np.ndarray | None = None
    y1_bar: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.y_bar)

    @property
    def has_truth(self) -> bool:
        return self.y0_bar is not None and self.y1_bar is not None

    @property
    def tau_true(self) -> np.ndarray:
        return self.y1_bar - self.y0_bar

    def split_mask(self, name: str) -> np.ndarray:
        if self.split is None:
            raise ConfigError("grouped dataset has no split tags")
        return self.split == SPLITS.index(name)

    def subset(self, mask) -> "GroupedDataset":
        pick = lambda a: None if a is None else a[mask]
        return replace(self, user_id=self.user_id[mask], urow=self.urow[mask], g=self.g[mask],
                       t=self.t[mask], y_bar=self.y_bar[mask], n_merged=self.n_merged[mask],
                       split=pick(self.split), y0_bar=pick(self.y0_bar), y1_bar=pick(self.y1_bar))

    def to_frame(self):
        import pandas as pd

        frame = pd.DataFrame({"user_id": self.user_id, "g": self.g, "t": self.t,
                              "y_bar": self.y_bar, "n_merged": self.n_merged})
        xu = pd.DataFrame(self.xu[self.urow], columns=[f"xu_{i}" for i in range(self.xu.shape[1])])
        extra = {}
        if self.split is not None:
            extra["split"] = np.array(SPLITS, dtype=object)[self.split]
        if self.has_truth:
            extra["y0_bar"] = self.y0_bar
            extra["y1_bar"] = self.y1_bar
        return pd.concat([frame, xu, pd.DataFrame(extra)], axis=1)

    @classmethod
    def from_frame(cls, frame, k: int) -> "GroupedDataset":
        xu_cols = [c for c in frame.columns if c.startswith("xu_")]
        user_id = frame["user_id"].to_numpy(np.int64)
        users, first, urow = np.unique(user_id, return_index=True, return_inverse=True)
        split = None
        if "split" in frame:
            split = frame["split"].map({s: i for i, s in enumerate(SPLITS)}).to_numpy(np.int8)
        opt = lambda c: frame[c].to_numpy(np.float64) if c in frame else None
        return cls(user_id=user_id, urow=urow.astype(np.int64), g=frame["g"].to_numpy(np.int64),
                   t=frame["t"].to_numpy(np.int8), y_bar=frame["y_bar"].to_numpy(np.float64),
                   n_merged=frame["n_merged"].to_numpy(np.int64),
                   xu=frame[xu_cols].to_numpy(np.float64)[first], k=k, split=split,
                   y0_bar=opt("y0_bar"), y1_bar=opt("y1_bar"))


def _merge(user_id, g, t, weights, columns: dict):
    order = np.lexsort((t, g, user_id))
    u, gg, tt = user_id[order], g[order], t[order]
    new = np.ones(len(order), dtype=bool)
    new[1:] = (u[1:] != u[:-1]) | (gg[1:] != gg[:-1]) | (tt[1:] != tt[:-1])
    starts = np.flatnonzero(new)
    w = weights[order].astype(np.float64)
    counts = np.add.reduceat(w, starts)
    merged = {name: None if col is None else np.add.reduceat(col[order] * w, starts) / counts
              for name, col in columns.items()}
    return order[starts], counts, merged


def aggregate(ds, g: np.ndarray | None = None) -> GroupedDataset:
    """Average responses over samples sharing (user_id, g, t).

    Accepts a raw :class:`Dataset` with one group id per sample, or a
    :class:`GroupedDataset` (merging it again is a no-op up to record
    order, since its keys are already unique).
    """
    if isinstance(ds, GroupedDataset):
        first, counts, m = _merge(ds.user_id, ds.g, ds.t, ds.n_merged,
                                  {"y": ds.y_bar, "y0": ds.y0_bar, "y1": ds.y1_bar})
        split = None if ds.split is None else ds.split[first]
        return GroupedDataset(user_id=ds.user_id[first], urow=ds.urow[first], g=ds.g[first],
                              t=ds.t[first], y_bar=m["y"], n_merged=counts.astype(np.int64), xu=ds.xu,
                              k=ds.k, split=split, y0_bar=m["y0"], y1_bar=m["y1"])
    if g is None:
        raise ConfigError("aggregate needs one group id per sample")
    g = np.asarray(g, dtype=np.int64)
    first, counts, m = _merge(ds.user_id, g, ds.t, np.ones(len(ds)),
                              {"y": ds.y, "y0": ds.y0, "y1": ds.y1})
    k = int(g.max()) + 1 if len(g) else 0
    return GroupedDataset(user_id=ds.user_id[first], urow=ds.urow[first], g=g[first], t=ds.t[first],
                          y_bar=m["y"], n_merged=counts.astype(np.int64), xu=ds.xu, k=k,
                          split=None if ds.split is None else ds.split[first],
                          y0_bar=m["y0"], y1_bar=m["y1"])


# -- alignment ----------------------------------------------------------------

def _user_signatures(gds: GroupedDataset, users: np.ndarray, mode: str) -> list:
    sig = {}
    for u, g, n in zip(gds.user_id, gds.g, gds.n_merged):
        sig.setdefault(int(u), {})
        sig[int(u)][int(g)] = sig[int(u)].get(int(g), 0) + int(n)
    out = []
    for u in users:
        counts = sig[int(u)]
        if mode == "set":
            out.append(frozenset(counts))
        elif mode == "multiset":
            out.append(tuple(sorted(counts.items())))
        else:
            best = max(counts.values())
            out.append(min(g for g, c in counts.items() if c == best))
    return out


def alignment(gds: GroupedDataset, mode: str = "set", chunk: int = 2048) -> float:
    """Share of treated users whose context-group signature equals that of
    their nearest control user (1-NN on x_u, Euclidean, lowest index on ties)."""
    users, first = np.unique(gds.user_id, return_index=True)
    t_user = gds.t[first]
    xu_user = gds.xu[gds.urow[first]]
    treated = np.flatnonzero(t_user == 1)
    control = np.flatnonzero(t_user == 0)
    if len(treated) == 0:
        raise MetricError("alignment needs at least one treated user")
    if len(control) == 0:
        raise MetricError("alignment needs at least one control user")
    match = np.empty(len(treated), dtype=np.int64)
    xc = xu_user[control]
    for i in range(0, len(treated), chunk):
        match[i:i + chunk] = np.argmin(_sq_dists(xu_user[treated[i:i + chunk]], xc), axis=1)
    sig_t = _user_signatures(gds, users[treated], mode)
    sig_c = _user_signatures(gds, users[control], mode)
    hits = sum(1 for a, m in zip(sig_t, match) if a == sig_c[m])
    return hits / len(treated)


# -- persistence --------------------------------------------------------------

def save_grouping_model(path, model: GroupingModel, schema: dict, cfg: GroupingConfig, seed: int) -> None:
    """Checkpoint the embedding, regressor and (if fitted) centroids."""
    tensors = model.state_dict()
    if model.centroids is not None:
        tensors["centroids"] = model.centroids
    manifest = {"model": "grouping", "schema": schema, "config": cfg.to_dict(), "seed": seed,
                "y_mean": model.y_mean, "y_scale": model.y_scale}
    checkpoint.save(path, tensors, manifest)


def load_grouping_model(path) -> tuple[GroupingModel, dict]:
    tensors, manifest = checkpoint.load(path)
    if manifest.get("model") != "grouping":
        raise ConfigError(f"{path} is not a grouping checkpoint")
    cfg = GroupingConfig.from_dict(manifest["config"])
    model = GroupingModel.for_schema(manifest["schema"], cfg.d, list(cfg.hidden), np.random.default_rng(0))
    model.centroids = tensors.pop("centroids", None)
    model.load_state_dict(tensors)
    model.y_mean = float(manifest["y_mean"])
    model.y_scale = float(manifest["y_scale"])
    return model, manifest


def save_grouped(gds: GroupedDataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gds.to_frame().to_csv(out / "grouped.csv", index=False, lineterminator="\n")
    (out / "grouped.json").write_text(json.dumps({"k": gds.k}) + "\n")


def load_grouped(data_dir) -> GroupedDataset:
    import pandas as pd

    src = Path(data_dir)
    if not (src / "grouped.csv").exists():
        raise ConfigError(f"{src} holds no grouped.csv")
    k = json.loads((src / "grouped.json").read_text())["k"]
    frame = pd.read_csv(src / "grouped.csv", float_precision="round_trip")
    return GroupedDataset.from_frame(frame, k)
