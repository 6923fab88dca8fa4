"""Minibatch Adam training with early stopping on validation QINI.

Any model exposing ``parameters()``, ``state_dict()``/``load_state_dict()``,
``batch_loss(records, idx, target)`` and ``score(records, idx)`` (uplift in
standardised response units) can be trained here.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import diffkernel as dk
from .. import metrics
from ..errors import ConfigError, MetricError, TrainingError
from .records import Records

log = logging.getLogger(__name__)

PREDICT_BATCH = 4096


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_qini: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_qini: float = float("-inf")
    steps: int = 0
    stopped_early: bool = False

    def as_dict(self) -> dict:
        return {"train_loss": self.train_loss, "val_qini": self.val_qini, "best_epoch": self.best_epoch,
                "best_val_qini": self.best_val_qini, "steps": self.steps, "stopped_early": self.stopped_early}


def _check_arms(rec: Records, idx: np.ndarray, name: str) -> None:
    t = np.asarray(rec.t)[idx]
    if len(idx) == 0:
        raise TrainingError(f"{name} split is empty")
    if t.all() or not t.any():
        arm = "control" if t.all() else "treated"
        raise TrainingError(f"{name} split has no {arm} records")


def scores(model, rec: Records, idx=None, which: str = "tau_hat", batch_size: int = PREDICT_BATCH) -> np.ndarray:
    idx = np.arange(len(rec)) if idx is None else np.asarray(idx)
    parts = [model.score(rec, idx[i:i + batch_size], which) for i in range(0, len(idx), batch_size)]
    return np.concatenate(parts) if parts else np.zeros(0)


def fit(model, rec: Records, cfg, seed: int, stream: str = "uplift") -> TrainHistory:
    """Train ``model`` in place on the train split, early-stopping on validation QINI.

    ``cfg`` needs ``lr, batch_size, max_epochs, patience`` and optionally
    ``max_steps``.  Targets are standardised with train-split statistics,
    which are stored on the model as ``y_mean``/``y_scale``.  The parameters
    of the best validation epoch are restored.
    """
    train_idx = rec.indices("train") if rec.split is not None else np.arange(len(rec))
    val_idx = rec.indices("val") if rec.split is not None else train_idx
    _check_arms(rec, train_idx, "train")
    if len(val_idx) == 0:
        val_idx = train_idx
    model.y_mean = float(np.mean(rec.y[train_idx]))
    model.y_scale = float(np.std(rec.y[train_idx])) or 1.0
    target = (np.asarray(rec.y, dtype=np.float64) - model.y_mean) / model.y_scale
    t_val, y_val = np.asarray(rec.t)[val_idx], np.asarray(rec.y)[val_idx]

    opt = dk.Adam(model.parameters(), lr=cfg.lr)
    hist = TrainHistory()
    best_state, since_best = model.state_dict(), 0
    budget = getattr(cfg, "max_steps", None)
    for epoch in range(cfg.max_epochs):
        order = train_idx[dk.substream(seed, stream, "epoch", epoch).permutation(len(train_idx))]
        running, seen = 0.0, 0
        for i in range(0, len(order), cfg.batch_size):
            if budget is not None and hist.steps >= budget:
                break
            b = order[i:i + cfg.batch_size]
            opt.zero_grad()
            with dk.fresh_tape() as tape:
                loss = model.batch_loss(rec, b, target)
                value = loss.item()
                if not np.isfinite(value):
                    raise TrainingError(f"non-finite training loss at epoch {epoch}, step {hist.steps} "
                                        f"(batch of {len(b)}, loss={value})")
                tape.backward(loss)
            opt.step()
            hist.steps += 1
            running += value * len(b)
            seen += len(b)
        if seen == 0:
            break
        hist.train_loss.append(running / seen)
        pred = scores(model, rec, val_idx)
        if not np.all(np.isfinite(pred)):
            raise TrainingError(f"non-finite validation predictions at epoch {epoch}")
        try:
            q = metrics.qini(pred, t_val, y_val)
        except MetricError as exc:
            raise TrainingError(f"validation QINI failed: {exc}") from exc
        hist.val_qini.append(q)
        log.info("%s epoch %d loss %.5f val qini %.5f", stream, epoch, hist.train_loss[-1], q)
        if q > hist.best_val_qini:
            hist.best_val_qini, hist.best_epoch = q, epoch
            best_state, since_best = model.state_dict(), 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                hist.stopped_early = True
                break
    model.load_state_dict(best_state)
    model.fitted = True
    return hist


def predict_uplift(model, rec: Records, which: str = "tau_hat", idx=None) -> np.ndarray:
    """Predictions in original response units (uplift, or control response for ``mu0``)."""
    if not getattr(model, "fitted", False):
        raise ConfigError("model is not trained")
    raw = scores(model, rec, idx, which)
    if which == "mu0":
        return raw * model.y_scale + model.y_mean
    return raw * model.y_scale
