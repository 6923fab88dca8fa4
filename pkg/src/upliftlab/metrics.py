"""Uplift ranking and ground-truth metrics.

Every ranking metric sorts records by predicted uplift, descending, with
ties broken by a stable index (original position unless given), so results
never depend on sort-algorithm details.

Normalisation conventions: AUUC and QINI areas are divided by ``n**2``.
Within the top ``k`` records, a curve value whose arm statistics are
undefined (no treated or no control records yet) is 0.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MetricError

GAIN_STEPS = tuple(range(0, 101, 5))


def _arrays(pred, t, y, index=None):
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    t = np.asarray(t).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if not (len(pred) == len(t) == len(y)):
        raise MetricError(f"length mismatch: pred {len(pred)}, t {len(t)}, y {len(y)}")
    if len(pred) == 0:
        raise MetricError("metrics need at least one record")
    if not np.all((t == 0) | (t == 1)):
        raise MetricError("treatment indicators must be 0 or 1")
    if not np.all(np.isfinite(pred)):
        raise MetricError("predictions contain non-finite values")
    index = np.arange(len(pred)) if index is None else np.asarray(index).reshape(-1)
    if len(index) != len(pred) or len(np.unique(index)) != len(index):
        raise MetricError("stable index must be unique with one entry per record")
    return pred, t.astype(np.int64), y, index


def rank_order(pred, index=None) -> np.ndarray:
    """Positions sorted by ``pred`` descending, ties by ``index`` ascending."""
    pred = np.asarray(pred, dtype=np.float64)
    index = np.arange(len(pred)) if index is None else np.asarray(index)
    return np.lexsort((index, -pred))


def _cumulative(pred, t, y, index):
    order = rank_order(pred, index)
    tt, yy = t[order], y[order]
    n_t = np.cumsum(tt)
    n_c = np.cumsum(1 - tt)
    s_t = np.cumsum(yy * tt)
    s_c = np.cumsum(yy * (1 - tt))
    return n_t, n_c, s_t, s_c


def uplift_curve(pred, t, y, index=None) -> np.ndarray:
    """``V(k) = (mean_t - mean_c) * k`` over the top ``k`` records, k = 1..n."""
    pred, t, y, index = _arrays(pred, t, y, index)
    n_t, n_c, s_t, s_c = _cumulative(pred, t, y, index)
    both = (n_t > 0) & (n_c > 0)
    k = np.arange(1, len(pred) + 1)
    diff = np.divide(s_t, n_t, out=np.zeros(len(k)), where=both) - np.divide(s_c, n_c, out=np.zeros(len(k)), where=both)
    return np.where(both, diff * k, 0.0)


def qini_curve(pred, t, y, index=None) -> np.ndarray:
    """``Q(k) = S_t - S_c * n_t / n_c`` over the top ``k``; 0 while ``n_c == 0``."""
    pred, t, y, index = _arrays(pred, t, y, index)
    n_t, n_c, s_t, s_c = _cumulative(pred, t, y, index)
    has_c = n_c > 0
    scaled = np.divide(s_c * n_t, n_c, out=np.zeros(len(pred)), where=has_c)
    return np.where(has_c, s_t - scaled, 0.0)


def auuc(pred, t, y, index=None) -> float:
    v = uplift_curve(pred, t, y, index)
    return float(v.sum() / len(v) ** 2)


def qini(pred, t, y, index=None) -> float:
    q = qini_curve(pred, t, y, index)
    n = len(q)
    random_line = q[-1] * np.arange(1, n + 1) / n
    return float((q - random_line).sum() / n ** 2)


def kendall_tau_a(a, b) -> float:
    """Kendall tau-a by exhaustive pair counting; tied pairs count 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = len(a)
    if n < 2:
        raise MetricError("Kendall tau needs at least two points")
    i, j = np.triu_indices(n, k=1)
    s = np.sign(a[i] - a[j]) * np.sign(b[i] - b[j])
    return float(s.sum() / (n * (n - 1) / 2))


def bin_summary(pred, t, y, n_bins: int = 20, index=None) -> tuple[np.ndarray, np.ndarray]:
    """Mean predicted and observed uplift per rank bin (equal sizes, leading bins
    take the remainder)."""
    pred, t, y, index = _arrays(pred, t, y, index)
    if len(pred) < n_bins:
        raise MetricError(f"need at least {n_bins} records for {n_bins} bins, got {len(pred)}")
    order = rank_order(pred, index)
    mean_pred = np.empty(n_bins)
    observed = np.empty(n_bins)
    for b, rows in enumerate(np.array_split(order, n_bins)):
        tb, yb = t[rows], y[rows]
        if tb.all() or not tb.any():
            arm = "control" if tb.all() else "treated"
            raise MetricError(f"bin {b} has no {arm} records")
        mean_pred[b] = pred[rows].mean()
        observed[b] = yb[tb == 1].mean() - yb[tb == 0].mean()
    return mean_pred, observed


def kendall_bins(pred, t, y, n_bins: int = 20, index=None) -> float:
    mean_pred, observed = bin_summary(pred, t, y, n_bins, index)
    return kendall_tau_a(mean_pred, observed)


def _truth(pred, y0, y1):
    if y0 is None or y1 is None:
        raise MetricError("ground-truth potential responses are missing")
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    tau = np.asarray(y1, dtype=np.float64).reshape(-1) - np.asarray(y0, dtype=np.float64).reshape(-1)
    if len(tau) != len(pred) or len(pred) == 0:
        raise MetricError("prediction and ground truth lengths differ or are empty")
    return pred, tau


def epsilon_ate(pred, y0, y1) -> float:
    pred, tau = _truth(pred, y0, y1)
    return float(abs(tau.mean() - pred.mean()))


def epsilon_pehe(pred, y0, y1) -> float:
    pred, tau = _truth(pred, y0, y1)
    return float(np.mean((tau - pred) ** 2))


def gain_curve(pred, y0, y1, steps=GAIN_STEPS, index=None) -> np.ndarray:
    """Gain (%) from treating the top ``s%`` by predicted uplift.

    Returns an array of ``(s, gain)`` rows.  The top ``floor(s * n / 100)``
    records use ``y1``, everyone else ``y0``; gain is relative to treating
    nobody.
    """
    pred, tau = _truth(pred, y0, y1)
    y0 = np.asarray(y0, dtype=np.float64).reshape(-1)
    total0 = y0.sum()
    if total0 == 0:
        raise MetricError("gain is undefined when the control responses sum to 0")
    order = rank_order(pred, index)
    csum = np.concatenate([[0.0], np.cumsum(tau[order])])
    n = len(pred)
    rows = [(s, csum[(s * n) // 100] / total0 * 100.0) for s in steps]
    return np.array(rows, dtype=np.float64)


@dataclass
class Evaluation:
    auuc: float
    qini: float
    kendall: float | None
    n: int
    eps_ate: float | None = None
    eps_pehe: float | None = None

    def as_dict(self) -> dict:
        out = {"auuc": self.auuc, "qini": self.qini, "kendall": self.kendall, "n": self.n}
        if self.eps_ate is not None:
            out["eps_ate"] = self.eps_ate
            out["eps_pehe"] = self.eps_pehe
        return out


def evaluate(pred, t, y, y0=None, y1=None, n_bins: int = 20, index=None) -> Evaluation:
    """All metrics for one prediction set.  Kendall is ``None`` when some bin
    lacks an arm (too few records for a stable estimate)."""
    try:
        kendall = kendall_bins(pred, t, y, n_bins, index)
    except MetricError:
        kendall = None
    ev = Evaluation(auuc=auuc(pred, t, y, index), qini=qini(pred, t, y, index), kendall=kendall, n=len(pred))
    if y0 is not None and y1 is not None:
        ev.eps_ate = epsilon_ate(pred, y0, y1)
        ev.eps_pehe = epsilon_pehe(pred, y0, y1)
    return ev


def write_curve(path, header: tuple[str, str], xs, values) -> None:
    """Two-column CSV with ``repr`` floats so files are byte-stable."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for x, v in zip(xs, values):
            w.writerow([int(x), repr(float(v))])


def export_curves(out_dir, pred, t, y, y0=None, y1=None, index=None) -> list[Path]:
    out_dir = Path(out_dir)
    k = np.arange(1, len(pred) + 1)
    written = [out_dir / "uplift_curve.csv", out_dir / "qini_curve.csv"]
    write_curve(written[0], ("k", "value"), k, uplift_curve(pred, t, y, index))
    write_curve(written[1], ("k", "value"), k, qini_curve(pred, t, y, index))
    if y0 is not None and y1 is not None:
        gain = gain_curve(pred, y0, y1, index=index)
        written.append(out_dir / "gain_curve.csv")
        write_curve(written[-1], ("s_pct", "gain_pct"), gain[:, 0], gain[:, 1])
    return written
