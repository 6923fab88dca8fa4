"""Training records shared by every uplift model.

Two representations exist.  ``grouped`` records carry a context-group id per
row (output of response-guided grouping); ``raw`` records carry a row into
the raw context table instead.  Feature matrices are gathered per batch so
the per-sample design matrix is never materialised.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..datagen import SPLITS, Dataset
from ..errors import ConfigError
from ..grouping import GroupedDataset


@dataclass
class Records:
    kind: str                      # "grouped" or "raw"
    user_id: np.ndarray
    urow: np.ndarray
    t: np.ndarray
    y: np.ndarray
    xu: np.ndarray
    g: np.ndarray | None = None
    k: int = 0
    crow: np.ndarray | None = None
    xc: np.ndarray | None = None
    split: np.ndarray | None = None
    y0: np.ndarray | None = None
    y1: np.ndarray | None = None

    @classmethod
    def from_grouped(cls, gds: GroupedDataset) -> "Records":
        return cls(kind="grouped", user_id=gds.user_id, urow=gds.urow, t=gds.t, y=gds.y_bar, xu=gds.xu,
                   g=gds.g, k=gds.k, split=gds.split, y0=gds.y0_bar, y1=gds.y1_bar)

    @classmethod
    def from_raw(cls, ds: Dataset) -> "Records":
        return cls(kind="raw", user_id=ds.user_id, urow=ds.urow, t=ds.t, y=ds.y, xu=ds.xu,
                   crow=ds.crow, xc=ds.xc, split=ds.split, y0=ds.y0, y1=ds.y1)

    def __len__(self) -> int:
        return len(self.y)

    @property
    def grouped(self) -> bool:
        return self.kind == "grouped"

    @property
    def has_truth(self) -> bool:
        return self.y0 is not None and self.y1 is not None

    @property
    def p(self) -> int:
        return self.xu.shape[1]

    @property
    def n_flat(self) -> int:
        """Width of the flat baseline design row."""
        return self.p + (self.k if self.grouped else self.xc.shape[1])

    def indices(self, split: str) -> np.ndarray:
        if self.split is None:
            raise ConfigError("records carry no split tags")
        return np.flatnonzero(self.split == SPLITS.index(split))

    def subset(self, idx) -> "Records":
        pick = lambda a: None if a is None else a[idx]
        return replace(self, user_id=self.user_id[idx], urow=self.urow[idx], t=self.t[idx], y=self.y[idx],
                       g=pick(self.g), crow=pick(self.crow), split=pick(self.split),
                       y0=pick(self.y0), y1=pick(self.y1))

    def user_features(self, idx) -> np.ndarray:
        return self.xu[self.urow[idx]]

    def context_features(self, idx) -> np.ndarray:
        """One-hot group ids for grouped records, raw context rows otherwise."""
        if self.grouped:
            out = np.zeros((len(idx), self.k))
            out[np.arange(len(idx)), self.g[idx]] = 1.0
            return out
        return self.xc[self.crow[idx]]

    def flat(self, idx) -> np.ndarray:
        return np.hstack([self.user_features(idx), self.context_features(idx)])
