"""Standalone uplift baselines over flat feature rows.

Records are flattened to ``[x_u, x_c]`` (raw) or ``[x_u, onehot(g)]``
(grouped) one batch at a time.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .. import diffkernel as dk
from ..diffkernel import MLP, Module, Tensor
from ..errors import ConfigError
from .heads import mmd_linear
from .records import Records
from .training import TrainHistory, fit, predict_uplift

BASELINES = ("s_learner", "t_learner", "tarnet", "cfrnet_mmd")


@dataclass
class BaselineConfig:
    kind: str = "s_learner"
    hidden: list = field(default_factory=lambda: [64])
    mmd_weight: float = 1.0
    lr: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 50
    patience: int = 5
    max_steps: int | None = None

    def validate(self) -> "BaselineConfig":
        if self.kind not in BASELINES:
            raise ConfigError(f"unknown baseline {self.kind!r}; expected one of {BASELINES}")
        for name in ("batch_size", "max_epochs", "patience"):
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "BaselineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown baseline config keys: {sorted(unknown)}")
        return cls(**d).validate()

    def to_dict(self) -> dict:
        return asdict(self)


def _col(x: Tensor) -> Tensor:
    return x.reshape(x.shape[0])


class _Baseline(Module):
    kind = ""

    def __init__(self, cfg: BaselineConfig, n_in: int):
        self.cfg = cfg
        self.n_in = n_in
        self.y_mean = 0.0
        self.y_scale = 1.0
        self.fitted = False

    def outcomes(self, x: np.ndarray, t: np.ndarray | None = None):
        """``(mu0, mu1, aux)`` for a batch of flat rows."""
        raise NotImplementedError

    def batch_loss(self, rec: Records, idx, target: np.ndarray) -> Tensor:
        t = np.asarray(rec.t)[idx].astype(np.float64)
        mu0, mu1, aux = self.outcomes(rec.flat(idx), t)
        y = Tensor(target[idx])
        loss = dk.mean((1.0 - t) * (mu0 - y) ** 2 + t * (mu1 - y) ** 2)
        return loss if aux is None else loss + aux

    def score(self, rec: Records, idx, which: str = "tau_hat") -> np.ndarray:
        with dk.no_grad():
            mu0, mu1, _ = self.outcomes(rec.flat(idx))
        if which == "mu0":
            return mu0.data
        if which != "tau_hat":
            raise ConfigError(f"baseline {self.kind} only predicts tau_hat and mu0")
        return mu1.data - mu0.data

    def manifest(self) -> dict:
        return {"model": self.kind, "config": self.cfg.to_dict(), "n_in": self.n_in,
                "y_mean": self.y_mean, "y_scale": self.y_scale}


class SLearner(_Baseline):
    """One network over ``[x, t]``; uplift is ``f(x, 1) - f(x, 0)``."""

    kind = "s_learner"

    def __init__(self, cfg, n_in, rng):
        super().__init__(cfg, n_in)
        self.net = MLP(n_in + 1, list(cfg.hidden), 1, rng)

    def outcomes(self, x, t=None):
        ones = np.ones((len(x), 1))
        if t is None:
            mu0 = _col(self.net(Tensor(np.hstack([x, 0 * ones]))))
            mu1 = _col(self.net(Tensor(np.hstack([x, ones]))))
            return mu0, mu1, None
        # factual pass only: each row sees its own treatment
        f = _col(self.net(Tensor(np.hstack([x, t[:, None]]))))
        return f, f, None


class TLearner(_Baseline):
    """Separate networks for control and treated responses."""

    kind = "t_learner"

    def __init__(self, cfg, n_in, rng):
        super().__init__(cfg, n_in)
        self.f0 = MLP(n_in, list(cfg.hidden), 1, rng)
        self.f1 = MLP(n_in, list(cfg.hidden), 1, rng)

    def outcomes(self, x, t=None):
        x = Tensor(x)
        return _col(self.f0(x)), _col(self.f1(x)), None


class TARNet(_Baseline):
    kind = "tarnet"

    def __init__(self, cfg, n_in, rng):
        super().__init__(cfg, n_in)
        hidden = list(cfg.hidden) or [n_in]
        rep = hidden[-1]
        self.trunk = MLP(n_in, hidden[:-1], rep, rng)
        self.h0 = MLP(rep, [rep], 1, rng)
        self.h1 = MLP(rep, [rep], 1, rng)

    def represent(self, x) -> Tensor:
        return dk.relu(self.trunk(Tensor(x)))

    def outcomes(self, x, t=None):
        phi = self.represent(x)
        return _col(self.h0(phi)), _col(self.h1(phi)), self.auxiliary(phi, t)

    def auxiliary(self, phi, t):
        return None


class CFRNet(TARNet):
    """TARNet with a linear-time MMD penalty between arm representations."""

    kind = "cfrnet_mmd"

    def __init__(self, cfg, n_in, rng):
        super().__init__(cfg, n_in, rng)
        self.bandwidth: float | None = None    # None: median heuristic per batch

    def auxiliary(self, phi, t):
        if t is None:
            return None
        return self.cfg.mmd_weight * mmd_linear(phi, t, self.bandwidth)


_CLASSES = {c.kind: c for c in (SLearner, TLearner, TARNet, CFRNet)}


def build_baseline(cfg: BaselineConfig, rec: Records, seed: int) -> _Baseline:
    cfg.validate()
    return _CLASSES[cfg.kind](cfg, rec.n_flat, dk.substream(seed, "baseline", cfg.kind, "init"))


def baseline_fit_predict(cfg: BaselineConfig, rec: Records, seed: int, split: str = "test"
                         ) -> tuple[_Baseline, TrainHistory, np.ndarray]:
    """Train a baseline and return it with its history and uplift on ``split``."""
    model = build_baseline(cfg, rec, seed)
    hist = fit(model, rec, cfg, seed, stream=f"baseline-{cfg.kind}")
    idx = rec.indices(split) if rec.split is not None else np.arange(len(rec))
    return model, hist, predict_uplift(model, rec, idx=idx)
