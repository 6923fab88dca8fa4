"""The UMLC uplift model: user/context co-attention, treatment cross-attention
and an information-gain weighted loss around a pluggable base head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .. import diffkernel as dk
from ..diffkernel import Linear, Module, Tensor
from ..errors import ConfigError
from ..features import GroupEmbedding, TreatmentEmbedding, UserTokens
from .attention import CoAttention, CrossAttention, co_attend, information_gain, mean_pool
from .heads import HEAD_KINDS, build_head
from .records import Records


@dataclass
class UpliftConfig:
    base: str = "cfrnet_mmd"
    d: int = 4
    d_t: int | None = None          # defaults to d
    h: int = 8
    k_d: int = 8
    hidden: list = field(default_factory=lambda: [64])
    beta: float = 0.5
    gamma: float = 1e-3
    mmd_weight: float = 1.0
    lr: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 50
    patience: int = 5
    max_steps: int | None = None    # optional optimiser-step budget
    rescale_batch: bool = False     # multiply the weighted loss by the batch size
    tie_tau_heads: bool = False
    rcg: bool = True
    uci: bool = True
    tfi: bool = True

    def validate(self) -> "UpliftConfig":
        if self.base not in HEAD_KINDS:
            raise ConfigError(f"unknown base head {self.base!r}; expected one of {HEAD_KINDS}")
        for name in ("d", "h", "k_d", "batch_size", "max_epochs", "patience"):
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.beta < 0 or self.gamma < 0:
            raise ConfigError("beta and gamma must be non-negative")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "UpliftConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d).validate()

    def to_dict(self) -> dict:
        return asdict(self)


class UpliftModel(Module):
    """Uplift model over user features and one context token per record.

    With ``rcg`` the context token is a learned group embedding; without it
    the token is a linear projection of the raw context features.
    """

    def __init__(self, cfg: UpliftConfig, p: int, rng: np.random.Generator, k: int | None = None,
                 q: int | None = None):
        cfg.validate()
        self.cfg = cfg
        d, d_t = cfg.d, cfg.d_t or cfg.d
        self.user = UserTokens(p, d, rng)
        if cfg.rcg:
            if not k or k < 2:
                raise ConfigError("grouped uplift model needs k >= 2 groups")
            self.group = GroupEmbedding(k, d, rng)
            self.ctx_proj = None
        else:
            if not q:
                raise ConfigError("raw-context uplift model needs the context width q")
            self.group = None
            self.ctx_proj = Linear(q, d, rng)
        self.coatt = CoAttention(d, cfg.h, rng) if cfg.uci else None
        self.treat = TreatmentEmbedding(d_t, rng) if cfg.tfi else None
        self.cross = CrossAttention(d, d_t, cfg.k_d, rng) if cfg.tfi else None
        self.head = build_head(cfg.base, 2 * d, list(cfg.hidden), rng, tied=cfg.tie_tau_heads,
                               mmd_weight=cfg.mmd_weight)
        self.p, self.k, self.q = p, k, q
        self.y_mean = 0.0
        self.y_scale = 1.0
        self.fitted = False

    # -- forward --------------------------------------------------------------

    def tokens(self, rec: Records, idx) -> tuple[Tensor, Tensor]:
        idx = np.asarray(idx)
        e_u = self.user(rec.user_features(idx))
        B, d = len(idx), self.cfg.d
        if self.cfg.rcg:
            if not rec.grouped:
                raise ConfigError("model was built for grouped records, got raw records")
            e_c = self.group(rec.g[idx])
        else:
            if rec.grouped:
                raise ConfigError("model was built for raw records, got grouped records")
            e_c = self.ctx_proj(Tensor(rec.xc[rec.crow[idx]])).reshape(B, 1, d)
        return e_u, e_c

    def forward(self, rec: Records, idx) -> dict:
        e_u, e_c = self.tokens(rec, idx)
        return self.forward_tokens(e_u, e_c, np.asarray(rec.t)[np.asarray(idx)])

    def forward_tokens(self, e_u: Tensor, e_c: Tensor, t=None) -> dict:
        if self.cfg.uci:
            eh_u, eh_c, a_u, a_c = co_attend(self.coatt, e_u, e_c)
        else:
            eh_u, eh_c, a_u, a_c = mean_pool(e_u, e_c)
        e_f = dk.concat([eh_u, eh_c], axis=1)
        out = {"e_f": e_f, "a_u": a_u, "a_c": a_c, "e_delta": None, "a_t0": None, "a_t1": None}
        if self.cfg.tfi:
            e_delta, a0, a1 = information_gain(self.cross, eh_u, eh_c, self.treat.e0, self.treat.e1)
            head = self.head(e_f, e_f + e_delta, t)
            out.update(e_delta=e_delta, a_t0=a0, a_t1=a1)
        else:
            head = self.head(e_f, None, t)
        out.update(mu0=head.mu0, tau_hat=head.tau_hat, tau_tilde=head.tau_tilde, aux=head.aux)
        out["mu1"] = head.mu0 + head.tau_hat
        out["mu1_tilde"] = None if head.tau_tilde is None else head.mu0 + head.tau_tilde
        return out

    # -- trainer protocol -----------------------------------------------------

    def batch_loss(self, rec: Records, idx, target: np.ndarray) -> Tensor:
        out = self.forward(rec, idx)
        t = np.asarray(rec.t)[idx]
        loss = umlc_loss(out, t, target[idx], self.cfg.beta, self.cfg.gamma, tfi=self.cfg.tfi,
                         rescale=self.cfg.rescale_batch)
        if out["aux"] is not None:
            loss = loss + out["aux"]
        return loss

    def score(self, rec: Records, idx, which: str = "tau_hat") -> np.ndarray:
        with dk.no_grad():
            out = self.forward(rec, idx)
        if which not in ("tau_hat", "tau_tilde", "mu0"):
            raise ConfigError(f"unknown output {which!r}")
        val = out[which]
        if val is None:
            raise ConfigError(f"{which} is not produced when tfi is disabled")
        return val.data

    def manifest(self) -> dict:
        return {"model": "umlc", "config": self.cfg.to_dict(), "p": self.p, "k": self.k, "q": self.q,
                "y_mean": self.y_mean, "y_scale": self.y_scale}


def umlc_loss(out: dict, t, y, beta: float, gamma: float, tfi: bool = True, rescale: bool = False,
              weights: np.ndarray | None = None) -> Tensor:
    """Information-gain weighted factual loss.

    ``w = softmax(tau_tilde - tau_hat)`` over the batch, used as constant
    weights.  Per record ``(1-t)(mu0-y)^2 + t((mu1-y)^2 + beta (mu1_tilde-y)^2)``;
    the weighted sum is reduced by ``gamma * ||e_delta||_F^2 / B`` so both
    terms sit on a per-record scale (``rescale`` multiplies both by ``B``).  Without the
    treatment interaction the weights are uniform and the beta/gamma terms
    are dropped.  ``weights`` overrides the batch weights (used to hold them
    fixed in finite-difference checks).
    """
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    y = Tensor(np.asarray(y, dtype=np.float64).reshape(-1))
    B = len(t)
    if B == 0:
        raise ConfigError("loss needs a non-empty batch")
    ctrl = (out["mu0"] - y) ** 2
    treat = (out["mu1"] - y) ** 2
    if tfi:
        w = batch_weights(out["tau_tilde"].data, out["tau_hat"].data) if weights is None else weights
        treat = treat + beta * (out["mu1_tilde"] - y) ** 2
    else:
        w = np.full(B, 1.0 / B) if weights is None else weights
    per = (1.0 - t) * ctrl + t * treat
    loss = dk.tsum(per * w)
    if tfi and gamma:
        loss = loss - (gamma / B) * dk.frob_norm_sq(out["e_delta"])
    if rescale:
        loss = loss * float(B)
    return loss


def batch_weights(tau_tilde: np.ndarray, tau_hat: np.ndarray) -> np.ndarray:
    z = np.asarray(tau_tilde, dtype=np.float64) - np.asarray(tau_hat, dtype=np.float64)
    z = np.exp(z - z.max())
    return z / z.sum()


def build_uplift_model(cfg: UpliftConfig, rec: Records, seed: int) -> UpliftModel:
    rng = dk.substream(seed, "uplift", "init")
    if cfg.rcg and not rec.grouped:
        raise ConfigError("grouping is enabled but the records are raw; disable rcg or group first")
    if not cfg.rcg and rec.grouped:
        raise ConfigError("rcg is disabled but the records are grouped")
    return UpliftModel(cfg, rec.p, rng, k=rec.k if rec.grouped else None,
                       q=None if rec.grouped else rec.xc.shape[1])
