"""Prediction heads that turn fused representations into response estimates.

A head receives the fused vector ``e_f`` and, for the information-gain path,
``e_f + e_delta``.  It returns the control response ``mu0``, the uplift
``tau_hat`` and (when the second input is given) ``tau_tilde``.  Heads may
contribute an auxiliary loss computed from the last forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import diffkernel as dk
from ..diffkernel import MLP, Module, Tensor
from ..errors import ConfigError

HEAD_KINDS = ("mlp", "tarnet", "cfrnet_mmd")


@dataclass
class HeadOutput:
    mu0: Tensor
    tau_hat: Tensor
    tau_tilde: Tensor | None
    aux: Tensor | None = None


def _flat(x: Tensor) -> Tensor:
    return x.reshape(x.shape[0])


class MLPHead(Module):
    """Three independent MLPs over the fused vector."""

    def __init__(self, n_in: int, hidden: list[int], rng: np.random.Generator, tied: bool = False):
        self.mu0 = MLP(n_in, hidden, 1, rng)
        self.tau = MLP(n_in, hidden, 1, rng)
        # tied heads reuse the tau_hat network for tau_tilde (test configuration)
        self.tau_tilde = None if tied else MLP(n_in, hidden, 1, rng)

    def _tilde(self, x):
        return _flat((self.tau_tilde or self.tau)(x))

    def __call__(self, e_f: Tensor, e_f_gain: Tensor | None = None, t=None) -> HeadOutput:
        tilde = None if e_f_gain is None else self._tilde(e_f_gain)
        return HeadOutput(_flat(self.mu0(e_f)), _flat(self.tau(e_f)), tilde)


class TARNetHead(Module):
    """Shared representation trunk followed by separate outcome heads."""

    def __init__(self, n_in: int, hidden: list[int], rng: np.random.Generator, tied: bool = False):
        rep = hidden[-1] if hidden else n_in
        self.trunk = MLP(n_in, hidden[:-1], rep, rng) if hidden else None
        self.mu0 = MLP(rep, [rep], 1, rng)
        self.tau = MLP(rep, [rep], 1, rng)
        self.tau_tilde = None if tied else MLP(rep, [rep], 1, rng)

    def represent(self, x: Tensor) -> Tensor:
        return x if self.trunk is None else dk.relu(self.trunk(x))

    def __call__(self, e_f: Tensor, e_f_gain: Tensor | None = None, t=None) -> HeadOutput:
        phi = self.represent(e_f)
        tilde = None
        if e_f_gain is not None:
            tilde = _flat((self.tau_tilde or self.tau)(self.represent(e_f_gain)))
        out = HeadOutput(_flat(self.mu0(phi)), _flat(self.tau(phi)), tilde)
        out.aux = self.auxiliary(phi, t)
        return out

    def auxiliary(self, phi: Tensor, t) -> Tensor | None:
        return None


class CFRNetHead(TARNetHead):
    """TARNet plus an MMD penalty between treated and control representations."""

    def __init__(self, n_in: int, hidden: list[int], rng: np.random.Generator, tied: bool = False,
                 mmd_weight: float = 1.0):
        super().__init__(n_in, hidden, rng, tied)
        self.mmd_weight = float(mmd_weight)
        self.bandwidth: float | None = None    # None: median heuristic per batch

    def auxiliary(self, phi: Tensor, t) -> Tensor | None:
        if t is None:
            return None
        return self.mmd_weight * mmd_linear(phi, np.asarray(t), self.bandwidth)


def build_head(kind: str, n_in: int, hidden: list[int], rng, tied: bool = False, mmd_weight: float = 1.0):
    if kind == "mlp":
        return MLPHead(n_in, hidden, rng, tied)
    if kind == "tarnet":
        return TARNetHead(n_in, hidden, rng, tied)
    if kind == "cfrnet_mmd":
        return CFRNetHead(n_in, hidden, rng, tied, mmd_weight)
    raise ConfigError(f"unknown base head {kind!r}; expected one of {HEAD_KINDS}")


# -- MMD ----------------------------------------------------------------------

def median_bandwidth(x: np.ndarray, max_points: int = 512) -> float:
    """Median pairwise Euclidean distance (computed on at most ``max_points`` rows)."""
    x = np.asarray(x, dtype=np.float64)[:max_points]
    if len(x) < 2:
        return 1.0
    sq = (x * x).sum(1)
    d2 = np.maximum(sq[:, None] - 2 * x @ x.T + sq[None, :], 0.0)
    iu = np.triu_indices(len(x), k=1)
    med = float(np.median(np.sqrt(d2[iu])))
    return med if med > 0 else 1.0


def _rbf_rows(a: Tensor, b: Tensor, inv_two_s2: float) -> Tensor:
    diff = a - b
    return dk.exp(dk.tsum(diff * diff, axis=1) * (-inv_two_s2))


def mmd_linear(phi: Tensor, t, bandwidth: float | None = None) -> Tensor:
    """Unbiased linear-time MMD^2 estimate between treated and control rows.

    Rows of each arm are paired consecutively: with ``m = floor(min(n_t, n_c)/2)``
    quadruples ``(x_2i, x_2i+1, y_2i, y_2i+1)`` the estimate averages
    ``k(x,x') + k(y,y') - k(x,y') - k(x',y)`` under an RBF kernel.  The
    bandwidth defaults to the median-distance heuristic on the batch and is
    not differentiated.  Returns 0 when either arm has fewer than 2 rows.
    """
    t = np.asarray(t).reshape(-1)
    treated = np.flatnonzero(t == 1)
    control = np.flatnonzero(t == 0)
    m = min(len(treated), len(control)) // 2
    if m == 0:
        return Tensor(np.array(0.0))
    if bandwidth is None:
        bandwidth = median_bandwidth(phi.data)
    inv = 1.0 / (2.0 * bandwidth ** 2)
    x1 = dk.take(phi, treated[0:2 * m:2])
    x2 = dk.take(phi, treated[1:2 * m:2])
    y1 = dk.take(phi, control[0:2 * m:2])
    y2 = dk.take(phi, control[1:2 * m:2])
    h = _rbf_rows(x1, x2, inv) + _rbf_rows(y1, y2, inv) - _rbf_rows(x1, y2, inv) - _rbf_rows(x2, y1, inv)
    return dk.mean(h)


def mmd_linear_numpy(x: np.ndarray, y: np.ndarray, bandwidth: float | None = None) -> float:
    """Same estimator on two explicit samples (no autodiff)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    phi = np.vstack([x, y])
    t = np.r_[np.ones(len(x), int), np.zeros(len(y), int)]
    with dk.no_grad():
        return mmd_linear(Tensor(phi), t, bandwidth).item()
