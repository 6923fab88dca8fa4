"""Co-attention between user and context tokens, and treatment cross-attention.

Token matrices are row-major, ``(batch, n_tokens, d)``.
"""

from __future__ import annotations

import numpy as np

from .. import diffkernel as dk
from ..diffkernel import Module, Tensor
from ..errors import DimensionError


def _param(rng, shape, fan_in):
    return dk.uniform_param(rng, shape, 1.0 / np.sqrt(fan_in))


class CoAttention(Module):
    """Parallel co-attention producing attended user and context vectors.

    With ``P_u = E_u W_u^T`` and ``P_c = E_c W_c^T``::

        L   = tanh(E_u W_L E_c^T)                 (n_u, n_c)
        H_u = tanh(P_u + L P_c)                   (n_u, h)
        H_c = tanh(P_c + L^T P_u)                 (n_c, h)
        a_u = softmax(H_u w_hu),  a_c = softmax(H_c w_hc)

    and the outputs are ``a_u^T E_u`` and ``a_c^T E_c``.
    """

    def __init__(self, d: int, h: int, rng: np.random.Generator):
        self.W_L = _param(rng, (d, d), d)
        self.W_u = _param(rng, (h, d), d)
        self.W_c = _param(rng, (h, d), d)
        self.w_hu = _param(rng, (h, 1), h)
        self.w_hc = _param(rng, (h, 1), h)

    @property
    def d(self) -> int:
        return self.W_L.shape[0]

    def __call__(self, e_u: Tensor, e_c: Tensor):
        return co_attend(self, e_u, e_c)


def _check_tokens(e_u, e_c, d):
    if e_u.ndim != 3 or e_c.ndim != 3:
        raise DimensionError(f"token batches must be 3-d, got {e_u.shape} and {e_c.shape}")
    if e_u.shape[2] != d or e_c.shape[2] != d:
        raise DimensionError(f"token width must be {d}, got {e_u.shape[2]} and {e_c.shape[2]}")
    if e_u.shape[0] != e_c.shape[0]:
        raise DimensionError(f"batch sizes differ: {e_u.shape[0]} vs {e_c.shape[0]}")
    if e_u.shape[1] == 0 or e_c.shape[1] == 0:
        raise DimensionError("token matrices must be non-empty")


def co_attend(att: CoAttention, e_u: Tensor, e_c: Tensor):
    """Returns ``(ê_u, ê_c, a_u, a_c)`` with shapes ``(B, d), (B, d), (B, n_u), (B, n_c)``."""
    _check_tokens(e_u, e_c, att.d)
    B = e_u.shape[0]
    L = dk.tanh((e_u @ att.W_L) @ dk.swapaxes(e_c, 1, 2))
    p_u = e_u @ att.W_u.T
    p_c = e_c @ att.W_c.T
    h_u = dk.tanh(p_u + L @ p_c)
    h_c = dk.tanh(p_c + dk.swapaxes(L, 1, 2) @ p_u)
    a_u = dk.softmax((h_u @ att.w_hu).reshape(B, e_u.shape[1]), axis=1)
    a_c = dk.softmax((h_c @ att.w_hc).reshape(B, e_c.shape[1]), axis=1)
    return _pool(a_u, e_u), _pool(a_c, e_c), a_u, a_c


def mean_pool(e_u: Tensor, e_c: Tensor):
    """Attention-free stand-in: uniform weights over tokens."""
    B = e_u.shape[0]
    a_u = Tensor(np.full((B, e_u.shape[1]), 1.0 / e_u.shape[1]))
    a_c = Tensor(np.full((B, e_c.shape[1]), 1.0 / e_c.shape[1]))
    return _pool(a_u, e_u), _pool(a_c, e_c), a_u, a_c


def _pool(a: Tensor, e: Tensor) -> Tensor:
    B, n = a.shape
    return (a.reshape(B, 1, n) @ e).reshape(B, e.shape[2])


class CrossAttention(Module):
    """Treatment embedding as query over the two fused tokens ``[ê_u, ê_c]``."""

    def __init__(self, d: int, d_t: int, k_d: int, rng: np.random.Generator):
        self.W_t = _param(rng, (k_d, d_t), d_t)
        self.W_f = _param(rng, (k_d, d), d)

    @property
    def k_d(self) -> int:
        return self.W_t.shape[0]

    def __call__(self, e_t: Tensor, eh_u: Tensor, eh_c: Tensor) -> Tensor:
        return cross_attend(self, e_t, eh_u, eh_c)


def cross_attend(att: CrossAttention, e_t: Tensor, eh_u: Tensor, eh_c: Tensor) -> Tensor:
    """``a_t`` of shape ``(B, 2)``: softmax of scaled query-key scores."""
    B, d = eh_u.shape
    query = (att.W_t @ e_t.reshape(e_t.shape[0], 1)).reshape(1, 1, att.k_d)
    tokens = dk.concat([eh_u.reshape(B, 1, d), eh_c.reshape(B, 1, d)], axis=1)
    keys = tokens @ att.W_f.T                              # (B, 2, k_d)
    scores = dk.tsum(keys * query, axis=2) * (1.0 / np.sqrt(att.k_d))
    return dk.softmax(scores, axis=1)


def information_gain(att: CrossAttention, eh_u: Tensor, eh_c: Tensor, e_t0: Tensor, e_t1: Tensor):
    """Token-wise attention difference between the two treatment queries.

    Returns ``(ê_Δ, a_t0, a_t1)`` with ``ê_Δ`` of shape ``(B, 2d)``.
    """
    a0 = cross_attend(att, e_t0, eh_u, eh_c)
    a1 = cross_attend(att, e_t1, eh_u, eh_c)
    return gain_from_attention(a0, a1, eh_u, eh_c), a0, a1


def gain_from_attention(a0: Tensor, a1: Tensor, eh_u: Tensor, eh_c: Tensor) -> Tensor:
    """``concat((a1[0] - a0[0]) ê_u, (a1[1] - a0[1]) ê_c)`` per record."""
    diff = a1 - a0
    return dk.concat([diff[:, 0:1] * eh_u, diff[:, 1:2] * eh_c], axis=1)
