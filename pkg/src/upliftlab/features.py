"""Feature embedding layers.

Token layout is row-major: a batch of token matrices has shape
``(batch, n_tokens, d)``, i.e. the transpose of the ``d x n`` column
convention.  Every layer here is feature-local: the embedding of feature
``j`` only reads column ``j``.
"""

from __future__ import annotations

import numpy as np

from . import diffkernel as dk
from .diffkernel import Module, Tensor
from .errors import DimensionError


def _init(rng, shape, d):
    return dk.uniform_param(rng, shape, 1.0 / np.sqrt(d))


class NumericEmbedding(Module):
    """Feature ``j`` with value ``x`` maps to ``x * w_j + b_j`` in R^d."""

    def __init__(self, n_features: int, d: int, rng: np.random.Generator):
        self.weight = _init(rng, (n_features, d), d)
        self.bias = _init(rng, (n_features, d), d)

    @property
    def n_features(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x) -> Tensor:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise DimensionError(f"expected (batch, {self.n_features}) numeric input, got {x.shape}")
        return dk.scale_shift(x, self.weight, self.bias)


class CategoricalEmbedding(Module):
    """One lookup table per categorical feature, stored stacked with offsets."""

    def __init__(self, cardinalities: list[int], d: int, rng: np.random.Generator):
        self.cardinalities = [int(c) for c in cardinalities]
        self.offsets = np.concatenate([[0], np.cumsum(self.cardinalities)[:-1]]).astype(np.int64)
        self.table = _init(rng, (int(sum(self.cardinalities)), d), d)

    def __call__(self, codes) -> Tensor:
        codes = np.asarray(codes)
        idx = codes.astype(np.int64)
        if codes.ndim != 2 or codes.shape[1] != len(self.cardinalities):
            raise DimensionError(f"expected (batch, {len(self.cardinalities)}) codes, got {codes.shape}")
        card = np.asarray(self.cardinalities)
        if np.any(idx != codes) or np.any(idx < 0) or np.any(idx >= card):
            bad = np.argwhere((idx < 0) | (idx >= card) | (idx != codes))[0]
            raise IndexError(f"category {codes[tuple(bad)]} out of range for feature {bad[1]}")
        return dk.take(self.table, idx + self.offsets)


class ContextEmbedding(Module):
    """Context features -> concatenated per-feature embeddings (length q*d).

    The first ``n_numeric`` columns go through :class:`NumericEmbedding`, the
    remaining ones are category codes.
    """

    def __init__(self, n_numeric: int, cardinalities: list[int], d: int, rng: np.random.Generator):
        self.d = d
        self.numeric = NumericEmbedding(n_numeric, d, rng)
        self.categorical = CategoricalEmbedding(cardinalities, d, rng) if cardinalities else None

    @property
    def n_features(self) -> int:
        n_cat = len(self.categorical.cardinalities) if self.categorical else 0
        return self.numeric.n_features + n_cat

    @property
    def out_dim(self) -> int:
        return self.n_features * self.d

    def tokens(self, xc) -> Tensor:
        xc = np.asarray(xc, dtype=np.float64)
        if xc.ndim != 2 or xc.shape[1] != self.n_features:
            raise DimensionError(f"expected (batch, {self.n_features}) context input, got {xc.shape}")
        k = self.numeric.n_features
        parts = [self.numeric(xc[:, :k])]
        if self.categorical is not None:
            parts.append(self.categorical(xc[:, k:]))
        return dk.concat(parts, axis=1) if len(parts) > 1 else parts[0]

    def __call__(self, xc) -> Tensor:
        tok = self.tokens(xc)
        return tok.reshape(tok.shape[0], self.out_dim)


def embed_context(emb: ContextEmbedding, xc) -> Tensor:
    return emb(xc)


class UserTokens(NumericEmbedding):
    """User features as a ``(batch, p, d)`` token matrix, one token per feature."""


def embed_user_tokens(emb: UserTokens, xu) -> Tensor:
    return emb(xu)


class GroupEmbedding(Module):
    def __init__(self, n_groups: int, d: int, rng: np.random.Generator):
        self.table = _init(rng, (n_groups, d), d)

    @property
    def n_groups(self) -> int:
        return self.table.shape[0]

    def __call__(self, g) -> Tensor:
        g = np.asarray(g, dtype=np.int64)
        if np.any(g < 0) or np.any(g >= self.n_groups):
            raise IndexError(f"group id outside [0, {self.n_groups})")
        return dk.take(self.table, g).reshape(len(g), 1, self.table.shape[1])


def embed_group(emb: GroupEmbedding, g) -> Tensor:
    return emb(g)


class TreatmentEmbedding(Module):
    def __init__(self, d_t: int, rng: np.random.Generator):
        self.e0 = _init(rng, (d_t,), d_t)
        self.e1 = _init(rng, (d_t,), d_t)

    def __call__(self, t: int) -> Tensor:
        if t not in (0, 1):
            raise ValueError(f"treatment must be 0 or 1, got {t}")
        return self.e1 if t == 1 else self.e0
