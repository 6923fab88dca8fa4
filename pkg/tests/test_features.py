import numpy as np
import pytest

from upliftlab import diffkernel as dk
from upliftlab.errors import DimensionError
from upliftlab.features import (
    CategoricalEmbedding,
    ContextEmbedding,
    GroupEmbedding,
    NumericEmbedding,
    TreatmentEmbedding,
    UserTokens,
    embed_context,
    embed_group,
    embed_user_tokens,
)


def _zero(module):
    for p in module.parameters():
        p.data[...] = 0.0


def test_context_embedding_length(rng):
    emb = ContextEmbedding(100, [4, 4, 4], 4, rng)
    xc = np.hstack([rng.standard_normal((5, 100)), rng.integers(0, 4, (5, 3))])
    out = embed_context(emb, xc)
    assert out.shape == (5, 412)
    assert emb.out_dim == 412


def test_context_embedding_zero_params(rng):
    emb = ContextEmbedding(3, [4], 2, rng)
    _zero(emb)
    out = emb(np.array([[1.0, -2.0, 0.5, 3.0]]))
    np.testing.assert_array_equal(out.data, 0.0)


def test_context_embedding_layout(rng):
    emb = ContextEmbedding(2, [3], 2, rng)
    x = np.array([[0.5, -1.0, 2.0]])
    out = emb(x).data[0]
    w, b, tab = emb.numeric.weight.data, emb.numeric.bias.data, emb.categorical.table.data
    np.testing.assert_allclose(out[:2], 0.5 * w[0] + b[0])
    np.testing.assert_allclose(out[2:4], -1.0 * w[1] + b[1])
    np.testing.assert_allclose(out[4:], tab[2])


def test_identical_contexts_identical_embeddings(rng):
    emb = ContextEmbedding(4, [4, 4], 4, rng)
    row = np.array([0.1, 1.0, -0.3, 0.0, 2.0, 1.0])
    out = emb(np.vstack([row, row])).data
    np.testing.assert_array_equal(out[0], out[1])


def test_categorical_out_of_range(rng):
    emb = CategoricalEmbedding([4, 4], 2, rng)
    with pytest.raises(IndexError):
        emb(np.array([[0, 4]]))
    with pytest.raises(IndexError):
        emb(np.array([[-1, 0]]))
    with pytest.raises(IndexError):
        emb(np.array([[1.5, 0]]))


def test_categorical_offsets(rng):
    emb = CategoricalEmbedding([2, 3], 2, rng)
    out = emb(np.array([[1, 2]])).data[0]
    np.testing.assert_array_equal(out[0], emb.table.data[1])
    np.testing.assert_array_equal(out[1], emb.table.data[2 + 2])


def test_user_tokens_shape_and_zero(rng):
    emb = UserTokens(100, 4, rng)
    xu = rng.standard_normal((3, 100))
    assert embed_user_tokens(emb, xu).shape == (3, 100, 4)
    _zero(emb)
    np.testing.assert_array_equal(emb(xu).data, 0.0)


def test_user_tokens_feature_local(rng):
    emb = UserTokens(5, 3, rng)
    a = rng.standard_normal((2, 5))
    b = a.copy()
    b[1] = a[0]
    b[0] = a[1]
    out_a, out_b = emb(a).data, emb(b).data
    np.testing.assert_array_equal(out_a[0], out_b[1])
    np.testing.assert_array_equal(out_a[1], out_b[0])
    c = a.copy()
    c[0, 2] = 10.0
    diff = np.abs(emb(c).data - out_a).sum(axis=2)
    assert np.flatnonzero(diff.ravel()).tolist() == [2]


def test_user_tokens_wrong_width(rng):
    with pytest.raises(DimensionError):
        UserTokens(5, 3, rng)(np.zeros((2, 4)))


def test_numeric_embedding_linear_in_value(rng):
    emb = NumericEmbedding(6, 4, rng)
    x = rng.standard_normal((3, 6))
    e0, e1, e2 = emb(np.zeros_like(x)).data, emb(x).data, emb(2 * x).data
    np.testing.assert_allclose(e2 - e1, e1 - e0, atol=1e-12)


def test_group_embedding(rng):
    emb = GroupEmbedding(6, 4, rng)
    out = embed_group(emb, np.array([2, 2, 5]))
    assert out.shape == (3, 1, 4)
    np.testing.assert_array_equal(out.data[0], out.data[1])
    rows = emb.table.data
    assert len({tuple(r) for r in rows}) == 6
    with pytest.raises(IndexError):
        emb(np.array([6]))


def test_treatment_embedding(rng):
    emb = TreatmentEmbedding(4, rng)
    assert emb(0) is emb.e0 and emb(1) is emb.e1
    assert not np.array_equal(emb.e0.data, emb.e1.data)
    with pytest.raises(ValueError):
        emb(2)


def test_gradient_reaches_every_used_parameter(rng):
    emb = ContextEmbedding(3, [4, 2], 2, rng)
    xc = np.array([[0.3, -1.0, 2.0, 1, 0], [1.0, 0.5, -0.2, 3, 1]])
    with dk.fresh_tape() as tape:
        loss = dk.tanh(emb(xc)).sum()
        tape.backward(loss)
    assert np.all(emb.numeric.weight.grad != 0)
    assert np.all(emb.numeric.bias.grad != 0)
    used = [1, 3, 4, 5]
    assert np.all(emb.categorical.table.grad[used] != 0)
    assert np.all(emb.categorical.table.grad[[0, 2]] == 0)


def test_init_range(rng):
    emb = NumericEmbedding(50, 4, rng)
    assert np.abs(emb.weight.data).max() <= 0.5
