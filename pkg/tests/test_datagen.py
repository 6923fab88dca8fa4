import json

import numpy as np
import pytest

from upliftlab.datagen import (
    GenConfig,
    Dataset,
    assign_contexts,
    generate,
    generate_context_pool,
    generate_users,
    response_terms,
    split,
)
from upliftlab.errors import ConfigError


@pytest.fixture(scope="module")
def small():
    return generate(GenConfig(n_users=60, pool_multiplier=5, seed=3))


@pytest.fixture(scope="module")
def many_users():
    # 10^5 users with one context each and narrow feature blocks
    cfg = GenConfig(n_users=100_000, pool_multiplier=1, contexts_per_user_min=1, contexts_per_user_max=1,
                    p_b=5, p_c=5, q_b=2, q_c=2, q_m=1, seed=11)
    return cfg, generate(cfg)


def test_user_rows_have_100_features():
    xu = generate_users(GenConfig(n_users=10))
    assert xu.shape == (10, 100)
    assert set(np.unique(xu[:, :34])) <= {0.0, 1.0}


def test_users_deterministic():
    cfg = GenConfig(n_users=50, seed=9)
    np.testing.assert_array_equal(generate_users(cfg), generate_users(cfg))
    assert not np.array_equal(generate_users(cfg), generate_users(GenConfig(n_users=50, seed=10)))


def test_binary_user_column_mean():
    xu = generate_users(GenConfig(n_users=100_000, p_b=3, p_c=1, seed=1))
    assert np.all(np.abs(xu[:, :3].mean(axis=0) - 0.5) < 0.01)


def test_context_pool_shape_and_groups():
    cfg = GenConfig(n_users=1000, pool_multiplier=100, seed=2)
    xc, latent = generate_context_pool(cfg)
    assert xc.shape == (100_000, 103)
    freq = np.bincount(latent, minlength=6) / len(latent)
    np.testing.assert_allclose(freq, [0.2, 0.16, 0.16, 0.16, 0.16, 0.16], atol=0.01)
    assert set(np.unique(xc[:, 100:])) <= {0.0, 1.0, 2.0, 3.0}


def test_context_pool_deterministic_and_observable_flag():
    cfg = GenConfig(n_users=20, pool_multiplier=3, seed=4)
    a, la = generate_context_pool(cfg)
    b, lb = generate_context_pool(cfg)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(la, lb)
    c, lc = generate_context_pool(GenConfig(n_users=20, pool_multiplier=3, seed=4, observable_group=True))
    assert c.shape[1] == 104
    np.testing.assert_array_equal(c[:, :103], a)
    np.testing.assert_array_equal(c[:, 103], lc)


def test_assign_contexts_counts_and_uniqueness():
    cfg = GenConfig(n_users=2000, pool_multiplier=2, seed=5)
    users, ctxs = assign_contexts(cfg)
    counts = np.bincount(users, minlength=cfg.n_users)
    assert counts.min() >= 60 and counts.max() <= 130
    assert abs(counts.mean() - 95) < 2
    pairs = users * cfg.pool_size + ctxs
    assert len(np.unique(pairs)) == len(pairs)


def test_assign_contexts_small_pool_rejected():
    with pytest.raises(ConfigError):
        assign_contexts(GenConfig(n_users=1, pool_multiplier=100))


@pytest.mark.parametrize("bad", [dict(group_probs=[0.5, 0.5, 0, 0, 0, 0.1]),
                                 dict(contexts_per_user_min=10, contexts_per_user_max=5),
                                 dict(n_users=0),
                                 dict(group_vars=[1.0] * 5)])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        GenConfig(**bad).validate()


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        GenConfig.from_dict({"n_users": 5, "colour": "red"})


def test_response_zero_case():
    z = np.zeros(3)
    y0, y1 = response_terms(z, z, z, z, z, z, z)
    np.testing.assert_array_equal(y0, 0.0)
    np.testing.assert_array_equal(y1, 0.0)


def test_response_hand_evaluation():
    # all-ones features: 100 user, 100 binary/continuous context, three categoricals at value 2
    su, sc, scat = np.array([100.0]), np.array([100.0]), np.array([6.0])
    z0, z1 = np.array([2.0]), np.array([-1.0])
    y0, y1 = response_terms(su, sc, scat, z0, np.zeros(1), z1, np.zeros(1))
    assert y0[0] == pytest.approx(0.5 * 100 + 0.5 * 100 + 0.5 * 100 * 100 + 0.5 * 6 + 2.0)
    assert y1[0] == pytest.approx(y0[0] + 0.2 * (100 + 100 + 100 * 100 + 6) - 1.0)


def test_noiseless_generation_matches_formula():
    cfg = GenConfig(n_users=8, pool_multiplier=20, noise=False, group_vars=[0.0] * 6, seed=6)
    ds = generate(cfg)
    su = ds.xu.sum(axis=1)[ds.urow]
    sc = ds.xc[:, :100].sum(axis=1)[ds.crow]
    scat = ds.xc[:, 100:103].sum(axis=1)[ds.crow]
    mean_g = np.asarray(cfg.group_means)[ds.latent_group]
    base = su + sc + su * sc + scat
    np.testing.assert_allclose(ds.y0, 0.5 * base + mean_g)
    np.testing.assert_allclose(ds.y1, 0.7 * base + 2 * mean_g)


def test_observed_response_identity(small):
    np.testing.assert_array_equal(small.y, np.where(small.t == 1, small.y1, small.y0))


def test_user_shares_features_and_treatment(small):
    for u in np.unique(small.user_id)[:10]:
        rows = small.user_id == u
        assert len(np.unique(small.t[rows])) == 1
        assert len(np.unique(small.urow[rows])) == 1


def test_canonical_order(small):
    key = small.user_id * 10**9 + small.ctx_id
    assert np.all(np.diff(key) > 0)


def test_uplift_tracks_group_means(many_users):
    cfg, ds = many_users
    base = (ds.xu.sum(1)[ds.urow] + ds.xc[:, :4].sum(1)[ds.crow] + ds.xu.sum(1)[ds.urow] * ds.xc[:, :4].sum(1)[ds.crow]
            + ds.xc[:, 4].take(ds.crow))
    resid = ds.tau_true - 0.2 * base      # z1 + eps1
    for g, m in enumerate(cfg.group_means):
        sel = ds.latent_group == g
        assert abs(resid[sel].mean() - m) < 0.05
    # E[y1 - y0 | g] = 0.2 E[base] + mean_g, E[base] = 2.5 + 1 + 2.5 * 1 + 1.5
    gm = [ds.tau_true[ds.latent_group == g].mean() for g in range(6)]
    np.testing.assert_allclose(gm, 1.5 + np.asarray(cfg.group_means), atol=0.15)


def test_treatment_independent_of_user_features(many_users):
    _, ds = many_users
    xu, t = ds.xu[ds.urow], ds.t
    gap = np.abs(xu[t == 1].mean(axis=0) - xu[t == 0].mean(axis=0))
    assert gap.max() < 0.02
    assert abs(t.mean() - 0.5) < 0.01


def test_split_100_users():
    ds = generate(GenConfig(n_users=100, pool_multiplier=2, contexts_per_user_min=1, contexts_per_user_max=3))
    first = np.unique(ds.user_id, return_index=True)[1]
    assert np.bincount(ds.split[first]).tolist() == [70, 20, 10]
    for u in np.unique(ds.user_id):
        assert len(np.unique(ds.split[ds.user_id == u])) == 1
    again = split(ds.subset(np.ones(len(ds), bool)), ds.schema["seed"])
    np.testing.assert_array_equal(again.split, ds.split)


def test_shared_z_flag():
    cfg = GenConfig(n_users=5, pool_multiplier=30, noise=False, shared_z=True, seed=8)
    ds = generate(cfg)
    su = ds.xu.sum(1)[ds.urow]
    sc = ds.xc[:, :100].sum(1)[ds.crow]
    base = su + sc + su * sc + ds.xc[:, 100:].sum(1)[ds.crow]
    z0 = ds.y0 - 0.5 * base
    np.testing.assert_allclose(ds.tau_true - 0.2 * base, z0, atol=1e-9)


def test_save_load_roundtrip(small, tmp_path):
    small.save(tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["schema.json", "test.csv", "train.csv", "val.csv"]
    header = (tmp_path / "train.csv").read_text().splitlines()[0].split(",")
    assert header[:8] == ["user_id", "ctx_id", "split", "t", "y", "y0", "y1", "latent_group"]
    assert header[8] == "xu_0" and header[-1] == "xc_102"
    schema = json.loads((tmp_path / "schema.json").read_text())
    for key in ("p_b", "p_c", "q_b", "q_c", "q_m", "k_true", "seed", "n_users"):
        assert key in schema
    back = Dataset.load(tmp_path)
    np.testing.assert_array_equal(back.user_id, small.user_id)
    np.testing.assert_array_equal(back.split, small.split)
    np.testing.assert_allclose(back.y, small.y, rtol=0, atol=0)
    np.testing.assert_allclose(back.xc[back.crow], small.xc[small.crow], rtol=0, atol=0)
    np.testing.assert_allclose(back.xu[back.urow], small.xu[small.urow], rtol=0, atol=0)
