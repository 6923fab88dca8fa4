"""A look at the synthetic RCT data: group structure, uplift, arm balance."""

import numpy as np

from upliftlab.datagen import GenConfig, generate

cfg = GenConfig(n_users=2000, pool_multiplier=10, seed=0)
ds = generate(cfg)
print(f"{len(ds)} samples, {len(np.unique(ds.user_id))} users, {len(np.unique(ds.ctx_id))} distinct contexts")
print("x_u width", ds.xu.shape[1], " x_c width", ds.xc.shape[1])

# latent group frequencies vs the configured probabilities
freq = np.bincount(ds.latent_group, minlength=cfg.n_groups) / len(ds)
print("group freq  ", np.round(freq, 3))
print("group probs ", np.round(cfg.group_probs, 3))

# true uplift by latent group
tau = ds.tau_true
for g in range(cfg.n_groups):
    m = ds.latent_group == g
    print(f"group {g}: mean uplift {tau[m].mean():8.3f}  sd {tau[m].std():7.3f}")

# treatment is assigned per user, independent of the features
xu, t = ds.xu[ds.urow], ds.t
gap = np.abs(xu[t == 1].mean(axis=0) - xu[t == 0].mean(axis=0))
print(f"treated share {t.mean():.3f}; largest feature-mean gap between arms {gap.max():.3f}")

# observable context features say nothing about the latent group
xc_means = np.array([ds.xc[ds.latent_group == g, :5].mean(axis=0) for g in range(cfg.n_groups)])
print("first five context-feature means per group:")
print(np.round(xc_means, 3))
