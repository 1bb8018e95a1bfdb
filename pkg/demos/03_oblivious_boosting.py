"""
Boosting oblivious trees
========================

Every level of an oblivious tree shares one (feature, threshold) split, so
a depth-d tree is d splits and a table of 2^d leaf vectors. Leaves take the
Newton step of the softmax log-loss with an L2 penalty.
"""

# %%
import numpy as np

from sangria.gbt import GbtConfig, fit_arrays, predict_label, softmax_grad_hess

# gradient and Hessian of the loss for one sample, 3 equal scores
g, h = softmax_grad_hess(np.zeros(3), 0)
print("g =", np.round(g, 3), " h =", np.round(h, 3))

# %%
rng = np.random.default_rng(0)
centres = rng.random((5, 8))
y = rng.integers(0, 5, 400)
x = np.clip(centres[y] + rng.normal(0, 0.12, (400, 8)), 0, 1)
labels = [f"rp{v}" for v in y]

ens = fit_arrays(x, labels, GbtConfig(iterations=50, depth=7))
tree = ens.trees[0]
print(f"{len(ens.trees)} trees; first tree splits (feature, bin): {tree.splits}")
print(f"leaf table {tree.leaf_values.shape}")

# %%
loss = np.array(ens.train_loss)
print("training log-loss every 10 rounds:", np.round(loss[::10], 3))
print("never increases:", bool(np.all(np.diff(loss) <= 1e-9)))

acc = np.mean(np.array(predict_label(ens, x)) == np.array(labels))
print(f"training accuracy {acc:.3f}")
