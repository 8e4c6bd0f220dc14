"""
Replica inverse and forest interpolation
========================================

Two tools underneath the cluster expansion: the superintegral representation
of matrix inverses, and the tree-indexed interpolation that splits a coupled
exponential into polymer activities.
"""
# %%
import time

import numpy as np

from susyclust.bbf import (
    PairPotential, bbf_verify, build_decoupling_measure, enumerate_trees, is_convex_decoupling, polymer_activity,
    set_partitions,
)
from susyclust.replica import replica_inverse

# %% [markdown]
# Every entry of A^-1 is a superintegral whenever the Hermitian part of A is
# positive definite.  Compare against LU on a few random matrices.

# %%
rng = np.random.default_rng(3)
for n in (2, 3, 4):
    B = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    A = B @ B.conj().T / n + 0.5 * np.eye(n) + 0.3j * rng.normal(size=(n, n))
    A = (A + A.conj().T) / 2 + (A - A.conj().T) / 2
    t0 = time.perf_counter()
    R = np.array([[replica_inverse(A, x, y) for y in range(n)] for x in range(n)])
    print(f"n={n}: max |replica - LU| = {np.max(np.abs(R - np.linalg.inv(A))):.2e}  ({time.perf_counter() - t0:.2f} s)")

# %% [markdown]
# Labelled trees on n vertices: n^(n-2) of them.  Each carries a probability
# measure on decoupling matrices S, and every S in its support is a convex
# combination of block-diagonal partition matrices.

# %%
for n in range(2, 7):
    print(f"n={n}: {len(enumerate_trees(n))} trees, {sum(1 for _ in set_partitions(range(n)))} partitions")
tree = enumerate_trees(4)[5]
meas = build_decoupling_measure(tree)
S = meas.sample(rng, 5)
print("tree edges", tree.edges, " mass", meas.total_mass())
print("sample S is a convex decoupling:", all(is_convex_decoupling(s)[0] for s in S))

# %% [markdown]
# The interpolation identity: exp(V_X) equals the sum over set partitions of
# X of products of polymer activities K(Y).  Check it for a scalar pair
# potential on three points.

# %%
v = PairPotential({(0, 1): 0.3, (1, 2): -0.2, (0, 2): 0.15, (1, 1): 0.1})
print("K({0,1}) =", polymer_activity((0, 1), v), " closed form", np.exp(0.3 + 0.05) - np.exp(0.05))
print("residual of the identity on X = {0,1,2}:", bbf_verify((0, 1, 2), v))
