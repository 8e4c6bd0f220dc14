"""
Cluster expansions of the averaged Green's function
===================================================

The averaged resolvent of a random Schrodinger operator on a short chain,
computed three ways: by Monte Carlo over the disorder, by the strong-disorder
(direct) expansion, and by the weak-disorder (dual) expansion.
"""
# %%
import numpy as np

from susyclust.disorder import DisorderModel
from susyclust.randschro import (
    ClusterOptions, LatticeModel, SpectralPoint, band_edges, build_hamiltonian, cluster_green, mc_green_extrapolated,
    mc_green_matrix,
)

gauss = DisorderModel("gaussian", 1.0)

# %% [markdown]
# Strong disorder: gamma = 20 at the band centre.  Each order carries one more
# power of 1/gamma, and an entry at distance r first appears at order r - 1.

# %%
chain = LatticeModel((6,), gamma=20.0)
point = SpectralPoint(0.0, 0.1)
opts = ClusterOptions(n_omega=12, n_s=4)
mc = mc_green_matrix(chain, gauss, point, 100_000, seed=1)
print(" x y | order terms                       | partial sum           | Monte Carlo (3 sd)")
for x, y in [(2, 2), (2, 3), (2, 4)]:
    g = cluster_green(chain, gauss, point, x, y, 2, "direct", opts)
    G, se = mc.block(chain, (x,), (y,))
    terms = " ".join(f"{abs(t.contribution[0, 0]):.1e}" for t in g.table)
    print(f" {x} {y} | {terms:32s}| {g.value[0, 0]:.5f} | {G[0, 0]:.5f} ({3 * se[0, 0]:.1e})")

# %% [markdown]
# Decay in the distance: the partial sums fall off roughly like gamma^-r.

# %%
opts3 = ClusterOptions(n_omega=8, n_s=3, max_order=3)
vals = [abs(cluster_green(chain, gauss, point, 0, r, min(r, 3), "direct", opts3).value[0, 0]) for r in range(1, 5)]
rate = -np.polyfit(np.arange(1, 5), np.log(vals), 1)[0]
print("|G(0,r)|, r = 1..4:", ", ".join(f"{v:.2e}" for v in vals), f"; fitted rate {rate:.2f}, log(gamma) = "
      f"{np.log(20):.2f}")

# %% [markdown]
# Weak disorder: gamma = 0.05 at E = -0.5, half a unit below the spectrum of
# the discrete Laplacian.  The dual expansion is an expansion around the free
# resolvent and works at eps = 0, where Monte Carlo needs an extrapolation in
# eps.

# %%
weak = LatticeModel((6,), gamma=0.05)
lo, hi = band_edges(weak)
print(f"band [{lo}, {hi}], distance of E = -0.5 to it: {lo + 0.5}")
wp = SpectralPoint(-0.5, 0.0)
mcw = mc_green_extrapolated(weak, gauss, wp, (0.04, 0.02, 0.01), 100_000, seed=2)
free = np.linalg.inv(build_hamiltonian(weak) + 0.5 * np.eye(6))
for x, y in [(2, 2), (2, 4)]:
    g = cluster_green(weak, gauss, wp, x, y, 2, "dual", ClusterOptions(n_omega=4, n_s=3))
    G, se = mcw.block(weak, (x,), (y,))
    print(f" ({x},{y}) free {free[x, y]:.6f}  dual N<=2 {g.value[0, 0].real:.6f}  MC {G[0, 0].real:.6f} "
          f"+- {se[0, 0]:.1e}")
