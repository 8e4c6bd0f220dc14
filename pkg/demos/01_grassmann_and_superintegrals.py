"""
Grassmann algebra, Berezin integrals and localization
=====================================================

A walk through the algebraic layer: building elements, checking signs and
norms, integrating out fermions, and watching a supersymmetric superintegral
collapse to the value of its integrand at the origin.

Run with ``python3 demos/01_grassmann_and_superintegrals.py``.
"""
# %%
import numpy as np

from susyclust.disorder import DisorderModel, f_z
from susyclust.grassmann import (
    GrassmannContext, GrassmannElement, berezin, exp_even, gen, grassmann_fourier, inverse_grassmann_fourier, mul,
    norm, random_element,
)
from susyclust.replica import fermionic_gaussian, replica_inverse
from susyclust.superfn import Integrator, localization_check

# %% [markdown]
# A context fixes the generators and their order.  Two sites with one colour
# give four generators psi^+_x, psi^-_x.

# %%
ctx = GrassmannContext.build([0, 1], 1)
p0, m0, p1, m1 = gen("psi", 0, 0, 1), gen("psi", 0, 0, -1), gen("psi", 1, 0, 1), gen("psi", 1, 0, -1)
a = GrassmannElement.product(ctx, [p0, m1])
b = GrassmannElement.product(ctx, [m1, p0])
print("psi+_0 psi-_1 + psi-_1 psi+_0 has norm", norm(a + b))
print("(psi+_0)^2 has norm", norm(GrassmannElement.product(ctx, [p0, p0])))

# %% [markdown]
# The norm is the l1 norm of the coefficients, so it is submultiplicative.

# %%
rng = np.random.default_rng(1)
ratios = []
for _ in range(200):
    f, g = random_element(ctx, rng), random_element(ctx, rng)
    ratios.append(norm(mul(f, g)) / (norm(f) * norm(g)))
print(f"max ||fg|| / (||f|| ||g||) over 200 pairs: {max(ratios):.4f}")

# %% [markdown]
# The Grassmann Fourier transform is invertible and preserves the norm.

# %%
f = random_element(ctx, rng)
back = inverse_grassmann_fourier(grassmann_fourier(f))
print("round trip error", norm(back - f), " norm ratio", norm(grassmann_fourier(f)) / norm(f))

# %% [markdown]
# Fermionic Gaussians: with weight exp(-psi+ A psi-), the Berezin integral of
# psi-_x psi+_y produces the inverse matrix.  The bosonic half of the
# superintegral supplies the normalization, so the full superintegral gives
# (A^-1)_xy without any determinant left over.

# %%
A = np.array([[2.0, 0.5 - 0.3j], [0.1j, 1.5]])
print("fermionic Gaussian moments\n", np.round(fermionic_gaussian(A), 12))
print("numpy inverse\n", np.round(np.linalg.inv(A), 12))
print("superintegral (0,1):", replica_inverse(A, 0, 1), " vs", np.linalg.inv(A)[0, 1])

# %% [markdown]
# Localization.  The disorder-averaged single-site integrand F_z is
# supersymmetric, so its superintegral equals F_z(0) = 1 whatever the energy
# and the disorder law.  The bump law has compact support in Fourier space
# and a kink at its edge, so it gets more quadrature panels.

# %%
for kind in ("gaussian", "bump"):
    for z in (0.0, 0.3j - 0.1):
        integ = Integrator(n_panels=16 if kind == "bump" else 4)
        r = localization_check(f_z(DisorderModel(kind), z, 1.0, 1), integ)
        print(f"{kind:8s} z={z!s:12s} integral={r.integral:.10f}  F(0)={r.value_at_zero:.3f}  "
              f"relative gap {r.relative:.1e}")

# %% [markdown]
# exp of an even element is a finite polynomial: nilpotency truncates the series.

# %%
q = GrassmannElement.product(ctx, [p0, m0, p1, m1], 0.7)
e = exp_even(q + GrassmannElement.product(ctx, [p0, m0], 0.2))
print("terms in exp:", len(e.coeffs), " Berezin integral:", complex(berezin(e).scalar_part()))
