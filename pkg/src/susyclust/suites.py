"""Verification suites behind ``python -m susyclust verify``.

Each suite returns a list of Check rows; a suite passes when every row does.
The oracles here are independent of the code under test where that is cheap
(inversion-count signs, LU inverses, closed-form exponentials, dense scans).
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .bbf import (PairPotential, Tree, bbf_verify, build_decoupling_measure, enumerate_trees, is_convex_decoupling,
                  set_partitions)
from .disorder import DisorderModel, f_z
from .grassmann import (GrassmannContext, GrassmannElement, gen, grassmann_fourier, inverse_grassmann_fourier,
                        merge_sign, mul, norm, random_element)
from .replica import replica_inverse
from .superfn import Integrator, SuperFunction, localization_check, plancherel, product


@dataclass
class Check:
    name: str
    value: float
    limit: float
    passed: bool
    detail: str = ""


def _le(name, value, limit, detail=""):
    return Check(name, float(value), float(limit), bool(value <= limit), detail)


def format_table(rows):
    w = max(len(r.name) for r in rows)
    lines = [f"{'check':<{w}}  {'value':>12}  {'limit':>10}  result"]
    for r in rows:
        lines.append(f"{r.name:<{w}}  {r.value:>12.4g}  {r.limit:>10.3g}  {'PASS' if r.passed else 'FAIL'}"
                     + (f"  {r.detail}" if r.detail else ""))
    return "\n".join(lines)


# ---------------------------------------------------------------- algebra


def suite_algebra(seed=0):
    rows = []
    n = 10
    # oracle: (-1)^(inversions of the concatenated word), counted as a bit-matrix product
    bits = (np.arange(1 << n)[:, None] >> np.arange(n) & 1).astype(np.int64)
    above = bits @ np.tril(np.ones((n, n), np.int64), -1)  # above[a, j] = #{i in a : i > j}
    oracle = 1 - 2 * ((above @ bits.T) & 1)
    bad = 0
    count = 0
    for a in range(1 << n):
        comp = ((1 << n) - 1) & ~a
        b = comp
        while True:
            count += 1
            if merge_sign(a, b) != oracle[a, b]:
                bad += 1
            if b == 0:
                break
            b = (b - 1) & comp
    rows.append(_le("sign oracle, all disjoint pairs, 10 generators", bad, 0, f"{count} pairs"))
    ctx10 = GrassmannContext([gen("psi", i, 0, 1) for i in range(5)] + [gen("psi", i, 0, -1) for i in range(5)])
    rng = np.random.default_rng(seed)
    overl = 0
    for _ in range(500):
        a, b = (int(v) for v in rng.integers(1, 1 << n, size=2))
        if a & b and mul(GrassmannElement(ctx10, {a: 1.0}), GrassmannElement(ctx10, {b: 1.0})).coeffs:
            overl += 1
    rows.append(_le("overlapping monomials vanish", overl, 0))

    ctx = GrassmannContext.build([0, 1], 2, families=("psi", "eta"))
    worst = 0.0
    for g1 in ctx.generators:
        for g2 in ctx.generators:
            ab = GrassmannElement.product(ctx, [g1, g2])
            ba = GrassmannElement.product(ctx, [g2, g1])
            worst = max(worst, norm(ab + ba))
    rows.append(_le("anticommutation ab + ba = 0, a a = 0", worst, 0))

    small = GrassmannContext.build([0, 1], 1)
    tri = hom = 0.0
    for _ in range(200):
        f, g = random_element(small, rng), random_element(small, rng)
        c = complex(rng.normal(), rng.normal())
        tri = max(tri, norm(f + g) - norm(f) - norm(g))
        hom = max(hom, abs(norm(f.scale(c)) - abs(c) * norm(f)) / max(norm(f), 1e-300))
    rows.append(_le("triangle inequality (max excess)", tri, 1e-12))
    rows.append(_le("homogeneity (relative)", hom, 1e-12))
    one = GrassmannElement.scalar(small, 1.0)
    rows.append(_le("||1|| = 1", abs(norm(one) - 1), 0))

    ctx3 = GrassmannContext.build([0, 1, 2], 1)
    worst = -math.inf
    for _ in range(1000):
        f = random_element(ctx3, rng, density=0.1)
        g = random_element(ctx3, rng, density=0.1)
        worst = max(worst, norm(mul(f, g)) / max(norm(f) * norm(g), 1e-300))
    rows.append(_le("submultiplicativity max ||fg||/(||f|| ||g||)", worst, 1 + 1e-14, "1000 pairs"))
    return rows


# ---------------------------------------------------------------- Fourier


def _gaussian_factor(site, a, c0, c1):
    """exp(-a |phi|^2) (c0 + c1 psi+ psi-) on one site."""
    ctx = GrassmannContext.build([site], 1)
    base = GrassmannElement.scalar(ctx, c0) + GrassmannElement.product(
        ctx, [gen("psi", site, 0, 1), gen("psi", site, 0, -1)], c1)
    return SuperFunction([(site, 0)], ctx, lambda phi: base.scale(np.exp(-a * np.abs(phi[:, 0]) ** 2)),
                         lambda u: (abs(c0) + abs(c1)) * np.exp(-np.real(a) * u[:, 0]), radial=True)


def suite_fourier(seed=0):
    rows = []
    rng = np.random.default_rng(seed)
    rt = nrm = 0.0
    for sites, colours in [([0], 1), ([0], 2), ([0, 1], 1), ([0, 1], 2)]:
        ctx = GrassmannContext.build(sites, colours)
        for _ in range(10):
            f = random_element(ctx, rng)
            while not f.coeffs:
                f = random_element(ctx, rng)
            fh = grassmann_fourier(f)
            rt = max(rt, norm(inverse_grassmann_fourier(fh) - f) / norm(f))
            nrm = max(nrm, abs(norm(fh) - norm(f)) / norm(f))
    rows.append(_le("Fourier round trip (relative)", rt, 1e-12, "<= 8 generators"))
    rows.append(_le("Fourier norm preservation (relative)", nrm, 1e-12))
    env = lambda u: 10 * np.exp(-u.sum(1) / 1.5)
    pairs = [
        ((0, 1.0, 1.0, 0.5), (1, 0.7 + 0.2j, 0.3, -1.2j), (0, 1.3, 0.4, 2.0), (1, 0.9, 1.0, 0.25)),
        ((0, 0.8, 0.6, -0.4j), (1, 1.2, 1.0, 0.3), (0, 1.1 - 0.1j, 0.5, 1.0), (1, 0.75, -0.2, 0.6)),
    ]
    worst = 0.0
    for f1, f2, g1, g2 in pairs:
        f = product(_gaussian_factor(*f1), _gaussian_factor(*f2))
        g = product(_gaussian_factor(*g1), _gaussian_factor(*g2))
        lhs, rhs = plancherel(f, g, fhat_envelope=env, ghat_envelope=env)
        worst = max(worst, abs(lhs.scalar - rhs.scalar) / abs(lhs.scalar))
    rows.append(_le("super Plancherel, factorized Gaussian pairs (relative)", worst, 1e-6))
    return rows


# ---------------------------------------------------------------- localization


def suite_localization():
    rows = []
    for kind in ("gaussian", "bump"):
        integ = Integrator(n_panels=16 if kind == "bump" else 4)
        for S in (1, 2):
            for z in (0.0, 0.3j - 0.1, -0.3j - 0.1):
                r = localization_check(f_z(DisorderModel(kind), z, 1.0, S), integ)
                rows.append(_le(f"{kind} |S|={S} z={z:.2g}", r.relative, 1e-5,
                                f"int = {r.integral.real:.12f}{r.integral.imag:+.2e}i, F(0) = {r.value_at_zero.real:.12f}"))
    return rows


# ---------------------------------------------------------------- replica


def random_pd_part(rng, n, shift=0.3):
    """Random complex matrix whose Hermitian part is positive definite."""
    B = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    C = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return B @ B.conj().T / n + shift * np.eye(n) + (C - C.conj().T) / 2


def suite_replica(seed=8):
    rng = np.random.default_rng(seed)
    worst = 0.0
    sizes = []
    for _ in range(20):
        n = int(rng.integers(1, 5))
        sizes.append(n)
        A = random_pd_part(rng, n)
        inv = np.linalg.inv(A)
        for x in range(n):
            for y in range(n):
                worst = max(worst, abs(replica_inverse(A, x, y) - inv[x, y]))
    return [_le("replica_inverse vs LU, 20 matrices", worst, 1e-8, f"sizes {sizes}")]


# ---------------------------------------------------------------- BBF


def _mu_potential(H, phi, coupling):
    """Even Grassmann pair potential of hopping type at a fixed bosonic point."""
    n = len(H)
    ctx = GrassmannContext.build(range(n), 1)
    ent = {}
    for x in range(n):
        for y in range(x + 1, n):
            bos = -(phi[x] * H[x, y] * np.conj(phi[y]) + phi[y] * H[y, x] * np.conj(phi[x]))
            e = GrassmannElement.scalar(ctx, bos)
            e = e - GrassmannElement.product(ctx, [gen("psi", x, 0, 1), gen("psi", y, 0, -1)], H[x, y])
            e = e - GrassmannElement.product(ctx, [gen("psi", y, 0, 1), gen("psi", x, 0, -1)], H[y, x])
            ent[(x, y)] = e.scale(coupling)
    return PairPotential(ent)


def suite_bbf(seed=0):
    rows = []
    rng = np.random.default_rng(seed)
    scal = 0.0
    for n in (1, 2, 3):
        for _ in range(5):
            ent = {}
            for i in range(n):
                for j in range(i, n):
                    z = rng.normal() + 1j * rng.normal()
                    ent[(i, j)] = z / abs(z) * rng.uniform(0, 1)
            scal = max(scal, bbf_verify(range(n), PairPotential(ent)))
    rows.append(_le("BBF residual, scalar v, |X| <= 3", scal, 1e-8))
    gr = 0.0
    for n in (2, 3):
        for _ in range(3):
            H = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
            H = (H + H.conj().T) / 2
            phi = rng.normal(size=n) + 1j * rng.normal(size=n)
            gr = max(gr, bbf_verify(range(n), _mu_potential(H, phi, 0.5j)))
    rows.append(_le("BBF residual, Grassmann v, |X| <= 3", gr, 1e-8))
    bell = [sum(1 for _ in set_partitions(range(n))) for n in range(1, 6)]
    rows.append(_le("Bell numbers B1..B5", int(bell != [1, 2, 5, 15, 52]), 0, str(bell)))
    cay = [len(enumerate_trees(n)) for n in range(1, 8)]
    rows.append(_le("Cayley counts n^(n-2), n <= 7", int(cay != [1] + [n ** (n - 2) for n in range(2, 8)]), 0,
                    str(cay)))
    trees = [t for n in (3, 4) for t in enumerate_trees(n)]
    bad = 0
    total = 0
    per = -(-1000 // len(trees))
    for t in trees:
        for s in build_decoupling_measure(t).sample(rng, per):
            total += 1
            bad += not is_convex_decoupling(s)[0]
    rows.append(_le("decoupling support convexity", bad, 0, f"{total} samples"))
    return rows


# ---------------------------------------------------------------- bounds


def tree_instance(rng, box=12):
    """Random (tree, box, hopping) instance for the tree-stripping inequality."""
    from .randschro import LatticeModel, build_hamiltonian

    n = int(rng.integers(2, 6))
    tree = Tree.from_prufer(list(rng.integers(0, n, size=n - 2)), n) if n > 2 else Tree(2, ((0, 1),))
    S = int(rng.integers(1, 3))
    alpha = float(rng.uniform(0.3, 2.0))
    if rng.random() < 0.3:
        m = LatticeModel((box,), colours=S)
    else:
        b = rng.normal(size=(S, S)) + 1j * rng.normal(size=(S, S))
        b = (b + b.conj().T) / 2
        m = LatticeModel((box,), colours=S, hopping="exponential", hop_C=float(rng.uniform(0.2, 3)),
                         hop_alpha=alpha, block=tuple(map(tuple, b)))
    x = int(rng.integers(box))
    y = x if rng.random() < 0.3 else int(rng.integers(box))
    return dict(edges=tree.edges, n_vertices=n, H=build_hamiltonian(m), positions=np.arange(box), x=x, y=y,
                theta=float(rng.uniform(0, 0.95)), rate=alpha, q=float(rng.uniform(0.2, 3)), colours=S)


def tree_stripping_run(n_instances=500, seed=0):
    from .bounds import tree_stripping_check

    rng = np.random.default_rng(seed)
    viol, worst = 0, 0.0
    for _ in range(n_instances):
        lhs, rhs = tree_stripping_check(**tree_instance(rng))
        viol += lhs > rhs
        worst = max(worst, lhs / rhs)
    return viol, worst


def imb_idb_records():
    from .bounds import imb_idb_constants

    return {
        "I.1 gaussian": imb_idb_constants("gaussian"),
        "I.2 bump": imb_idb_constants("bump"),
        "II.1 gaussian": imb_idb_constants("gaussian", example="II.1"),
        "II.1 bump": imb_idb_constants("bump", example="II.1"),
        "II.2 gaussian": imb_idb_constants("gaussian", example="II.2"),
    }


def gamma_min_slope(S=1, theta=0.5):
    """log-log slope of gamma_min(E) over E in [1e2, 1e6] for the 1D Laplacian and the Gaussian I.1 record."""
    from .bounds import hopping_constants, imb_idb_constants, strong_threshold

    H = 2 * np.eye(12) - np.eye(12, k=1) - np.eye(12, k=-1)
    calC, calCt = hopping_constants(H, np.arange(12), 1.0, theta)
    rec = imb_idb_constants("gaussian", n_max=0)
    E = np.logspace(2, 6, 9)
    g = [strong_threshold(e, rec, 1.0, calC, calCt, theta, S=S).log_gamma_min for e in E]
    return float(np.polyfit(np.log(E), g, 1)[0])


def suite_bounds(seed=0):
    from .bounds import lifshitz_exponent_fit, omega_constant, stripping_constant

    rows = []
    viol, worst = tree_stripping_run(500, seed)
    rows.append(_le("tree stripping violations, 500 instances", viol, 0, f"max lhs/rhs {worst:.3f}"))
    for name, rec in imb_idb_records().items():
        margin = min(c[3] / c[2] for c in rec.checks)
        rows.append(_le(f"{rec.bound} {name} violations, n <= 8", len(rec.violations), 0,
                        f"K={rec.K:.4g} M={rec.M:.4g} p={rec.p} min rhs/lhs {margin:.3g}"))
    for S in (1, 2):
        slope = gamma_min_slope(S)
        want = S / (S + 1)
        rows.append(_le(f"gamma_min slope |S|={S} (relative deviation)", abs(slope / want - 1), 0.02,
                        f"slope {slope:.4f}"))
    for p in (0.5, 1.0, 2.0):
        slope, _, _ = lifshitz_exponent_fit(math.log(2.0), p)
        rows.append(_le(f"Lifshitz exponent p={p} (relative deviation)", abs(slope * 2 * p - 1), 0.05,
                        f"slope {slope:.4f}"))
    d = np.arange(1, 10 ** 6 + 1, dtype=float)
    dense = float(np.max(4 * np.log(d) - 0.125 * (d - 1)))
    rows.append(_le("C_{2,0} scan vs dense scan", abs(stripping_constant(2.0, 0.0, 1.0).log_value - dense), 1e-12))
    om = [omega_constant(1, dm)[0] for dm in (2, 10, 50, 200)]
    rows.append(_le("Omega_1 nonincreasing in d_max", int(any(b > a for a, b in zip(om, om[1:]))), 0,
                    f"{[round(v, 4) for v in om]}"))
    return rows


SUITES = {
    "algebra": suite_algebra,
    "fourier": suite_fourier,
    "localization": suite_localization,
    "replica": suite_replica,
    "bbf": suite_bbf,
    "bounds": suite_bounds,
}


def run_suite(name, seed=None):
    """(rows, seconds) for a named suite."""
    fn = SUITES[name]
    t0 = time.perf_counter()
    rows = fn() if seed is None or name in ("localization", "replica") else fn(seed=seed)
    return rows, time.perf_counter() - t0
