"""Random Schroedinger operators: Monte Carlo averages and SUSY cluster expansions of the averaged Green's function.

Conventions.  H_omega = H + gamma V_omega with V_omega = diag(omega_x) (times the
identity on colours), omega_x i.i.d. with density nu.  The averaged Green's
function is G(x, y; w) = E (H_omega - w)^-1_{xy}, an |S| x |S| block, with
w = z_pm pm i eps and z_pm = E -+ i beta.

Both cluster expansions are evaluated in an omega-resolved form.  Writing
nuhat(t) = E exp(-+ i omega t), the superintegrand of a cluster term at fixed
omega is a Gaussian superfunction times polynomial insertions.  Gaussian
superintegrals are exact (fermionic and bosonic normalisations cancel), and the
tree couplings are produced by derivatives with respect to nilpotent source
parameters t_l:

  direct:  int dPhi e^{-Phi+ A Phi-} prod_l v_l psi-_x psi+_y
             = prod_l d/dt_l [(A + sum_l t_l B_l)^-1]_{xy},
           A = +-i [gamma^-1 (H o s - E) + omega] + (eps - beta)/gamma,
  dual:    int dxi muhat(xi, s) prod_l vhat_l d_eta+_x d_eta-_y Fhat^omega(xi)
             = prod_l d/dt_l [-X (I - P X)^-1]_{xy},
           X = +-i gamma C o s + sum_l t_l Bhat_l,  P = diag(-beta/gamma - i omega).

The omega average is then a smooth finite-dimensional integral.  For Gaussian
disorder the contour is shifted away from the poles (omega -> t + i kappa) and
integrated by Gauss-Hermite; the bump density uses real Gauss-Legendre nodes.
The s integral uses the decoupling measure of ``bbf``.  Literal superintegral
evaluations of the order-zero terms are provided for cross-checks.
"""
from __future__ import annotations

import csv
import itertools
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import roots_hermitenorm

from ._util import pmap, rng_stream
from .bbf import build_decoupling_measure, enumerate_trees
from .disorder import DisorderModel, _bump_rule, f_z, f_z_lattice  # noqa: F401  (re-exported)
from .grassmann import GrassmannElement, derivative, embed, gen, mul
from .superfn import (
    Integrator, SuperFunction, super_fourier, super_integrate, times_element,
)

MATRIX_CAP = 4096


# ---------------------------------------------------------------- models


@dataclass(frozen=True)
class LatticeModel:
    """Box Lambda = prod_i [0, extent_i) in Z^D with zero boundary conditions.

    hopping "laplacian": H = -Delta (2D on the diagonal, -1 between nearest neighbours).
    hopping "exponential": H_xy = hop_C exp(-hop_alpha |x - y|) times ``block``.
    """

    extents: tuple = (6,)
    colours: int = 1
    hopping: str = "laplacian"
    hop_C: float = 1.0
    hop_alpha: float = 1.0
    block: tuple | None = None
    gamma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "extents", tuple(int(e) for e in np.atleast_1d(self.extents)))
        if self.hopping not in ("laplacian", "exponential"):
            raise ValueError(f"unknown hopping {self.hopping!r}")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.colours < 1 or min(self.extents) < 1:
            raise ValueError("box and colour set must be nonempty")

    @property
    def dim(self):
        return len(self.extents)

    @property
    def sites(self):
        return list(itertools.product(*[range(e) for e in self.extents]))

    @property
    def n_sites(self):
        return int(np.prod(self.extents))

    def index(self, x):
        x = (int(x),) if np.isscalar(x) else tuple(x)
        return int(np.ravel_multi_index(x, self.extents))

    def block_matrix(self):
        S = self.colours
        b = np.eye(S, dtype=complex) if self.block is None else np.asarray(self.block, dtype=complex)
        if b.shape != (S, S):
            raise ValueError("hopping block must be |S| x |S|")
        return b

    def distance(self, i, j):
        a, b = np.array(self.sites[i]), np.array(self.sites[j])
        return float(np.linalg.norm(a - b))


def build_hamiltonian(model: LatticeModel) -> np.ndarray:
    """Hermitian matrix of H on l2(Lambda) x C^S, site-major ordering."""
    n, S = model.n_sites, model.colours
    if n * S > MATRIX_CAP:
        raise ValueError(f"matrix dimension {n * S} exceeds the cap {MATRIX_CAP}")
    pts = np.array(model.sites)
    b = model.block_matrix()
    H = np.zeros((n * S, n * S), dtype=complex)
    for i in range(n):
        for j in range(n):
            d = pts[i] - pts[j]
            if model.hopping == "laplacian":
                l1 = np.abs(d).sum()
                c = 2.0 * model.dim if l1 == 0 else (-1.0 if l1 == 1 else 0.0)
                blk = c * np.eye(S)
            else:
                blk = model.hop_C * np.exp(-model.hop_alpha * np.linalg.norm(d)) * b
            H[i * S:(i + 1) * S, j * S:(j + 1) * S] = blk
    if not np.allclose(H, H.conj().T, atol=0, rtol=0):
        raise ValueError("hopping specification is not Hermitian")
    return H


def band_edges(model: LatticeModel, n_k: int | None = None):
    """(min, max) of the spectrum of the infinite-lattice hopping operator.

    Laplacian: [0, 4D].  Exponential kernel: extremes of the Bloch symbol
    sum_z C e^{-alpha |z|} e^{i k z} times the block eigenvalues, on a k grid.
    """
    if model.hopping == "laplacian":
        return 0.0, 4.0 * model.dim
    D = model.dim
    R = int(np.ceil(37.0 / model.hop_alpha)) + 1  # C e^{-alpha R} below 1e-16 C
    g = np.arange(-R, R + 1)
    Z = np.array(list(itertools.product(g, repeat=D)), dtype=float)
    w = model.hop_C * np.exp(-model.hop_alpha * np.linalg.norm(Z, axis=1))
    n_k = n_k or {1: 2048, 2: 128, 3: 32}[D]
    k = np.linspace(-np.pi, np.pi, n_k + 1)
    K = np.array(list(itertools.product(k, repeat=D)))
    sym = np.cos(K @ Z.T) @ w  # the kernel is even, so the symbol is real
    lam = np.linalg.eigvalsh(model.block_matrix())
    vals = np.outer(sym, lam)
    return float(vals.min()), float(vals.max())


@dataclass(frozen=True)
class SpectralPoint:
    """Spectral argument w = z_pm pm i eps with z_pm = E -+ i beta (branch = +1 or -1)."""

    E: float
    eps: float = 0.0
    beta: float = 0.0
    branch: int = 1

    def __post_init__(self):
        if self.branch not in (1, -1):
            raise ValueError("branch must be +1 or -1")
        if self.eps < 0 or self.beta < 0:
            raise ValueError("eps and beta must be nonnegative")

    @property
    def z(self):
        return self.E - 1j * self.branch * self.beta

    @property
    def w(self):
        return self.z + 1j * self.branch * self.eps

    def conjugate(self):
        return SpectralPoint(self.E, self.eps, self.beta, -self.branch)


def _block(model, i):
    S = model.colours
    return slice(i * S, (i + 1) * S)


# ---------------------------------------------------------------- Monte Carlo oracle


@dataclass
class MCResult:
    mean: np.ndarray  # full averaged matrix (n S) x (n S)
    stderr: np.ndarray  # entrywise, real and imaginary parts combined
    n_samples: int
    resampled: int = 0

    def block(self, model, x, y):
        i, j = model.index(x), model.index(y)
        return self.mean[_block(model, i), _block(model, j)], self.stderr[_block(model, i), _block(model, j)]


def _resolvent_samples(H, gamma, w, omegas, S):
    n = H.shape[0]
    V = np.repeat(omegas, S, axis=1)
    M = H[None] - w * np.eye(n)[None] + gamma * V[:, :, None] * np.eye(n)[None]
    return np.linalg.inv(M)


def mc_green_matrix(model: LatticeModel, disorder: DisorderModel, point: SpectralPoint, n_samples: int = 100_000,
                    seed: int = 0, threads: int = 1, chunk: int = 8192, eps_values=None) -> MCResult | list:
    """Sample mean of (H_omega - w)^-1 over i.i.d. disorder draws.

    Each chunk has its own random stream, so results do not depend on the
    thread count.  Singular draws are redrawn and counted.  With eps_values a
    list of results sharing the same draws (common random numbers) is returned.
    """
    H = build_hamiltonian(model)
    n = model.n_sites
    eps_list = [point.eps] if eps_values is None else list(eps_values)
    points = [SpectralPoint(point.E, e, point.beta, point.branch) for e in eps_list]
    if any(p.eps == 0 and p.beta == 0 for p in points):
        warnings.warn("eps = 0: resolvent solves may be ill-conditioned", RuntimeWarning)

    def work(ci):
        m = min(chunk, n_samples - ci * chunk)
        rng = rng_stream(seed, ci)
        om = disorder.sample(rng, (m, n))
        sums, sq, bad = [], [], 0
        for p in points:
            try:
                G = _resolvent_samples(H, model.gamma, p.w, om, model.colours)
            except np.linalg.LinAlgError:
                G = np.empty((m, H.shape[0], H.shape[0]), complex)
                for k in range(m):
                    while True:
                        try:
                            G[k] = _resolvent_samples(H, model.gamma, p.w, om[k:k + 1], model.colours)[0]
                            break
                        except np.linalg.LinAlgError:
                            bad += 1
                            om[k] = disorder.sample(rng, n)
            sums.append(G.sum(0))
            sq.append((np.abs(G.real) ** 2 + 1j * np.abs(G.imag) ** 2).sum(0))
        return sums, sq, bad, m

    chunks = pmap(work, range((n_samples + chunk - 1) // chunk), threads)
    out = []
    for k in range(len(points)):
        s = sum(c[0][k] for c in chunks)
        q = sum(c[1][k] for c in chunks)
        N = sum(c[3] for c in chunks)
        mean = s / N
        var_re = np.maximum(q.real / N - mean.real ** 2, 0) / max(N - 1, 1)
        var_im = np.maximum(q.imag / N - mean.imag ** 2, 0) / max(N - 1, 1)
        out.append(MCResult(mean, np.sqrt(var_re + var_im), N, sum(c[2] for c in chunks)))
    return out[0] if eps_values is None else out


def mc_green(model, disorder, point, x, y, n_samples: int = 100_000, seed: int = 0, threads: int = 1):
    """(|S| x |S| block of E (H_omega - w)^-1 at (x, y), entrywise standard error)."""
    return mc_green_matrix(model, disorder, point, n_samples, seed, threads).block(model, x, y)


def mc_green_extrapolated(model, disorder, point, eps_values=(0.04, 0.02, 0.01), n_samples=100_000, seed=0,
                          threads=1) -> MCResult:
    """Richardson extrapolation to eps = 0 of the Monte Carlo average (common random numbers).

    A polynomial in eps through the given points is evaluated at 0; the
    standard error is propagated from the per-eps errors (conservatively, as if
    independent)."""
    res = mc_green_matrix(model, disorder, point, n_samples, seed, threads, eps_values=eps_values)
    e = np.asarray(eps_values, dtype=float)
    coef = np.array([np.prod([-e[j] / (e[i] - e[j]) for j in range(len(e)) if j != i]) for i in range(len(e))])
    mean = sum(c * r.mean for c, r in zip(coef, res))
    err = np.sqrt(sum((c * r.stderr) ** 2 for c, r in zip(coef, res)))
    return MCResult(mean, err, res[0].n_samples, sum(r.resampled for r in res))


def ldos(model, disorder, E, eps, n_samples=100_000, seed=0, threads=1, site=None):
    """rho = (pi |S|)^-1 Im Tr_S G(0, 0; E + i eps) at the given site (default: the box centre)."""
    if eps <= 0:
        raise ValueError("the Monte Carlo LDOS requires eps > 0")
    site = site if site is not None else tuple(e // 2 for e in model.extents)
    G, err = mc_green(model, disorder, SpectralPoint(E, eps), site, site, n_samples, seed, threads)
    S = model.colours
    return float(np.trace(G).imag / (np.pi * S)), float(np.sqrt(np.sum(np.diag(err) ** 2)) / (np.pi * S))


def clean_ldos(model, E, eps, site=None):
    """Zero-disorder LDOS (pi |S|)^-1 Im sum_k |u_k(site)|^2 / (lambda_k - E - i eps)."""
    H = build_hamiltonian(model)
    lam, U = np.linalg.eigh(H)
    site = site if site is not None else tuple(e // 2 for e in model.extents)
    blk = _block(model, model.index(site))
    wts = np.sum(np.abs(U[blk]) ** 2, axis=0)
    return float(np.sum(wts / (lam - E - 1j * eps)).imag / (np.pi * model.colours))


# ---------------------------------------------------------------- omega quadrature


@dataclass(frozen=True)
class ClusterOptions:
    """Numerical policy of the cluster terms.

    n_s: Gauss-Legendre nodes per level of the decoupling measure.
    n_omega: nodes per disorder variable; omega: "gauss" (tensor rule),
    "mc" (sampling) or "auto" (tensor rule unless it exceeds max_points).
    shift: contour shift of Gaussian disorder variables in units of sigma
    (None selects 2.0 for the direct path; for the dual path 1.0, or 0 when the
    poles are farther than 6 sigma from the real axis).
    cutoff: optional graph-distance cutoff for polymer points (direct path).
    """

    n_s: int = 6
    n_omega: int = 12
    omega: str = "auto"
    shift: float | None = None
    n_mc: int = 200_000
    seed: int = 0
    cutoff: float | None = None
    max_points: int = 1 << 26
    max_order: int = 2
    chunk: int = 1 << 15
    threads: int = 1
    error_estimate: bool = True


def _omega_rule_1d(disorder: DisorderModel, n: int, kappa: float):
    """Nodes (complex) and weights (complex) with sum_j w_j f(omega_j) ~ E f(omega)."""
    if disorder.kind == "gaussian":
        s = disorder.sigma
        if s == 0:
            return np.zeros(1, complex), np.ones(1, complex)
        u, w = _hermite(n)
        t = s * u
        ks = kappa * s
        return t + 1j * ks, w * np.exp(-1j * ks * t / s ** 2 + ks ** 2 / (2 * s ** 2))
    if kappa != 0:
        raise ValueError("contour shifts need an entire density")
    x, w = _bump_rule(n)
    return x.astype(complex), w.astype(complex)


@lru_cache(maxsize=32)
def _hermite(n):
    u, w = roots_hermitenorm(n)
    return u, w / w.sum()


def _omega_samples(disorder, rng, size, dims, kappa):
    if disorder.kind == "gaussian":
        s = disorder.sigma
        t = s * rng.standard_normal((size, dims))
        ks = kappa * s
        w = np.prod(np.exp(-1j * ks * t / s ** 2 + ks ** 2 / (2 * s ** 2)), axis=1) if s > 0 else np.ones(size)
        return t + 1j * ks, w
    if kappa != 0:
        raise ValueError("contour shifts need an entire density")
    return disorder.sample(rng, (size, dims)).astype(complex), np.ones(size, complex)


# ---------------------------------------------------------------- omega-resolved kernels


def _multilinear_columns(Y, Ms, cols):
    """F(S) e_cols for all subsets S of the perturbations, F(S) = sum over orders of Y M Y M ... Y.

    Y: (B, m, m); Ms: list of (m, m) or (B, m, m).  Returns dict mask -> (B, m, |cols|).
    """
    k = len(Ms)
    F = {0: Y[:, :, cols]}
    for mask in range(1, 1 << k):
        acc = 0
        for l in range(k):
            if mask >> l & 1:
                acc = acc + Y @ (Ms[l] @ F[mask & ~(1 << l)])
        F[mask] = acc
    return F


def _direct_kernel(A_s, Bs, omegas, sign, rows, cols, S):
    """prod_l d/dt_l [(A_s + i sign diag(omega) + sum t_l B_l)^-1][rows, cols] over an (s, omega) batch.

    A_s: (Bs, m, m); omegas: (Bo, n_sites).  Returns (Bs, Bo, |rows|, |cols|).
    """
    Bs_, m = A_s.shape[0], A_s.shape[1]
    Bo = omegas.shape[0]
    D = np.repeat(omegas, S, axis=1)
    M = A_s[:, None] + (1j * sign) * D[None, :, :, None] * np.eye(m)[None, None]
    Y = np.linalg.inv(M.reshape(-1, m, m))
    F = _multilinear_columns(Y, Bs, cols)
    top = F[(1 << len(Bs)) - 1] * (-1) ** len(Bs)
    return top[:, rows, :].reshape(Bs_, Bo, len(rows), len(cols))


def _dual_kernel(X_s, Bs, p, rows, cols, S, lam_order=None, X1=None):
    """prod_l d/dt_l [-X (I - P X)^-1][rows, cols], X = X_s + sum t_l Bhat_l, P = diag(p).

    With lam_order = L the matrix X_s is replaced by lam X1 and the Taylor
    coefficients of lam^0..lam^L are returned (shape (L+1, Bs, Bo, r, c)).
    """
    m = X_s.shape[1] if X_s is not None else X1.shape[1]
    Pd = np.repeat(p, S, axis=1)  # (Bo, m)
    k = len(Bs)
    if lam_order is None:
        Bs_ = X_s.shape[0]
        Bo = Pd.shape[0]
        X = np.broadcast_to(X_s[:, None], (Bs_, Bo, m, m)).reshape(-1, m, m)
        P = np.broadcast_to(Pd[None], (Bs_, Bo, m)).reshape(-1, m)
        M0 = np.eye(m)[None] - P[:, :, None] * X
        Y = np.linalg.inv(M0)
        Ms = [-(P[:, :, None] * B[None]) for B in Bs]
        F = _multilinear_columns(Y, Ms, cols)
        Q = {mask: F[mask] * (-1) ** bin(mask).count("1") for mask in F}
        full = (1 << k) - 1
        R = X @ Q[full]
        for l in range(k):
            R = R + Bs[l][None] @ Q[full & ~(1 << l)]
        R = -R
        return R[:, rows, :].reshape(Bs_, Bo, len(rows), len(cols))
    # Taylor in lam: (I - P X)^-1 = sum_j (P X)^j with X = lam X1 + sum t Bhat
    Bs_ = X1.shape[0]
    Bo = Pd.shape[0]
    L = lam_order
    P = np.broadcast_to(Pd[None], (Bs_, Bo, m)).reshape(-1, m)
    X1b = np.broadcast_to(X1[:, None], (Bs_, Bo, m, m)).reshape(-1, m, m)
    letters = {(1, 0): X1b}
    for l in range(k):
        letters[(0, 1 << l)] = np.broadcast_to(Bs[l][None], X1b.shape)
    full = (1 << k) - 1
    # W[(deg, mask)] = sum of words X_{a1} P X_{a2} ... P X_{ar} restricted to columns
    W = {key: val[:, :, cols] for key, val in letters.items()}
    total = {key: v for key, v in W.items()}
    for _ in range(L + k - 1):
        nxt = {}
        for (d, mk), val in W.items():
            PV = P[:, :, None] * val
            for (d2, mk2), lt in letters.items():
                if d + d2 > L or (mk & mk2):
                    continue
                key = (d + d2, mk | mk2)
                nxt[key] = nxt.get(key, 0) + lt @ PV
        W = nxt
        for key, v in W.items():
            total[key] = total.get(key, 0) + v
        if not W:
            break
    out = np.zeros((L + 1, Bs_ * Bo, len(rows), len(cols)), complex)
    for d in range(L + 1):
        if (d, full) in total:
            out[d] = -total[(d, full)][:, rows, :]
    return out.reshape(L + 1, Bs_, Bo, len(rows), len(cols))


# ---------------------------------------------------------------- cluster terms


@dataclass
class ClusterTerm:
    order: int
    value: np.ndarray  # g_N or G_N, |S| x |S|
    contribution: np.ndarray  # prefactor * value, the order-N term of G
    quad_err: float
    mc_err: float
    n_trees: int
    polymers: list = field(default_factory=list)  # (Y, tree edges, value)
    cutoff_tail: float = 0.0
    method: str = "direct"


def _polymers(model, x, y, N, cutoff):
    i, j = model.index(x), model.index(y)
    others = [k for k in range(model.n_sites) if k not in (i, j)]
    if cutoff is not None:
        keep = [k for k in others if min(model.distance(k, i), model.distance(k, j)) <= cutoff]
        dropped = [k for k in others if k not in keep]
    else:
        keep, dropped = others, []
    sets = [tuple(sorted(set(c) | {i, j})) for c in itertools.combinations(keep, N)]
    cut = [tuple(sorted(set(c) | {i, j})) for c in itertools.combinations(others, N)
           if set(c) & set(dropped)]
    return i, j, sets, cut


def _sym_block(M, Y, S, a, b):
    """Coupling matrix on Y (size |Y| S) with the blocks of M at pair (a, b) and (b, a) (positions in Y)."""
    m = len(Y) * S
    B = np.zeros((m, m), complex)
    B[a * S:(a + 1) * S, b * S:(b + 1) * S] = M[_blk(Y[a], S), _blk(Y[b], S)]
    B[b * S:(b + 1) * S, a * S:(a + 1) * S] = M[_blk(Y[b], S), _blk(Y[a], S)]
    return B


def _blk(i, S):
    return slice(i * S, (i + 1) * S)


def _restrict(M, Y, S):
    idx = np.concatenate([np.arange(i * S, (i + 1) * S) for i in Y])
    return M[np.ix_(idx, idx)]


def _s_expand(Smat, S):
    return np.kron(Smat, np.ones((S, S))) if S > 1 else Smat


def _check_budget(N, Yn, opts, what):
    if N > opts.max_order:
        raise ValueError(f"{what}: order N = {N} exceeds the cap max_order = {opts.max_order}")


def _omega_grid(disorder, n, dims, kappa):
    nodes, w = _omega_rule_1d(disorder, n, kappa)
    grid = np.array(list(itertools.product(range(len(nodes)), repeat=dims)))
    return nodes[grid], np.prod(w[grid], axis=1)


def _tree_value(kernel, meas_nodes, disorder, dims, kappa, opts, n_omega, n_s, seed_key):
    """E_omega int dp_T of kernel(S_nodes, omegas) -> (value (r, c), n_points, mc stderr)."""
    S_nodes, W_s = meas_nodes(n_s)
    n_grid = (n_omega if disorder.kind == "gaussian" else n_omega) ** dims
    use_mc = opts.omega == "mc" or (opts.omega == "auto" and n_grid * len(W_s) > opts.max_points)
    if opts.omega == "gauss" and n_grid * len(W_s) > opts.max_points:
        raise ValueError(f"omega tensor rule needs {n_grid * len(W_s)} points in dimension {dims}; "
                         "use omega='mc' or fewer nodes")
    if not use_mc:
        om, w_o = _omega_grid(disorder, n_omega, dims, kappa)
        acc = 0
        step = max(1, opts.chunk // max(len(W_s), 1))
        for a in range(0, len(w_o), step):
            K = kernel(S_nodes, om[a:a + step])  # (Bs, Bo, r, c)
            acc = acc + np.einsum("s,o,sorc->rc", W_s, w_o[a:a + step], K)
        return acc, 0.0, False
    # Monte Carlo over omega with the s quadrature kept deterministic
    rng = rng_stream(opts.seed, *seed_key)
    vals = []
    step = max(1, opts.chunk // max(len(W_s), 1))
    done = 0
    while done < opts.n_mc:
        m = min(step, opts.n_mc - done)
        om, w_o = _omega_samples(disorder, rng, m, dims, kappa)
        K = kernel(S_nodes, om)
        vals.append(np.einsum("s,o,sorc->orc", W_s, w_o, K))
        done += m
    v = np.concatenate(vals)
    mean = v.mean(0)
    err = np.sqrt((np.abs(v.real - mean.real) ** 2 + np.abs(v.imag - mean.imag) ** 2).sum(0) / (len(v) * (len(v) - 1)))
    return mean, float(err.max()), True


def _cluster_term(model, disorder, point, x, y, N, opts, method):
    opts = opts or ClusterOptions()
    _check_budget(N, N + 2, opts, f"{method}_cluster_term")
    S = model.colours
    gam = model.gamma
    sign = point.branch
    H = build_hamiltonian(model)
    i, j, sets, cut = _polymers(model, x, y, N, opts.cutoff if method == "direct" else None)
    if method == "dual":
        if opts.cutoff is not None:
            raise ValueError("the polymer cutoff is implemented for the direct path only")
        lam = np.linalg.eigvalsh(H)
        delta = float(np.min(np.abs(lam - point.E)))
        if delta == 0 and point.eps == 0:
            raise ValueError("E lies on the spectrum of H and eps = 0: the covariance is unbounded")
        C = np.linalg.inv(H - (point.E + 1j * sign * point.eps) * np.eye(len(H)))
        coupling = C
    else:
        coupling = H
    if opts.shift is not None:
        kappa_unit = opts.shift
    elif method == "direct":
        kappa_unit = 2.0
    else:
        # 1 - P X is invertible for |omega| < 1 / (gamma ||C||), up to the beta shift
        far = 1.0 / (gam * np.abs(coupling).sum(1).max() + 1e-300) > 6 * disorder.sigma + point.beta / gam
        kappa_unit = 0.0 if far else 1.0
    if disorder.kind != "gaussian":
        kappa_unit = 0.0
    # direct: omega enters as +- i omega, poles at Im omega = +- eps/gamma -> shift -+;
    # dual: poles at Im omega = -eps/gamma on both branches -> shift +
    kappa = -sign * kappa_unit if method == "direct" else kappa_unit
    total = np.zeros((S, S), complex)
    coarse_total = np.zeros((S, S), complex)
    mc_var = 0.0
    n_trees = 0
    polys = []
    n_om = opts.n_omega if disorder.kind == "gaussian" else max(opts.n_omega, 64)
    for Y in sets:
        n = len(Y)
        a, b = Y.index(i), Y.index(j)
        rows = np.arange(a * S, (a + 1) * S)
        cols = np.arange(b * S, (b + 1) * S)
        base = _restrict(coupling, Y, S)
        for tree in enumerate_trees(n):
            Bs = [_sym_block(coupling, Y, S, e0, e1) for e0, e1 in tree.edges]
            if any(not np.any(B) for B in Bs):
                continue
            n_trees += 1
            meas = build_decoupling_measure(tree)

            def s_nodes(m, meas=meas):
                return meas.nodes(m)

            if method == "direct":
                shift_E = (1j * sign * point.E + point.beta - point.eps) / gam

                def kernel(Sn, om, base=base, Bs=Bs, rows=rows, cols=cols):
                    A_s = (1j * sign / gam) * base[None] * _s_expand_batch(Sn, S) - shift_E * np.eye(len(base))[None]
                    return _direct_kernel(A_s, Bs, om, sign, rows, cols, S)
            else:
                def kernel(Sn, om, base=base, Bs=Bs, rows=rows, cols=cols):
                    X_s = (1j * sign * gam) * base[None] * _s_expand_batch(Sn, S)
                    p = -point.beta / gam - 1j * om
                    return _dual_kernel(X_s, Bs, p, rows, cols, S)

            key = (N, i, j, hash(Y) & 0xFFFF, n_trees)
            val, err, was_mc = _tree_value(kernel, s_nodes, disorder, n, kappa, opts, n_om, opts.n_s, key)
            total = total + val
            mc_var += err ** 2
            if opts.error_estimate:
                if was_mc:
                    cval = _tree_value(kernel, s_nodes, disorder, n, kappa, opts, n_om, max(2, opts.n_s - 2), key)[0]
                else:
                    cval = _tree_value(kernel, s_nodes, disorder, n, kappa, opts,
                                       max(2, n_om - 2 if disorder.kind == "gaussian" else n_om // 2),
                                       max(2, opts.n_s - 2), key)[0]
                coarse_total = coarse_total + cval
            polys.append((Y, tree.edges, val))
    quad_err = float(np.max(np.abs(total - coarse_total))) if opts.error_estimate and n_trees else 0.0
    if method == "direct":
        pref = (1j * sign / gam) ** (2 - (i == j) + N)
    else:
        pref = -(1j * sign * gam) ** (N - (i == j))
    tail = _direct_cut_tail(model, H, cut, i, j, N, point, kappa_unit, disorder) if cut else 0.0
    return ClusterTerm(N, total, pref * total, quad_err, float(np.sqrt(mc_var)), n_trees, polys, tail, method)


def _s_expand_batch(Sn, S):
    return Sn if S == 1 else np.kron(Sn, np.ones((1, S, S)))


def _direct_cut_tail(model, H, cut, i, j, N, point, kappa_unit, disorder):
    """Certified bound on the neglected polymers of a direct term.

    After the contour shift the Hermitian part of A is h = kappa + (eps - beta)/gamma,
    so ||A^-1|| <= 1/h, each tree term is bounded by k! h^-(k+1) prod ||B_l||, and
    the shifted weights add a factor exp(kappa^2/2) per site.
    """
    S = model.colours
    kap = kappa_unit * (disorder.sigma if disorder.kind == "gaussian" else 0.0)
    h = kap + (point.eps - point.beta) / model.gamma
    if h <= 0:
        return float("inf")
    from math import factorial
    tot = 0.0
    for Y in cut:
        n = len(Y)
        for tree in enumerate_trees(n):
            nb = 1.0
            for e0, e1 in tree.edges:
                nb *= np.linalg.norm(_sym_block(H, Y, S, e0, e1), 2)
            if nb == 0:
                continue
            k = len(tree.edges)
            tot += factorial(k) * h ** -(k + 1) * nb * np.exp(n * kap ** 2 / (2 * disorder.sigma ** 2 if disorder.kind == "gaussian" and disorder.sigma > 0 else 1))
    return float(tot * model.gamma ** -(2 - (i == j) + N))


def direct_cluster_term(model, disorder, point, x, y, N, options: ClusterOptions | None = None) -> ClusterTerm:
    """Order-N term g_N of the strong-disorder (direct) expansion."""
    return _cluster_term(model, disorder, point, x, y, N, options, "direct")


def dual_cluster_term(model, disorder, point, x, y, N, options: ClusterOptions | None = None) -> ClusterTerm:
    """Order-N term G_N of the weak-disorder (dual) expansion."""
    return _cluster_term(model, disorder, point, x, y, N, options, "dual")


@dataclass
class GreenResult:
    value: np.ndarray
    table: list
    truncation_bound: float
    divergent: bool
    method: str

    @property
    def error(self):
        return float(sum(t.quad_err * abs(_pref_abs(t)) + t.mc_err * abs(_pref_abs(t)) for t in self.table)
                     + sum(t.cutoff_tail for t in self.table))


def _pref_abs(t):
    v = np.max(np.abs(t.value))
    return float(np.max(np.abs(t.contribution)) / v) if v else 0.0


def cluster_green(model, disorder, point, x, y, N_max, method="direct", options=None, bound=None) -> GreenResult:
    """Partial sum over N <= N_max with the truncation bound attached.

    bound: optional callable N_max -> (tail bound, divergent flag); see
    ``bounds.strong_truncation`` and ``bounds.weak_truncation``.
    """
    term = direct_cluster_term if method == "direct" else dual_cluster_term
    table = [term(model, disorder, point, x, y, N, options) for N in range(N_max + 1)]
    value = sum(t.contribution for t in table)
    tb, div = bound(N_max) if bound is not None else (float("nan"), False)
    return GreenResult(value, table, tb, div, method)


def write_cluster_csv(path, result: GreenResult):
    """Per-order table: order, tree-count, value_re, value_im, quad_err, mc_err, bound (17 significant digits)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["order", "tree_count", "value_re", "value_im", "quad_err", "mc_err", "bound"])
        for t in result.table:
            c = t.contribution.flat[0]
            pa = _pref_abs(t)
            w.writerow([t.order, t.n_trees, f"{c.real:.17e}", f"{c.imag:.17e}", f"{t.quad_err * pa:.17e}",
                        f"{t.mc_err * pa:.17e}", f"{result.truncation_bound:.17e}"])


# ---------------------------------------------------------------- parity structure of the LDOS expansion


def dual_taylor_terms(model, disorder, point, N, L, x=None, options: ClusterOptions | None = None):
    """Terms of the dual expansion at x = y with the Gibbs weight Taylor-expanded to order L.

    Returns an array T[l] (|S| x |S|), l = 0..L, with
    T[l] = (1/N!) sum_T sum_{x_i} int dp_T int dxi (i gamma V(s))^l / l! prod vhat d d Fhat_0,
    i.e. the l-th Taylor term of G_N.  Each T[l] is a polynomial average over
    omega, integrated exactly by Gauss-Hermite without contour shift.
    """
    opts = options or ClusterOptions()
    S = model.colours
    gam, sign = model.gamma, point.branch
    H = build_hamiltonian(model)
    x = x if x is not None else tuple(e // 2 for e in model.extents)
    C = np.linalg.inv(H - (point.E + 1j * sign * point.eps) * np.eye(len(H)))
    i = model.index(x)
    _, _, sets, _ = _polymers(model, x, x, N, None)
    out = np.zeros((L + 1, S, S), complex)
    deg = L + N + 1
    n_om = max(opts.n_omega, deg // 2 + 2) if disorder.kind == "gaussian" else max(opts.n_omega, 64)
    for Y in sets:
        n = len(Y)
        a = Y.index(i)
        rows = cols = np.arange(a * S, (a + 1) * S)
        base = _restrict(C, Y, S)
        for tree in enumerate_trees(n):
            Bs = [_sym_block(C, Y, S, e0, e1) for e0, e1 in tree.edges]
            meas = build_decoupling_measure(tree)
            Sn, Ws = meas.nodes(opts.n_s)
            X1 = (1j * sign * gam) * base[None] * _s_expand_batch(Sn, S)
            om, wo = _omega_grid(disorder, n_om, n, 0.0)
            p = -point.beta / gam - 1j * om
            K = _dual_kernel(None, Bs, p, rows, cols, S, lam_order=L, X1=X1)
            out += np.einsum("s,o,lsorc->lrc", Ws, wo, K)
    return out


# ---------------------------------------------------------------- literal superintegral paths


def _psi(site, c, e):
    return gen("psi", (site,), c, e)


def direct_term_literal(model, disorder, point, x, y, integrator: Integrator | None = None, n_s: int = 4):
    """g_0(x, y) by explicit superintegration of mu_Y(Phi, s) v F^Y psi-_x psi+_y (|S| = 1, N = 0)."""
    if model.colours != 1:
        raise ValueError("the literal path is implemented for |S| = 1")
    integ = integrator or Integrator()
    H = build_hamiltonian(model)
    gam, sign = model.gamma, point.branch
    i, j = model.index(x), model.index(y)
    zf = 1j * sign * point.E + point.beta - point.eps
    if i == j:
        f = f_z(disorder, zf - 1j * sign * H[i, i], gam, 1, site=i)
        src = GrassmannElement.product(f.ctx, [_psi(i, 0, -1), _psi(i, 0, 1)])
        return super_integrate(times_element(f, src), integ).scalar
    fi = f_z(disorder, zf - 1j * sign * H[i, i], gam, 1, site=i)
    fj = f_z(disorder, zf - 1j * sign * H[j, j], gam, 1, site=j)
    ctx = fi.ctx.union(fj.ctx)
    hij, hji = H[i, j], H[j, i]
    fer = (GrassmannElement.product(ctx, [_psi(i, 0, 1), _psi(j, 0, -1)], hij)
           + GrassmannElement.product(ctx, [_psi(j, 0, 1), _psi(i, 0, -1)], hji))
    src = GrassmannElement.product(ctx, [_psi(i, 0, -1), _psi(j, 0, 1)])
    x_s, w_s = np.polynomial.legendre.leggauss(n_s)
    x_s, w_s = (x_s + 1) / 2, w_s / 2
    total = 0.0
    for s, ws in zip(x_s, w_s):
        def ev(phi, s=s):
            Fi = embed(fi.evaluator(phi[:, :1]), ctx)
            Fj = embed(fj.evaluator(phi[:, 1:]), ctx)
            bos = phi[:, 0] * hij * np.conj(phi[:, 1]) + phi[:, 1] * hji * np.conj(phi[:, 0])
            v = -(fer + GrassmannElement.scalar(ctx, 1.0).scale(bos))  # v_xy(Phi)
            from .grassmann import exp_even
            mu = exp_even(fer.scale(-1j * sign * s / gam)).scale(np.exp(-1j * sign * s / gam * bos))
            return mul(mul(mul(mul(mu, v), Fi), Fj), src)

        env_i, env_j = fi.envelope, fj.envelope
        hmax = abs(hij) + abs(hji)

        def env(u):
            return (env_i(u[:, :1]) * env_j(u[:, 1:]) * (1 + hmax * np.sqrt(u[:, 0] * u[:, 1]) + hmax) * 4
                    * np.exp(hmax / gam))

        f = SuperFunction([((i,), 0), ((j,), 0)], ctx, ev, env)
        total += ws * super_integrate(f, integ).scalar
    return total


def dual_source_transform(disorder, gamma, beta=0.0, integrator=None, realization="differentiate"):
    """d/d eta+ d/d eta- of Fhat_beta at one site, as a superfunction of xi.

    "differentiate": Grassmann derivatives of the super Fourier transform of F_beta.
    "transform": super Fourier transform of psi- psi+ F_beta.
    """
    integ = integrator or Integrator(n_theta=8)
    f = f_z(disorder, beta, gamma, 1, site=0)
    if realization == "transform":
        src = GrassmannElement.product(f.ctx, [_psi(0, 0, -1), _psi(0, 0, 1)])
        return super_fourier(times_element(f, src), integ)
    if realization != "differentiate":
        raise ValueError("realization must be 'differentiate' or 'transform'")
    fh = super_fourier(f, integ)
    ep, em = gen("eta", (0,), 0, 1), gen("eta", (0,), 0, -1)

    def ev(kappa):
        return derivative(derivative(fh.evaluator(kappa), em), ep)

    return SuperFunction(fh.pairs, fh.ctx, ev, fh.envelope, fh.radial, True, "eta", l1_source=fh.l1_source)


def dual_term_literal(model, disorder, point, x, integrator=None, dual_integrator=None, realization="differentiate",
                      u_max: float = 200.0):
    """G_0(x, x) = int dxi muhat_x(xi) d_eta+ d_eta- Fhat_beta(xi) by explicit superintegration (|S| = 1)."""
    if model.colours != 1:
        raise ValueError("the literal path is implemented for |S| = 1")
    H = build_hamiltonian(model)
    sign, gam = point.branch, model.gamma
    C = np.linalg.inv(H - (point.E + 1j * sign * point.eps) * np.eye(len(H)))
    i = model.index(x)
    c = C[i, i]
    src = dual_source_transform(disorder, gam, point.beta, integrator, realization)
    ctx = src.ctx
    ep, em = gen("eta", (0,), 0, 1), gen("eta", (0,), 0, -1)
    fer = GrassmannElement.product(ctx, [ep, em], 1j * sign * gam * c)
    from .grassmann import exp_even
    efer = exp_even(fer)

    def ev(kappa):
        bos = np.exp(1j * sign * gam * c * np.abs(kappa[:, 0]) ** 2)
        return mul(efer, src.evaluator(kappa)).scale(bos)

    # the integrand decays slowly and oscillates, so the radius is fixed explicitly
    f = SuperFunction(src.pairs, ctx, ev, lambda u: np.exp(-u[:, 0]), src.radial, True, "eta")
    integ = dual_integrator or Integrator(n_theta=4, n_panels=int(u_max), u_max=u_max, error_estimate=False)
    res = super_integrate(f, integ)
    return complex(res.value.scalar_part())
