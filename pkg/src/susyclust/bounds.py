"""Explicit constants of the convergence proofs and the inequalities built from them.

Norms: ||A||_{inf,1} = sup_x sum_y sum_{s,s'} |A_xy,ss'| and
||A||_{inf,inf} = sup_{x,y} sum_{s,s'} |A_xy,ss'|, optionally with the weight
exp((1 + theta) rate |x - y| / 2).  Constants that the arguments leave
unspecified are materialized explicitly and listed in ``notes`` of the chain
objects; they are bound parameters, not sharp values.

Large constants are carried as natural logarithms (``log_*`` fields) so that
chains whose values overflow a float are still reported.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from math import comb, factorial, lgamma

import numpy as np
from scipy.optimize import brentq
from scipy.special import digamma, roots_legendre

from ._util import gl_panels
from .disorder import DisorderModel, g_derivatives

LOG_FLOAT_MAX = math.log(np.finfo(float).max)


def _exp(log_value):
    return math.inf if log_value > LOG_FLOAT_MAX else math.exp(log_value)


# ---------------------------------------------------------------- norms


@dataclass(frozen=True)
class NormProfile:
    """Plain and weighted norms of a lattice operator (block sums over colours)."""

    inf1: float
    infinf: float
    rate: float = 0.0
    theta: float = 0.0
    tail: float = 0.0  # bound on the omitted part of an infinite-lattice series


@dataclass(frozen=True)
class Kernel:
    """Translation-invariant lattice kernel: fn(offsets (k, D)) -> block abs-sums (k,).

    The declared majorant fn(z) <= C0 exp(-decay |z|) controls the tail of the
    lattice sums; support (if given) is a radius beyond which fn vanishes.
    """

    fn: object
    dim: int
    C0: float
    decay: float
    support: float | None = None
    log_fn: object = None  # optional log of fn, used when the weight would overflow


def laplacian_kernel(D=1, colours=1):
    """-Delta on Z^D: 2D on the diagonal, -1 between nearest neighbours (identity colour block)."""

    def fn(z):
        l1 = np.abs(z).sum(axis=1)
        return colours * np.where(l1 == 0, 2.0 * D, np.where(l1 == 1, 1.0, 0.0))

    return Kernel(fn, D, 2.0 * D * colours, 0.0, support=1.0)


def exponential_kernel(C=1.0, alpha=1.0, D=1, colours=1):
    """C exp(-alpha |z|) times the identity colour block."""
    return Kernel(lambda z: colours * C * np.exp(-alpha * np.linalg.norm(z, axis=1)), D, colours * C, alpha,
                  log_fn=lambda z: math.log(colours * C) - alpha * np.linalg.norm(z, axis=1))


def laplacian_covariance_1d(delta):
    """Kernel of (-Delta + delta)^-1 on Z: exp(-m |r|) / (2 sinh m), m = 2 asinh(sqrt(delta) / 2)."""
    m = covariance_rate_1d(delta)
    c0 = 1.0 / (2 * math.sinh(m))
    return Kernel(lambda z: c0 * np.exp(-m * np.abs(z[:, 0])), 1, c0, m,
                  log_fn=lambda z: math.log(c0) - m * np.abs(z[:, 0]))


def covariance_rate_1d(delta):
    return 2.0 * math.asinh(math.sqrt(delta) / 2.0)


def _shell_tail(D, b, R):
    """Upper bound on sum_{|z|_inf > R} exp(-b |z|_inf) over Z^D."""
    r = R + 1
    t0 = 2 * D * (2 * r + 1) ** (D - 1) * math.exp(-b * r)
    rho = ((2 * r + 3) / (2 * r + 1)) ** (D - 1) * math.exp(-b)
    return math.inf if rho >= 1 else t0 / (1 - rho)


def lattice_norms(A, rate=0.0, theta=0.0, positions=None, colours=1, tol=1e-12) -> NormProfile:
    """Norms of a finite matrix (sites given by ``positions``) or of a Kernel on Z^D.

    The weight is exp((1 + theta) rate |x - y| / 2) with the Euclidean distance.
    For kernels the infinite lattice sum is truncated once the remainder bound
    drops below ``tol``; a non-summable weighted kernel raises ValueError.
    """
    if not 0 <= theta < 1 and rate > 0:
        raise ValueError("theta must lie in [0, 1)")
    k = (1 + theta) * rate / 2
    if isinstance(A, Kernel):
        D = A.dim
        if A.support is not None:
            R = int(math.ceil(A.support))
            tail = 0.0
        else:
            b = A.decay - k
            if b <= 0:
                raise ValueError(f"weighted series sum_y exp({k:.4g} |x - y|) |A_xy| diverges: the kernel decays "
                                 f"only at rate {A.decay:.4g}")
            R = 1
            while A.C0 * _shell_tail(D, b, R) > tol:
                R *= 2
                if (2 * R + 1) ** D > 5e7:
                    raise ValueError("weighted lattice series converges too slowly to evaluate")
            tail = A.C0 * _shell_tail(D, b, R)
        g = np.arange(-R, R + 1)
        Z = np.array(list(itertools.product(g, repeat=D)), dtype=float)
        nz = np.linalg.norm(Z, axis=1)
        vals = np.exp(A.log_fn(Z) + k * nz) if A.log_fn is not None else A.fn(Z) * np.exp(k * nz)
        return NormProfile(float(vals.sum() + tail), float(vals.max()), rate, theta, tail)
    A = np.asarray(A)
    S = colours
    n = A.shape[0] // S
    pos = np.arange(n, dtype=float)[:, None] if positions is None else np.asarray(positions, dtype=float)
    if pos.ndim == 1:
        pos = pos[:, None]
    blk = np.abs(A).reshape(n, S, n, S).sum(axis=(1, 3))
    dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=2)
    w = blk * np.exp(k * dist)
    return NormProfile(float(w.sum(1).max()), float(w.max()), rate, theta, 0.0)


def block_abs(A, colours=1):
    """Site matrix of colour-block abs-sums."""
    n = A.shape[0] // colours
    return np.abs(A).reshape(n, colours, n, colours).sum(axis=(1, 3))


def covariance_decay_fit(delta, r_max=10, n_sites=401):
    """Fitted decay rate of |C_{0,r}|, r = 1..r_max, for (-Delta + delta)^-1 on a long chain.

    Returns (fitted rate, exact rate 2 asinh(sqrt(delta)/2), sqrt(delta)).
    """
    n = n_sites
    H = 2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
    C = np.linalg.inv(H + delta * np.eye(n))
    c = n // 2
    r = np.arange(1, r_max + 1)
    slope = np.polyfit(r, np.log(np.abs(C[c, c + r])), 1)[0]
    return float(-slope), covariance_rate_1d(delta), math.sqrt(delta)


# ---------------------------------------------------------------- stripping constants


def _sorted_norms(D, count):
    R = 1
    while True:
        g = np.arange(-R, R + 1)
        Z = np.array(list(itertools.product(g, repeat=D)), dtype=float)
        nr = np.sort(np.linalg.norm(Z, axis=1))[1:]
        inside = nr[nr <= R]  # complete: every point with |z| <= R lies in the cube
        if inside.size >= count:
            return inside[:count]
        R *= 2


def omega_table(D, d_max):
    """Ratios [sum of the d-1 smallest nonzero norms / 2] / (d-1)^(1+1/D) for d = 2..d_max."""
    nr = _sorted_norms(D, d_max - 1)
    m = np.arange(1, d_max)
    return np.cumsum(nr) / 2 / m ** (1 + 1 / D)


def omega_constant(D, d_max=200):
    """(Omega_D, d at the minimum): the largest Omega with sum_j |x - x_j|/2 >= Omega (d-1)^(1+1/D)
    for all distinct x_j != x and all 2 <= d <= d_max."""
    if D not in (1, 2, 3):
        raise ValueError("D must be 1, 2 or 3")
    if not 2 <= d_max <= 200:
        raise ValueError("d_max must lie in [2, 200]")
    ratios = omega_table(D, d_max)
    i = int(np.argmin(ratios))
    return float(ratios[i]), i + 2


def omega_infimum(D):
    """Omega valid for every d: exactly 1/8 for D = 1 (the ratios decrease to 1/8);
    for D > 1 the d <= 200 minimum, i.e. valid for coordination numbers below 200."""
    return 0.125 if D == 1 else omega_constant(D, 200)[0]


@dataclass(frozen=True)
class StrippingConstant:
    value: float
    log_value: float
    d_argmax: int
    omega: float
    diverged: bool = False


def stripping_constant(q, theta, rate, D=1, omega=None) -> StrippingConstant:
    """C_{q,theta} = sup_{d >= 1} exp(2 q ln d - (1 - theta) rate Omega (d - 1)^(1/D)).

    The exponent decreases beyond d* = (2 q D / ((1 - theta) rate Omega))^D, so the
    integer scan up to d* is exact; very large d* are handled by root finding on
    the derivative.  theta >= 1 gives an infinite supremum, reported as such.
    """
    om = omega_infimum(D) if omega is None else omega
    if q < 0 or rate <= 0:
        raise ValueError("need q >= 0 and rate > 0")
    if theta >= 1:
        return StrippingConstant(math.inf, math.inf, -1, om, True)
    c = (1 - theta) * rate * om
    f = lambda d: 2 * q * np.log(d) - c * (d - 1) ** (1 / D)
    if q == 0:
        return StrippingConstant(1.0, 0.0, 1, om)
    d_star = (2 * q * D / c) ** D
    end = int(min(math.ceil(d_star) + 2, 10 ** 7))
    d = np.arange(1, end + 1, dtype=float)
    vals = f(d)
    i = int(np.argmax(vals))
    best, arg = float(vals[i]), i + 1
    if d_star > end:
        fp = lambda t: 2 * q / t - (c / D) * (t - 1) ** (1 / D - 1)
        if fp(end) > 0:
            root = brentq(fp, end, d_star + 1)
            for cand in (math.floor(root), math.ceil(root)):
                v = float(f(float(cand)))
                if v > best:
                    best, arg = v, int(cand)
    return StrippingConstant(_exp(best), best, arg, om)


# ---------------------------------------------------------------- certified factorial series


@dataclass(frozen=True)
class SeriesValue:
    log_sum: float
    log_tail: float  # log of the bound on the omitted remainder
    n_terms: int

    @property
    def value(self):
        return _exp(self.log_sum)


def _log_term(n, a, p, logX):
    return p * lgamma(n + a + 1) + n * logX - (p + 2) * lgamma(n + 1)


def factorial_series(a, p, X, rel_tol=1e-17) -> SeriesValue:
    """sum_{n >= 0} ((n + a)!)^p X^n / (n!)^(p + 2) with a ratio-test remainder bound.

    The term ratio (n + 1 + a)^p X / (n + 1)^(p + 2) decreases in n, so after
    term n the remainder is at most t_n rho_n / (1 - rho_n).
    """
    if X < 0 or p < 0:
        raise ValueError("need X >= 0 and p >= 0")
    if math.isinf(X):
        return SeriesValue(math.inf, math.inf, 0)
    if X == 0:
        return SeriesValue(p * lgamma(a + 1), -math.inf, 1)
    logX = math.log(X)
    logs = []
    n = 0
    while True:
        lt = _log_term(n, a, p, logX)
        logs.append(lt)
        rho = (n + 1 + a) ** p * X / (n + 1) ** (p + 2)
        if rho < 1:
            log_tail = lt + math.log(rho) - math.log1p(-rho)
            ls = float(np.logaddexp.reduce(logs))
            if log_tail - ls < math.log(rel_tol):
                return SeriesValue(ls, log_tail, n + 1)
        n += 1


# ---------------------------------------------------------------- IMB / IDB constants


@dataclass
class ConstantRecord:
    """(K, M, p) for one example path, with the measured left sides for n <= n_max."""

    kind: str
    example: str
    bound: str  # "IMB" or "IDB"
    K: float
    M: float
    p: float
    W: float | None
    z: complex
    gamma: float
    lower_bound: bool  # K rests on a sampled supremum
    checks: list = field(default_factory=list)  # (n_plus, n_minus, lhs, rhs, quad_err)
    notes: str = ""

    @property
    def violations(self):
        return [c for c in self.checks if c[2] > c[3]]

    def rhs(self, n):
        return self.K * self.M ** n * factorial(n) ** self.p


def _norm_F(disorder, a, t, extra=0):
    """Grassmann norm |g(t)| + |g'(t)| of F at |S| = 1, and the derivative list."""
    g = g_derivatives(disorder, a, t, 1 + extra)
    return np.abs(g[0]) + np.abs(g[1]), g


def _radial_rule(disorder, coarse=False):
    """Rule on u in [0, u_max] for integrals of ||F||-type integrands against polynomial weights.

    The integrands are absolute values with kinks at sign changes, so the rule
    converges algebraically; ``coarse`` halves the panel count for an error estimate.
    """
    f = 2 if coarse else 1
    if disorder.kind == "gaussian":
        u_max = 2 * math.sqrt(2 * (40 + 4 * math.log(10))) / max(disorder.sigma, 1e-3) + 10
        return gl_panels(0.0, u_max, 40 // f, 32, grading=1.0)
    return gl_panels(0.0, 2500.0, 500 // f, 32, grading=1.5)


def _monomial_integrals(disorder, a, n_max, rule=None):
    """I_n = int dphi |phi|^n ||F(Phi)|| = int_0^inf du u^(n/2) ||F(u)|| at |S| = 1."""
    u, w = rule if rule is not None else _radial_rule(disorder)
    nrm, _ = _norm_F(disorder, a, u)
    return [float(np.sum(w * u ** (n / 2) * nrm)) for n in range(n_max + 1)]


def _derivative_integral(disorder, a, n_plus, n_minus, rule=None, g=None):
    """int dphi || d^{n+}_{phi+} d^{n-}_{phi-} F(Phi) || at |S| = 1 (Wirtinger derivatives).

    With h(phi+ phi-) one has d^a_{+} d^b_{-} h = e^{i th (b - a)} sum_j C(b, j) a!/(a-j)!
    r^{a+b-2j} h^{(a+b-j)}(u), a common phase, so the modulus is exact.  g may
    carry precomputed derivatives of exp(a u) nuhat(u) on the rule nodes.
    """
    u, w = rule if rule is not None else _radial_rule(disorder)
    A, B = n_plus, n_minus
    if g is None:
        g = g_derivatives(disorder, a, u, A + B + 1)
    tot = 0.0
    for k in (0, 1):
        s = sum(comb(B, j) * factorial(A) / factorial(A - j) * u ** ((A + B) / 2 - j) * g[A + B - j + k]
                for j in range(min(A, B) + 1))
        tot = tot + np.abs(s)
    return float(np.sum(w * tot))


def _shifted_integral(disorder, a, shift, L, n_r, weight_sqrt=False):
    """int dphi/pi e^{w |phi|} ||F(phi + shift)|| over R^2 for a complex shift (zeta1, zeta2).

    Polar coordinates around the origin of the unshifted variable; w = 1 when
    weight_sqrt (the e^{(phi+ phi-)^{1/2}} weight), else 0.
    """
    x, wx = roots_legendre(n_r)
    edges = np.linspace(0, L, 9)
    rs, wrs = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        rs.append(lo + (hi - lo) * (x + 1) / 2)
        wrs.append(wx * (hi - lo) / 2)
    r, wr = np.concatenate(rs), np.concatenate(wrs)
    n_th = 64 + 8 * int(L * (abs(shift[0]) + abs(shift[1])))
    th = np.linspace(0, 2 * np.pi, n_th, endpoint=False)
    R, T = np.meshgrid(r, th, indexing="ij")
    p1 = R * np.cos(T) + shift[0]
    p2 = R * np.sin(T) + shift[1]
    t = p1 ** 2 + p2 ** 2
    nrm, _ = _norm_F(disorder, a, t.ravel())
    nrm = nrm.reshape(t.shape)
    if weight_sqrt:
        nrm = nrm * np.exp(R)
    return float(np.sum(nrm * R * wr[:, None]) * (2 * np.pi / n_th) / np.pi), float(np.max(nrm[-1]))


def seminorm_1W(disorder, a, W, n_grid=16, L=None, n_r=None):
    """||F||_{1,W}: sup over shifts zeta in R_W^2 of the shifted integral (|S| = 1).

    The shifts are sampled on the boundary of the strip domain, n_grid points per
    dimension (Re zeta on a grid, Im zeta = +-W), so the result is a lower bound
    of the true sup.  Real parts drop out by translation invariance and the
    integral depends on |Im zeta| only, which collapses the grid to its distinct
    values of |Im zeta|.
    """
    L = L if L is not None else (9.0 if disorder.kind == "gaussian" else 30.0)
    n_r = n_r if n_r is not None else (48 if disorder.kind == "gaussian" else 160)
    re = np.linspace(-W, W, n_grid)
    pts = [(r1 + 1j * s1 * W, r2 + 1j * s2 * W) for r1 in re for r2 in re for s1 in (-1, 1) for s2 in (-1, 1)]
    hs = sorted({round(float(np.hypot(z1.imag, z2.imag)), 15) for z1, z2 in pts})
    best, edge = 0.0, 0.0
    for h in hs:
        val, e = _shifted_integral(disorder, a, (1j * h, 0.0), L, n_r)
        if val > best:
            best, edge = val, e
    if edge > 1e-10 * max(best, 1e-300):
        raise ValueError("seminorm quadrature did not converge: integrand not negligible at the cutoff")
    return best


def triple_seminorm_1W(disorder, a, W, n_grid=16, L=9.0, n_r=48):
    """|||F|||_{1,W}: sup over zeta on (circle |zeta| = W)^2 of int dphi e^{|phi|} ||F(Phi + zeta)||."""
    ang = np.linspace(0, 2 * np.pi, n_grid, endpoint=False)
    best, edge = 0.0, 0.0
    for a1 in ang:
        for a2 in ang:
            val, e = _shifted_integral(disorder, a, (W * np.exp(1j * a1), W * np.exp(1j * a2)), L, n_r, True)
            if val > best:
                best, edge = val, e
    if edge > 1e-10 * max(best, 1e-300):
        raise ValueError("seminorm quadrature did not converge: integrand not negligible at the cutoff")
    return best


def _sup_weighted_norm(disorder, a, W):
    """C_W = sup_u e^{(W - Re a) u} ||F(u)|| by a dense grid refined around its maximum."""
    u = np.linspace(0, 60 / max(disorder.sigma, 1e-3), 60001)
    nrm, _ = _norm_F(disorder, a, u)
    v = np.exp((W - a.real) * u) * nrm
    i = int(np.argmax(v))
    uu = np.linspace(u[max(i - 1, 0)], u[min(i + 1, len(u) - 1)], 2001)
    n2, _ = _norm_F(disorder, a, uu)
    return float(max(v.max(), np.max(np.exp((W - a.real) * uu) * n2)))


def imb_idb_constants(kind, gamma=1.0, z=0.0, example=None, W=None, n_max=8, sigma=1.0) -> ConstantRecord:
    """Constants of the integrability bounds of F_z = exp(z/gamma Phi+Phi-) nuhat(Phi+Phi-), |S| = 1.

    example:
      "I.1"  IMB, analytic density: M = (W/2 - z/(2 gamma))^(-1/2), p = 1/2,
             K = C_W / M' with C_W = sup_u e^{(W - z/gamma) u} ||F_z(u)|| and M' = W/2 - z/(2 gamma).
      "I.2"  IMB, bump density at z = 0: M = 2, p = 1, K = the n = 0 integral.
      "II.1" IDB: K = ||F_z||_{1,W}, M = 1/W, p = 1.
      "II.2" IDB: K = |S|! 2^|S| |||F_z|||_{1,W}, M = 4 (1/W + z/gamma), p = 2.
    Default: "I.1" for Gaussian and "I.2" for the bump.  The record carries the
    measured left sides for every multi-index with n <= n_max and a quadrature error
    estimate from a rule with half the panels.
    """
    disorder = DisorderModel(kind, sigma)
    example = example or ("I.1" if kind == "gaussian" else "I.2")
    a = complex(z) / gamma
    if abs(a.imag) > 0 and example in ("I.1", "II.2"):
        raise ValueError(f"example {example} is implemented for real z")
    checks = []
    coarse = _radial_rule(disorder, coarse=True)
    if example in ("I.1", "I.2"):
        I = _monomial_integrals(disorder, a, n_max)
        Ic = _monomial_integrals(disorder, a, n_max, coarse)
        if example == "I.1":
            if kind != "gaussian":
                raise ValueError("example I.1 needs a density analytic in a strip (use the Gaussian)")
            W = 1.0 if W is None else W
            Mp = (W - a.real) / 2
            if Mp <= 0:
                raise ValueError("example I.1 needs z/gamma < W")
            K, M, p = _sup_weighted_norm(disorder, a, W) / Mp, Mp ** -0.5, 0.5
            rec = ConstantRecord(kind, example, "IMB", K, M, p, W, a * gamma, gamma, False,
                                 notes="sup over u on a dense grid refined near the maximum")
        else:
            if kind != "bump" or a != 0:
                raise ValueError("example I.2 is the bump density at z = 0")
            rec = ConstantRecord(kind, example, "IMB", I[0], 2.0, 1.0, None, 0j, gamma, False,
                                 notes="K materialized as the n = 0 integral, the smallest admissible value")
        # |phi^{n+} phi^{-n-}| = |phi|^n, so the left side depends on n only
        for n in range(n_max + 1):
            for npl in range(n + 1):
                checks.append((npl, n - npl, I[n], rec.rhs(n), abs(I[n] - Ic[n])))
    elif example in ("II.1", "II.2"):
        W = (1.0 if kind == "gaussian" else 0.1) if W is None else W
        if not 0 < W <= 1:
            raise ValueError("W must lie in (0, 1]")
        if example == "II.1":
            K, M, p = seminorm_1W(disorder, a, W), 1.0 / W, 1.0
        else:
            if kind != "gaussian":
                raise ValueError("example II.2 is implemented for Gaussian disorder")
            K, M, p = 2.0 * triple_seminorm_1W(disorder, a, W), 4 * (1.0 / W + a.real), 2.0
        rec = ConstantRecord(kind, example, "IDB", K, M, p, W, a * gamma, gamma, True,
                             notes="sup over a sampled grid of the shift domain (lower bound of the sup)")
        rule = _radial_rule(disorder)
        g = g_derivatives(disorder, a, rule[0], n_max + 1)
        gc = g_derivatives(disorder, a, coarse[0], n_max + 1)
        for n in range(n_max + 1):
            for npl in range(n + 1):
                lhs = _derivative_integral(disorder, a, npl, n - npl, rule, g)
                err = abs(lhs - _derivative_integral(disorder, a, npl, n - npl, coarse, gc))
                checks.append((npl, n - npl, lhs, rec.rhs(n), err))
    else:
        raise ValueError(f"unknown example {example!r}")
    rec.checks = checks
    return rec


# ---------------------------------------------------------------- hopping and covariance constants


def hopping_constants(H, positions, alpha, theta, colours=1, D=1):
    """(calC, calC_theta): |H_xy| <= calC e^{-alpha |x-y|} and calC_theta = alpha^D ||H_theta||_{inf,1}.

    calC_theta is the weighted norm times alpha^D, a reconstruction of the
    weighted-sum constant of the decay argument.
    """
    pos = np.asarray(positions, dtype=float)
    pos = pos[:, None] if pos.ndim == 1 else pos
    blk = block_abs(np.asarray(H), colours)
    dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=2)
    calC = float(np.max(blk * np.exp(alpha * dist)))
    prof = lattice_norms(H, alpha, theta, pos, colours)
    return calC, alpha ** D * prof.inf1


def covariance_constants(C, positions, delta, theta, colours=1):
    """(calC, calC_theta) for the covariance: calC = max(delta ||C||_{inf,1}, ||C_theta||_{inf,inf}),
    calC_theta = delta ||C_theta||_{inf,1}, with weights at rate sqrt(delta).  C may be a Kernel."""
    rate = math.sqrt(delta)
    if isinstance(C, Kernel):
        plain, wt = lattice_norms(C), lattice_norms(C, rate, theta)
    else:
        plain = lattice_norms(C, 0.0, 0.0, positions, colours)
        wt = lattice_norms(C, rate, theta, positions, colours)
    return max(delta * plain.inf1, wt.infinf), delta * wt.inf1


# ---------------------------------------------------------------- strong disorder chain


def _geom_tail(log_b_next, log_r):
    """sum_{k >= 0} b_next r^k, or inf when r >= 1."""
    if log_r >= 0:
        return math.inf
    return _exp(log_b_next - math.log1p(-math.exp(log_r)))


@dataclass
class StrongChain:
    E: float
    K: float
    M: float
    p: float
    alpha: float
    calC: float
    calC_theta: float
    theta: float
    S: int
    D: int
    C_strip: StrippingConstant
    series: SeriesValue
    log_Cbar: float
    log_gamma_min: float
    notes: list = field(default_factory=list)

    @property
    def Cbar(self):
        return _exp(self.log_Cbar)

    @property
    def gamma_min(self):
        return _exp(self.log_gamma_min)

    def log_A(self, gamma):
        S = self.S
        return math.log1p(math.exp(-S * math.log(gamma) + S * math.log1p(abs(self.E)))) + self.log_Cbar

    def log_ratio(self, gamma):
        """log of the per-order ratio r = A(gamma) alpha^-D / gamma."""
        return self.log_A(gamma) - self.D * math.log(self.alpha) - math.log(gamma)

    def ratio(self, gamma):
        return _exp(self.log_ratio(gamma))

    def log_order_bound(self, N, gamma, dist, same):
        """log of gamma^-(2 - d + N) A^(N + 2 - d) alpha^(-D N) e^{-theta alpha dist}, d = delta_xy."""
        d = 1 if same else 0
        return ((N + 2 - d) * (self.log_A(gamma) - math.log(gamma)) - N * self.D * math.log(self.alpha)
                - self.theta * self.alpha * dist)

    def log_C_theorem(self):
        """C with |G| <= gamma^-(2-d) C^(2-d) e^{-theta alpha |x-y|} for gamma >= gamma_min: 2 A(gamma_min)."""
        return math.log(2.0) + self.log_A(self.gamma_min) if math.isfinite(self.log_gamma_min) else math.inf

    def log_bound(self, gamma, dist=0.0, same=True):
        d = 1 if same else 0
        return (2 - d) * (self.log_C_theorem() - math.log(gamma)) - self.theta * self.alpha * dist

    def bound(self, gamma, dist=0.0, same=True):
        return _exp(self.log_bound(gamma, dist, same))

    def truncation(self, N_max, gamma, dist=0.0, same=True):
        """(bound on sum_{N > N_max} |contribution_N|, divergent flag)."""
        lr = self.log_ratio(gamma)
        if not math.isfinite(self.log_Cbar) or lr >= 0:
            return math.inf, True
        return _geom_tail(self.log_order_bound(N_max + 1, gamma, dist, same), lr), False

    def report(self):
        inputs = dict(E=self.E, K=self.K, M=self.M, p=self.p, alpha=self.alpha, theta=self.theta, S=self.S,
                      D=self.D)
        return {
            "strong.C_strip": _entry(self.C_strip.log_value, "sup_d exp(2q ln d - (1-theta) alpha Omega (d-1)^(1/D))",
                                     dict(q=self.p + 1, theta=self.theta, alpha=self.alpha, Omega=self.C_strip.omega,
                                          d_argmax=self.C_strip.d_argmax)),
            "strong.calC": _entry(math.log(self.calC), "sup e^{alpha|x-y|} |H_xy|", dict(alpha=self.alpha)),
            "strong.calC_theta": _entry(math.log(self.calC_theta), "alpha^D ||H_theta||_{inf,1} (reconstruction)",
                                        dict(alpha=self.alpha, theta=self.theta)),
            "strong.Cbar": _entry(self.log_Cbar, "2 K M e^calC calC_theta sum ((n+1)!)^p (M C_strip)^n/(n!)^(p+2)",
                                  inputs, self.series.log_tail + self.log_Cbar - self.series.log_sum),
            "strong.gamma_min": _entry(self.log_gamma_min,
                                       "4 Cbar (alpha^-D + alpha^(-D/(1+S))) (1+|E|)^(S/(1+S))", inputs),
        }


def strong_threshold(E, record, alpha, calC, calC_theta, theta, S=1, D=1, omega=None) -> StrongChain:
    """gamma_min and the per-order bounds of the strong-disorder expansion.

    record: an IMB ConstantRecord (or any object with K, M, p).
    """
    K, M, p = record.K, record.M, record.p
    if M < 1:
        M = 1.0  # the bounds require M >= 1; a smaller M is weakened to 1
    Cs = stripping_constant(p + 1, theta, alpha, D, omega)
    X = M * Cs.value
    ser = factorial_series(1, p, X)
    log_Cbar = math.log(2 * K * M) + calC + math.log(calC_theta) + ser.log_sum
    log_gmin = (math.log(4.0) + log_Cbar + math.log(alpha ** -D + alpha ** (-D / (1 + S)))
                + S / (1 + S) * math.log1p(abs(E)))
    notes = ["calC_theta reconstructed as alpha^D times the weighted norm"]
    return StrongChain(E, K, M, p, alpha, calC, calC_theta, theta, S, D, Cs, ser, log_Cbar, log_gmin, notes)


# ---------------------------------------------------------------- weak disorder chain


def k_prime(K, S):
    """K' from the kappa integral with m = |S| + 1:
    int dkappa 1/(1 + M^-2m (kappa+ kappa-)^m) = M^2S pi / ((S+1) sin(pi S/(S+1)) (S-1)!), times 2K."""
    m = S + 1
    return 2 * K * math.pi / (m * math.sin(math.pi * S / m) * factorial(S - 1))


@dataclass
class WeakChain:
    delta: float
    K: float
    Kp: float
    M: float
    p: float
    calC: float
    calC_theta: float
    theta: float
    S: int
    D: int
    C_strip: StrippingConstant
    series: SeriesValue
    log_C: float
    notes: list = field(default_factory=list)

    @property
    def C(self):
        return _exp(self.log_C)

    @property
    def rate(self):
        return math.sqrt(self.delta)

    def threshold_ratio(self):
        """delta / gamma must be at least C."""
        return self.C

    def in_regime(self, gamma):
        return math.log(self.delta) - math.log(gamma) >= self.log_C

    def log_ratio(self, gamma):
        """log of the per-order ratio gamma C / (2 delta)."""
        return math.log(gamma) + self.log_C - math.log(2 * self.delta)

    def ratio(self, gamma):
        return _exp(self.log_ratio(gamma))

    def log_order_bound(self, N, gamma, dist=0.0, same=True):
        """log of gamma^(N - d) (C/2)^(N + 2 - d) delta^-N e^{-theta sqrt(delta) dist}."""
        d = 1 if same else 0
        return ((N - d) * math.log(gamma) + (N + 2 - d) * (self.log_C - math.log(2.0)) - N * math.log(self.delta)
                - self.theta * self.rate * dist)

    def log_bound(self, gamma, dist=0.0, same=True):
        d = 1 if same else 0
        return -d * math.log(gamma) + (2 - d) * self.log_C - self.theta * self.rate * dist

    def bound(self, gamma, dist=0.0, same=True):
        return _exp(self.log_bound(gamma, dist, same))

    def truncation(self, N_max, gamma, dist=0.0, same=True):
        lr = self.log_ratio(gamma)
        if not math.isfinite(self.log_C) or lr >= 0:
            return math.inf, True
        return _geom_tail(self.log_order_bound(N_max + 1, gamma, dist, same), lr), False

    def report(self):
        inputs = dict(delta=self.delta, K=self.K, M=self.M, p=self.p, theta=self.theta, S=self.S, D=self.D)
        return {
            "weak.K_prime": _entry(math.log(self.Kp), "2K pi/((S+1) sin(pi S/(S+1)) (S-1)!)", dict(K=self.K, S=self.S)),
            "weak.C_strip": _entry(self.C_strip.log_value, "sup_d exp(2q ln d - (1-theta) sqrt(delta) Omega (d-1)^(1/D))",
                                   dict(q=self.p + 1, theta=self.theta, rate=self.rate, d_argmax=self.C_strip.d_argmax)),
            "weak.calC": _entry(math.log(self.calC), "max(delta ||C||_{inf,1}, ||C_theta||_{inf,inf})", inputs),
            "weak.calC_theta": _entry(math.log(self.calC_theta), "delta ||C_theta||_{inf,1}", inputs),
            "weak.C": _entry(self.log_C, "2K' S^(S+1) M^(2S+1) e^calC calC_theta sum ((n+2S+2)!)^p (M C_strip)^n/(n!)^(p+2)",
                             inputs, self.series.log_tail + self.log_C - self.series.log_sum),
        }


def weak_threshold(delta, record, calC, calC_theta, theta, S=1, D=1, omega=None) -> WeakChain:
    """Threshold delta/gamma >= C and the per-order bounds of the weak-disorder expansion.

    record: an IDB ConstantRecord (or any object with K, M, p).  The weight rate
    is sqrt(delta).
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    K, M, p = record.K, max(record.M, 1.0), record.p
    Cs = stripping_constant(p + 1, theta, math.sqrt(delta), D, omega)
    ser = factorial_series(2 * S + 2, p, M * Cs.value)
    Kp = k_prime(K, S)
    log_C = (math.log(2 * Kp) + (S + 1) * math.log(S) + (2 * S + 1) * math.log(M) + calC + math.log(calC_theta)
             + ser.log_sum)
    notes = ["K' materialized from the kappa integral with m = |S| + 1"]
    return WeakChain(delta, K, Kp, M, p, calC, calC_theta, theta, S, D, Cs, ser, log_C, notes)


# ---------------------------------------------------------------- Lifshitz tail bound


@dataclass(frozen=True)
class LifshitzResult:
    N_star: int
    log_value: float
    log_C_prime: float
    in_regime: bool

    @property
    def value(self):
        return _exp(self.log_value)


def _lifshitz_log(N, log_gamma, log_delta, logCp, p):
    return -log_gamma + logCp + 2 * p * lgamma(N + 1) + N * (logCp + log_gamma - log_delta)


def lifshitz_continuous_minimizer(log_y, p):
    """Root in N >= 0 of 2p psi(N + 1) = log y, y = delta / (C' gamma), or 0 if there is none."""
    target = log_y / (2 * p)
    if digamma(1.0) >= target:
        return 0.0
    hi = 2.0
    while digamma(hi + 1) < target:
        hi *= 2
    return brentq(lambda t: digamma(t + 1) - target, 0.0, hi)


def lifshitz_bound_log(log_gamma, log_delta, log_C_prime, p, log_C=None) -> LifshitzResult:
    """Log-domain form of ``lifshitz_bound`` (log_C: regime constant, default log C')."""
    log_C = log_C_prime if log_C is None else log_C
    t = lifshitz_continuous_minimizer(log_delta - log_gamma - log_C_prime, p)
    cands = {max(0, math.floor(t)), math.ceil(t), 0}
    vals = {N: _lifshitz_log(N, log_gamma, log_delta, log_C_prime, p) for N in cands}
    N_star = min(vals, key=lambda N: (vals[N], N))
    return LifshitzResult(int(N_star), vals[N_star], log_C_prime, bool(log_delta - log_gamma >= log_C))


def lifshitz_bound(gamma, delta, K=None, M=None, p=None, C_prime=None, chain: WeakChain | None = None,
                   strict=False) -> LifshitzResult:
    """min over N in N of gamma^-1 C' (N!)^(2p) (C' gamma / delta)^N.

    C' is materialized as the theta = 0 weak-disorder constant C of ``chain``
    (pass C_prime to override); the regime condition is delta >= gamma C.  The
    objective is convex in N, so the integer minimizer is a neighbour of the
    continuous one.  K and M are carried by the chain and accepted for symmetry.
    """
    if chain is not None:
        p = chain.p if p is None else p
        logCp = chain.log_C if C_prime is None else math.log(C_prime)
        logC = chain.log_C
    else:
        if C_prime is None or p is None:
            raise ValueError("give either a WeakChain or C_prime and p")
        logCp = logC = math.log(C_prime)
    res = lifshitz_bound_log(math.log(gamma), math.log(delta), logCp, p, logC)
    if strict and not res.in_regime:
        raise ValueError("delta < gamma C: outside the weak-disorder regime")
    return res


def lifshitz_scan(gamma, delta, C_prime, p, N_max):
    """Objective values (logs) for N = 0..N_max (integer scan oracle)."""
    lg, ld, lc = math.log(gamma), math.log(delta), math.log(C_prime)
    return np.array([_lifshitz_log(N, lg, ld, lc, p) for N in range(N_max + 1)])


def lifshitz_exponent_fit(log_C_prime, p, decades=4.0, n_points=9, gamma=1.0):
    """Slope of log(-log bound) against log(delta/gamma) over ``decades`` decades.

    The window starts where the optimized part of the exponent dominates the
    prefactor: (delta / (gamma C')) = (100 max(1, log C') / (2p))^(2p).
    """
    lg = math.log(gamma)
    y0 = 2 * p * math.log(100 * max(1.0, log_C_prime) / (2 * p))
    log_y = y0 + np.linspace(0, decades * math.log(10), n_points)
    log_x = log_y + log_C_prime
    mlb = [-lifshitz_bound_log(lg, lx + lg, log_C_prime, p).log_value for lx in log_x]
    return float(np.polyfit(log_x, np.log(mlb), 1)[0]), log_x, np.array(mlb)


# ---------------------------------------------------------------- tree stripping


def tree_sum(edges, n_vertices, h, x, y):
    """sum over distinct sites x_i (not x, y) of prod_{edges} h[pos(a), pos(b)].

    Vertex 0 sits at x; if x != y vertex 1 sits at y; the others are summed.
    """
    same = x == y
    fixed = [x] if same else [x, y]
    free = [s for s in range(h.shape[0]) if s not in fixed]
    N = n_vertices - len(fixed)
    if N < 0:
        raise ValueError("tree too small for the fixed vertices")
    if N == 0:
        return float(np.prod([h[fixed[a], fixed[b]] for a, b in edges]))
    P = np.array(list(itertools.permutations(free, N)), dtype=int)
    pos = np.concatenate([np.tile(fixed, (len(P), 1)), P], axis=1)
    val = np.ones(len(P))
    for a, b in edges:
        val *= h[pos[:, a], pos[:, b]]
    return float(val.sum())


def tree_stripping_check(edges, n_vertices, H, positions, x, y, theta, rate, q, colours=1, D=1, omega=None):
    """(left side, right side) of the tree-stripping inequality for one tree and box."""
    h = block_abs(np.asarray(H), colours)
    lhs = tree_sum(edges, n_vertices, h, x, y)
    same = x == y
    N = n_vertices - (1 if same else 2)
    prof = lattice_norms(H, rate, theta, positions, colours)
    deg = np.zeros(n_vertices, dtype=int)
    for a, b in edges:
        deg[a] += 1
        deg[b] += 1
    if omega is None:
        # Omega must hold up to the largest coordination number plus one
        om = omega_infimum(D) if D == 1 else omega_constant(D, int(max(deg.max() + 1, 2)))[0]
    else:
        om = omega
    Cs = stripping_constant(q, theta, rate, D, om)
    pos = np.asarray(positions, dtype=float)
    pos = pos[:, None] if pos.ndim == 1 else pos
    dist = float(np.linalg.norm(pos[x] - pos[y]))
    log_rhs = (-theta * rate * dist + N * math.log(prof.inf1) + (0 if same else math.log(prof.infinf))
               + sum((d - 1) * Cs.log_value - q * lgamma(d + 1) for d in deg))
    return lhs, math.exp(log_rhs)


# ---------------------------------------------------------------- report


def _entry(log_value, formula, inputs, log_tail=None):
    return {"value": _exp(log_value) if math.isfinite(log_value) else math.inf, "log_value": log_value,
            "formula_id": formula, "inputs": inputs,
            "tail_bound": None if log_tail is None else _exp(log_tail)}


def bound_report(*parts, extra=None):
    """Merge chain reports (and extra entries) into one BoundReport dictionary."""
    out = {}
    for part in parts:
        out.update(part.report() if hasattr(part, "report") else part)
    if extra:
        out.update(extra)
    return out


def dump_report(report, path=None):
    """JSON text of a BoundReport (infinite values become the string "inf")."""

    def clean(v):
        if isinstance(v, dict):
            return {k: clean(w) for k, w in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(w) for w in v]
        if isinstance(v, complex):
            return [v.real, v.imag]
        if isinstance(v, float) and not math.isfinite(v):
            return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
        if isinstance(v, np.generic):
            return clean(v.item())
        return v

    text = json.dumps(clean(report), indent=2, sort_keys=True)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text


def record_dict(rec: ConstantRecord):
    d = asdict(rec)
    d["violations"] = len(rec.violations)
    return d
