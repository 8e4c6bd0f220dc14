"""Superfunctions, superintegration, super Fourier transform and SUSY checks.

A superfunction over bosonic coordinates ``pairs`` (a list of (site, colour))
is an evaluator taking a complex array ``phi`` of shape (B, n), with
phi[:, j] = phi^+_j = phi_{j,1} + i phi_{j,2}, and returning a
GrassmannElement whose coefficients are arrays of shape (B,) (or scalars).

The bosonic measure is d phi = pi^-1 d phi_1 d phi_2 per coordinate.  In polar
form with u = |phi|^2 this is du d theta / (2 pi), which is what the
quadrature rules below integrate.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from math import factorial
from typing import Callable

import numpy as np
from scipy.special import j0

from ._util import gl_panels, pmap, rng_stream
from .grassmann import (
    ContextError, GrassmannContext, GrassmannElement, berezin, derivative, embed, gen,
    grassmann_fourier, mul, norm,
)


def _site(s):
    return (int(s),) if isinstance(s, (int, np.integer)) else tuple(int(v) for v in s)


def _norm_pairs(pairs):
    return [(_site(s), int(c)) for s, c in pairs]


@dataclass(frozen=True)
class BosonicPoint:
    """Bosonic coordinates per (site, colour); phi^+ = phi1 + i phi2."""

    pairs: tuple
    phi: np.ndarray  # complex, shape (n,) or (B, n)

    @classmethod
    def from_real(cls, pairs, phi1, phi2):
        return cls(tuple(_norm_pairs(pairs)), np.asarray(phi1) + 1j * np.asarray(phi2))

    @property
    def plus(self):
        return self.phi

    @property
    def minus(self):
        return np.conj(self.phi)

    @property
    def u(self):
        return np.abs(self.phi) ** 2


@dataclass
class SuperFunction:
    """Evaluator phi -> GrassmannElement with a declared envelope.

    envelope(u) takes u = |phi|^2 of shape (B, n) and must dominate the
    Grassmann norm of the evaluator output.  ``radial`` declares that every
    coefficient depends on phi only through the u_j, which lets integrators
    drop the angular direction.  ``factors`` records a factorization over
    disjoint coordinates into even factors.
    """

    pairs: list
    ctx: GrassmannContext
    evaluator: Callable[[np.ndarray], GrassmannElement]
    envelope: Callable[[np.ndarray], np.ndarray] | None = None
    radial: bool = False
    smooth: bool = True
    family: str = "psi"
    factors: tuple = ()
    integrable: bool = True
    l1_source: float | None = None  # L1 norm of the pre-image, set by super_fourier

    def __post_init__(self):
        self.pairs = _norm_pairs(self.pairs)

    @property
    def dim(self):
        return len(self.pairs)

    def __call__(self, phi) -> GrassmannElement:
        phi = np.asarray(phi, dtype=complex)
        single = phi.ndim == 1
        out = self.evaluator(np.atleast_2d(phi))
        if single:
            out = out.map_coeffs(lambda c: c[0] if np.ndim(c) else c)
        return out


def scalar_superfunction(pairs, fn, envelope=None, radial=False, ctx=None):
    """Pure bosonic superfunction; by default its Grassmann context is empty."""
    pairs = _norm_pairs(pairs)
    ctx = ctx or GrassmannContext([])
    return SuperFunction(pairs, ctx, lambda phi: GrassmannElement.scalar(ctx, fn(phi)), envelope, radial)


def multiply(f: SuperFunction, g: SuperFunction) -> SuperFunction:
    """Pointwise product on a common set of bosonic coordinates."""
    if f.pairs != g.pairs:
        raise ValueError("multiply needs identical bosonic coordinates")
    ctx = f.ctx if f.ctx == g.ctx else f.ctx.union(g.ctx)
    env = None
    if f.envelope is not None and g.envelope is not None:
        env = lambda u: f.envelope(u) * g.envelope(u)
    return SuperFunction(f.pairs, ctx, lambda phi: mul(embed(f.evaluator(phi), ctx), embed(g.evaluator(phi), ctx)),
                         env, f.radial and g.radial, f.smooth and g.smooth, f.family)


def times_element(f: SuperFunction, a: GrassmannElement) -> SuperFunction:
    """Multiply a superfunction on the right by a constant Grassmann element."""
    ctx = f.ctx if f.ctx == a.ctx else f.ctx.union(a.ctx)
    scale = norm(a)
    env = None if f.envelope is None else (lambda u: scale * f.envelope(u))
    return replace(f, ctx=ctx, evaluator=lambda phi: mul(embed(f.evaluator(phi), ctx), embed(a, ctx)),
                   envelope=env, factors=())


def product(*factors: SuperFunction) -> SuperFunction:
    """Product of superfunctions on disjoint coordinates (factors in the given order)."""
    pairs, gens = [], []
    for fac in factors:
        pairs += fac.pairs
        gens += list(fac.ctx.generators)
    if len(set(pairs)) != len(pairs):
        raise ValueError("factors must live on disjoint coordinates")
    ctx = GrassmannContext(gens)
    slices, k = [], 0
    for fac in factors:
        slices.append(slice(k, k + fac.dim))
        k += fac.dim

    def ev(phi):
        out = GrassmannElement.scalar(ctx, 1.0)
        for fac, sl in zip(factors, slices):
            out = mul(out, embed(fac.evaluator(phi[:, sl]), ctx))
        return out

    env = None
    if all(fac.envelope is not None for fac in factors):
        env = lambda u: np.prod([fac.envelope(u[:, sl]) for fac, sl in zip(factors, slices)], axis=0)
    return SuperFunction(pairs, ctx, ev, env, all(fac.radial for fac in factors),
                         all(fac.smooth for fac in factors), factors[0].family, tuple(factors))


def reflect(f: SuperFunction) -> SuperFunction:
    """xi -> -xi: phi -> -phi and every generator -> -generator."""

    def ev(phi):
        out = f.evaluator(-phi)
        return GrassmannElement(out.ctx, {m: (-c if bin(m).count("1") % 2 else c) for m, c in out.coeffs.items()})

    facs = tuple(reflect(fac) for fac in f.factors)
    return replace(f, evaluator=ev, factors=facs)


# ---------------------------------------------------------------- integrators


@dataclass(frozen=True)
class Integrator:
    """Quadrature / Monte-Carlo policy for the bosonic part.

    kind: "gauss" (tensor-product composite Gauss-Legendre in u = |phi|^2 times
    a trapezoid rule in the angle), "mc" (uniform samples on the truncated
    domain) or "importance" (u sampled from the declared envelope).
    """

    kind: str = "gauss"
    n_nodes: int = 24
    n_panels: int = 4
    n_theta: int = 16
    n_samples: int = 100_000
    seed: int = 0
    tail_tol: float = 1e-10
    u_max: float | None = None
    max_points: int = 1 << 23
    chunk: int = 1 << 15
    threads: int = 1
    error_estimate: bool = True

    def __post_init__(self):
        if self.kind not in ("gauss", "mc", "importance"):
            raise ValueError(f"unknown integrator kind {self.kind!r}")


@dataclass
class IntegralResult:
    value: GrassmannElement
    error: float  # absolute error estimate (quadrature difference or MC standard error, max over coefficients)
    l1: float  # estimate of the L1 norm of the integrand over the integrated coordinates
    stderr: GrassmannElement | None = None
    u_max: float = float("nan")
    n_points: int = 0
    notes: list = field(default_factory=list)

    @property
    def scalar(self):
        return complex(self.value.scalar_part())


def _profile(f: SuperFunction, n: int):
    """1D radial profile h(U): envelope at total weight U, max over two directions."""
    def h(U):
        U = np.atleast_1d(U).astype(float)
        a = np.zeros((U.size, f.dim))
        a[:, 0] = U
        b = np.repeat((U / n)[:, None], f.dim, axis=1)
        return np.maximum(f.envelope(a), f.envelope(b))
    return h


def truncation_radius(f: SuperFunction, tail_tol: float = 1e-10, n: int | None = None):
    """Smallest u_max with envelope tail mass beyond the simplex sum(u) = u_max below tail_tol.

    The tail is measured with the radial profile weighted by the simplex volume
    U^(n-1)/(n-1)!.  Raises when the envelope is missing or not integrable.
    """
    if f.envelope is None:
        raise ValueError("superfunction has no declared envelope; pass Integrator(u_max=...)")
    if not f.integrable:
        raise ValueError("declared envelope is not integrable; refusing to integrate")
    n = n or f.dim
    grid = np.concatenate([[0.0], np.geomspace(1e-6, 1e7, 6000)])
    dens = _profile(f, f.dim)(grid) * grid ** (n - 1) / factorial(n - 1)
    if not np.all(np.isfinite(dens)):
        raise ValueError("envelope is not finite on [0, 1e7]")
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
    mass = cum[-1]
    if mass <= 0 or not np.isfinite(mass):
        raise ValueError("envelope has no finite positive mass")
    if dens[-1] * grid[-1] > tail_tol * mass:
        raise ValueError("declared envelope is not integrable (no decay by u = 1e7)")
    tail = mass - cum
    i = int(np.argmax(tail <= tail_tol * mass))
    return float(grid[max(i, 1)])


def _axis_rule(integ: Integrator, u_max: float, radial: bool, coarse=False):
    nn = max(2, integ.n_nodes // 2) if coarse else integ.n_nodes
    u, wu = gl_panels(0.0, u_max, integ.n_panels, nn)
    nt = 1 if radial else integ.n_theta
    th = 2 * np.pi * (np.arange(nt) + 0.5) / nt
    phi = (np.sqrt(u)[:, None] * np.exp(1j * th)[None, :]).ravel()
    w = (wu[:, None] * np.full(nt, 1.0 / nt)[None, :]).ravel()
    return phi, w


def _coord_index(f: SuperFunction, pairs):
    if pairs is None:
        return list(range(f.dim))
    idx = []
    for p in _norm_pairs(pairs):
        if p not in f.pairs:
            raise ContextError(f"bosonic coordinate {p} not in the superfunction")
        idx.append(f.pairs.index(p))
    return idx


class _Acc:
    """Associative accumulator of weighted coefficient sums."""

    def __init__(self):
        self.s, self.s2, self.l1, self.l1sq, self.n = {}, {}, 0.0, 0.0, 0

    def add(self, elem: GrassmannElement, raw_norm, w):
        for m, c in elem.coeffs.items():
            v = w * np.broadcast_to(c, w.shape)
            self.s[m] = self.s.get(m, 0.0) + v.sum()
            self.s2[m] = self.s2.get(m, 0.0) + (np.abs(v) ** 2).sum()
        ln = w.real * np.broadcast_to(raw_norm, w.shape)
        self.l1 += ln.sum()
        self.l1sq += (ln ** 2).sum()
        self.n += w.size

    def merge(self, other):
        for m in other.s:
            self.s[m] = self.s.get(m, 0.0) + other.s[m]
            self.s2[m] = self.s2.get(m, 0.0) + other.s2[m]
        self.l1 += other.l1
        self.l1sq += other.l1sq
        self.n += other.n
        return self


def _eval_block(f, idx, at, phis, w, berezin_pairs, out_ctx_holder):
    B = phis.shape[0]
    full = np.broadcast_to(at, (B, f.dim)).copy()
    full[:, idx] = phis
    raw = f.evaluator(full)
    integ = berezin(raw, berezin_pairs, family=f.family)
    out_ctx_holder.append(integ.ctx)
    acc = _Acc()
    acc.add(integ, norm(raw), w)
    return acc


def super_integrate(f: SuperFunction, integrator: Integrator | None = None, pairs=None, at=None,
                    fermionic: bool = True) -> IntegralResult:
    """int d Phi over the given (site, colour) pairs (all by default).

    Bosonic coordinates that are not integrated are held at ``at`` (complex
    array of length n, zero by default); only the integrated pairs are
    Berezin-integrated.  The result lives in the residual Grassmann context.
    With ``fermionic=False`` only the bosonic integral is taken, coefficient
    by coefficient.
    """
    integ = integrator or Integrator()
    idx = _coord_index(f, pairs)
    present = set(f.ctx.pairs(f.family))
    # coordinates without fermionic partners in the context are purely bosonic
    bpairs = [f.pairs[i] for i in idx if f.pairs[i] in present] if fermionic else []
    at = np.zeros(f.dim, dtype=complex) if at is None else np.asarray(at, dtype=complex)
    k = len(idx)
    notes = []
    if integ.u_max is not None:
        u_max = float(integ.u_max)
        notes.append(f"u_max fixed by caller: {u_max:g}")
    else:
        u_max = truncation_radius(f, integ.tail_tol, n=k)
        notes.append(f"u_max={u_max:.6g} from envelope tail {integ.tail_tol:g}")
    radial = f.radial and not np.any(at)

    if integ.kind == "gauss":
        res = _gauss(f, integ, idx, at, bpairs, u_max, radial, coarse=False)
        err = 0.0
        if integ.error_estimate:
            res2 = _gauss(f, integ, idx, at, bpairs, u_max, radial, coarse=True)
            err = max((abs(res.value.coeffs.get(m, 0) - res2.value.coeffs.get(m, 0))
                       for m in set(res.value.coeffs) | set(res2.value.coeffs)), default=0.0)
        res.error = float(err + integ.tail_tol * max(res.l1, 1.0))
        res.notes = notes + ["gauss: error = |Q(n) - Q(n/2)| + tail_tol * L1"]
        return res
    return _monte_carlo(f, integ, idx, at, bpairs, u_max, radial, notes)


def _gauss(f, integ, idx, at, bpairs, u_max, radial, coarse):
    phi1, w1 = _axis_rule(integ, u_max, radial, coarse)
    k = len(idx)
    m1 = phi1.size
    total = m1 ** k
    if total > integ.max_points:
        raise ValueError(f"tensor quadrature needs {total} points in dimension {2 * k} "
                         f"(cap {integ.max_points}); use Integrator(kind='importance') or 'mc'")
    starts = list(range(0, total, integ.chunk))
    ctxs = []

    def block(s):
        ids = np.arange(s, min(s + integ.chunk, total))
        digits = np.unravel_index(ids, (m1,) * k) if k else ()
        phis = np.stack([phi1[d] for d in digits], axis=1) if k else np.zeros((ids.size, 0), complex)
        w = np.prod([w1[d] for d in digits], axis=0) if k else np.ones(ids.size)
        return _eval_block(f, idx, at, phis, w, bpairs, ctxs)

    accs = pmap(block, starts, integ.threads)
    acc = accs[0]
    for a in accs[1:]:
        acc.merge(a)
    ctx = ctxs[0]
    return IntegralResult(GrassmannElement(ctx, {m: complex(v) for m, v in acc.s.items()}), 0.0,
                          float(acc.l1), None, u_max, total)


def _importance_sampler(f, u_max):
    h = _profile(f, f.dim)
    grid = np.concatenate([[0.0], np.geomspace(1e-8, u_max, 4000)])
    dens = h(grid)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
    Z = cdf[-1]
    cdf /= Z

    def sample(rng, size):
        v = rng.random(size)
        u = np.interp(v, cdf, grid)
        return u, Z / np.interp(u, grid, dens)

    return sample


def _monte_carlo(f, integ, idx, at, bpairs, u_max, radial, notes):
    k = len(idx)
    sampler = _importance_sampler(f, u_max) if integ.kind == "importance" else None
    n = integ.n_samples
    starts = list(range(0, n, integ.chunk))
    ctxs = []

    def block(ci):
        s = starts[ci]
        b = min(integ.chunk, n - s)
        rng = rng_stream(integ.seed, ci)
        if sampler is None:
            u = rng.random((b, k)) * u_max
            w = np.full(b, u_max ** k)
        else:
            u, wu = sampler(rng, (b, k))
            w = np.prod(wu, axis=1)
        th = 2 * np.pi * rng.random((b, k))
        phis = np.sqrt(u) * np.exp(1j * th)
        return _eval_block(f, idx, at, phis, w.astype(float), bpairs, ctxs)

    accs = pmap(block, range(len(starts)), integ.threads)
    acc = accs[0]
    for a in accs[1:]:
        acc.merge(a)
    ctx = ctxs[0]
    mean = {m: complex(v / n) for m, v in acc.s.items()}
    se = {}
    for m, v in acc.s.items():
        var = acc.s2[m] / n - abs(v / n) ** 2
        se[m] = float(np.sqrt(max(var, 0.0) / n))
    err = max(se.values(), default=0.0)
    return IntegralResult(GrassmannElement(ctx, mean), err, float(acc.l1 / n), GrassmannElement(ctx, se),
                          u_max, n, notes + [f"{integ.kind} Monte Carlo, {n} samples, seed {integ.seed}"])


# ---------------------------------------------------------------- super Fourier transform


def _eta_ctx(ctx: GrassmannContext):
    if ctx.families() not in ([], ["psi"]):
        raise ContextError("super Fourier transform expects a psi-only superfunction")
    return GrassmannContext(gen("eta", g.site, g.colour, g.charge) for g in ctx.generators)


def super_fourier(f: SuperFunction, integrator: Integrator | None = None, envelope=None) -> SuperFunction:
    """fhat(xi) = int dPhi exp(-i sum(xi^+ Phi^- + Phi^+ xi^-)) f(Phi), xi = (kappa, eta).

    The bosonic part of each Grassmann coefficient is transformed by
    quadrature (a Hankel transform with J0 when f is radial), and the
    Grassmann part by the exact Grassmann Fourier transform of each monomial.
    Factorized superfunctions with even factors are transformed factorwise.
    ``envelope`` optionally declares a dominating envelope of fhat.
    """
    integ = integrator or Integrator()
    if f.factors:
        probe = np.zeros((1, f.dim), complex) + 0.3
        k = 0
        ok = True
        for fac in f.factors:
            ok &= fac.evaluator(probe[:, k:k + fac.dim]).is_even()
            k += fac.dim
        if ok:
            hats = [super_fourier(fac, integ) for fac in f.factors]
            out = product(*hats)
            return replace(out, envelope=envelope)
    eta_ctx = _eta_ctx(f.ctx)
    u_max = integ.u_max if integ.u_max is not None else truncation_radius(f, integ.tail_tol)
    phi1, w1 = _axis_rule(integ, u_max, f.radial)
    n = f.dim
    total = phi1.size ** n
    if total > min(integ.max_points, 1 << 18):
        raise ValueError(f"super Fourier transform needs {total} nodes; reduce dimension or node counts")
    digits = np.unravel_index(np.arange(total), (phi1.size,) * n)
    nodes = np.stack([phi1[d] for d in digits], axis=1)
    w = np.prod([w1[d] for d in digits], axis=0)
    raw = f.evaluator(nodes)
    table = {m: w * np.broadcast_to(c, w.shape) for m, c in raw.coeffs.items()}
    # Grassmann Fourier images of the unit monomials
    gf = {m: embed(grassmann_fourier(GrassmannElement(f.ctx, {m: 1.0})), eta_ctx) for m in table}
    l1 = float(np.sum(w * np.broadcast_to(norm(raw), w.shape)))
    radial = f.radial

    def ev(kappa):
        kappa = np.atleast_2d(kappa)
        P = kappa.shape[0]
        out = GrassmannElement.zero(eta_ctx)
        acc = {m: np.zeros(P, complex) for m in table}
        step = max(1, (1 << 22) // max(total, 1))
        for s in range(0, P, step):
            kk = kappa[s:s + step]
            if radial:
                K = np.ones((kk.shape[0], total))
                for j in range(n):
                    K = K * j0(2 * np.abs(kk[:, j])[:, None] * np.abs(nodes[:, j])[None, :])
            else:
                ph = np.zeros((kk.shape[0], total))
                for j in range(n):
                    ph += 2 * (kk[:, j, None] * np.conj(nodes[None, :, j])).real
                K = np.exp(-1j * ph)
            for m, col in table.items():
                acc[m][s:s + step] = K @ col
        for m in table:
            out = out + gf[m].scale(acc[m])
        return out

    return SuperFunction(f.pairs, eta_ctx, ev, envelope, radial, True, "eta", l1_source=l1)


def plancherel(f: SuperFunction, g: SuperFunction, integrator: Integrator | None = None,
               dual_integrator: Integrator | None = None, fhat_envelope=None, ghat_envelope=None):
    """Both sides of int dPhi f g = int dxi fhat(xi) ghat(-xi)."""
    integ = integrator or Integrator()
    lhs = super_integrate(multiply(f, g), integ)
    fh = super_fourier(f, integ, fhat_envelope)
    gh = super_fourier(g, integ, ghat_envelope)
    rhs = super_integrate(multiply(fh, reflect(gh)), dual_integrator or integ)
    return lhs, rhs


# ---------------------------------------------------------------- supersymmetry


def _wirtinger(f: SuperFunction, phi, j, h):
    """(d/dphi^+_j, d/dphi^-_j) of f by central differences in phi_{j,1}, phi_{j,2}."""
    e = np.zeros(f.dim, complex)
    e[j] = 1.0
    d1 = (f.evaluator(phi + h * e) - f.evaluator(phi - h * e)).scale(1 / (2 * h))
    d2 = (f.evaluator(phi + 1j * h * e) - f.evaluator(phi - 1j * h * e)).scale(1 / (2 * h))
    return (d1 - d2.scale(1j)).scale(0.5), (d1 + d2.scale(1j)).scale(0.5)


def q_operator(f: SuperFunction, phi, h: float = 1e-4) -> GrassmannElement:
    """Q f = sum_{j, eps} [psi^eps_j d/dphi^eps_j - eps phi^eps_j d/dpsi^eps_j] f."""
    phi = np.atleast_2d(np.asarray(phi, dtype=complex))
    F = f.evaluator(phi)
    ctx = F.ctx
    out = GrassmannElement.zero(ctx)
    for j, (s, c) in enumerate(f.pairs):
        dp, dm = _wirtinger(f, phi, j, h)
        gp = GrassmannElement.generator(ctx, gen(f.family, s, c, 1))
        gm = GrassmannElement.generator(ctx, gen(f.family, s, c, -1))
        out = out + mul(gp, dp) + mul(gm, dm)
        out = out - derivative(F, gen(f.family, s, c, 1)).scale(phi[:, j])
        out = out + derivative(F, gen(f.family, s, c, -1)).scale(np.conj(phi[:, j]))
    return out


def susy_residual(f: SuperFunction, point, step: float = 1e-4) -> float:
    """Grassmann norm of Q f at the point (max over a batch of points)."""
    if not f.smooth:
        raise ValueError("susy_residual needs a smooth superfunction")
    return float(np.max(norm(q_operator(f, point, step))))


def q_component_residual(f: SuperFunction, point, j: int, eps: int, step: float = 1e-4) -> float:
    """Norm of psi^eps d/dphi^eps f + eps phi^-eps d/dpsi^-eps f for one coordinate."""
    phi = np.atleast_2d(np.asarray(point, dtype=complex))
    F = f.evaluator(phi)
    s, c = f.pairs[j]
    dp, dm = _wirtinger(f, phi, j, step)
    g = GrassmannElement.generator(F.ctx, gen(f.family, s, c, eps))
    lhs = mul(g, dp if eps > 0 else dm)
    phi_m = np.conj(phi[:, j]) if eps > 0 else phi[:, j]
    rhs = derivative(F, gen(f.family, s, c, -eps)).scale(eps * phi_m)
    return float(np.max(norm(lhs + rhs)))


@dataclass
class LocalizationResult:
    integral: complex
    value_at_zero: complex
    discrepancy: float
    error: float

    @property
    def relative(self):
        return self.discrepancy / max(abs(self.value_at_zero), 1e-300)


def localization_check(f: SuperFunction, integrator: Integrator | None = None) -> LocalizationResult:
    """Both sides of int dPhi f = f(0) for a supersymmetric f."""
    res = super_integrate(f, integrator)
    f0 = complex(np.ravel(f.evaluator(np.zeros((1, f.dim), complex)).scalar_part())[0])
    return LocalizationResult(res.scalar, f0, abs(res.scalar - f0), res.error)


def phase_rotate(elem: GrassmannElement, theta: dict, family="psi") -> GrassmannElement:
    """Apply psi^eps_{j} -> exp(i eps theta_j) psi^eps_j coefficientwise."""
    out = {}
    gens = elem.ctx.generators
    for m, c in elem.coeffs.items():
        ph = 0.0
        i = 0
        mm = m
        while mm:
            if mm & 1:
                g = gens[i]
                if g.family == family:
                    ph += g.charge * theta.get((g.site, g.colour), 0.0)
            mm >>= 1
            i += 1
        out[m] = c * np.exp(1j * ph)
    return GrassmannElement(elem.ctx, out)
