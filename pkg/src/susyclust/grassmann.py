"""Finite Grassmann algebra with bitmask monomials.

Generators carry a label (family, site, colour, charge) and are totally
ordered lexicographically, with family psi < eta and charge + < -.
A monomial is a bitmask over the ordered generator list of a context and is
always stored with its generators in ascending order.  Coefficients are
complex scalars or complex numpy arrays of a common shape, which lets a
single element carry the Grassmann part of a superfunction evaluated at a
whole batch of bosonic points.
"""
from __future__ import annotations

from functools import lru_cache
from itertools import combinations
from math import factorial
from typing import Iterable, NamedTuple, Sequence

import numpy as np

FAMILIES = ("psi", "eta")
MAX_GENERATORS = 64


class GeneratorIndex(NamedTuple):
    family: str
    site: tuple
    colour: int
    charge: int  # +1 or -1

    def key(self):
        return (FAMILIES.index(self.family), tuple(self.site), self.colour, 0 if self.charge > 0 else 1)

    def __repr__(self):
        c = "+" if self.charge > 0 else "-"
        return f"{self.family}{c}{self.site},{self.colour}"


def gen(family, site, colour=0, charge=+1) -> GeneratorIndex:
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    if charge not in (1, -1):
        raise ValueError("charge must be +1 or -1")
    if isinstance(site, (int, np.integer)):
        site = (int(site),)
    return GeneratorIndex(family, tuple(int(s) for s in site), int(colour), int(charge))


class ContextError(ValueError):
    pass


class GrassmannContext:
    """Immutable ordered list of generators (at most 64)."""

    __slots__ = ("generators", "_index", "_hash")

    def __init__(self, generators: Iterable[GeneratorIndex]):
        gens = sorted(set(generators), key=GeneratorIndex.key)
        if len(gens) > MAX_GENERATORS:
            raise ContextError(f"{len(gens)} generators exceed the cap of {MAX_GENERATORS}")
        self.generators = tuple(gens)
        self._index = {g: i for i, g in enumerate(self.generators)}
        self._hash = hash(self.generators)

    @classmethod
    def build(cls, sites, colours=1, families=("psi",)):
        """Context with both charges for every (family, site, colour)."""
        cols = range(colours) if isinstance(colours, int) else colours
        return cls(gen(f, s, c, e) for f in families for s in sites for c in cols for e in (1, -1))

    def __len__(self):
        return len(self.generators)

    def __eq__(self, other):
        return isinstance(other, GrassmannContext) and self.generators == other.generators

    def __hash__(self):
        return self._hash

    def __contains__(self, g):
        return g in self._index

    def __repr__(self):
        return f"GrassmannContext({len(self)} generators)"

    def bit(self, g: GeneratorIndex) -> int:
        try:
            return self._index[g]
        except KeyError:
            raise ContextError(f"generator {g!r} not in context") from None

    def pairs(self, family=None):
        """Sorted (site, colour) pairs present in the context."""
        out = {(g.site, g.colour) for g in self.generators if family is None or g.family == family}
        return sorted(out)

    def families(self):
        return sorted({g.family for g in self.generators}, key=FAMILIES.index)

    def union(self, other: "GrassmannContext") -> "GrassmannContext":
        return GrassmannContext(self.generators + other.generators)

    def without(self, gens: Iterable[GeneratorIndex]) -> "GrassmannContext":
        drop = set(gens)
        return GrassmannContext(g for g in self.generators if g not in drop)


# ---------------------------------------------------------------- signs


def _popcount(m: int) -> int:
    return bin(m).count("1")


@lru_cache(maxsize=1 << 16)
def merge_sign(a: int, b: int) -> int:
    """Sign of psi^a psi^b -> psi^(a|b) for disjoint ascending monomials.

    Counts the inversions created when the (ordered) factors of b are moved
    past the larger factors of a.
    """
    inv = 0
    m = b
    while m:
        low = m & -m
        j = low.bit_length() - 1
        inv += _popcount(a >> (j + 1))
        m ^= low
    return -1 if inv & 1 else 1


def _bits(m: int):
    out = []
    while m:
        low = m & -m
        out.append(low.bit_length() - 1)
        m ^= low
    return out


def _is_zero(c) -> bool:
    if isinstance(c, np.ndarray):
        return not np.any(c)
    return c == 0


# ---------------------------------------------------------------- elements


class GrassmannElement:
    """Sparse multivector sum_X f_X psi^X over a fixed context.

    Instances are treated as immutable; every operation returns a new one.
    """

    __slots__ = ("ctx", "coeffs")

    def __init__(self, ctx: GrassmannContext, coeffs: dict | None = None):
        self.ctx = ctx
        self.coeffs = {m: c for m, c in (coeffs or {}).items() if not _is_zero(c)}

    # constructors
    @classmethod
    def scalar(cls, ctx, c=1.0):
        return cls(ctx, {0: c})

    @classmethod
    def zero(cls, ctx):
        return cls(ctx, {})

    @classmethod
    def generator(cls, ctx, g: GeneratorIndex, c=1.0):
        return cls(ctx, {1 << ctx.bit(g): c})

    @classmethod
    def product(cls, ctx, gens: Sequence[GeneratorIndex], c=1.0):
        """Ordered product gens[0] gens[1] ... brought to canonical order."""
        out = cls.scalar(ctx, c)
        for g in gens:
            out = out * cls.generator(ctx, g)
        return out

    # inspection
    def __repr__(self):
        if not self.coeffs:
            return "0"
        terms = []
        for m in sorted(self.coeffs):
            c = self.coeffs[m]
            name = "*".join(repr(self.ctx.generators[i]) for i in _bits(m)) or "1"
            cs = f"array{np.shape(c)}" if isinstance(c, np.ndarray) else f"{complex(c):.6g}"
            terms.append(f"{cs}*{name}")
        return " + ".join(terms)

    def scalar_part(self):
        return self.coeffs.get(0, 0.0)

    def coeff(self, gens: Sequence[GeneratorIndex]):
        """Coefficient of the canonical monomial made of the given generators."""
        m = 0
        for g in gens:
            m |= 1 << self.ctx.bit(g)
        return self.coeffs.get(m, 0.0)

    def degrees(self):
        return {_popcount(m) for m in self.coeffs}

    def is_even(self):
        return all(_popcount(m) % 2 == 0 for m in self.coeffs)

    def is_odd(self):
        return all(_popcount(m) % 2 == 1 for m in self.coeffs)

    def _check(self, other):
        if self.ctx != other.ctx:
            raise ContextError("elements live in different Grassmann contexts")

    # arithmetic
    def __add__(self, other):
        if not isinstance(other, GrassmannElement):
            other = GrassmannElement.scalar(self.ctx, other)
        self._check(other)
        out = dict(self.coeffs)
        for m, c in other.coeffs.items():
            out[m] = out[m] + c if m in out else c
        return GrassmannElement(self.ctx, out)

    __radd__ = __add__

    def __neg__(self):
        return GrassmannElement(self.ctx, {m: -c for m, c in self.coeffs.items()})

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, a):
        return GrassmannElement(self.ctx, {m: a * c for m, c in self.coeffs.items()})

    def __mul__(self, other):
        if not isinstance(other, GrassmannElement):
            return self.scale(other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.scale(other)

    def map_coeffs(self, fn):
        return GrassmannElement(self.ctx, {m: fn(c) for m, c in self.coeffs.items()})

    def conj_coeffs(self):
        return self.map_coeffs(np.conj)


def mul(f: GrassmannElement, g: GrassmannElement) -> GrassmannElement:
    f._check(g)
    out: dict = {}
    for ma, ca in f.coeffs.items():
        for mb, cb in g.coeffs.items():
            if ma & mb:
                continue
            m = ma | mb
            t = ca * cb if merge_sign(ma, mb) > 0 else -(ca * cb)
            out[m] = out[m] + t if m in out else t
    return GrassmannElement(f.ctx, out)


def norm(f: GrassmannElement):
    """l1 norm of the coefficients (elementwise over batched coefficients)."""
    if not f.coeffs:
        return 0.0
    return sum(np.abs(c) for c in f.coeffs.values())


# ---------------------------------------------------------------- functions of even elements


def _nilpotent_powers(n: GrassmannElement):
    """Yield n^0, n^1, ... until the power vanishes exactly."""
    p = GrassmannElement.scalar(n.ctx, 1.0)
    while p.coeffs:
        yield p
        p = mul(p, n)


def exp_even(f: GrassmannElement) -> GrassmannElement:
    if not f.is_even():
        raise ValueError("exp_even requires an even element")
    s0 = f.coeffs.get(0, 0.0)
    nil = GrassmannElement(f.ctx, {m: c for m, c in f.coeffs.items() if m != 0})
    acc = GrassmannElement.zero(f.ctx)
    for k, p in enumerate(_nilpotent_powers(nil)):
        acc = acc + p.scale(1.0 / factorial(k))
    return acc.scale(np.exp(s0))


def taylor_even(derivs: Sequence, f: GrassmannElement) -> GrassmannElement:
    """g(f) = sum_k g^(k)(f_0) (f - f_0)^k / k! for an even element f.

    ``derivs[k]`` holds g^(k) evaluated at the scalar part; missing orders are
    an error only if the corresponding power of the nilpotent part is nonzero.
    """
    if not f.is_even():
        raise ValueError("taylor_even requires an even element")
    nil = GrassmannElement(f.ctx, {m: c for m, c in f.coeffs.items() if m != 0})
    acc = GrassmannElement.zero(f.ctx)
    for k, p in enumerate(_nilpotent_powers(nil)):
        if k >= len(derivs):
            raise ValueError(f"derivative of order {k} needed but only {len(derivs)} supplied")
        acc = acc + p.scale(derivs[k] / factorial(k))
    return acc


# ---------------------------------------------------------------- integration and derivatives


def _drop_bit(m: int, i: int) -> int:
    low = m & ((1 << i) - 1)
    return low | ((m >> (i + 1)) << i)


def derivative(f: GrassmannElement, g: GeneratorIndex) -> GrassmannElement:
    """Left derivative d/dg; the result stays in the same context."""
    i = f.ctx.bit(g)
    bit = 1 << i
    out = {}
    for m, c in f.coeffs.items():
        if m & bit:
            sgn = -1 if _popcount(m & (bit - 1)) & 1 else 1
            out[m ^ bit] = c if sgn > 0 else -c
    return GrassmannElement(f.ctx, out)


def integrate_generators(f: GrassmannElement, gens: Sequence[GeneratorIndex]) -> GrassmannElement:
    """Apply int d gens[0] int d gens[1] ... (innermost = last) and drop them."""
    for g in reversed(list(gens)):
        f = derivative(f, g)
    drop = set(gens)
    keep = [g for g in f.ctx.generators if g not in drop]
    new_ctx = GrassmannContext(keep)
    idx = sorted((f.ctx.bit(g) for g in drop), reverse=True)
    out = {}
    for m, c in f.coeffs.items():
        for i in idx:
            m = _drop_bit(m, i)
        out[m] = c
    return GrassmannElement(new_ctx, out)


def berezin(f: GrassmannElement, pairs=None, family="psi") -> GrassmannElement:
    """int dpsi^+ int dpsi^- for each (site, colour) pair, in the given order.

    With ``pairs=None`` every pair of the family is integrated.  The result
    lives in the residual context.
    """
    if pairs is None:
        pairs = f.ctx.pairs(family)
    gens = []
    for site, colour in pairs:
        if isinstance(site, (int, np.integer)):
            site = (int(site),)
        for e in (1, -1):
            g = gen(family, site, colour, e)
            if g not in f.ctx:
                raise ContextError(f"generator {g!r} not in context")
            gens.append(g)
    return integrate_generators(f, gens)


# ---------------------------------------------------------------- contexts, embeddings


def embed(f: GrassmannElement, ctx: GrassmannContext) -> GrassmannElement:
    """Re-express f in a larger context (canonical order is preserved)."""
    if f.ctx == ctx:
        return f
    pos = [ctx.bit(g) for g in f.ctx.generators]
    out = {}
    for m, c in f.coeffs.items():
        nm = 0
        for i in _bits(m):
            nm |= 1 << pos[i]
        out[nm] = c
    return GrassmannElement(ctx, out)


def rename(f: GrassmannElement, mapping: dict, ctx: GrassmannContext) -> GrassmannElement:
    """Substitute generators g -> mapping[g] (identity otherwise), with sign."""
    out = GrassmannElement.zero(ctx)
    for m, c in f.coeffs.items():
        gens = [mapping.get(f.ctx.generators[i], f.ctx.generators[i]) for i in _bits(m)]
        out = out + GrassmannElement.product(ctx, gens, c)
    return out


def delta_element(ctx: GrassmannContext, pairs=None, family="psi") -> GrassmannElement:
    """prod over (site, colour) of psi^- psi^+."""
    if pairs is None:
        pairs = ctx.pairs(family)
    out = GrassmannElement.scalar(ctx, 1.0)
    for site, colour in pairs:
        if isinstance(site, (int, np.integer)):
            site = (int(site),)
        out = out * GrassmannElement.product(ctx, [gen(family, site, colour, -1), gen(family, site, colour, +1)])
    return out


def pair_bilinear(ctx, left_family, right_family, pairs, coef=1.0):
    """sum over pairs of left^+ right^- (a common building block)."""
    out = GrassmannElement.zero(ctx)
    for site, colour in pairs:
        out = out + GrassmannElement.product(
            ctx, [gen(left_family, site, colour, +1), gen(right_family, site, colour, -1)], coef)
    return out


def _fourier(f: GrassmannElement, src: str, dst: str, sign: int) -> GrassmannElement:
    fams = f.ctx.families()
    if fams and fams != [src]:
        raise ContextError(f"Fourier transform expects only {src}-family generators, got {fams}")
    pairs = f.ctx.pairs(src)
    gens = [g for g in f.ctx.generators] + [gen(dst, s, c, e) for s, c in pairs for e in (1, -1)]
    big = GrassmannContext(gens)
    # exponent sign*i * sum (dst^+ src^- + src^+ dst^-)
    expo = GrassmannElement.zero(big)
    for s, c in pairs:
        expo = expo + GrassmannElement.product(big, [gen(dst, s, c, 1), gen(src, s, c, -1)], sign * 1j)
        expo = expo + GrassmannElement.product(big, [gen(src, s, c, 1), gen(dst, s, c, -1)], sign * 1j)
    integrand = mul(exp_even(expo), embed(f, big))
    return berezin(integrand, pairs, family=src)


def grassmann_fourier(f: GrassmannElement) -> GrassmannElement:
    """fhat(eta) = int dpsi exp(-i sum(eta^+ psi^- + psi^+ eta^-)) f(psi)."""
    return _fourier(f, "psi", "eta", -1)


def inverse_grassmann_fourier(fhat: GrassmannElement) -> GrassmannElement:
    """f(psi) = int deta exp(+i sum(psi^+ eta^- + eta^+ psi^-)) fhat(eta)."""
    return _fourier(fhat, "eta", "psi", +1)


def random_element(ctx, rng, density=0.5, even=False, complex_=True, batch=None):
    """Random sparse element; handy for property tests and demos."""
    coeffs = {}
    n = len(ctx)
    for m in range(1 << n):
        if even and _popcount(m) % 2:
            continue
        if rng.random() < density:
            shape = () if batch is None else batch
            c = rng.normal(size=shape) + (1j * rng.normal(size=shape) if complex_ else 0)
            coeffs[m] = c if batch is not None else complex(c)
    return GrassmannElement(ctx, coeffs)


def monomials(ctx, degree=None):
    """All canonical monomial masks, optionally of fixed degree."""
    n = len(ctx)
    if degree is None:
        return list(range(1 << n))
    return [sum(1 << i for i in c) for c in combinations(range(n), degree)]
