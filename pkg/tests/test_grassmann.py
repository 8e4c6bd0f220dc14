import itertools
from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from susyclust.grassmann import (
    ContextError, GrassmannContext, GrassmannElement, berezin, delta_element, derivative,
    embed, exp_even, gen, grassmann_fourier, inverse_grassmann_fourier, merge_sign, monomials,
    mul, norm, random_element, rename,
)


def ctx1():
    return GrassmannContext.build([0], 1)


def P(ctx, *gens, c=1.0):
    return GrassmannElement.product(ctx, list(gens), c)


def close(f, g, tol=1e-12):
    return norm(f - g) <= tol * max(1.0, norm(f), norm(g))


# ------------------------------------------------------------ sign oracle


def permutation_sign_product(a, b):
    """Concatenate the two index lists and bubble-sort, counting swaps."""
    seq = list(a) + list(b)
    if len(set(seq)) < len(seq):
        return 0, None
    sign = 1
    for i in range(len(seq)):
        for j in range(len(seq) - 1 - i):
            if seq[j] > seq[j + 1]:
                seq[j], seq[j + 1] = seq[j + 1], seq[j]
                sign = -sign
    return sign, seq


@pytest.mark.parametrize("n", [1, 2, 3, 5, 7])
def test_sign_oracle_all_pairs(n):
    for a in range(1 << n):
        la = [i for i in range(n) if a >> i & 1]
        for b in range(1 << n):
            lb = [i for i in range(n) if b >> i & 1]
            s, _ = permutation_sign_product(la, lb)
            if s == 0:
                assert a & b
            else:
                assert merge_sign(a, b) == s


def test_sign_oracle_ten_generators_sampled_products():
    ctx = GrassmannContext([gen("psi", i, 0, 1) for i in range(5)] + [gen("psi", i, 0, -1) for i in range(5)])
    assert len(ctx) == 10
    one = {m: GrassmannElement(ctx, {m: 1.0}) for m in range(1 << 10)}
    rng = np.random.default_rng(0)
    for _ in range(3000):
        a, b = (int(v) for v in rng.integers(0, 1 << 10, size=2))
        la = [i for i in range(10) if a >> i & 1]
        lb = [i for i in range(10) if b >> i & 1]
        s, _ = permutation_sign_product(la, lb)
        got = mul(one[a], one[b])
        if s == 0:
            assert not got.coeffs
        else:
            assert got.coeffs == {a | b: s * 1.0}


# ------------------------------------------------------------ basic algebra


def test_nilpotent_and_square_zero():
    ctx = ctx1()
    p = gen("psi", 0, 0, 1)
    m = gen("psi", 0, 0, -1)
    assert not (P(ctx, p) * P(ctx, p)).coeffs
    n = P(ctx, p, m)
    assert close((1 + n) * (1 - n), GrassmannElement.scalar(ctx, 1.0))


def test_single_transposition_sign():
    ctx = ctx1()
    p, m = gen("psi", 0, 0, 1), gen("psi", 0, 0, -1)
    assert close(P(ctx, m) * P(ctx, p), -P(ctx, p, m))


def test_anticommutation_all_generators():
    ctx = GrassmannContext.build([0, 1], 2, families=("psi", "eta"))
    for a, b in itertools.product(ctx.generators, repeat=2):
        ab = P(ctx, a) * P(ctx, b)
        ba = P(ctx, b) * P(ctx, a)
        assert close(ab, -ba)
        if a == b:
            assert not ab.coeffs


def test_context_mismatch_raises():
    with pytest.raises(ContextError):
        mul(GrassmannElement.scalar(ctx1()), GrassmannElement.scalar(GrassmannContext.build([1], 1)))


def test_generator_cap():
    with pytest.raises(ContextError):
        GrassmannContext.build(range(17), 2, families=("psi", "eta"))


def test_zero_pruning():
    ctx = ctx1()
    f = P(ctx, gen("psi", 0, 0, 1)) - P(ctx, gen("psi", 0, 0, 1))
    assert f.coeffs == {}


def test_norm_examples():
    ctx = ctx1()
    assert norm(GrassmannElement.scalar(ctx, 1.0)) == 1.0
    f = P(ctx, gen("psi", 0, 0, 1), c=2.0) + P(ctx, gen("psi", 0, 0, -1), c=3j)
    assert norm(f) == pytest.approx(5.0, abs=0)


def test_norm_axioms_random_triples():
    ctx = GrassmannContext.build([0, 1], 1)
    rng = np.random.default_rng(1)
    for _ in range(200):
        f, g = random_element(ctx, rng), random_element(ctx, rng)
        a = complex(rng.normal(), rng.normal())
        assert norm(f + g) <= norm(f) + norm(g) + 1e-12
        assert norm(f.scale(a)) == pytest.approx(abs(a) * norm(f), rel=1e-12)
        assert (norm(f) == 0) == (not f.coeffs)


def test_submultiplicative_1000_pairs():
    ctx = GrassmannContext.build([0, 1, 2], 1)
    rng = np.random.default_rng(2)
    for _ in range(1000):
        f = random_element(ctx, rng, density=0.1)
        g = random_element(ctx, rng, density=0.1)
        # exact inequality; the only slack is floating point rounding of the sums
        assert norm(mul(f, g)) <= norm(f) * norm(g) * (1 + 1e-14)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_associativity_property(seed):
    ctx = GrassmannContext.build([0, 1], 1)
    rng = np.random.default_rng(seed)
    f, g, h = (random_element(ctx, rng, density=0.3) for _ in range(3))
    assert close(mul(mul(f, g), h), mul(f, mul(g, h)), 1e-12)


# ------------------------------------------------------------ exponentials


def test_exp_even_examples():
    ctx = ctx1()
    assert close(exp_even(GrassmannElement.zero(ctx)), GrassmannElement.scalar(ctx, 1.0))
    n = P(ctx, gen("psi", 0, 0, 1), gen("psi", 0, 0, -1))
    assert close(exp_even(n.scale(0.7 - 0.2j)), 1 + n.scale(0.7 - 0.2j))
    with pytest.raises(ValueError):
        exp_even(P(ctx, gen("psi", 0, 0, 1)))


def test_exp_even_disjoint_factorizes():
    ctx = GrassmannContext.build([0, 1], 1)
    rng = np.random.default_rng(3)
    c0 = GrassmannContext.build([0], 1)
    c1 = GrassmannContext.build([1], 1)
    for _ in range(20):
        v1 = embed(random_element(c0, rng, density=0.8, even=True), ctx)
        v2 = embed(random_element(c1, rng, density=0.8, even=True), ctx)
        # brute-force power series of exp(v1 + v2)
        s = v1 + v2
        s0 = s.scalar_part()
        nil = s - s0
        acc, p, k = GrassmannElement.zero(ctx), GrassmannElement.scalar(ctx, 1.0), 0
        while p.coeffs:
            acc = acc + p.scale(1 / factorial(k))
            p, k = mul(p, nil), k + 1
        acc = acc.scale(np.exp(s0))
        assert close(exp_even(s), acc, 1e-12)
        assert close(exp_even(s), mul(exp_even(v1), exp_even(v2)), 1e-12)


# ------------------------------------------------------------ Berezin integration


def symbolic_berezin(word, coef, integrals):
    """Recursive rewriter for int d a_1 ... int d a_k applied to a word of generators.

    Rules: int da 1 = 0, int da a = 1, and int da anticommutes with every
    generator other than a.  ``word`` is an ordered generator list.
    """
    if not integrals:
        return {tuple(sorted(word, key=lambda g: g.key())): coef * _sort_sign(word)}
    a = integrals[-1]  # innermost integral acts first
    if a not in word:
        return {}
    i = word.index(a)
    rest = word[:i] + word[i + 1:]
    return symbolic_berezin(rest, coef * (-1) ** i, integrals[:-1])


def _sort_sign(word):
    keys = [g.key() for g in word]
    s = 1
    for i in range(len(keys)):
        for j in range(i + 1, len(keys)):
            if keys[i] > keys[j]:
                s = -s
    return s


def test_berezin_basic_examples():
    ctx = ctx1()
    p, m = gen("psi", 0, 0, 1), gen("psi", 0, 0, -1)
    assert not berezin(GrassmannElement.scalar(ctx, 1.0)).coeffs
    assert berezin(P(ctx, m, p)).scalar_part() == pytest.approx(1.0)
    assert berezin(P(ctx, p, m)).scalar_part() == pytest.approx(-1.0)
    with pytest.raises(ContextError):
        berezin(GrassmannElement.scalar(ctx), [((5,), 0)])


def test_berezin_matches_symbolic_rules():
    ctx = GrassmannContext.build([0, 1], 1, families=("psi", "eta"))
    psi_pairs = ctx.pairs("psi")
    integrals = [gen("psi", s, c, e) for s, c in psi_pairs for e in (1, -1)]
    rng = np.random.default_rng(4)
    for _ in range(300):
        k = int(rng.integers(0, 7))
        word = [ctx.generators[i] for i in rng.permutation(len(ctx))[:k]]
        coef = complex(rng.normal(), rng.normal())
        got = berezin(P(ctx, *word, c=coef), psi_pairs)
        want = symbolic_berezin(word, coef, integrals)
        expect = GrassmannElement.zero(got.ctx)
        for gens, c in want.items():
            expect = expect + GrassmannElement.product(got.ctx, list(gens), c)
        assert close(got, expect)


def test_berezin_norm_bound():
    ctx = GrassmannContext.build([0, 1], 1)
    rng = np.random.default_rng(5)
    for _ in range(200):
        f = random_element(ctx, rng)
        assert abs(berezin(f).scalar_part()) <= norm(f) + 1e-14


def test_delta_element_and_sifting():
    ctx = ctx1()
    p, m = gen("psi", 0, 0, 1), gen("psi", 0, 0, -1)
    assert close(delta_element(ctx), P(ctx, m, p))
    assert close(delta_element(GrassmannContext([]), []), GrassmannElement.scalar(GrassmannContext([]), 1.0))
    # int dpsi delta(psi - psi') f(psi) = f(psi') with psi' the eta family
    big = GrassmannContext.build([0, 1], 1, families=("psi", "eta"))
    rng = np.random.default_rng(6)
    psi_ctx = GrassmannContext.build([0, 1], 1)
    for _ in range(20):
        f = random_element(psi_ctx, rng)
        d = GrassmannElement.scalar(big, 1.0)
        for s, c in big.pairs("psi"):
            dm = P(big, gen("psi", s, c, -1)) - P(big, gen("eta", s, c, -1))
            dp = P(big, gen("psi", s, c, 1)) - P(big, gen("eta", s, c, 1))
            d = d * dm * dp
        got = berezin(mul(d, embed(f, big)))
        mapping = {g: gen("eta", g.site, g.colour, g.charge) for g in psi_ctx.generators}
        want = rename(f, mapping, got.ctx)
        assert close(got, want)


# ------------------------------------------------------------ Fourier


def test_fourier_of_one():
    f = GrassmannElement.scalar(ctx1(), 1.0)
    fh = grassmann_fourier(f)
    assert len(fh.coeffs) == 1
    (m, c), = fh.coeffs.items()
    assert abs(abs(c) - 1) < 1e-15
    assert bin(m).count("1") == 2
    # hand expansion: (1 - i eta+ psi-)(1 - i psi+ eta-) integrated gives -eta+ eta-
    assert close(fh, -P(fh.ctx, gen("eta", 0, 0, 1), gen("eta", 0, 0, -1)))


@pytest.mark.parametrize("sites,colours", [([0], 1), ([0], 2), ([0, 1], 1), ([0, 1], 2)])
def test_fourier_round_trip_and_norm(sites, colours):
    ctx = GrassmannContext.build(sites, colours)
    rng = np.random.default_rng(7)
    for _ in range(10):
        f = random_element(ctx, rng)
        fh = grassmann_fourier(f)
        assert abs(norm(fh) - norm(f)) <= 1e-12 * norm(f)
        back = inverse_grassmann_fourier(fh)
        assert back.ctx == f.ctx
        assert norm(back - f) <= 1e-12 * norm(f)


def test_fourier_rejects_mixed_family():
    ctx = GrassmannContext.build([0], 1, families=("psi", "eta"))
    with pytest.raises(ContextError):
        grassmann_fourier(GrassmannElement.scalar(ctx, 1.0))


def test_derivative_anticommutes():
    ctx = GrassmannContext.build([0, 1], 1)
    rng = np.random.default_rng(8)
    a, b = ctx.generators[0], ctx.generators[3]
    for _ in range(20):
        f = random_element(ctx, rng)
        assert close(derivative(derivative(f, a), b), -derivative(derivative(f, b), a))


def test_monomial_listing():
    ctx = GrassmannContext.build([0, 1], 1)
    assert len(monomials(ctx)) == 16
    assert len(monomials(ctx, 2)) == 6
