"""Battle-Brydges-Federbush machinery: trees, partitions, the decoupling measure and polymer activities.

Vertices of a tree are the positions 0..n-1 of a polymer Y = (y_0 < y_1 < ...).

The decoupling measure is built from the one-step interpolation identity.  A
history is an order (y_{o_0}, ..., y_{o_{n-1}}) in which the cluster grows, one
vertex per step, starting from the lowest position.  At step k the parameter
s_k multiplies every pair that couples across the current cluster; taking the
s_k derivative picks a pair (o_p, o_{k+1}) with p <= k and brings down the
factor prod_{p <= j < k} s_j.  Collecting the histories that generate a given
tree T gives

    int dp_T(s) F(s) = sum_histories int_{[0,1]^{n-1}} prod_j s_j^{c_j} ds  F(s(history, s)),

    s_{o_p, o_q} = prod_{p <= j < q} s_j,

where c_j counts the tree edges whose step window covers j.  The total mass
is 1 (checked in the tests), and every s in the support is ultrametric, hence
a convex combination of partition indicators.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import nnls
from scipy.special import roots_legendre

from ._util import rng_stream
from .grassmann import GrassmannElement, exp_even, mul, norm

MAX_TREE_SIZE = 8


# ---------------------------------------------------------------- trees


@dataclass(frozen=True)
class Tree:
    """Labelled tree on vertices 0..n-1; n = 1 is the empty tree (no edges)."""

    n: int
    edges: tuple

    def __post_init__(self):
        edges = tuple(sorted(tuple(sorted(e)) for e in self.edges))
        object.__setattr__(self, "edges", edges)
        if len(edges) != self.n - 1:
            raise ValueError("a tree on n vertices has n - 1 edges")
        parent = list(range(self.n))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for a, b in edges:
            if not (0 <= a < self.n and 0 <= b < self.n) or a == b:
                raise ValueError(f"bad edge {(a, b)}")
            ra, rb = find(a), find(b)
            if ra == rb:
                raise ValueError("edges contain a cycle")
            parent[ra] = rb

    @property
    def is_empty(self):
        return self.n == 1

    def degrees(self):
        d = [0] * self.n
        for a, b in self.edges:
            d[a] += 1
            d[b] += 1
        return tuple(d)

    def neighbours(self):
        nb = [[] for _ in range(self.n)]
        for a, b in self.edges:
            nb[a].append(b)
            nb[b].append(a)
        return nb

    def parents(self, root: int = 0):
        """Parent of each vertex when the tree hangs from root (root maps to None)."""
        par = [None] * self.n
        seen = {root}
        stack = [root]
        nb = self.neighbours()
        while stack:
            a = stack.pop()
            for b in nb[a]:
                if b not in seen:
                    seen.add(b)
                    par[b] = a
                    stack.append(b)
        return par

    def prufer(self):
        if self.n <= 2:
            return ()
        nb = [set(x) for x in self.neighbours()]
        seq = []
        for _ in range(self.n - 2):
            leaf = min(i for i in range(self.n) if len(nb[i]) == 1)
            (p,) = nb[leaf]
            seq.append(p)
            nb[p].discard(leaf)
            nb[leaf].clear()
        return tuple(seq)

    @classmethod
    def from_prufer(cls, seq, n: int):
        if n == 1:
            return cls(1, ())
        if n == 2:
            return cls(2, ((0, 1),))
        seq = list(seq)
        if len(seq) != n - 2:
            raise ValueError("Pruefer sequence must have length n - 2")
        deg = [1] * n
        for a in seq:
            deg[a] += 1
        edges = []
        for a in seq:
            leaf = min(i for i in range(n) if deg[i] == 1)
            edges.append((leaf, a))
            deg[leaf] -= 1
            deg[a] -= 1
        u, w = [i for i in range(n) if deg[i] == 1]
        edges.append((u, w))
        return cls(n, tuple(edges))


def enumerate_trees(n: int, by_degrees: bool = False):
    """All n^(n-2) labelled trees on n vertices (the empty tree for n = 1).

    With by_degrees the trees are returned grouped by coordination sequence.
    """
    if not 1 <= n <= MAX_TREE_SIZE:
        raise ValueError(f"tree size must be in 1..{MAX_TREE_SIZE}")
    if n <= 2:
        trees = [Tree.from_prufer((), n)]
    else:
        trees = [Tree.from_prufer(s, n) for s in itertools.product(range(n), repeat=n - 2)]
    if not by_degrees:
        return trees
    groups: dict = {}
    for t in trees:
        groups.setdefault(t.degrees(), []).append(t)
    return groups


def set_partitions(items):
    """All set partitions of items, each a list of tuples (Bell-number many)."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        yield [(first,)] + part
        for i in range(len(part)):
            yield part[:i] + [(first,) + part[i]] + part[i + 1:]


# ---------------------------------------------------------------- pair potentials


class PairPotential:
    """Symmetric pair potential v_{x,y} = v_{y,x} on labelled vertices.

    Entries are complex scalars or even GrassmannElements of one context.
    Missing pairs are zero.  V_X = 1/2 sum_{x,y in X} v_{x,y}.
    """

    def __init__(self, entries: dict):
        self.entries = {}
        for (x, y), val in entries.items():
            key = (x, y) if x <= y else (y, x)
            if key in self.entries and not _same(self.entries[key], val):
                raise ValueError(f"v is not symmetric at {key}")
            if isinstance(val, GrassmannElement) and not val.is_even():
                raise ValueError(f"v{key} is not even")
            self.entries[key] = val
        grass = [v for v in self.entries.values() if isinstance(v, GrassmannElement)]
        self.ctx = grass[0].ctx if grass else None
        if any(g.ctx != self.ctx for g in grass):
            raise ValueError("all entries must share one Grassmann context")

    @property
    def is_grassmann(self):
        return self.ctx is not None

    def __call__(self, x, y):
        key = (x, y) if x <= y else (y, x)
        val = self.entries.get(key, 0.0)
        if self.is_grassmann and not isinstance(val, GrassmannElement):
            val = GrassmannElement.scalar(self.ctx, val)
        return val

    def one(self):
        return GrassmannElement.scalar(self.ctx, 1.0) if self.is_grassmann else 1.0

    def potential(self, Y, S=None):
        """V_Y(s) = 1/2 sum_{x,y in Y} s_{xy} v_{xy}; S has shape (B, n, n) or is None (s = 1)."""
        Y = list(Y)
        out = 0.0 if not self.is_grassmann else GrassmannElement.zero(self.ctx)
        for i, x in enumerate(Y):
            out = out + 0.5 * self(x, x) if _nonzero(self(x, x)) else out
            for j in range(i + 1, len(Y)):
                v = self(x, Y[j])
                if not _nonzero(v):
                    continue
                out = out + (v if S is None else v * S[:, i, j])
        return out

    def exp(self, V):
        return exp_even(V) if self.is_grassmann else np.exp(V)


def _same(a, b):
    if isinstance(a, GrassmannElement) or isinstance(b, GrassmannElement):
        return norm(a - b) == 0
    return a == b


def _nonzero(v):
    if isinstance(v, GrassmannElement):
        return bool(v.coeffs)
    return v != 0


# ---------------------------------------------------------------- decoupling measure


@dataclass(frozen=True)
class Step:
    """One interpolation step: parameter index k, cluster grown so far, vertex attached next and its parent."""

    k: int
    cluster: tuple
    added: int
    parent: int


@dataclass(frozen=True)
class History:
    order: tuple
    steps: tuple
    exponents: tuple

    @property
    def mass(self):
        return float(np.prod([1.0 / (c + 1) for c in self.exponents]))


def _linear_extensions(tree: Tree):
    par = tree.parents(0)
    children = [[] for _ in range(tree.n)]
    for v, p in enumerate(par):
        if p is not None:
            children[p].append(v)

    def rec(order, frontier):
        if not frontier:
            yield tuple(order)
            return
        for v in sorted(frontier):
            yield from rec(order + [v], (frontier - {v}) | set(children[v]))

    yield from rec([0], set(children[0]))


@lru_cache(maxsize=None)
def _gl01(m):
    x, w = roots_legendre(m)
    return 0.5 * (x + 1), 0.5 * w


@dataclass
class DecouplingMeasure:
    """Nested-integration program for dp_T on the polymer with positions 0..n-1."""

    tree: Tree
    histories: list = field(default_factory=list)

    @property
    def n(self):
        return self.tree.n

    @property
    def depth(self):
        return self.n - 1

    def total_mass(self):
        return sum(h.mass for h in self.histories) if self.n > 1 else 1.0

    def pair_matrix(self, history: History, s):
        """Pair parameters s_{xy} for step parameters s of shape (B, n-1); returns (B, n, n)."""
        s = np.atleast_2d(np.asarray(s, dtype=float))
        B = s.shape[0]
        S = np.ones((B, self.n, self.n))
        o = history.order
        for p in range(self.n):
            for q in range(p + 1, self.n):
                val = np.prod(s[:, p:q], axis=1)
                S[:, o[p], o[q]] = val
                S[:, o[q], o[p]] = val
        return S

    def nodes(self, n_nodes: int = 16):
        """Tensor Gauss-Legendre nodes of the whole mixture: (S of shape (B, n, n), weights (B,))."""
        if self.n == 1:
            return np.ones((1, 1, 1)), np.ones(1)
        x, w = _gl01(n_nodes)
        grid = np.array(list(itertools.product(range(n_nodes), repeat=self.depth)))
        Ss, Ws = [], []
        for h in self.histories:
            s = x[grid]
            wt = np.prod(w[grid] * s ** np.array(h.exponents), axis=1)
            Ss.append(self.pair_matrix(h, s))
            Ws.append(wt)
        return np.concatenate(Ss), np.concatenate(Ws)

    def sample(self, rng: np.random.Generator, size: int):
        """Exact samples of s: a history with probability equal to its mass, then s_j ~ Beta(c_j + 1, 1)."""
        if self.n == 1:
            return np.ones((size, 1, 1))
        p = np.array([h.mass for h in self.histories])
        pick = rng.choice(len(self.histories), size=size, p=p / p.sum())
        out = np.empty((size, self.n, self.n))
        for i, h in enumerate(self.histories):
            sel = np.flatnonzero(pick == i)
            if sel.size:
                c = np.array(h.exponents, dtype=float)
                s = rng.random((sel.size, self.depth)) ** (1.0 / (c + 1))
                out[sel] = self.pair_matrix(h, s)
        return out

    def integrate(self, fn, n_nodes: int = 16, max_points: int = 1 << 22, chunk: int = 1 << 14):
        """int dp_T(s) fn(S) with fn mapping (B, n, n) to an array (B,) or a batched GrassmannElement."""
        n_pts = len(self.histories) * n_nodes ** self.depth if self.n > 1 else 1
        if n_pts > max_points:
            raise ValueError(f"nested quadrature needs {n_pts} points (cap {max_points}); "
                             "use integrate_mc for this polymer size")
        S, W = self.nodes(n_nodes)
        acc = None
        for a in range(0, len(W), chunk):
            part = _weighted_sum(fn(S[a:a + chunk]), W[a:a + chunk])
            acc = part if acc is None else acc + part
        return acc

    def integrate_mc(self, fn, n_samples: int = 100_000, seed: int = 0, chunk: int = 1 << 14):
        """Monte Carlo version of integrate; returns (mean, standard error)."""
        total, total2, done = None, None, 0
        for ci, a in enumerate(range(0, n_samples, chunk)):
            m = min(chunk, n_samples - a)
            vals = fn(self.sample(rng_stream(seed, ci), m))
            if isinstance(vals, GrassmannElement):
                raise TypeError("Monte Carlo over s supports scalar integrands only")
            s1, s2 = np.sum(vals), np.sum(np.abs(vals) ** 2)
            total = s1 if total is None else total + s1
            total2 = s2 if total2 is None else total2 + s2
            done += m
        mean = total / done
        var = max(total2 / done - abs(mean) ** 2, 0.0)
        return mean, float(np.sqrt(var / done))


def _weighted_sum(vals, w):
    if isinstance(vals, GrassmannElement):
        return GrassmannElement(vals.ctx, {m: np.sum(np.broadcast_to(c, w.shape) * w) for m, c in vals.coeffs.items()})
    return np.sum(np.broadcast_to(vals, w.shape) * w)


def build_decoupling_measure(tree: Tree, Y=None) -> DecouplingMeasure:
    """Decoupling measure of a tree; Y (optional) only checks that the tree spans it."""
    if Y is not None and len(tuple(Y)) != tree.n:
        raise ValueError("tree does not span Y")
    if tree.n == 1:
        return DecouplingMeasure(tree, [])
    par = tree.parents(0)
    hist = []
    for order in _linear_extensions(tree):
        pos = {v: i for i, v in enumerate(order)}
        expo = [0] * (tree.n - 1)
        steps = []
        for k in range(tree.n - 1):
            v = order[k + 1]
            p = pos[par[v]]
            for j in range(p, k):
                expo[j] += 1
            steps.append(Step(k, tuple(order[:k + 1]), v, par[v]))
        hist.append(History(tuple(order), tuple(steps), tuple(expo)))
    return DecouplingMeasure(tree, hist)


def is_convex_decoupling(S, tol: float = 1e-10):
    """Express s_{xy} (x < y) as a convex combination of partition indicators by NNLS.

    Returns (ok, weights, residual) for a single (n, n) matrix.
    """
    S = np.asarray(S, dtype=float)
    n = len(S)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    parts = list(set_partitions(range(n)))
    M = np.zeros((len(pairs) + 1, len(parts)))
    for c, part in enumerate(parts):
        block = {v: b for b, blk in enumerate(part) for v in blk}
        for r, (i, j) in enumerate(pairs):
            M[r, c] = block[i] == block[j]
    M[-1] = 1.0
    rhs = np.array([S[i, j] for i, j in pairs] + [1.0])
    lam, res = nnls(M, rhs)
    return res <= tol, lam, float(res)


# ---------------------------------------------------------------- activities and the identity


def tree_weight(tree: Tree, Y, v: PairPotential):
    """prod over edges {a, b} of T of v_{Y[a], Y[b]}."""
    out = v.one()
    for a, b in tree.edges:
        e = v(Y[a], Y[b])
        out = mul(out, e) if v.is_grassmann else out * e
    return out


def polymer_activity(Y, v: PairPotential, T: Tree | None = None, extra=None, n_nodes: int = 16,
                     max_depth: int = MAX_TREE_SIZE - 1, return_error: bool = False):
    """K(Y) = sum_T prod_{T} v int dp_T(s) e^{V_Y(s)} extra(s).

    T restricts the sum to one tree.  extra is None, a constant (scalar or
    GrassmannElement), or a callable of the pair matrix S (B, n, n).  The error
    estimate compares the nested rule with n_nodes and n_nodes // 2 nodes.
    """
    Y = tuple(Y)
    n = len(Y)
    if n - 1 > max_depth:
        raise ValueError(f"quadrature depth {n - 1} exceeds the cap {max_depth}")

    def integrand(S):
        w = v.exp(v.potential(Y, S))
        if extra is None:
            return w
        e = extra(S) if callable(extra) else extra
        if isinstance(w, GrassmannElement) or isinstance(e, GrassmannElement):
            return _times(w, e)
        return w * e

    if n == 1:
        val = _weighted_sum(integrand(np.ones((1, 1, 1))), np.ones(1))
        return (val, 0.0) if return_error else val
    trees = [T] if T is not None else enumerate_trees(n)

    def run(m):
        total = None
        for t in trees:
            meas = build_decoupling_measure(t)
            k = _times(tree_weight(t, Y, v), meas.integrate(integrand, m))
            total = k if total is None else total + k
        return total

    val = run(n_nodes)
    if not return_error:
        return val
    coarse = run(max(2, n_nodes // 2))
    diff = val - coarse
    return val, float(norm(diff) if isinstance(diff, GrassmannElement) else abs(diff))


def _times(a, b):
    if isinstance(a, GrassmannElement) and isinstance(b, GrassmannElement):
        return mul(a, b)
    if isinstance(a, GrassmannElement):
        return a.scale(b)
    if isinstance(b, GrassmannElement):
        return b.scale(a)
    return a * b


def bbf_verify(X, v: PairPotential, n_nodes: int = 16):
    """Norm of e^{V_X} - sum_{partitions} prod_Y K(Y)."""
    X = tuple(X)
    if len(X) > 4:
        raise ValueError("bbf_verify supports |X| <= 4")
    lhs = v.exp(v.potential(X))
    cache = {}
    rhs = None
    for part in set_partitions(X):
        term = v.one()
        for blk in part:
            if blk not in cache:
                cache[blk] = polymer_activity(blk, v, n_nodes=n_nodes)
            term = _times(term, cache[blk])
        rhs = term if rhs is None else rhs + term
    diff = lhs - rhs
    return float(norm(diff) if isinstance(diff, GrassmannElement) else abs(diff))


def interpolation_residual(X, v: PairPotential, cluster, n_nodes: int = 16):
    """One interpolation step for scalar v: |e^{V} - sum_cross v int ds e^{W(s)} - e^{W(0)}|."""
    if v.is_grassmann:
        raise TypeError("scalar potentials only")
    X = tuple(X)
    inside = np.array([x in set(cluster) for x in X])
    cross = inside[:, None] != inside[None, :]
    x, w = _gl01(n_nodes)

    def W(s):
        S = np.where(cross, s[:, None, None], 1.0)
        return np.exp(v.potential(X, S))

    coupling = sum(v(X[i], X[j]) for i in range(len(X)) for j in range(i + 1, len(X)) if cross[i, j])
    rhs = coupling * np.sum(w * W(x)) + W(np.zeros(1))[0]
    return float(abs(np.exp(v.potential(X)) - rhs))
