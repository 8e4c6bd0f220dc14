"""Small shared helpers: deterministic RNG streams, ordered parallel map, GL panels."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for (seed, key...) so results never depend on scheduling."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), *map(int, key)]))


def pmap(fn, items, threads: int = 1):
    """Ordered map, optionally on a thread pool (numpy kernels release the GIL)."""
    items = list(items)
    if threads is None or threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def gl_panels(a: float, b: float, n_panels: int, n_nodes: int, grading: float = 2.0):
    """Composite Gauss-Legendre rule on [a, b] with panels graded towards a."""
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    t = np.linspace(0.0, 1.0, n_panels + 1) ** grading
    edges = a + (b - a) * t
    nodes, weights = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        half = 0.5 * (hi - lo)
        nodes.append(lo + half * (x + 1))
        weights.append(half * w)
    return np.concatenate(nodes), np.concatenate(weights)
