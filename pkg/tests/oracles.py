"""Brute-force reference implementations, written from the definitions alone.

Nothing here imports the package's metric code; inputs are plain
``{node: set(neighbors)}`` dicts so the oracles stay independent of the CSR
layout they check.
"""

from __future__ import annotations

import itertools
import random
from collections import deque
from fractions import Fraction

import numpy as np

MASK48 = (1 << 48) - 1


def random_adjacency(n: int, p: float, seed: int) -> dict[int, set[int]]:
    rnd = random.Random(seed)
    nodes = rnd.sample(range(1, 10 * n + 1), n)
    adj = {v: set() for v in nodes}
    for a, b in itertools.combinations(nodes, 2):
        if rnd.random() < p:
            adj[a].add(b)
            adj[b].add(a)
    return adj


def bfs_distances(adj, src) -> dict:
    dist = {src: 0}
    q = deque([src])
    while q:
        u = q.popleft()
        for w in adj[u]:
            if w not in dist:
                dist[w] = dist[u] + 1
                q.append(w)
    return dist


def hop_counts(adj) -> dict[int, int]:
    """Cumulative unordered connected pairs within h hops, h = 1..max."""
    at = {}
    nodes = sorted(adj)
    for i, u in enumerate(nodes):
        dist = bfs_distances(adj, u)
        for v in nodes[i + 1:]:
            if v in dist:
                at[dist[v]] = at.get(dist[v], 0) + 1
    out, run = {}, 0
    for h in range(1, max(at, default=0) + 1):
        run += at.get(h, 0)
        out[h] = run
    return out


def effective_diameter(adj, q: Fraction) -> Fraction | None:
    g = hop_counts(adj)
    if not g:
        return None
    total = g[max(g)]
    prev = Fraction(0)
    for h in sorted(g):
        f = Fraction(g[h], total)
        if f >= q:
            return (h - 1) + (q - prev) / (f - prev)
        prev = f
    raise AssertionError("unreachable")


def clustering(adj, v) -> Fraction:
    nbrs = sorted(adj[v])
    k = len(nbrs)
    if k < 2:
        return Fraction(0)
    closed = sum(1 for a, b in itertools.combinations(nbrs, 2) if b in adj[a])
    return Fraction(2 * closed, k * (k - 1))


def components(adj) -> list[int]:
    seen, sizes = set(), []
    for v in adj:
        if v not in seen:
            comp = bfs_distances(adj, v)
            seen.update(comp)
            sizes.append(len(comp))
    return sorted(sizes, reverse=True)


def ccdf(adj) -> list[tuple[int, Fraction]]:
    degs = [len(s) for s in adj.values()]
    n = len(degs)
    return [(k, Fraction(sum(1 for d in degs if d >= k), n)) for k in sorted(set(degs))]


def dense_singular_values(adj, k: int) -> list[float]:
    nodes = sorted(adj)
    pos = {v: i for i, v in enumerate(nodes)}
    m = np.zeros((len(nodes), len(nodes)))
    for v, ws in adj.items():
        for w in ws:
            m[pos[v], pos[w]] = 1.0
    ev = np.linalg.eigvalsh(m)
    return sorted(np.abs(ev).tolist(), reverse=True)[:k]


def aphash48_reference(data: bytes) -> int:
    """Straight-line transcription of the 48-bit AP-family recurrence."""
    h = 0xAAAAAAAAAAAA
    for i, b in enumerate(data):
        if i % 2 == 0:
            left = (h << 7) & MASK48
            prod = (b * (h >> 3)) & MASK48
            h = (h ^ (left ^ prod)) & MASK48
        else:
            left = (h << 11) & MASK48
            total = (left + (b ^ (h >> 5))) & MASK48
            h = (h ^ (~total & MASK48)) & MASK48
    return h
