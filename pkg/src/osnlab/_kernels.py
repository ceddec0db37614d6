"""Compiled inner loops over CSR adjacency (``indptr``, ``indices``)."""

import numba
import numpy as np


@numba.njit(cache=True)
def bfs_distance_histogram(indptr, indices, sources):
    """Summed histogram of BFS distances from each source (index 0 unused)."""
    n = indptr.size - 1
    hist = np.zeros(n + 1, dtype=np.int64)
    dist = np.full(n, -1, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    for s in sources:
        head = 0
        tail = 1
        queue[0] = s
        dist[s] = 0
        while head < tail:
            u = queue[head]
            head += 1
            du = dist[u]
            for p in range(indptr[u], indptr[u + 1]):
                w = indices[p]
                if dist[w] < 0:
                    dist[w] = du + 1
                    hist[du + 1] += 1
                    queue[tail] = w
                    tail += 1
        for i in range(tail):
            dist[queue[i]] = -1
    return hist


@numba.njit(cache=True)
def triangles_per_node(indptr, indices):
    """Triangle count at every node.

    Edges are oriented from lower to higher (degree, index) rank; each
    triangle is then found exactly once by intersecting sorted out-lists.
    """
    n = indptr.size - 1
    deg = indptr[1:] - indptr[:-1]
    out_ptr = np.zeros(n + 1, dtype=np.int64)
    for u in range(n):
        c = 0
        for p in range(indptr[u], indptr[u + 1]):
            w = indices[p]
            if deg[w] > deg[u] or (deg[w] == deg[u] and w > u):
                c += 1
        out_ptr[u + 1] = out_ptr[u] + c
    out = np.empty(out_ptr[n], dtype=np.int64)
    for u in range(n):
        k = out_ptr[u]
        for p in range(indptr[u], indptr[u + 1]):
            w = indices[p]
            if deg[w] > deg[u] or (deg[w] == deg[u] and w > u):
                out[k] = w
                k += 1
        # rows of indices are sorted, so out-lists stay sorted
    tri = np.zeros(n, dtype=np.int64)
    for u in range(n):
        for p in range(out_ptr[u], out_ptr[u + 1]):
            v = out[p]
            a = out_ptr[u]
            a_end = out_ptr[u + 1]
            b = out_ptr[v]
            b_end = out_ptr[v + 1]
            while a < a_end and b < b_end:
                x = out[a]
                y = out[b]
                if x == y:
                    tri[u] += 1
                    tri[v] += 1
                    tri[x] += 1
                    a += 1
                    b += 1
                elif x < y:
                    a += 1
                else:
                    b += 1
    return tri


@numba.njit(cache=True)
def _find(parent, x):
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


@numba.njit(cache=True)
def union_find_labels(n, us, vs):
    """Component root of every node after streaming the edges (us[i], vs[i])."""
    parent = np.arange(n)
    size = np.ones(n, dtype=np.int64)
    for i in range(us.size):
        a = _find(parent, us[i])
        b = _find(parent, vs[i])
        if a != b:
            if size[a] < size[b]:
                a, b = b, a
            parent[b] = a
            size[a] += size[b]
    for x in range(n):
        parent[x] = _find(parent, x)
    return parent
