"""Cleaning stage: anonymize raw IDs, collapse duplicate edges, check integrity.

Raw IDs are rendered as byte strings (decimal digits for numbers, verbatim
text for aliases) and hashed to 48 bits with an additive-rotative hash of the
AP family.  Duplicate and reversed observations collapse through a hash set,
so cleaning is linear in the number of observations.
"""

from __future__ import annotations

import logging
import os
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .crawler import PRIVATE, VISITED, RawCrawl, read_kv
from .errors import IntegrityError, NodeNotFoundError
from .graph import ID_DTYPE, SocialGraph, read_edge_list, write_edge_list

log = logging.getLogger(__name__)

MASK48 = (1 << 48) - 1
SEED48 = 0xAAAAAAAAAAAA
HASH_NAME = "aphash48"
HASH_VERSION = "1"


def _key_bytes(key) -> bytes:
    if isinstance(key, bytes):
        return key
    if isinstance(key, (int, np.integer)):
        return str(int(key)).encode("ascii")
    return str(key).encode("utf-8")


def aphash48(key) -> int:
    """48-bit hybrid additive-rotative hash of ``key``'s canonical bytes."""
    h = SEED48
    for i, b in enumerate(_key_bytes(key)):
        if i % 2 == 0:
            h ^= ((h << 7) & MASK48) ^ ((b * (h >> 3)) & MASK48)
        else:
            h ^= ~((((h << 11) & MASK48) + (b ^ (h >> 5))) & MASK48) & MASK48
        h &= MASK48
    return h


def aphash48_many(keys) -> np.ndarray:
    """Vectorized :func:`aphash48` over a sequence of keys (uint64 result)."""
    raw = [_key_bytes(k) for k in keys]
    out = np.empty(len(raw), dtype=np.uint64)
    if not raw:
        return out
    lengths = np.fromiter((len(b) for b in raw), dtype=np.int64, count=len(raw))
    mask = np.uint64(MASK48)
    for length in np.unique(lengths).tolist():
        idx = np.flatnonzero(lengths == length)
        h = np.full(idx.size, SEED48, dtype=np.uint64)
        if length:
            block = np.frombuffer(b"".join(raw[i] for i in idx.tolist()), dtype=np.uint8)
            block = block.reshape(idx.size, length).astype(np.uint64)
            for i in range(length):
                b = block[:, i]
                if i % 2 == 0:
                    h ^= ((h << np.uint64(7)) & mask) ^ ((b * (h >> np.uint64(3))) & mask)
                else:
                    h ^= ~((((h << np.uint64(11)) & mask) + (b ^ (h >> np.uint64(5)))) & mask) & mask
                h &= mask
        out[idx] = h
    return out


@dataclass
class CleanGraph:
    graph: SocialGraph
    visited: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=ID_DTYPE))
    private: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=ID_DTYPE))
    observed_degree: dict[int, int] = field(default_factory=dict)
    raw_observations: int = 0
    duplicate_edges_removed: int = 0
    collisions_detected: int = 0
    raw_self_loops: int = 0
    provenance: dict[str, str] = field(default_factory=lambda: {
        "hash": HASH_NAME, "hash_version": HASH_VERSION, "hash_seed": hex(SEED48)})

    @property
    def duplicate_fraction(self) -> float:
        return self.duplicate_edges_removed / self.raw_observations if self.raw_observations else 0.0


def _dedup(lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # hash-set pass: expected O(n) in the number of observations
    unique = set(zip(lo.tolist(), hi.tolist()))
    if not unique:
        empty = np.zeros(0, dtype=ID_DTYPE)
        return empty, empty.copy()
    arr = np.array(list(unique), dtype=ID_DTYPE)
    return arr[:, 0], arr[:, 1]


def _count_collisions(raw_ids: np.ndarray, digests: np.ndarray) -> int:
    if digests.size < 2:
        return 0
    order = np.argsort(digests, kind="stable")
    d = digests[order]
    _, starts, counts = np.unique(d, return_index=True, return_counts=True)
    pairs = 0
    for s, c in zip(starts[counts > 1].tolist(), counts[counts > 1].tolist()):
        pairs += c * (c - 1) // 2
        log.warning("hash collision: %d raw IDs share digest %#014x", c, int(d[s]))
    return pairs


def clean_edges(u, v, *, anonymize: bool = True, nodes=()) -> CleanGraph:
    """Clean a bare edge stream (no visit log)."""
    crawl = RawCrawl("edges", observations=list(zip(np.asarray(u).tolist(), np.asarray(v).tolist())))
    extra = [int(x) for x in np.asarray(nodes).tolist()]
    return _clean(crawl, anonymize=anonymize, keep_private=False, extra_nodes=extra)


def clean(raw: RawCrawl, *, keep_private: bool = True) -> CleanGraph:
    """Anonymize and de-duplicate a harvest.

    Visited users always become nodes, even with an empty friend list.  With
    ``keep_private`` the existing-but-private users found by the crawl also
    appear, as isolated nodes unless some visited friend listed them.
    """
    return _clean(raw, anonymize=True, keep_private=keep_private)


def _clean(raw: RawCrawl, *, anonymize: bool, keep_private: bool, extra_nodes=()) -> CleanGraph:
    obs = np.array(raw.observations, dtype=ID_DTYPE).reshape(-1, 2)
    visited_raw = np.array(raw.visited_ids(), dtype=ID_DTYPE)
    private_raw = np.array([r.user_id for r in raw.visits if r.outcome == PRIVATE] if keep_private else [],
                           dtype=ID_DTYPE)
    extra = np.array(list(extra_nodes), dtype=ID_DTYPE)
    raw_ids = np.unique(np.concatenate([obs.ravel(), visited_raw, private_raw, extra]))

    if anonymize:
        digests = aphash48_many(raw_ids.tolist())
        collisions = _count_collisions(raw_ids, digests)
    else:
        digests = raw_ids.copy()
        collisions = 0

    def anon(arr: np.ndarray) -> np.ndarray:
        return digests[np.searchsorted(raw_ids, arr)] if arr.size else np.zeros(0, dtype=ID_DTYPE)

    raw_loops = obs[:, 0] == obs[:, 1]
    valid = obs[~raw_loops]
    hu, hv = anon(valid[:, 0]), anon(valid[:, 1])
    # distinct raw endpoints that hash equal cannot form an edge; the pair is
    # already counted by _count_collisions
    hashed_loops = hu == hv
    hu, hv = hu[~hashed_loops], hv[~hashed_loops]
    lo, hi = np.minimum(hu, hv), np.maximum(hu, hv)
    eu, ev = _dedup(lo, hi)

    visited = np.unique(anon(visited_raw))
    private = np.unique(anon(private_raw))
    graph = SocialGraph.from_edges(eu, ev, nodes=np.concatenate([visited, private, anon(extra)]))

    observed: dict[int, int] = {}
    for r in raw.visits:
        if r.outcome == VISITED:
            key = int(digests[np.searchsorted(raw_ids, ID_DTYPE(r.user_id))])
            observed[key] = max(observed.get(key, 0), r.degree)

    return CleanGraph(
        graph=graph,
        visited=visited,
        private=np.setdiff1d(private, visited),
        observed_degree=observed,
        raw_observations=int(obs.shape[0]),
        duplicate_edges_removed=int(valid.shape[0] - int(hashed_loops.sum()) - eu.size),
        collisions_detected=collisions,
        raw_self_loops=int(raw_loops.sum()),
        provenance={"hash": HASH_NAME if anonymize else "none", "hash_version": HASH_VERSION, "hash_seed": hex(SEED48)},
    )


@dataclass
class IntegrityReport:
    n_nodes: int
    n_edges: int
    isolated_nodes: int
    duplicate_fraction: float
    collisions_detected: int

    def as_dict(self) -> dict[str, object]:
        return dict(self.__dict__)


def integrity_check(g) -> IntegrityReport:
    """Verify the graph invariants; raise :class:`IntegrityError` listing offenders."""
    cg = g if isinstance(g, CleanGraph) else CleanGraph(graph=g, provenance={"hash": "none"})
    graph = cg.graph
    problems = graph.invariant_violations()
    for name, ids in (("visited", cg.visited), ("private", cg.private)):
        missing = [int(x) for x in ids.tolist() if x not in graph]
        problems += [f"{name} node {x} missing from graph" for x in missing[:20]]
    if cg.provenance.get("hash") == HASH_NAME and graph.n_nodes and int(graph.ids.max()) > MASK48:
        problems.append("node ID exceeds 48 bits after anonymization")
    if problems:
        raise IntegrityError(problems)
    return IntegrityReport(
        n_nodes=graph.n_nodes,
        n_edges=graph.edge_count,
        isolated_nodes=int(np.count_nonzero(graph.degrees() == 0)),
        duplicate_fraction=cg.duplicate_fraction,
        collisions_detected=cg.collisions_detected,
    )


def extract_ego_network(g, center, radius: int = 1) -> SocialGraph:
    """Induced subgraph on every node within ``radius`` hops of ``center``."""
    graph = g.graph if isinstance(g, CleanGraph) else g
    if radius not in (1, 2):
        raise ValueError("radius must be 1 or 2")
    start = graph.index_of(center)
    dist = {start: 0}
    frontier = deque([start])
    while frontier:
        i = frontier.popleft()
        if dist[i] == radius:
            continue
        for j in graph.neighbor_positions(i).tolist():
            if j not in dist:
                dist[j] = dist[i] + 1
                frontier.append(j)
    return graph.subgraph(graph.ids[np.fromiter(dist, dtype=np.int64)])


# -- persistence --------------------------------------------------------------

EDGES, NODES, REPORT = "edges.tsv", "nodes.tsv", "report"


def save_clean(cg: CleanGraph, directory) -> IntegrityReport:
    report = integrity_check(cg)
    os.makedirs(directory, exist_ok=True)
    write_edge_list(cg.graph, os.path.join(directory, EDGES))
    visited = set(cg.visited.tolist())
    private = set(cg.private.tolist())
    with open(os.path.join(directory, NODES), "w", encoding="ascii") as fh:
        for node in cg.graph.ids.tolist():
            role = "visited" if node in visited else "private" if node in private else "discovered"
            deg = cg.observed_degree.get(node, "-") if role == "visited" else "-"
            fh.write(f"{node}\t{role}\t{deg}\n")
    stats = {
        **report.as_dict(),
        "visited_nodes": len(visited),
        "private_nodes": len(private),
        "raw_observations": cg.raw_observations,
        "duplicate_edges_removed": cg.duplicate_edges_removed,
        "raw_self_loops": cg.raw_self_loops,
        **cg.provenance,
    }
    with open(os.path.join(directory, REPORT), "w", encoding="ascii") as fh:
        for k in sorted(stats):
            fh.write(f"{k}={stats[k]}\n")
    return report


def load_clean(directory) -> CleanGraph:
    nodes, visited, private, observed = [], [], [], {}
    nodes_path = os.path.join(directory, NODES)
    if os.path.exists(nodes_path):
        with open(nodes_path, encoding="ascii") as fh:
            for line in fh:
                node_s, role, deg = line.rstrip("\n").split("\t")
                node = int(node_s)
                nodes.append(node)
                if role == "visited":
                    visited.append(node)
                    if deg != "-":
                        observed[node] = int(deg)
                elif role == "private":
                    private.append(node)
    graph, _ = read_edge_list(os.path.join(directory, EDGES), nodes=np.array(nodes, dtype=ID_DTYPE))
    stats = read_kv(os.path.join(directory, REPORT)) if os.path.exists(os.path.join(directory, REPORT)) else {}
    return CleanGraph(
        graph=graph,
        visited=np.array(sorted(visited), dtype=ID_DTYPE),
        private=np.array(sorted(private), dtype=ID_DTYPE),
        observed_degree=observed,
        raw_observations=int(stats.get("raw_observations", 0)),
        duplicate_edges_removed=int(stats.get("duplicate_edges_removed", 0)),
        collisions_detected=int(stats.get("collisions_detected", 0)),
        raw_self_loops=int(stats.get("raw_self_loops", 0)),
        provenance={k: stats[k] for k in ("hash", "hash_version", "hash_seed") if k in stats} or CleanGraph(graph).provenance,
    )


def load_any_graph(path) -> CleanGraph:
    """Load a clean-graph directory, a GraphML file, or a bare edge list."""
    from .graph import read_graphml

    if os.path.isdir(path):
        return load_clean(path)
    if str(path).endswith((".graphml", ".xml")):
        return CleanGraph(read_graphml(path), provenance={"hash": "unknown"})
    graph, _ = read_edge_list(path)
    return CleanGraph(graph, provenance={"hash": "unknown"})
