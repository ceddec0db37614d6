"""Undirected simple graphs over 64-bit node IDs, plus GraphML and edge-list I/O.

A :class:`SocialGraph` is stored in compressed sparse row form: ``ids`` holds
the node IDs in ascending order and row ``i`` of (``indptr``, ``indices``)
lists the positions of node ``ids[i]``'s neighbours, also ascending.  Since
``ids`` is sorted, mapping a row through ``ids`` yields the neighbour IDs in
ascending ID order too.
"""

from __future__ import annotations

import io
import os
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .errors import (
    DirectedGraphError,
    DuplicateNodeError,
    EdgeListParseError,
    MalformedGraphMLError,
    NodeNotFoundError,
    SelfLoopError,
    UnknownNodeError,
)

ID_DTYPE = np.uint64
GRAPHML_NS = "http://graphml.graphdrawing.org/xmlns"


@dataclass(frozen=True, order=True)
class EdgeRecord:
    u: int
    v: int


def canonicalize_edge(u: int, v: int) -> EdgeRecord:
    """Return the undirected edge ``{u, v}`` with its endpoints ordered."""
    if u == v:
        raise SelfLoopError(f"self-loop on node {u}")
    return EdgeRecord(u, v) if u < v else EdgeRecord(v, u)


def canonical_edge_arrays(u, v) -> tuple[np.ndarray, np.ndarray, int]:
    """Canonicalize and de-duplicate edge arrays.

    Returns ``(lo, hi, duplicates)`` with ``lo < hi`` row-wise, sorted
    lexicographically.  Self-loops raise :class:`SelfLoopError`.
    """
    u = np.asarray(u, dtype=ID_DTYPE).ravel()
    v = np.asarray(v, dtype=ID_DTYPE).ravel()
    if u.shape != v.shape:
        raise ValueError("endpoint arrays differ in length")
    loops = u == v
    if loops.any():
        raise SelfLoopError(f"self-loop on node {int(u[np.argmax(loops)])}")
    lo = np.minimum(u, v)
    hi = np.maximum(u, v)
    if lo.size == 0:
        return lo, hi, 0
    order = np.lexsort((hi, lo))
    lo, hi = lo[order], hi[order]
    keep = np.ones(lo.size, dtype=bool)
    keep[1:] = (lo[1:] != lo[:-1]) | (hi[1:] != hi[:-1])
    return lo[keep], hi[keep], int(lo.size - keep.sum())


class SocialGraph:
    """Immutable undirected simple graph.

    Build one with :meth:`from_edges` or :meth:`from_adjacency`; the raw
    constructor trusts its arguments unless ``validate=True``.
    """

    __slots__ = ("ids", "indptr", "indices", "_edge_count")

    def __init__(self, ids, indptr, indices, *, validate: bool = False):
        self.ids = np.asarray(ids, dtype=ID_DTYPE)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        for arr in (self.ids, self.indptr, self.indices):
            arr.setflags(write=False)
        self._edge_count = int(self.indices.size // 2)
        if validate:
            problems = self.invariant_violations()
            if problems:
                from .errors import IntegrityError

                raise IntegrityError(problems)

    # -- construction -------------------------------------------------

    @classmethod
    def from_edges(cls, u=(), v=(), nodes: Iterable[int] | np.ndarray = ()) -> "SocialGraph":
        """Build a graph from endpoint arrays; duplicates collapse silently."""
        lo, hi, _ = canonical_edge_arrays(u, v)
        extra = np.asarray(list(nodes) if not isinstance(nodes, np.ndarray) else nodes, dtype=ID_DTYPE)
        ids = np.unique(np.concatenate([lo, hi, extra]))
        n = ids.size
        iu = np.searchsorted(ids, lo)
        iv = np.searchsorted(ids, hi)
        rows = np.concatenate([iu, iv])
        cols = np.concatenate([iv, iu])
        order = np.lexsort((cols, rows))
        indices = cols[order]
        counts = np.bincount(rows, minlength=n)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        return cls(ids, indptr, indices)

    @classmethod
    def from_edge_records(cls, edges: Iterable[tuple[int, int]], nodes: Iterable[int] = ()) -> "SocialGraph":
        pairs = list(edges)
        u = np.array([p[0] for p in pairs], dtype=ID_DTYPE)
        v = np.array([p[1] for p in pairs], dtype=ID_DTYPE)
        return cls.from_edges(u, v, nodes=list(nodes))

    @classmethod
    def from_adjacency(cls, adjacency: dict[int, Iterable[int]], *, validate: bool = True) -> "SocialGraph":
        """Build directly from a ``{node: neighbours}`` mapping.

        With ``validate=False`` the mapping is taken verbatim, which lets
        tests construct deliberately broken graphs.
        """
        ids = np.array(sorted(adjacency), dtype=ID_DTYPE)
        pos = {int(x): i for i, x in enumerate(ids)}
        indptr = [0]
        indices: list[int] = []
        for node in ids.tolist():
            row = sorted(pos[int(w)] for w in adjacency[node])
            indices.extend(row)
            indptr.append(len(indices))
        return cls(ids, indptr, indices, validate=validate)

    # -- queries -------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return int(self.ids.size)

    @property
    def edge_count(self) -> int:
        return self._edge_count

    @property
    def nodes(self) -> np.ndarray:
        return self.ids

    def __len__(self) -> int:
        return self.n_nodes

    def __contains__(self, node) -> bool:
        return self._position(node) is not None

    def _position(self, node) -> int | None:
        try:
            key = ID_DTYPE(node)
        except (OverflowError, ValueError, TypeError):
            return None
        i = int(np.searchsorted(self.ids, key))
        if i < self.ids.size and self.ids[i] == key:
            return i
        return None

    def index_of(self, node) -> int:
        i = self._position(node)
        if i is None:
            raise NodeNotFoundError(node)
        return i

    def degrees(self) -> np.ndarray:
        """Degree of every node, aligned with :attr:`ids`."""
        return np.diff(self.indptr)

    def degree(self, node) -> int:
        i = self.index_of(node)
        return int(self.indptr[i + 1] - self.indptr[i])

    def neighbor_positions(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def adjacency(self, node) -> np.ndarray:
        """Neighbour IDs of ``node`` in ascending order."""
        return self.ids[self.neighbor_positions(self.index_of(node))]

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Canonical edges ``(u, v)`` with ``u < v``, lexicographically sorted."""
        rows = np.repeat(np.arange(self.n_nodes, dtype=np.int64), self.degrees())
        mask = rows < self.indices
        return self.ids[rows[mask]], self.ids[self.indices[mask]]

    def edges(self) -> Iterator[tuple[int, int]]:
        u, v = self.edge_arrays()
        return zip(u.tolist(), v.tolist())

    def subgraph(self, nodes) -> "SocialGraph":
        """Induced subgraph on ``nodes`` (all of which must be present)."""
        keep_ids = np.unique(np.asarray(nodes, dtype=ID_DTYPE))
        pos = np.array([self.index_of(x) for x in keep_ids.tolist()], dtype=np.int64)
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[pos] = True
        u, v = self.edge_arrays()
        iu = np.searchsorted(self.ids, u)
        iv = np.searchsorted(self.ids, v)
        inside = mask[iu] & mask[iv]
        return SocialGraph.from_edges(u[inside], v[inside], nodes=keep_ids)

    def relabel(self, mapping) -> "SocialGraph":
        """Apply an injective ``old id -> new id`` mapping (dict or callable)."""
        f = mapping.__getitem__ if isinstance(mapping, dict) else mapping
        new_ids = np.array([f(x) for x in self.ids.tolist()], dtype=ID_DTYPE)
        if np.unique(new_ids).size != new_ids.size:
            raise ValueError("relabel mapping is not injective")
        u, v = self.edge_arrays()
        lookup = dict(zip(self.ids.tolist(), new_ids.tolist()))
        nu = np.array([lookup[x] for x in u.tolist()], dtype=ID_DTYPE)
        nv = np.array([lookup[x] for x in v.tolist()], dtype=ID_DTYPE)
        return SocialGraph.from_edges(nu, nv, nodes=new_ids)

    def invariant_violations(self, limit: int = 100) -> list[str]:
        """Describe every broken structural invariant (empty list when valid)."""
        problems: list[str] = []
        n = self.n_nodes
        if self.indptr.size != n + 1 or (n and self.indptr[-1] != self.indices.size):
            return [f"malformed row pointers for {n} nodes"]
        if n > 1 and np.any(self.ids[1:] <= self.ids[:-1]):
            problems.append("node IDs not strictly ascending")
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= n):
            return problems + ["neighbour index out of range"]
        if self.indices.size % 2:
            problems.append(f"odd adjacency total {self.indices.size}")
        edge_set = set()
        for i in range(n):
            row = self.neighbor_positions(i)
            node = int(self.ids[i])
            if np.any(row == i):
                problems.append(f"self-loop on {node}")
            if row.size > 1 and np.any(row[1:] <= row[:-1]):
                problems.append(f"adjacency of {node} unsorted or has parallel edges")
            for j in row.tolist():
                edge_set.add((i, j))
            if len(problems) >= limit:
                return problems
        for i, j in edge_set:
            if (j, i) not in edge_set:
                problems.append(f"asymmetric edge {int(self.ids[i])} -> {int(self.ids[j])}")
                if len(problems) >= limit:
                    break
        return problems

    def __eq__(self, other) -> bool:
        if not isinstance(other, SocialGraph):
            return NotImplemented
        return (
            np.array_equal(self.ids, other.ids)
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"SocialGraph(n_nodes={self.n_nodes}, edge_count={self.edge_count})"


# -- GraphML -----------------------------------------------------------


def export_graphml(g: SocialGraph) -> str:
    """Serialize ``g`` as minimal GraphML: IDs only, no attributes."""
    out = io.StringIO()
    out.write('<?xml version="1.0" encoding="UTF-8"?>\n')
    out.write(f'<graphml xmlns="{GRAPHML_NS}">\n')
    out.write('  <graph id="G" edgedefault="undirected">\n')
    for node in g.ids.tolist():
        out.write(f'    <node id="{node}"/>\n')
    for k, (u, v) in enumerate(g.edges()):
        out.write(f'    <edge id="e{k}" source="{u}" target="{v}"/>\n')
    out.write("  </graph>\n</graphml>\n")
    return out.getvalue()


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _parse_id(text: str | None, what: str) -> int:
    if text is None:
        raise MalformedGraphMLError(f"{what} without id")
    try:
        value = int(text, 10)
    except ValueError:
        raise MalformedGraphMLError(f"{what} id {text!r} is not a decimal integer") from None
    if not 0 <= value < 2**64:
        raise MalformedGraphMLError(f"{what} id {text!r} outside 64-bit range")
    return value


def import_graphml(doc: str | bytes) -> SocialGraph:
    try:
        root = ET.fromstring(doc)
    except ET.ParseError as exc:
        raise MalformedGraphMLError(str(exc)) from None
    if _local(root.tag) != "graphml":
        raise MalformedGraphMLError(f"root element is <{_local(root.tag)}>, expected <graphml>")
    graphs = [el for el in root if _local(el.tag) == "graph"]
    if len(graphs) != 1:
        raise MalformedGraphMLError(f"expected one <graph> element, found {len(graphs)}")
    graph = graphs[0]
    if graph.get("edgedefault", "directed") != "undirected":
        raise DirectedGraphError("only edgedefault=\"undirected\" graphs are supported")

    nodes: list[int] = []
    seen: set[int] = set()
    us: list[int] = []
    vs: list[int] = []
    for el in graph:
        tag = _local(el.tag)
        if tag == "node":
            node = _parse_id(el.get("id"), "node")
            if node in seen:
                raise DuplicateNodeError(f"node {node} declared twice")
            seen.add(node)
            nodes.append(node)
        elif tag == "edge":
            if el.get("directed") == "true":
                raise DirectedGraphError("directed edge in undirected graph")
            us.append(_parse_id(el.get("source"), "edge source"))
            vs.append(_parse_id(el.get("target"), "edge target"))
    for u, v in zip(us, vs):
        for end in (u, v):
            if end not in seen:
                raise UnknownNodeError(f"edge ({u}, {v}) references undeclared node {end}")
    return SocialGraph.from_edges(
        np.array(us, dtype=ID_DTYPE), np.array(vs, dtype=ID_DTYPE), nodes=np.array(nodes, dtype=ID_DTYPE)
    )


def write_graphml(g: SocialGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(export_graphml(g))


def read_graphml(path) -> SocialGraph:
    with open(path, "rb") as fh:
        return import_graphml(fh.read())


# -- TAB-separated edge lists -------------------------------------------


def write_edge_list(g: SocialGraph, path) -> int:
    """Write canonical edges, one ``u<TAB>v`` per line; returns the line count."""
    u, v = g.edge_arrays()
    with open(path, "w", encoding="ascii") as fh:
        if u.size:
            fh.write("\n".join(f"{a}\t{b}" for a, b in zip(u.tolist(), v.tolist())))
            fh.write("\n")
    return int(u.size)


def _parse_edge_lines(path) -> tuple[np.ndarray, np.ndarray]:
    us: list[int] = []
    vs: list[int] = []
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise EdgeListParseError(path, line_no, f"expected 2 TAB-separated fields, got {len(fields)}")
            try:
                a, b = int(fields[0], 10), int(fields[1], 10)
            except ValueError:
                raise EdgeListParseError(path, line_no, f"non-numeric token in {line!r}") from None
            if a < 0 or b < 0 or a >= 2**64 or b >= 2**64:
                raise EdgeListParseError(path, line_no, "ID outside unsigned 64-bit range")
            if a == b:
                raise EdgeListParseError(path, line_no, f"self-loop on {a}")
            us.append(a)
            vs.append(b)
    return np.array(us, dtype=ID_DTYPE), np.array(vs, dtype=ID_DTYPE)


def read_edge_list_arrays(path) -> tuple[np.ndarray, np.ndarray]:
    """Raw endpoint arrays in file order (no canonicalization)."""
    if os.path.getsize(path) == 0:
        empty = np.zeros(0, dtype=ID_DTYPE)
        return empty, empty.copy()
    try:
        data = np.loadtxt(path, dtype=ID_DTYPE, delimiter="\t", ndmin=2, comments=None)
    except ValueError:
        # slow path pinpoints the offending line
        return _parse_edge_lines(path)
    if data.shape[1] != 2:
        return _parse_edge_lines(path)
    u, v = data[:, 0].copy(), data[:, 1].copy()
    if np.any(u == v):
        return _parse_edge_lines(path)
    return u, v


def read_edge_list(path, nodes=()) -> tuple[SocialGraph, int]:
    """Load an edge list, returning ``(graph, duplicate_count)``.

    Reversed and repeated edges are tolerated and collapsed.
    """
    u, v = read_edge_list_arrays(path)
    lo, hi, dups = canonical_edge_arrays(u, v)
    return SocialGraph.from_edges(lo, hi, nodes=np.asarray(nodes, dtype=ID_DTYPE)), dups
