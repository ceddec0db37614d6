"""Social-network-analysis metrics over a :class:`~osnlab.graph.SocialGraph`.

Degree distribution and CCDF, hop-plot and interpolated effective diameter,
local/average clustering, connected components, and the leading singular
values of the adjacency operator with the principal right singular vector.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .errors import NodeNotFoundError, UndefinedMetricError

log = logging.getLogger(__name__)


def _graph_of(g):
    return getattr(g, "graph", g)


# -- degrees ------------------------------------------------------------------


@dataclass
class DegreeHistogram:
    entries: dict[int, int]
    n: int

    def probability(self, k: int) -> float:
        return self.entries.get(k, 0) / self.n if self.n else 0.0


def degree_distribution(g) -> DegreeHistogram:
    graph = _graph_of(g)
    if graph.n_nodes == 0:
        raise UndefinedMetricError("degree distribution of an empty graph")
    ks, counts = np.unique(graph.degrees(), return_counts=True)
    return DegreeHistogram(dict(zip(ks.tolist(), counts.tolist())), graph.n_nodes)


def ccdf(hist: DegreeHistogram) -> list[tuple[int, float]]:
    """Fraction of nodes with degree >= k, at every realized degree k."""
    remaining = hist.n
    out = []
    for k in sorted(hist.entries):
        out.append((k, remaining / hist.n))
        remaining -= hist.entries[k]
    return out


def ccdf_slope(points, k_min: float, k_max: float) -> float:
    """Least-squares slope of log CCDF against log k over ``[k_min, k_max]``."""
    ks = np.array([k for k, _ in points], dtype=float)
    ps = np.array([p for _, p in points], dtype=float)
    sel = (ks >= k_min) & (ks <= k_max) & (ps > 0)
    return float(np.polyfit(np.log(ks[sel]), np.log(ps[sel]), 1)[0])


def _scope_degrees(g, degrees=None) -> np.ndarray:
    if degrees is None:
        degrees = _graph_of(g).degrees()
    arr = np.asarray(list(degrees.values()) if isinstance(degrees, dict) else degrees, dtype=np.int64)
    if arr.size == 0:
        raise UndefinedMetricError("degree statistics of an empty node set")
    return arr


def avg_degree(g, degrees=None) -> float:
    return float(_scope_degrees(g, degrees).mean())


def median_degree(g, degrees=None) -> int:
    """Lower median: element ``(n-1)//2`` of the ascending degree list."""
    arr = np.sort(_scope_degrees(g, degrees))
    return int(arr[(arr.size - 1) // 2])


# -- hops -------------------------------------------------------------------------


@dataclass
class HopPlot:
    """Cumulative counts ``g(h)`` of connected unordered pairs within ``h`` hops."""

    points: list[tuple[int, float]]
    total_pairs: float
    exact: bool = True
    sources: int = 0


def hop_plot(g, exact: bool = True, sample_sources: int | None = None, rng_seed: int = 0) -> HopPlot:
    graph = _graph_of(g)
    n = graph.n_nodes
    if n == 0:
        raise UndefinedMetricError("hop plot of an empty graph")
    if exact:
        sources = np.arange(n, dtype=np.int64)
    else:
        s = n if sample_sources is None else int(sample_sources)
        if s > n:
            log.warning("sample_sources %d > %d nodes; clamping", s, n)
            s = n
        if s < 1:
            raise ValueError("sample_sources must be >= 1")
        rng = np.random.default_rng(rng_seed)
        sources = np.sort(rng.choice(n, size=s, replace=False)).astype(np.int64)
    hist = _kernels.bfs_distance_histogram(graph.indptr, graph.indices, sources)
    last = int(np.flatnonzero(hist)[-1]) if hist.any() else 0
    cum = np.cumsum(hist[1 : last + 1])
    if sources.size == n:
        # every unordered pair was seen from both ends
        vals = [int(c) // 2 for c in cum.tolist()]
        total = vals[-1] if vals else 0
    else:
        scale = n / sources.size / 2.0
        vals = [float(c) * scale for c in cum.tolist()]
        total = vals[-1] if vals else 0.0
    return HopPlot(list(zip(range(1, last + 1), vals)), total, exact=sources.size == n, sources=int(sources.size))


def effective_diameter(hp: HopPlot, q: float = 0.9) -> float:
    """Hop count, linearly interpolated, by which a fraction ``q`` of pairs connect."""
    if not 0 < q <= 1:
        raise ValueError("q must lie in (0, 1]")
    if not hp.total_pairs:
        raise UndefinedMetricError("no connected pairs")
    exact = isinstance(hp.total_pairs, int)
    qq = Fraction(q) if exact else q
    prev_f = Fraction(0) if exact else 0.0
    for h, gh in hp.points:
        f = Fraction(gh, hp.total_pairs) if exact else gh / hp.total_pairs
        if f >= qq:
            return float((h - 1) + (qq - prev_f) / (f - prev_f))
        prev_f = f
    return float(hp.points[-1][0])


# -- clustering -----------------------------------------------------------------------


def triangle_counts(g) -> np.ndarray:
    graph = _graph_of(g)
    return _kernels.triangles_per_node(graph.indptr, graph.indices)


def local_clustering(g) -> np.ndarray:
    """Clustering coefficient of every node (0 where degree < 2)."""
    graph = _graph_of(g)
    k = graph.degrees().astype(float)
    tri = triangle_counts(graph).astype(float)
    denom = k * (k - 1)
    out = np.zeros(graph.n_nodes)
    np.divide(2.0 * tri, denom, out=out, where=denom > 0)
    return out


def clustering_coefficient(g, v) -> float:
    graph = _graph_of(g)
    i = graph.index_of(v)
    row = graph.neighbor_positions(i)
    k = row.size
    if k < 2:
        return 0.0
    # rows are sorted, so each neighbor pair test is a sorted intersection
    links = sum(np.intersect1d(graph.neighbor_positions(j), row, assume_unique=True).size for j in row.tolist())
    return links / (k * (k - 1))


def avg_clustering(g) -> float:
    graph = _graph_of(g)
    if graph.n_nodes == 0:
        raise UndefinedMetricError("clustering of an empty graph")
    return float(local_clustering(graph).mean())


def clustering_by_degree(g) -> dict[int, float]:
    graph = _graph_of(g)
    cc = local_clustering(graph)
    deg = graph.degrees()
    out = {}
    for k in np.unique(deg).tolist():
        out[k] = float(cc[deg == k].mean())
    return out


# -- components -------------------------------------------------------------------------


def component_labels(g) -> np.ndarray:
    graph = _graph_of(g)
    rows = np.repeat(np.arange(graph.n_nodes, dtype=np.int64), graph.degrees())
    mask = rows < graph.indices
    return _kernels.union_find_labels(graph.n_nodes, rows[mask], graph.indices[mask])


def connected_components(g) -> list[int]:
    """Component sizes, largest first (isolated nodes count as size 1)."""
    graph = _graph_of(g)
    if graph.n_nodes == 0:
        return []
    sizes = np.bincount(component_labels(graph))
    return sorted(sizes[sizes > 0].tolist(), reverse=True)


def largest_component_fraction(g) -> float:
    sizes = connected_components(g)
    return sizes[0] / sum(sizes) if sizes else 0.0


# -- spectrum -----------------------------------------------------------------------------


@dataclass
class SpectralResult:
    values: list[float]
    vectors: np.ndarray
    converged: bool
    degenerate: bool
    iterations: int


def adjacency_operator(g) -> sp.csr_matrix:
    graph = _graph_of(g)
    n = graph.n_nodes
    data = np.ones(graph.indices.size)
    return sp.csr_matrix((data, graph.indices, graph.indptr), shape=(n, n))


def _sign_fix(x: np.ndarray) -> np.ndarray:
    big = np.flatnonzero(np.abs(x) > 1e-12 * max(1.0, float(np.abs(x).max(initial=0.0))))
    if big.size and x[big[0]] < 0:
        return -x
    return x


def top_singular_values(g, k: int = 20, tol: float = 1e-10, max_iter: int = 2000, rng_seed: int = 0) -> SpectralResult:
    """Leading singular values of the adjacency operator, largest first.

    Block power iteration on ``A^T A = A^2``: each sweep multiplies the block
    by ``A`` twice and re-orthonormalizes it, which deflates every column
    against the ones before it; a Rayleigh-Ritz step on ``A`` inside the block
    extracts the values.  The adjacency lists are applied as a sparse
    operator and never densified.  Convergence means successive estimates of
    the first ``k`` values move by less than ``tol`` (relative to the largest)
    and their residuals are below ``sqrt(tol)``.
    """
    graph = _graph_of(g)
    n = graph.n_nodes
    if n == 0:
        raise UndefinedMetricError("spectrum of an empty graph")
    if k < 1:
        raise ValueError("k must be >= 1")
    k = min(k, n)
    A = adjacency_operator(graph)
    b = min(n, k + max(8, k // 2))
    rng = np.random.default_rng(rng_seed)
    X, _ = np.linalg.qr(rng.standard_normal((n, b)))
    prev = None
    converged = False
    theta = V = Z = None
    it = 0
    for it in range(1, max_iter + 1):
        Z = A @ X
        H = X.T @ Z
        theta, V = np.linalg.eigh((H + H.T) / 2)
        scale = max(1.0, float(np.abs(theta).max()))
        # largest |value| first; ties prefer the positive branch
        order = np.lexsort((-theta, -np.round(np.abs(theta) / scale, 12)))
        theta, V = theta[order], V[:, order]
        sv = np.abs(theta[:k])
        resid = np.linalg.norm(Z @ V[:, :k] - (X @ V[:, :k]) * theta[:k], axis=0)
        if (
            prev is not None
            and np.all(np.abs(sv - prev) < tol * scale)
            and np.all(resid < math.sqrt(tol) * scale)
        ):
            converged = True
            break
        prev = sv
        if b == n and it > 1:
            # the block spans the whole space: Ritz pairs are exact
            converged = True
            break
        X, _ = np.linalg.qr(A @ Z)
    vecs = X @ V[:, :k]
    vecs /= np.linalg.norm(vecs, axis=0)
    values = np.abs(theta[:k])
    degenerate = b > k and abs(values[-1] - abs(theta[k])) < tol * max(1.0, values[0])
    if not converged:
        log.warning("singular values not converged after %d iterations", it)
    return SpectralResult(values.tolist(), vecs, converged, bool(degenerate), it)


def principal_right_singular_vector(g, tol: float = 1e-10, max_iter: int = 2000, rng_seed: int = 0) -> np.ndarray:
    """Unit vector (aligned with node order) for the top singular value."""
    res = top_singular_values(g, 1, tol, max_iter, rng_seed)
    return _sign_fix(res.vectors[:, 0])


# -- report ----------------------------------------------------------------------------------


@dataclass
class MetricsReport:
    n_nodes: int
    n_edges: int
    degree_scope: str
    n_scope: int
    avg_degree: float
    median_degree: int
    degree_sd: float
    avg_degree_all: float
    median_degree_all: int
    max_degree: int
    degree_cap: int | None
    avg_degree_capped: float | None
    effective_diameter: float | None
    q: float
    hop_mode: str
    hop_sources: int
    component_sizes: list[int]
    largest_component_fraction: float
    avg_clustering: float
    top_singular_values: list[float]
    spectral_k: int
    spectral_converged: bool
    spectral_degenerate: bool
    spectral_bounds_ok: bool
    rng_seed: int
    histogram: DegreeHistogram = field(repr=False, default=None)
    ccdf: list[tuple[int, float]] = field(repr=False, default_factory=list)
    hop_plot: HopPlot = field(repr=False, default=None)
    clustering_by_degree: dict[int, float] = field(repr=False, default_factory=dict)
    principal_vector: np.ndarray = field(repr=False, default=None)

    SCALARS = (
        "n_nodes", "n_edges", "degree_scope", "n_scope", "avg_degree", "median_degree", "degree_sd",
        "avg_degree_all", "median_degree_all", "max_degree", "degree_cap", "avg_degree_capped",
        "effective_diameter", "q", "hop_mode", "hop_sources", "largest_component_fraction",
        "n_components", "isolated_nodes", "avg_clustering", "top_singular_value", "spectral_k",
        "spectral_converged", "spectral_degenerate", "spectral_bounds_ok", "rng_seed",
    )

    @property
    def n_components(self) -> int:
        return len(self.component_sizes)

    @property
    def isolated_nodes(self) -> int:
        return sum(1 for s in self.component_sizes if s == 1)

    @property
    def top_singular_value(self) -> float | None:
        return self.top_singular_values[0] if self.top_singular_values else None

    def scalars(self) -> dict[str, object]:
        return {name: getattr(self, name) for name in self.SCALARS}


def full_report(
    g,
    q: float = 0.9,
    spectral_k: int = 20,
    *,
    observed_degrees=None,
    degree_cap: int | None = None,
    exact_threshold: int = 5000,
    sample_sources: int = 256,
    rng_seed: int = 0,
    spectral_tol: float = 1e-8,
    spectral_max_iter: int = 1000,
) -> MetricsReport:
    """Compute every metric for ``g`` (a SocialGraph or CleanGraph).

    Degree statistics use ``observed_degrees`` (e.g. the capped friend-list
    lengths of visited users) when given, else all graph degrees; the
    whole-graph figures are reported alongside as ``*_all``.
    """
    graph = _graph_of(g)
    if graph.n_nodes == 0:
        raise UndefinedMetricError("report of an empty graph")
    if observed_degrees is None and getattr(g, "observed_degree", None):
        observed_degrees = g.observed_degree
    all_deg = graph.degrees()
    scope = _scope_degrees(graph, observed_degrees)
    capped = float(np.minimum(scope, degree_cap).mean()) if degree_cap else None

    hist = degree_distribution(graph)
    exact = graph.n_nodes <= exact_threshold
    hp = hop_plot(graph, exact=exact, sample_sources=min(sample_sources, graph.n_nodes), rng_seed=rng_seed)
    try:
        eff = effective_diameter(hp, q)
    except UndefinedMetricError:
        eff = None

    sizes = connected_components(graph)
    if graph.edge_count:
        spectrum = top_singular_values(graph, spectral_k, spectral_tol, spectral_max_iter, rng_seed)
        values, principal = spectrum.values, _sign_fix(spectrum.vectors[:, 0])
        converged, degenerate = spectrum.converged, spectrum.degenerate
        slack = 1e-6 * max(1.0, values[0])
        bounds_ok = all_deg.mean() - slack <= values[0] <= all_deg.max() + slack
        if converged and not bounds_ok:
            log.warning("top singular value %.6g outside [avg, max] degree bounds", values[0])
    else:
        values, principal = [0.0] * min(spectral_k, graph.n_nodes), np.zeros(graph.n_nodes)
        converged, degenerate, bounds_ok = True, graph.n_nodes > 1, True

    return MetricsReport(
        n_nodes=graph.n_nodes,
        n_edges=graph.edge_count,
        degree_scope="all" if observed_degrees is None else "visited",
        n_scope=int(scope.size),
        avg_degree=float(scope.mean()),
        median_degree=median_degree(graph, scope),
        degree_sd=float(scope.std(ddof=1)) if scope.size > 1 else 0.0,
        avg_degree_all=float(all_deg.mean()),
        median_degree_all=median_degree(graph),
        max_degree=int(all_deg.max()),
        degree_cap=degree_cap,
        avg_degree_capped=capped,
        effective_diameter=eff,
        q=q,
        hop_mode="exact" if hp.exact else "sampled",
        hop_sources=hp.sources,
        component_sizes=sizes,
        largest_component_fraction=sizes[0] / graph.n_nodes,
        avg_clustering=avg_clustering(graph),
        top_singular_values=[float(x) for x in values],
        spectral_k=spectral_k,
        spectral_converged=bool(converged),
        spectral_degenerate=bool(degenerate),
        spectral_bounds_ok=bool(bounds_ok),
        rng_seed=rng_seed,
        histogram=hist,
        ccdf=ccdf(hist),
        hop_plot=hp,
        clustering_by_degree=clustering_by_degree(graph),
        principal_vector=principal,
    )


def _fmt(value) -> str:
    if value is None:
        return "undefined"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_report(report: MetricsReport, directory) -> list[str]:
    """Write ``report`` plus plot-ready CSVs; returns the file names written."""
    os.makedirs(directory, exist_ok=True)

    def csv(name, header, rows):
        with open(os.path.join(directory, name), "w", encoding="ascii") as fh:
            fh.write(header + "\n")
            for row in rows:
                fh.write(",".join(_fmt(x) for x in row) + "\n")
        return name

    with open(os.path.join(directory, "report"), "w", encoding="ascii") as fh:
        for k, v in report.scalars().items():
            fh.write(f"{k}={_fmt(v)}\n")
    magnitudes = np.sort(np.abs(report.principal_vector))[::-1]
    return [
        "report",
        csv("degree.csv", "k,count", sorted(report.histogram.entries.items())),
        csv("ccdf.csv", "k,ccdf", report.ccdf),
        csv("hops.csv", "h,g", report.hop_plot.points),
        csv("cc_by_degree.csv", "k,mean_cc", sorted(report.clustering_by_degree.items())),
        csv("spectrum.csv", "rank,value", enumerate(report.top_singular_values, 1)),
        csv("principal_vector.csv", "rank,magnitude", enumerate(magnitudes.tolist(), 1)),
    ]


def read_report(directory) -> dict[str, str]:
    from .crawler import read_kv

    return read_kv(os.path.join(directory, "report"))
