"""Ground-truth synthetic social networks.

Friendships come from an erased configuration model with a truncated
power-law degree law; user IDs are scattered uniformly over a sparse ID space
so that a random probe hits an existing user with probability ``2**-d``.
All randomness flows from one ``numpy.random.Generator`` (PCG64) seeded with
``rng_seed``, so a config reproduces its world exactly.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import asdict, dataclass, fields
from functools import cached_property

import numpy as np

from .errors import ConfigError, NodeNotFoundError
from .graph import ID_DTYPE, SocialGraph, read_edge_list, write_edge_list

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WorldConfig:
    n_users: int = 100_000
    gamma: float = 2.5
    min_degree: int = 30
    max_degree: int = 1000
    id_space_bits: int | None = None
    density_exponent: int = 3
    privacy_fraction: float = 0.266
    rng_seed: int = 0

    @property
    def resolved_id_space_bits(self) -> int:
        """ID space width; derived from ``n_users`` and the density when unset."""
        if self.id_space_bits is not None:
            return self.id_space_bits
        return max(1, round(math.log2(self.n_users))) + self.density_exponent

    def validate(self) -> None:
        if self.n_users < 1:
            raise ConfigError("n_users must be positive")
        if self.gamma <= 1:
            raise ConfigError("gamma must exceed 1")
        if self.min_degree < 1 or self.min_degree > self.max_degree:
            raise ConfigError("need 1 <= min_degree <= max_degree")
        if self.max_degree >= self.n_users:
            raise ConfigError(f"max_degree {self.max_degree} infeasible for {self.n_users} users")
        bits = self.resolved_id_space_bits
        if not 1 <= bits <= 63:
            raise ConfigError("id_space_bits must lie in [1, 63]")
        if self.n_users > 2**bits:
            raise ConfigError(f"{self.n_users} users do not fit a {bits}-bit ID space")
        if not 0.0 <= self.privacy_fraction <= 1.0:
            raise ConfigError("privacy_fraction must lie in [0, 1]")

    def to_dict(self) -> dict[str, str]:
        d = asdict(self)
        d["id_space_bits"] = self.resolved_id_space_bits
        return {k: str(v) for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict[str, str]) -> "WorldConfig":
        kw = {}
        for f in fields(cls):
            if f.name not in d:
                continue
            raw = d[f.name]
            if f.name in ("gamma", "privacy_fraction"):
                kw[f.name] = float(raw)
            elif raw in ("", "None"):
                kw[f.name] = None
            else:
                kw[f.name] = int(raw)
        return cls(**kw)


def degree_law(cfg: WorldConfig) -> tuple[np.ndarray, np.ndarray]:
    """Support and probabilities of ``P(k) ~ k**-gamma`` on ``[min, max]``."""
    ks = np.arange(cfg.min_degree, cfg.max_degree + 1, dtype=np.int64)
    w = ks.astype(float) ** -cfg.gamma
    return ks, w / w.sum()


def target_mean_degree(cfg: WorldConfig) -> float:
    ks, p = degree_law(cfg)
    return float(ks @ p)


def sample_degree_sequence(cfg: WorldConfig, rng: np.random.Generator) -> np.ndarray:
    ks, p = degree_law(cfg)
    deg = rng.choice(ks, size=cfg.n_users, p=p)
    if deg.sum() % 2:
        # bump one node (or trim one at the cap) so stubs pair up
        i = int(rng.integers(cfg.n_users))
        deg[i] += 1 if deg[i] < cfg.max_degree else -1
    return deg


def erased_configuration_model(deg: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Pair stubs uniformly, then drop self-loops and parallel edges.

    Returns canonical ``(u, v)`` node-index arrays.
    """
    stubs = np.repeat(np.arange(deg.size, dtype=np.int64), deg)
    rng.shuffle(stubs)
    a, b = stubs[0::2], stubs[1::2]
    keep = a != b
    lo = np.minimum(a[keep], b[keep])
    hi = np.maximum(a[keep], b[keep])
    key = np.unique(lo * deg.size + hi)
    return key // deg.size, key % deg.size


@dataclass(eq=False)
class SyntheticWorld:
    """A generated population: friendship graph, ID assignment and privacy flags.

    ``id_of[i]`` is the ID given to the ``i``-th generated user.  ``graph`` is
    keyed by assigned ID; ``private`` is aligned with ``graph.ids``.
    """

    config: WorldConfig
    graph: SocialGraph
    id_of: np.ndarray
    private: np.ndarray
    target_degrees: np.ndarray | None = None

    @property
    def id_space_bits(self) -> int:
        return self.config.resolved_id_space_bits

    @property
    def n_users(self) -> int:
        return self.graph.n_nodes

    def is_id_assigned(self, user_id) -> bool:
        return user_id in self.graph

    def ground_truth_degree(self, user_id) -> int:
        return self.graph.degree(user_id)

    def privacy_of(self, user_id) -> bool:
        return bool(self.private[self.graph.index_of(user_id)])

    def friends(self, user_id) -> np.ndarray:
        return self.graph.adjacency(user_id)

    def are_friends(self, a, b) -> bool:
        row = self.graph.adjacency(a)
        i = int(np.searchsorted(row, ID_DTYPE(b)))
        return i < row.size and int(row[i]) == int(b)

    @cached_property
    def true_stats(self):
        from .metrics import full_report

        return full_report(self.graph)


def generate_world(cfg: WorldConfig) -> SyntheticWorld:
    cfg.validate()
    rng = np.random.default_rng(cfg.rng_seed)
    deg = sample_degree_sequence(cfg, rng)
    iu, iv = erased_configuration_model(deg, rng)

    lost = 1.0 - 2 * iu.size / deg.sum()
    if cfg.max_degree > math.sqrt(cfg.n_users * cfg.min_degree):
        log.warning(
            "max_degree %d exceeds sqrt(n*min_degree)=%.0f; erased %.1f%% of stubs",
            cfg.max_degree, math.sqrt(cfg.n_users * cfg.min_degree), 100 * lost,
        )

    bits = cfg.resolved_id_space_bits
    id_of = rng.choice(2**bits, size=cfg.n_users, replace=False).astype(ID_DTYPE)

    # exact-count privacy marking: each user private with probability p,
    # realized fraction pinned to round(p * n)
    n_private = round(cfg.privacy_fraction * cfg.n_users)
    private_idx = rng.permutation(cfg.n_users)[:n_private]
    private_by_index = np.zeros(cfg.n_users, dtype=bool)
    private_by_index[private_idx] = True

    graph = SocialGraph.from_edges(id_of[iu], id_of[iv], nodes=id_of)
    order = np.searchsorted(graph.ids, id_of)
    private = np.zeros(cfg.n_users, dtype=bool)
    private[order] = private_by_index
    return SyntheticWorld(cfg, graph, id_of, private, target_degrees=deg)


# -- persistence ----------------------------------------------------------

MANIFEST = "manifest.tsv"
EDGES = "edges.tsv"


def save_world(world: SyntheticWorld, directory) -> None:
    """Write ``edges.tsv`` and ``manifest.tsv`` (config echoed as ``# key=value`` header)."""
    os.makedirs(directory, exist_ok=True)
    write_edge_list(world.graph, os.path.join(directory, EDGES))
    private_of_index = world.private[np.searchsorted(world.graph.ids, world.id_of)]
    with open(os.path.join(directory, MANIFEST), "w", encoding="ascii") as fh:
        for k, v in world.config.to_dict().items():
            fh.write(f"# {k}={v}\n")
        fh.write("\n".join(
            f"{i}\t{x}\t{int(p)}" for i, (x, p) in enumerate(zip(world.id_of.tolist(), private_of_index.tolist()))
        ))
        fh.write("\n")


def load_world(directory) -> SyntheticWorld:
    header: dict[str, str] = {}
    rows: list[tuple[int, int, int]] = []
    with open(os.path.join(directory, MANIFEST), encoding="ascii") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                header[key] = value
            elif line:
                i, x, p = line.split("\t")
                rows.append((int(i), int(x), int(p)))
    rows.sort()
    cfg = WorldConfig.from_dict(header)
    id_of = np.array([r[1] for r in rows], dtype=ID_DTYPE)
    graph, _ = read_edge_list(os.path.join(directory, EDGES), nodes=id_of)
    private = np.zeros(graph.n_nodes, dtype=bool)
    private[np.searchsorted(graph.ids, id_of)] = np.array([r[2] for r in rows], dtype=bool)
    return SyntheticWorld(cfg, graph, id_of, private)
