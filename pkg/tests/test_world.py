import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from osnlab.errors import ConfigError, NodeNotFoundError
from osnlab.metrics import DegreeHistogram, ccdf, ccdf_slope, connected_components, degree_distribution
from osnlab.world import (
    WorldConfig,
    generate_world,
    load_world,
    sample_degree_sequence,
    save_world,
    target_mean_degree,
)


@pytest.fixture(scope="module")
def world_10k():
    return generate_world(WorldConfig(n_users=10_000, gamma=2.5, min_degree=5, max_degree=200, rng_seed=7))


def test_two_regular_small_world():
    lost = []
    exact_seen = False
    for seed in range(30):
        w = generate_world(WorldConfig(n_users=6, gamma=50.0, min_degree=2, max_degree=2, rng_seed=seed))
        assert w.target_degrees.tolist() == [2] * 6  # 12 stub ends
        deg = w.graph.degrees()
        assert deg.max() <= 2
        lost.append(1 - deg.sum() / 12)
        if (deg == 2).all():
            exact_seen = True
            # a 2-regular graph is a union of cycles: edges == nodes per component
            assert sum(connected_components(w.graph)) == 6
            assert w.graph.edge_count == 6
    assert exact_seen
    assert np.mean(lost) < 0.5


def test_privacy_zero():
    w = generate_world(WorldConfig(n_users=2000, min_degree=3, max_degree=50, privacy_fraction=0.0))
    assert not w.private.any()


def test_privacy_fraction_pinned(world_10k):
    assert abs(world_10k.private.mean() - 0.266) <= 0.01


def test_ccdf_slope_matches_exponent():
    w = generate_world(WorldConfig(n_users=10_000, gamma=2.5, min_degree=5, max_degree=400, rng_seed=0))
    realized = ccdf_slope(ccdf(degree_distribution(w.graph)), 10, 100)
    ks, counts = np.unique(w.target_degrees, return_counts=True)
    target = ccdf_slope(ccdf(DegreeHistogram(dict(zip(ks.tolist(), counts.tolist())), 10_000)), 10, 100)
    assert realized == pytest.approx(-1.5, abs=0.2)
    assert realized == pytest.approx(target, abs=0.05)


def test_mean_degree_near_target(world_10k):
    target = target_mean_degree(world_10k.config)
    assert abs(world_10k.graph.degrees().mean() / target - 1) <= 0.10


def test_ids_distinct_and_in_range(world_10k):
    ids = world_10k.id_of
    assert np.unique(ids).size == ids.size
    assert int(ids.max()) < 2**world_10k.id_space_bits


def test_id_degree_independence(world_10k):
    g = world_10k.graph
    r = np.corrcoef(g.ids.astype(float), g.degrees().astype(float))[0, 1]
    assert abs(r) <= 0.05


def test_stub_loss_small_when_feasible():
    cfg = WorldConfig(n_users=10_000, gamma=2.5, min_degree=5, max_degree=200, rng_seed=3)
    assert cfg.max_degree <= math.sqrt(cfg.n_users * cfg.min_degree)
    w = generate_world(cfg)
    assert 1 - w.graph.degrees().sum() / w.target_degrees.sum() < 0.05


def test_oracle_lookups(world_10k):
    w = world_10k
    user = int(w.id_of[0])
    assert w.is_id_assigned(user)
    assert w.ground_truth_degree(user) == w.graph.adjacency(user).size
    free = next(x for x in range(2**w.id_space_bits) if not w.is_id_assigned(x))
    assert not w.is_id_assigned(free)
    with pytest.raises(NodeNotFoundError):
        w.ground_truth_degree(free)
    with pytest.raises(NodeNotFoundError):
        w.privacy_of(free)


def test_probe_hit_fraction(world_10k):
    w = world_10k
    rng = np.random.default_rng(11)
    probes = rng.integers(0, 2**w.id_space_bits, size=100_000, dtype=np.uint64)
    hits = np.isin(probes, w.graph.ids).sum()
    p = w.n_users / 2**w.id_space_bits
    sigma = math.sqrt(100_000 * p * (1 - p))
    assert abs(hits - 100_000 * p) <= 3 * sigma
    # derived bits keep the density near 2^-d
    assert p == pytest.approx(2**-w.config.density_exponent, rel=0.25)


def test_deterministic(tmp_path):
    cfg = WorldConfig(n_users=3000, min_degree=3, max_degree=100, rng_seed=42)
    save_world(generate_world(cfg), tmp_path / "a")
    save_world(generate_world(cfg), tmp_path / "b")
    for name in ("edges.tsv", "manifest.tsv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_save_load_roundtrip(tmp_path):
    w = generate_world(WorldConfig(n_users=3000, min_degree=3, max_degree=100, rng_seed=5))
    save_world(w, tmp_path)
    back = load_world(tmp_path)
    assert back.graph == w.graph
    assert np.array_equal(back.id_of, w.id_of)
    assert np.array_equal(back.private, w.private)
    assert back.config.to_dict() == w.config.to_dict()


@pytest.mark.parametrize(
    "kw",
    [
        dict(n_users=100, max_degree=100),
        dict(n_users=100, min_degree=10, max_degree=5),
        dict(gamma=1.0),
        dict(n_users=10, max_degree=5, id_space_bits=3),
        dict(privacy_fraction=1.5),
    ],
)
def test_invalid_configs(kw):
    with pytest.raises(ConfigError):
        generate_world(WorldConfig(**{"min_degree": 2, "max_degree": 50, **kw}))


@given(st.integers(20, 400), st.floats(1.5, 4.0), st.integers(1, 5), st.integers(0, 2**32))
@settings(max_examples=30, deadline=None)
def test_degree_sequence_properties(n, gamma, kmin, seed):
    cfg = WorldConfig(n_users=n, gamma=gamma, min_degree=kmin, max_degree=min(n - 1, 15), rng_seed=seed)
    deg = sample_degree_sequence(cfg, np.random.default_rng(seed))
    assert deg.size == n
    assert deg.sum() % 2 == 0
    assert deg.min() >= kmin and deg.max() <= cfg.max_degree


@given(st.integers(0, 2**31))
@settings(max_examples=10, deadline=None)
def test_generated_graph_is_simple(seed):
    w = generate_world(WorldConfig(n_users=300, min_degree=2, max_degree=30, rng_seed=seed))
    assert w.graph.invariant_violations() == []
    assert w.graph.n_nodes == 300
