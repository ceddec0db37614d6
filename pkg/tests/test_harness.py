import os
from dataclasses import replace

import pytest

from osnlab import harness
from osnlab.errors import ConfigError, StageError
from osnlab.graph import SocialGraph
from osnlab.harness import (
    ExperimentConfig,
    compare_reports,
    load_config,
    run_experiment,
    verify_manifest,
    write_manifest,
)
from osnlab.metrics import full_report
from osnlab.world import WorldConfig

FAMILIES = {"degree_bias", "median_pinning", "component_fragmentation", "privacy_discrepancy", "hit_rate"}


def star(leaves=5):
    return SocialGraph.from_edge_records([(0, leaf) for leaf in range(1, leaves + 1)])


def small_config(tmp_path, **kw):
    world = WorldConfig(n_users=3000, min_degree=30, max_degree=300, rng_seed=2)
    base = dict(world=world, uni_queues=2, uni_queue_len=2000, spectral_k=5, hop_sources=64,
                out_dir=str(tmp_path / "exp"))
    return ExperimentConfig(**{**base, **kw})


class TestCompare:
    def test_self_comparison_all_negative(self):
        truth = full_report(star(), 0.9, 3)
        summary = compare_reports(truth, truth, truth)
        assert summary.verdicts and not any(v.positive for v in summary.verdicts)
        assert summary.verdict("degree_bias", "bfs").statistic == 0

    def test_self_comparison_under_cap(self):
        truth = full_report(star(60), 0.9, 3, degree_cap=40)
        summary = compare_reports(truth, truth, truth)
        assert not summary.verdict("degree_bias", "uni").positive

    def test_mismatched_q(self):
        a = full_report(star(), 0.9, 3)
        b = full_report(star(), 0.8, 3)
        with pytest.raises(ConfigError):
            compare_reports(a, b, a)

    def test_same_labels(self):
        a = full_report(star(), 0.9, 3)
        with pytest.raises(ConfigError):
            compare_reports(a, a, a, labels=("x", "x"))

    def test_swap_only_swaps_labels(self):
        truth = full_report(SocialGraph.from_edge_records([(1, 2), (2, 3), (3, 1), (3, 4)]), 0.9, 2)
        a = full_report(star(), 0.9, 2)
        b = full_report(SocialGraph.from_edge_records([(1, 2)], nodes=[3]), 0.9, 2)
        fwd = compare_reports(a, b, truth, ("a", "b"))
        rev = compare_reports(b, a, truth, ("b", "a"))
        def key(v):
            return v.name, v.sample

        assert sorted(fwd.verdicts, key=key) == sorted(rev.verdicts, key=key)

    def test_fragmentation_detected(self):
        truth = full_report(star(), 0.9, 2)
        split = full_report(SocialGraph.from_edge_records([(1, 2)], nodes=[3]), 0.9, 2)
        summary = compare_reports(split, truth, truth, ("s", "t"))
        assert summary.verdict("component_fragmentation", "s").positive
        assert not summary.verdict("component_fragmentation", "t").positive

    def test_privacy_zero_and_cap_above_max(self):
        rep = full_report(star(), 0.9, 2, degree_cap=100)
        stats = {"visited": 50, "private": 0, "private_fraction": 0.0, "attempts": 400,
                 "hit_rate": 0.125, "mode": "uni"}
        summary = compare_reports(rep, rep, rep, ("bfs", "uni"), {"uni": stats}, expected_hit_rate=0.125)
        priv = summary.verdict("privacy_discrepancy", "uni")
        assert priv.statistic == 0 and not priv.positive
        assert summary.verdict("median_pinning", "bfs").note == "not pinned"
        assert summary.verdict("hit_rate", "uni").positive
        with pytest.raises(KeyError):
            summary.verdict("hit_rate", "bfs")

    def test_hit_rate_outside_band(self):
        rep = full_report(star(), 0.9, 2)
        stats = {"visited": 900, "private": 100, "private_fraction": 0.1, "attempts": 4000,
                 "hit_rate": 0.25, "mode": "uni"}
        summary = compare_reports(rep, rep, rep, ("bfs", "uni"), {"uni": stats}, expected_hit_rate=0.125)
        assert not summary.verdict("hit_rate", "uni").positive
        assert summary.verdict("privacy_discrepancy", "uni").positive


class TestConfig:
    def test_kv_roundtrip(self):
        cfg = ExperimentConfig(world=WorldConfig(n_users=500, id_space_bits=12), friend_cap=None, q=0.75)
        assert ExperimentConfig.from_kv(cfg.to_kv()) == cfg

    def test_file_with_overrides(self, tmp_path):
        path = tmp_path / "exp.conf"
        path.write_text("world.n_users=2000\nfriend_cap=25\nbfs_max_minutes=1.5\n")
        cfg = load_config(path, {"friend_cap": "None", "uni_seed": "9"})
        assert (cfg.world.n_users, cfg.friend_cap, cfg.bfs_max_minutes, cfg.uni_seed) == (2000, None, 1.5, 9)
        assert cfg.bfs_limits.max_duration == 90

    @pytest.mark.parametrize("kv", [{"bogus": "1"}, {"world.bogus": "1"}, {"q": ""}])
    def test_bad_keys(self, kv):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_kv(kv)

    def test_validate(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(q=1.5).validate()
        with pytest.raises(ConfigError):
            ExperimentConfig(uni_queues=0).validate()


class TestManifest:
    def test_drift(self, tmp_path):
        (tmp_path / "a").write_text("one")
        (tmp_path / "sub").mkdir()
        (tmp_path / "sub" / "b").write_text("two")
        entries = write_manifest(tmp_path)
        assert set(entries) == {"a", "sub/b"}
        assert verify_manifest(tmp_path) == []
        (tmp_path / "sub" / "b").write_text("changed")
        (tmp_path / "a").unlink()
        assert sorted(verify_manifest(tmp_path)) == ["a", "sub/b"]


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    cfg = small_config(tmp_path_factory.mktemp("run"))
    return cfg, run_experiment(cfg)


class TestExperiment:
    def test_all_families_present(self, small_run):
        _, summary = small_run
        assert summary.families() == FAMILIES
        assert {v.sample for v in summary.verdicts} == {"bfs", "uni"}

    def test_expected_directions(self, small_run):
        _, summary = small_run
        assert summary.verdict("degree_bias", "bfs").positive
        assert not summary.verdict("degree_bias", "uni").positive
        assert summary.verdict("median_pinning", "bfs").positive
        assert summary.verdict("privacy_discrepancy", "uni").positive

    def test_outputs_and_manifest(self, small_run):
        cfg, summary = small_run
        out = cfg.out_dir
        for name in ("config", "summary", "manifest.tsv", "world", "raw_bfs", "raw_uni", "clean_bfs", "clean_uni",
                     "analysis_truth", "analysis_bfs", "analysis_uni"):
            assert os.path.exists(os.path.join(out, name)), name
        assert verify_manifest(out) == []
        text = open(os.path.join(out, "summary")).read()
        for key in ("verdict.degree_bias.bfs.positive", "timing.analyze", "service.requests", "crawl.uni.hit_rate"):
            assert key + "=" in text
        back = load_config(os.path.join(out, "config"))
        # the written config pins the derived ID width
        assert back.world.id_space_bits == cfg.world.resolved_id_space_bits
        assert back == replace(cfg, world=replace(cfg.world, id_space_bits=back.world.id_space_bits))

    def test_stage_failure_is_named(self, tmp_path, monkeypatch):
        def boom(*a, **kw):
            raise RuntimeError("network down")

        monkeypatch.setattr(harness.cr, "bfs_crawl", boom)
        cfg = small_config(tmp_path, world=WorldConfig(n_users=300, min_degree=3, max_degree=30))
        with pytest.raises(StageError) as info:
            run_experiment(cfg)
        assert info.value.stage == "crawl_bfs"
        assert "network down" in str(info.value)
        # earlier stages' outputs stay on disk
        assert os.path.exists(os.path.join(cfg.out_dir, "world", "edges.tsv"))

    def test_rerun_gives_identical_bfs_sample(self, small_run, tmp_path):
        cfg, _ = small_run
        again = replace(cfg, out_dir=str(tmp_path / "again"))
        run_experiment(again)
        for rel in ("raw_bfs/visits.tsv", "clean_bfs/edges.tsv"):
            with open(os.path.join(cfg.out_dir, rel)) as a, open(os.path.join(again.out_dir, rel)) as b:
                assert a.read() == b.read(), rel

    def test_no_private_users(self, tmp_path):
        world = WorldConfig(n_users=600, min_degree=3, max_degree=40, privacy_fraction=0.0)
        summary = run_experiment(small_config(tmp_path, world=world, uni_queue_len=500))
        for sample in ("bfs", "uni"):
            v = summary.verdict("privacy_discrepancy", sample)
            assert v.statistic == 0 and not v.positive
