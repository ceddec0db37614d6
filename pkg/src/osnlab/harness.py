"""End-to-end experiment: world -> service -> BFS and UNI crawls -> clean -> analyze -> compare."""

from __future__ import annotations

import hashlib
import logging
import math
import os
import time
from dataclasses import dataclass, field, fields, replace


from . import crawler as cr
from .errors import ConfigError, StageError
from .metrics import MetricsReport, full_report, write_report
from .pipeline import clean, save_clean
from .service import OSNService, ServiceConfig, ServiceServer, default_credential
from .world import WorldConfig, generate_world, save_world

log = logging.getLogger(__name__)

Z_ONE_SIDED_01 = 2.326  # one-sided p < 0.01
FRAGMENTATION_MARGIN = 0.001


@dataclass
class ExperimentConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    friend_cap: int | None = 40
    rate_limit: float = 0.0
    listen: str = "127.0.0.1:0"
    username: str = "crawler"
    password: str = "crawler"
    bfs_max_depth: int = 3
    bfs_max_minutes: float | None = None
    bfs_max_visited: int = 0
    uni_queues: int = 8
    uni_queue_len: int = 4096
    uni_seed: int = 1
    q: float = 0.9
    spectral_k: int = 20
    spectral_max_iter: int = 100
    hop_sources: int = 256
    out_dir: str = "experiment-out"

    def validate(self) -> None:
        self.world.validate()
        ServiceConfig(friend_cap=self.friend_cap, rate_limit=self.rate_limit).validate()
        self.bfs_limits.validate()
        if self.uni_queues < 1 or self.uni_queue_len < 1:
            raise ConfigError("UNI needs at least one non-empty queue")
        if not 0 < self.q <= 1:
            raise ConfigError("q must lie in (0, 1]")

    @property
    def bfs_limits(self) -> cr.CrawlLimits:
        minutes = self.bfs_max_minutes
        return cr.CrawlLimits(self.bfs_max_depth, None if minutes is None else minutes * 60, self.bfs_max_visited)

    # flat key=value form: world fields as "world.<name>", the rest by name
    def to_kv(self) -> dict[str, str]:
        out = {f"world.{k}": v for k, v in self.world.to_dict().items()}
        for f in fields(self):
            if f.name != "world":
                out[f.name] = str(getattr(self, f.name))
        return out

    @classmethod
    def from_kv(cls, kv: dict[str, str], base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        cfg = base or cls()
        world_kv = {k[6:]: v for k, v in kv.items() if k.startswith("world.")}
        unknown_world = set(world_kv) - {f.name for f in fields(WorldConfig)}
        if unknown_world:
            raise ConfigError(f"unknown world keys: {sorted(unknown_world)}")
        world = WorldConfig.from_dict({**{k: str(v) for k, v in cfg.world.__dict__.items()}, **world_kv})
        updates: dict[str, object] = {"world": world}
        types = {f.name: f.type for f in fields(cls)}
        for k, v in kv.items():
            if k.startswith("world."):
                continue
            if k not in types:
                raise ConfigError(f"unknown config key {k!r}")
            updates[k] = _coerce(types[k], v)
        return replace(cfg, **updates)


def _coerce(type_name: str, raw: str):
    if raw in ("None", "none", ""):
        if "None" in str(type_name):
            return None
        raise ConfigError(f"value required for {type_name}")
    t = str(type_name)
    if t.startswith("int"):
        return int(raw)
    if t.startswith("float"):
        return float(raw)
    return raw


def load_config(path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    kv = cr.read_kv(path) if path else {}
    kv.update(overrides or {})
    return ExperimentConfig.from_kv(kv)


# -- comparison ----------------------------------------------------------------


@dataclass
class Verdict:
    name: str
    sample: str
    positive: bool
    statistic: float
    threshold: float
    note: str = ""


@dataclass
class ComparisonSummary:
    reports: dict[str, MetricsReport]
    verdicts: list[Verdict]
    crawl_stats: dict[str, dict[str, float]] = field(default_factory=dict)

    def verdict(self, name: str, sample: str) -> Verdict:
        for v in self.verdicts:
            if v.name == name and v.sample == sample:
                return v
        raise KeyError((name, sample))

    def families(self) -> set[str]:
        return {v.name for v in self.verdicts}

    def to_kv(self) -> dict[str, str]:
        out: dict[str, str] = {}
        for v in self.verdicts:
            key = f"verdict.{v.name}.{v.sample}"
            out[f"{key}.positive"] = str(int(v.positive))
            out[f"{key}.statistic"] = repr(float(v.statistic))
            out[f"{key}.threshold"] = repr(float(v.threshold))
            if v.note:
                out[f"{key}.note"] = v.note
        for label, report in self.reports.items():
            for k, val in report.scalars().items():
                out[f"{label}.{k}"] = "undefined" if val is None else str(val)
        for label, stats in self.crawl_stats.items():
            for k, val in stats.items():
                out[f"crawl.{label}.{k}"] = str(val)
        return out


def compare_reports(
    a: MetricsReport,
    b: MetricsReport,
    truth: MetricsReport,
    labels: tuple[str, str] = ("bfs", "uni"),
    crawl_stats: dict[str, dict[str, float]] | None = None,
    expected_hit_rate: float | None = None,
) -> ComparisonSummary:
    """Bias verdicts for two samples against the ground truth.

    degree_bias       sample mean degree above the truth mean (capped like the
                      sample when a friend cap applies), one-sided z > 2.326
    median_pinning    sample median equals the friend cap
    component_fragmentation
                      largest-component fraction below the truth's by > 0.001
    privacy_discrepancy
                      private / existing hits exceeds 0 by > 3 standard errors
    hit_rate          existing-user hit rate within 3 standard errors of the
                      expected ID density (UNI samples only)
    """
    for r in (a, b):
        if r.q != truth.q or r.spectral_k != truth.spectral_k:
            raise ConfigError("reports computed with different q or spectral_k")
    if labels[0] == labels[1]:
        raise ConfigError("sample labels must differ")
    crawl_stats = crawl_stats or {}
    verdicts: list[Verdict] = []
    for label, r in zip(labels, (a, b)):
        # a capped sample can only be judged against the truth under the same cap
        both_capped = r.avg_degree_capped is not None and truth.avg_degree_capped is not None
        mean = r.avg_degree_capped if both_capped else r.avg_degree
        ref = truth.avg_degree_capped if both_capped else truth.avg_degree
        se = r.degree_sd / math.sqrt(r.n_scope) if r.n_scope else 0.0
        z = (mean - ref) / se if se > 0 else 0.0
        verdicts.append(Verdict("degree_bias", label, z > Z_ONE_SIDED_01, z, Z_ONE_SIDED_01,
                                f"mean {mean:.4g} vs truth {ref:.4g}"))
        cap = r.degree_cap
        verdicts.append(Verdict("median_pinning", label, cap is not None and r.median_degree == cap,
                                float(r.median_degree), float("inf") if cap is None else float(cap),
                                "pinned" if cap is not None and r.median_degree == cap else "not pinned"))
        limit = truth.largest_component_fraction - FRAGMENTATION_MARGIN
        verdicts.append(Verdict("component_fragmentation", label, r.largest_component_fraction < limit,
                                r.largest_component_fraction, limit))
        stats = crawl_stats.get(label)
        if stats is None:
            continue
        existing = stats["visited"] + stats["private"]
        p = stats["private_fraction"]
        se_p = math.sqrt(p * (1 - p) / existing) if existing else 0.0
        verdicts.append(Verdict("privacy_discrepancy", label, existing > 0 and p > 3 * se_p, p, 3 * se_p,
                                f"{stats['private']} private of {existing} existing"))
        if stats.get("mode") == "uni" and expected_hit_rate is not None and stats["attempts"]:
            h, n = stats["hit_rate"], stats["attempts"]
            band = 3 * math.sqrt(expected_hit_rate * (1 - expected_hit_rate) / n)
            verdicts.append(Verdict("hit_rate", label, abs(h - expected_hit_rate) <= band, h, expected_hit_rate,
                                    f"band +/-{band:.3g} over {n} probes"))
    return ComparisonSummary({labels[0]: a, labels[1]: b, "truth": truth}, verdicts, crawl_stats)


# -- manifest -----------------------------------------------------------------

MANIFEST = "manifest.tsv"


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(directory) -> dict[str, str]:
    entries = {}
    for root, _, files in os.walk(directory):
        for name in files:
            path = os.path.join(root, name)
            rel = os.path.relpath(path, directory)
            if rel != MANIFEST:
                entries[rel] = _digest(path)
    with open(os.path.join(directory, MANIFEST), "w", encoding="utf-8") as fh:
        for rel in sorted(entries):
            fh.write(f"{rel}\t{entries[rel]}\n")
    return entries


def verify_manifest(directory) -> list[str]:
    """Paths whose content no longer matches the manifest (or that vanished)."""
    drift = []
    with open(os.path.join(directory, MANIFEST), encoding="utf-8") as fh:
        for line in fh:
            rel, digest = line.rstrip("\n").split("\t")
            path = os.path.join(directory, rel)
            if not os.path.exists(path) or _digest(path) != digest:
                drift.append(rel)
    return drift


# -- experiment -----------------------------------------------------------------


class _Stage:
    def __init__(self, name: str, timings: dict[str, float]):
        self.name = name
        self.timings = timings

    def __enter__(self):
        log.info("stage %s ...", self.name)
        self.start = time.monotonic()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timings[self.name] = time.monotonic() - self.start
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc


def _write_kv(path, kv: dict[str, str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in kv.items():
            fh.write(f"{k}={v}\n")


def run_experiment(cfg: ExperimentConfig) -> ComparisonSummary:
    cfg.validate()
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    _write_kv(os.path.join(out, "config"), cfg.to_kv())
    timings: dict[str, float] = {}

    with _Stage("synth", timings):
        world = generate_world(cfg.world)
        save_world(world, os.path.join(out, "world"))

    cred = default_credential(world, cfg.username, cfg.password)
    service = OSNService(world, ServiceConfig(cfg.listen, cfg.friend_cap, cfg.rate_limit, [cred]))
    host, port = ServiceConfig(cfg.listen).host_port
    with _Stage("serve", timings):
        server = ServiceServer(service, host, port).start()
    try:
        with _Stage("crawl_bfs", timings):
            bfs = cr.bfs_crawl(server.url, cfg.username, cfg.password, cfg.bfs_limits,
                               out_dir=os.path.join(out, "raw_bfs"))
        with _Stage("crawl_uni", timings):
            queues = cr.generate_uniform_queues(cfg.uni_queues, cfg.uni_queue_len, world.id_space_bits, cfg.uni_seed)
            uni = cr.uniform_crawl(server.url, cfg.username, cfg.password, queues,
                                   out_dir=os.path.join(out, "raw_uni"))
    finally:
        server.stop()

    with _Stage("clean", timings):
        clean_bfs, clean_uni = clean(bfs), clean(uni)
        save_clean(clean_bfs, os.path.join(out, "clean_bfs"))
        save_clean(clean_uni, os.path.join(out, "clean_uni"))

    kw = dict(q=cfg.q, spectral_k=cfg.spectral_k, degree_cap=cfg.friend_cap,
              sample_sources=cfg.hop_sources, spectral_max_iter=cfg.spectral_max_iter)
    with _Stage("analyze", timings):
        truth = full_report(world.graph, **kw)
        rep_bfs = full_report(clean_bfs, **kw)
        rep_uni = full_report(clean_uni, **kw)
        for label, rep in (("truth", truth), ("bfs", rep_bfs), ("uni", rep_uni)):
            write_report(rep, os.path.join(out, f"analysis_{label}"))

    stats = {"bfs": {**cr.crawl_statistics(bfs), "mode": "bfs"}, "uni": {**cr.crawl_statistics(uni), "mode": "uni"}}
    expected = world.n_users / 2**world.id_space_bits
    summary = compare_reports(rep_bfs, rep_uni, truth, ("bfs", "uni"), stats, expected)
    kv = summary.to_kv()
    kv.update({f"timing.{k}": f"{v:.2f}" for k, v in timings.items()})
    kv["service.requests"] = str(service.stats["requests"])
    kv["service.throttled"] = str(service.stats["throttled"])
    _write_kv(os.path.join(out, "summary"), kv)
    write_manifest(out)
    log.info("experiment finished: %s", ", ".join(f"{k} {v:.1f}s" for k, v in timings.items()))
    return summary
