"""Command-line entry point: ``osnlab <verb> ...``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import crawler as cr
from .errors import ConfigError, OSNLabError
from .graph import write_edge_list, write_graphml
from .harness import ExperimentConfig, load_config, run_experiment
from .metrics import full_report, write_report
from .pipeline import clean, extract_ego_network, integrity_check, load_any_graph, save_clean
from .service import OSNService, ServiceConfig, ServiceServer, default_credential
from .world import WorldConfig, generate_world, load_world, save_world

log = logging.getLogger("osnlab")


def _cap(value: str) -> int | None:
    cap = int(value)
    if cap < 0:
        raise argparse.ArgumentTypeError("cap must be >= 0")
    return cap or None


def _kv(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    return key.strip(), value.strip()


def _add_credentials(p: argparse.ArgumentParser) -> None:
    p.add_argument("--user", default="crawler")
    p.add_argument("--pass", "--password", dest="password", default="crawler")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="osnlab", description="Social network crawling lab")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("synth", help="generate a synthetic world")
    p.add_argument("--out", required=True)
    defaults = WorldConfig()
    p.add_argument("--users", type=int, default=defaults.n_users)
    p.add_argument("--gamma", type=float, default=defaults.gamma)
    p.add_argument("--min-degree", type=int, default=defaults.min_degree)
    p.add_argument("--max-degree", type=int, default=defaults.max_degree)
    p.add_argument("--id-bits", type=int, default=None)
    p.add_argument("--density-exponent", type=int, default=defaults.density_exponent)
    p.add_argument("--privacy", type=float, default=defaults.privacy_fraction)
    p.add_argument("--seed", type=int, default=defaults.rng_seed)

    p = sub.add_parser("serve", help="serve a world over HTTP until interrupted")
    p.add_argument("--world", required=True)
    p.add_argument("--listen", default="127.0.0.1:8080")
    p.add_argument("--cap", type=_cap, default=400, help="friend-list cap, 0 disables")
    p.add_argument("--rate", type=float, default=0.0, help="requests/s per session, 0 unlimited")
    _add_credentials(p)

    p = sub.add_parser("crawl", help="run a crawler against a service")
    modes = p.add_subparsers(dest="mode", required=True)
    b = modes.add_parser("bfs", help="breadth-first crawl from the account's own profile")
    b.add_argument("--endpoint", required=True)
    b.add_argument("--out", required=True, help="crawl directory; an existing one is resumed")
    b.add_argument("--depth", "--max-depth", dest="max_depth", type=int, default=3)
    b.add_argument("--max-minutes", type=float, default=None)
    b.add_argument("--max-visited", type=int, default=0)
    _add_credentials(b)
    u = modes.add_parser("uni", help="uniform rejection-sampling crawl")
    u.add_argument("--endpoint", required=True)
    u.add_argument("--out", required=True, help="crawl directory; an existing one is resumed")
    u.add_argument("--queues", "--agents", dest="agents", type=int, default=8)
    u.add_argument("--queue-len", type=int, default=4096)
    u.add_argument("--id-bits", type=int, default=32)
    u.add_argument("--seed", type=int, default=1)
    u.add_argument("--max-minutes", type=float, default=None)
    _add_credentials(u)

    p = sub.add_parser("clean", help="deduplicate and anonymize a raw crawl")
    p.add_argument("--raw", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--drop-private", action="store_true", help="omit private hits instead of keeping them isolated")

    p = sub.add_parser("ego", help="extract an ego network")
    p.add_argument("--graph", required=True)
    p.add_argument("--center", type=int, required=True)
    p.add_argument("--radius", type=int, choices=(1, 2), default=1)
    p.add_argument("--graphml", "--out", dest="out", required=True, help=".graphml file, or an edge-list path for any other suffix")

    p = sub.add_parser("analyze", help="compute metrics and write CSVs")
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--q", type=float, default=0.9)
    p.add_argument("--spectral-k", type=int, default=20)
    p.add_argument("--spectral-max-iter", type=int, default=100)
    p.add_argument("--cap", type=_cap, default=0, help="also report the mean degree capped here, 0 skips")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("experiment", help="run the full BFS-vs-UNI comparison")
    p.add_argument("--config", default=None, help="key=value file")
    p.add_argument("--set", type=_kv, action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", default=None)
    return parser


def cmd_synth(args) -> int:
    cfg = WorldConfig(args.users, args.gamma, args.min_degree, args.max_degree, args.id_bits,
                      args.density_exponent, args.privacy, args.seed)
    world = generate_world(cfg)
    save_world(world, args.out)
    print(f"{world.n_users} users, {world.graph.edge_count} edges, {world.id_space_bits}-bit IDs -> {args.out}")
    return 0


def cmd_serve(args) -> int:
    world = load_world(args.world)
    cred = default_credential(world, args.user, args.password)
    config = ServiceConfig(args.listen, args.cap, args.rate, [cred])
    config.validate()
    host, port = config.host_port
    server = ServiceServer(OSNService(world, config), host, port)
    print(f"serving {server.url} (user {args.user!r}, seed profile {cred.seed_node_id})", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


def cmd_crawl(args) -> int:
    deadline = args.max_minutes * 60 if args.max_minutes is not None else None
    if args.mode == "bfs":
        limits = cr.CrawlLimits(args.max_depth, deadline, args.max_visited)
        crawl = cr.bfs_crawl(args.endpoint, args.user, args.password, limits, out_dir=args.out)
    else:
        queues = cr.generate_uniform_queues(args.agents, args.queue_len, args.id_bits, args.seed)
        crawl = cr.uniform_crawl(args.endpoint, args.user, args.password, queues,
                                 out_dir=args.out, max_duration=deadline)
    problems = crawl.invariant_violations()
    for k, v in cr.crawl_statistics(crawl).items():
        print(f"{k}={v}")
    for p in problems:
        print(f"integrity: {p}", file=sys.stderr)
    return 1 if problems else 0


def cmd_clean(args) -> int:
    cg = clean(cr.load_raw(args.raw), keep_private=not args.drop_private)
    report = save_clean(cg, args.out)
    for k, v in report.as_dict().items():
        print(f"{k}={v}")
    return 0


def cmd_ego(args) -> int:
    ego = extract_ego_network(load_any_graph(args.graph), args.center, args.radius)
    if args.out.endswith(".graphml"):
        write_graphml(ego, args.out)
    else:
        write_edge_list(ego, args.out)
    integrity_check(ego)
    print(f"ego of {args.center}: {ego.n_nodes} nodes, {ego.edge_count} edges")
    return 0


def cmd_analyze(args) -> int:
    g = load_any_graph(args.graph)
    integrity_check(g)
    report = full_report(g, args.q, args.spectral_k, degree_cap=args.cap, rng_seed=args.seed,
                         spectral_max_iter=args.spectral_max_iter)
    write_report(report, args.out)
    for k, v in report.scalars().items():
        print(f"{k}={'undefined' if v is None else v}")
    return 0


def cmd_experiment(args) -> int:
    overrides = dict(args.set)
    if args.out:
        overrides["out_dir"] = args.out
    cfg = load_config(args.config, overrides)
    summary = run_experiment(cfg)
    for v in summary.verdicts:
        print(f"{v.name}[{v.sample}] positive={int(v.positive)} statistic={v.statistic:.6g} threshold={v.threshold:.6g}")
    print(f"summary written to {os.path.join(cfg.out_dir, 'summary')}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "serve": cmd_serve,
    "crawl": cmd_crawl,
    "clean": cmd_clean,
    "ego": cmd_ego,
    "analyze": cmd_analyze,
    "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return COMMANDS[args.verb](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSNLabError, KeyError, OSError) as exc:
        print(f"{args.verb} failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
