"""Social network crawling lab: synthetic worlds, a mock service, crawlers, cleaning and metrics."""

from .crawler import CrawlLimits, RawCrawl, bfs_crawl, uniform_crawl
from .graph import SocialGraph
from .harness import ComparisonSummary, ExperimentConfig, compare_reports, run_experiment
from .metrics import MetricsReport, full_report
from .pipeline import CleanGraph, aphash48, clean
from .service import OSNService, ServiceConfig, ServiceServer
from .world import SyntheticWorld, WorldConfig, generate_world

__version__ = "0.1.0"

__all__ = [
    "CleanGraph", "ComparisonSummary", "CrawlLimits", "ExperimentConfig", "MetricsReport",
    "OSNService", "RawCrawl", "ServiceConfig", "ServiceServer", "SocialGraph", "SyntheticWorld",
    "WorldConfig", "aphash48", "bfs_crawl", "clean", "compare_reports", "full_report",
    "generate_world", "run_experiment", "uniform_crawl",
]
