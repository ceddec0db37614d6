import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

import numpy as np  # noqa: E402

from osnlab.graph import SocialGraph  # noqa: E402
from osnlab.world import SyntheticWorld, WorldConfig  # noqa: E402


def make_world(edges, private=(), nodes=(), bits=32) -> SyntheticWorld:
    """Hand-built world over explicit IDs (for deterministic protocol tests)."""
    g = SocialGraph.from_edge_records(edges, nodes=nodes)
    priv = np.isin(g.ids, np.array(list(private), dtype=np.uint64))
    cfg = WorldConfig(n_users=max(g.n_nodes, 2), min_degree=1, max_degree=1, id_space_bits=bits, privacy_fraction=0.0)
    return SyntheticWorld(cfg, g, g.ids.copy(), priv)


# acceptance criteria outcomes, echoed once at the end of the run
CRITERIA: dict[int, tuple[bool, str]] = {}
CRITERIA_TOTAL = 10


def record_criterion(number: int, ok: bool, detail: str) -> None:
    CRITERIA[number] = (bool(ok), detail)
    print(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, CRITERIA_TOTAL + 1):
        ok, detail = CRITERIA.get(n, (False, "not reached"))
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
