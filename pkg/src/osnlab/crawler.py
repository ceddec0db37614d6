"""BFS and uniform (rejection-sampling) crawlers speaking the mock OSN protocol.

Both agents log in, then request ``/friends?id=X&filter=afp`` pages and append
what they see to a :class:`RawCrawl`.  When given an output directory the
harvest is flushed after every attempt and an interrupted crawl resumes from
the last complete record.
"""

from __future__ import annotations

import http.client
import json
import logging
import os
import threading
import time
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence
from urllib.parse import urlencode, urlsplit

import numpy as np

from .errors import ConfigError, CrawlError, LoginError

log = logging.getLogger(__name__)

VISITED, NOT_FOUND, PRIVATE, ERROR = "visited", "not_found", "private", "error"
OUTCOMES = (VISITED, NOT_FOUND, PRIVATE, ERROR)


# -- transports -------------------------------------------------------------


class HttpTransport:
    """One keep-alive HTTP/1.1 connection; reconnects once on a dropped socket."""

    def __init__(self, endpoint: str, timeout: float = 30.0):
        parts = urlsplit(endpoint if "://" in endpoint else f"http://{endpoint}")
        if parts.scheme != "http":
            raise ConfigError(f"unsupported scheme in {endpoint!r}")
        self.host = parts.hostname or "127.0.0.1"
        self.port = parts.port or 80
        self.timeout = timeout
        self._conn: http.client.HTTPConnection | None = None

    def request(self, method: str, target: str, headers: dict[str, str], body: bytes = b""):
        for attempt in range(2):
            if self._conn is None:
                self._conn = http.client.HTTPConnection(self.host, self.port, timeout=self.timeout)
            try:
                self._conn.request(method, target, body=body or None, headers=headers)
                resp = self._conn.getresponse()
                data = resp.read()
                return resp.status, {k.lower(): v for k, v in resp.getheaders()}, data
            except (http.client.HTTPException, OSError):
                self.close()
                if attempt:
                    raise

    def close(self) -> None:
        if self._conn is not None:
            self._conn.close()
            self._conn = None


class LocalTransport:
    """Calls :meth:`OSNService.handle` in-process (no sockets, same responses)."""

    def __init__(self, service):
        self.service = service

    def request(self, method: str, target: str, headers: dict[str, str], body: bytes = b""):
        resp = self.service.handle(method, target, headers, body)
        return resp.status, {k.lower(): v for k, v in resp.headers}, resp.body

    def close(self) -> None:
        pass


def transport_factory(endpoint) -> Callable[[], object]:
    """Normalize an endpoint (URL, service object, or factory) to a transport factory."""
    if isinstance(endpoint, str):
        return lambda: HttpTransport(endpoint)
    if hasattr(endpoint, "handle"):
        return lambda: LocalTransport(endpoint)
    if callable(endpoint):
        return endpoint
    raise TypeError(f"cannot build a transport from {endpoint!r}")


# -- client -----------------------------------------------------------------


class DeadlineReached(Exception):
    pass


@dataclass
class Fetch:
    outcome: str
    user_id: int | None
    friends: list[int] = field(default_factory=list)
    truncated: bool = False
    status: int = 0


class OSNClient:
    """Session-holding client with the crawl retry policy.

    429 responses are retried after the advertised delay for as long as the
    deadline allows; 5xx and transport failures get ``retries`` attempts with
    exponential backoff before the fetch is recorded as an error.
    """

    def __init__(
        self,
        transport,
        *,
        deadline: float | None = None,
        retries: int = 3,
        backoff: float = 0.05,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
    ):
        self.transport = transport
        self.deadline = deadline
        self.retries = retries
        self.backoff = backoff
        self.sleep = sleep
        self.clock = clock
        self.cookie: str | None = None
        self.user_node: int | None = None
        self.throttled = 0
        self.requests = 0

    def _check_deadline(self, upcoming: float = 0.0) -> None:
        if self.deadline is not None and self.clock() + upcoming > self.deadline:
            raise DeadlineReached()

    def login(self, username: str, password: str) -> int:
        body = urlencode({"username": username, "password": password}).encode()
        headers = {"Content-Type": "application/x-www-form-urlencoded"}
        try:
            status, hdrs, data = self.transport.request("POST", "/login", headers, body)
        except (http.client.HTTPException, OSError) as exc:
            raise LoginError(f"login request failed: {exc}") from exc
        if status != 200:
            raise LoginError(f"login rejected with HTTP {status}")
        cookie = hdrs.get("set-cookie", "")
        self.cookie = cookie.split(";", 1)[0]
        self.user_node = int(json.loads(data)["user"])
        return self.user_node

    def fetch_friends(self, user_id: int | None = None) -> Fetch:
        query = {"filter": "afp"} if user_id is None else {"id": str(user_id), "filter": "afp"}
        target = "/friends?" + urlencode(query)
        headers = {"Cookie": self.cookie or ""}
        failures = 0
        while True:
            self._check_deadline()
            try:
                self.requests += 1
                status, hdrs, data = self.transport.request("GET", target, headers)
            except (http.client.HTTPException, OSError) as exc:
                status, hdrs, data = 599, {}, str(exc).encode()
            if status == 200:
                payload = json.loads(data)
                return Fetch(VISITED, int(payload["id"]), [int(x) for x in payload["friends"]],
                             bool(payload["truncated"]), status)
            if status == 404:
                return Fetch(NOT_FOUND, user_id, status=status)
            if status == 403:
                return Fetch(PRIVATE, user_id, status=status)
            if status == 429:
                self.throttled += 1
                wait = _retry_after(hdrs, data)
                self._check_deadline(wait)
                self.sleep(wait)
                continue
            if status == 401:
                raise CrawlError("session rejected by service")
            if status >= 500:
                failures += 1
                if failures >= self.retries:
                    log.warning("giving up on %s after %d failures (HTTP %d)", user_id, failures, status)
                    return Fetch(ERROR, user_id, status=status)
                delay = self.backoff * 2 ** (failures - 1)
                self._check_deadline(delay)
                self.sleep(delay)
                continue
            return Fetch(ERROR, user_id, status=status)


def _retry_after(headers: dict[str, str], body: bytes) -> float:
    try:
        return max(0.0, float(json.loads(body)["retry_after"]))
    except (ValueError, KeyError, TypeError):
        pass
    try:
        return max(0.0, float(headers.get("retry-after", "1")))
    except ValueError:
        return 1.0


# -- harvest ----------------------------------------------------------------


@dataclass(frozen=True)
class CrawlLimits:
    max_depth: int | None = 3
    max_duration: float | None = None
    max_visited: int = 0

    def validate(self) -> None:
        if self.max_depth is None and self.max_duration is None and not self.max_visited:
            raise ConfigError("at least one crawl budget must be finite")
        if self.max_depth is not None and self.max_depth < 1:
            raise ConfigError("max_depth must be >= 1")


@dataclass(frozen=True)
class VisitRecord:
    user_id: int
    outcome: str
    degree: int = 0
    truncated: bool = False
    depth: int | None = None
    agent: int = 0

    def to_line(self) -> str:
        depth = "-" if self.depth is None else str(self.depth)
        return f"{self.user_id}\t{self.outcome}\t{self.degree}\t{int(self.truncated)}\t{depth}\t{self.agent}\n"

    @classmethod
    def from_line(cls, line: str) -> "VisitRecord":
        f = line.rstrip("\n").split("\t")
        if len(f) not in (5, 6) or f[1] not in OUTCOMES:
            raise ValueError(f"bad visit record {line!r}")
        return cls(int(f[0]), f[1], int(f[2]), f[3] == "1",
                   None if f[4] == "-" else int(f[4]), int(f[5]) if len(f) == 6 else 0)


@dataclass
class RawCrawl:
    mode: str
    observations: list[tuple[int, int]] = field(default_factory=list)
    visits: list[VisitRecord] = field(default_factory=list)
    enqueued: int = 0
    dequeued: int = 0
    meta: dict[str, str] = field(default_factory=dict)
    throttled: int = 0

    def outcome_counts(self) -> Counter:
        return Counter(r.outcome for r in self.visits)

    def visited_ids(self) -> list[int]:
        return [r.user_id for r in self.visits if r.outcome == VISITED]

    def observed_degrees(self) -> dict[int, int]:
        """Capped friend-list length per unique visited user."""
        return {r.user_id: r.degree for r in self.visits if r.outcome == VISITED}

    def discovered_ids(self) -> set[int]:
        found = {v for _, v in self.observations}
        found.update(self.visited_ids())
        return found

    def invariant_violations(self) -> list[str]:
        problems = []
        visited = Counter(self.visited_ids())
        per_visit = Counter(u for u, _ in self.observations)
        expected = Counter()
        for r in self.visits:
            if r.outcome == VISITED:
                expected[r.user_id] += r.degree
        for u in per_visit:
            if u not in visited:
                problems.append(f"observation source {u} has no visited record")
        for u, n in expected.items():
            if per_visit.get(u, 0) != n:
                problems.append(f"user {u}: {per_visit.get(u, 0)} observations, visit log says {n}")
        return problems


# -- persistence ----------------------------------------------------------------

META, OBSERVATIONS, VISITS, QUEUES = "meta", "observations.tsv", "visits.tsv", "queues.tsv"


def _write_kv(path, values: dict) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        for k, v in values.items():
            fh.write(f"{k}={v}\n")
    os.replace(tmp, path)


def read_kv(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line and not line.startswith("#"):
                k, _, v = line.partition("=")
                out[k.strip()] = v.strip()
    return out


class CrawlStore:
    """Append-only on-disk sink.

    Each attempt writes its observation lines first and its visit line last,
    so a visit line marks a complete record; anything after the last complete
    record is truncated away on resume.
    """

    def __init__(self, directory):
        self.directory = os.fspath(directory)
        os.makedirs(self.directory, exist_ok=True)
        self._lock = threading.Lock()
        self._obs = None
        self._visits = None

    def path(self, name: str) -> str:
        return os.path.join(self.directory, name)

    def has_crawl(self) -> bool:
        return os.path.exists(self.path(META))

    def write_meta(self, meta: dict) -> None:
        _write_kv(self.path(META), meta)

    def open(self) -> None:
        self._obs = open(self.path(OBSERVATIONS), "a", encoding="ascii")
        self._visits = open(self.path(VISITS), "a", encoding="ascii")

    def close(self) -> None:
        for fh in (self._obs, self._visits):
            if fh is not None:
                fh.close()
        self._obs = self._visits = None

    def record(self, visit: VisitRecord, friends: Sequence[int] = ()) -> None:
        with self._lock:
            if friends:
                self._obs.write("".join(f"{visit.user_id}\t{f}\n" for f in friends))
                self._obs.flush()
            self._visits.write(visit.to_line())
            self._visits.flush()

    def write_queues(self, queues: Sequence[np.ndarray]) -> None:
        tmp = self.path(QUEUES + ".tmp")
        with open(tmp, "w", encoding="ascii") as fh:
            for a, q in enumerate(queues):
                fh.write("".join(f"{a}\t{x}\n" for x in np.asarray(q).tolist()))
        os.replace(tmp, self.path(QUEUES))

    def read_queues(self) -> list[np.ndarray]:
        rows: dict[int, list[int]] = {}
        with open(self.path(QUEUES), encoding="ascii") as fh:
            for line in fh:
                a, x = line.split("\t")
                rows.setdefault(int(a), []).append(int(x))
        return [np.array(rows[a], dtype=np.uint64) for a in sorted(rows)]

    def load(self) -> RawCrawl:
        """Read the harvest back, repairing a torn tail."""
        meta = read_kv(self.path(META))
        visits, good_visit_bytes = _read_records(self.path(VISITS), VisitRecord.from_line)
        obs_lines, offsets = _read_lines(self.path(OBSERVATIONS))

        observations: list[tuple[int, int]] = []
        k = 0
        kept: list[VisitRecord] = []
        for i, rec in enumerate(visits):
            chunk = obs_lines[k : k + rec.degree] if rec.outcome == VISITED else []
            parsed = []
            try:
                for line in chunk:
                    a, b = line.split("\t")
                    parsed.append((int(a), int(b)))
            except ValueError:
                parsed = None
            if parsed is None or len(parsed) != len(chunk) or len(chunk) != (rec.degree if rec.outcome == VISITED else 0) \
                    or any(a != rec.user_id for a, _ in parsed):
                log.warning("visit log and observations disagree at record %d; truncating", i)
                good_visit_bytes = visits_offsets(self.path(VISITS), i)
                break
            observations.extend(parsed)
            kept.append(rec)
            k += len(chunk)
        _truncate(self.path(VISITS), good_visit_bytes)
        _truncate(self.path(OBSERVATIONS), offsets[k])

        crawl = RawCrawl(meta.get("mode", "?"), observations, kept, meta=meta)
        return crawl


def _read_lines(path) -> tuple[list[str], list[int]]:
    """Complete lines of a file and the byte offset after each (offsets[0] = 0)."""
    if not os.path.exists(path):
        return [], [0]
    with open(path, "rb") as fh:
        data = fh.read()
    lines: list[str] = []
    offsets = [0]
    start = 0
    while True:
        end = data.find(b"\n", start)
        if end < 0:
            break
        lines.append(data[start:end].decode("ascii", "replace"))
        start = end + 1
        offsets.append(start)
    if start < len(data):
        log.warning("%s: dropping %d-byte incomplete tail", path, len(data) - start)
    return lines, offsets


def _read_records(path, parse) -> tuple[list, int]:
    lines, offsets = _read_lines(path)
    out = []
    for i, line in enumerate(lines):
        try:
            out.append(parse(line))
        except ValueError:
            log.warning("%s: corrupt record at line %d; truncating", path, i + 1)
            return out, offsets[i]
    return out, offsets[len(lines)]


def visits_offsets(path, n_records: int) -> int:
    return _read_lines(path)[1][n_records]


def _truncate(path, size: int) -> None:
    if os.path.exists(path) and os.path.getsize(path) != size:
        with open(path, "r+b") as fh:
            fh.truncate(size)


def load_raw(directory) -> RawCrawl:
    store = CrawlStore(directory)
    if not store.has_crawl():
        raise CrawlError(f"no crawl in {directory}")
    return store.load()


def persist_raw(crawl: RawCrawl, directory) -> None:
    """Write a whole in-memory harvest to ``directory`` in the on-disk layout."""
    store = CrawlStore(directory)
    for name in (OBSERVATIONS, VISITS):
        if os.path.exists(store.path(name)):
            os.remove(store.path(name))
    store.write_meta({**crawl.meta, "mode": crawl.mode})
    store.open()
    try:
        obs = iter(crawl.observations)
        for rec in crawl.visits:
            friends = [next(obs)[1] for _ in range(rec.degree)] if rec.outcome == VISITED else []
            store.record(rec, friends)
    finally:
        store.close()


# -- BFS agent ------------------------------------------------------------------


class _BFSState:
    def __init__(self, seed: int):
        self.seed = seed
        self.queue: deque[tuple[int, int]] = deque([(seed, 0)])
        self.seen = {seed}
        self.enqueued = 1
        self.dequeued = 0

    def expand(self, friends: Iterable[int], depth: int, max_depth: int | None) -> None:
        child = depth + 1
        if max_depth is not None and child > max_depth:
            return
        for f in friends:
            if f not in self.seen:
                self.seen.add(f)
                if max_depth is None or child < max_depth:
                    self.queue.append((f, child))
                    self.enqueued += 1


def _replay_bfs(crawl: RawCrawl, seed: int, max_depth: int | None) -> _BFSState:
    state = _BFSState(seed)
    k = 0
    for rec in crawl.visits:
        if not state.queue:
            raise CrawlError("visit log longer than the BFS frontier allows")
        user, depth = state.queue.popleft()
        if user != rec.user_id:
            raise CrawlError(f"visit log diverges from FIFO order at {rec.user_id} (expected {user})")
        state.dequeued += 1
        if rec.outcome == VISITED:
            friends = [v for _, v in crawl.observations[k : k + rec.degree]]
            k += rec.degree
            state.expand(friends, depth, max_depth)
    return state


def bfs_crawl(endpoint, username: str, password: str, limits: CrawlLimits = CrawlLimits(),
              out_dir=None, **client_kw) -> RawCrawl:
    """Breadth-first crawl from the logged-in user's profile.

    Nodes at depth ``< max_depth`` are visited; their friends are discovered,
    so depth ``max_depth`` appears in observations only.  Stops on the first
    tripped budget or an empty frontier.
    """
    limits.validate()
    start = time.monotonic()
    deadline = start + limits.max_duration if limits.max_duration is not None else None
    client = OSNClient(transport_factory(endpoint)(), deadline=deadline, **client_kw)
    seed = client.login(username, password)

    store = CrawlStore(out_dir) if out_dir is not None else None
    meta = {"mode": "bfs", "seed": seed, "max_depth": limits.max_depth}
    if store is not None and store.has_crawl():
        crawl = store.load()
        if crawl.mode != "bfs" or int(crawl.meta.get("seed", -1)) != seed:
            raise CrawlError(f"{out_dir} holds a different crawl ({crawl.meta})")
        state = _replay_bfs(crawl, seed, limits.max_depth)
        log.info("resuming BFS: %d attempts done, %d queued", state.dequeued, len(state.queue))
    else:
        crawl = RawCrawl("bfs", meta={k: str(v) for k, v in meta.items()})
        state = _BFSState(seed)
        if store is not None:
            store.write_meta(meta)

    if store is not None:
        store.open()
    try:
        while state.queue:
            if limits.max_visited and state.dequeued >= limits.max_visited:
                break
            user, depth = state.queue[0]
            try:
                got = client.fetch_friends(None if user == seed else user)
            except DeadlineReached:
                break
            state.queue.popleft()
            state.dequeued += 1
            friends = got.friends if got.outcome == VISITED else []
            rec = VisitRecord(user, got.outcome, len(friends), got.truncated, depth)
            crawl.visits.append(rec)
            crawl.observations.extend((user, f) for f in friends)
            if store is not None:
                store.record(rec, friends)
            state.expand(friends, depth, limits.max_depth)
    finally:
        if store is not None:
            store.close()
        client.transport.close()
    crawl.enqueued, crawl.dequeued = state.enqueued, state.dequeued
    crawl.throttled = client.throttled
    log.info("BFS done: %d attempts, %d discovered, %.1fs", state.dequeued, len(state.seen), time.monotonic() - start)
    return crawl


# -- uniform agent ------------------------------------------------------------


def generate_uniform_queue(count: int, id_space_bits: int = 32, rng_seed=0) -> np.ndarray:
    """``count`` IDs drawn uniformly with replacement from ``[0, 2**id_space_bits)``."""
    if count < 1:
        raise ConfigError("queue length must be >= 1")
    rng = np.random.default_rng(rng_seed)
    return rng.integers(0, 2**id_space_bits, size=count, dtype=np.uint64)


def generate_uniform_queues(n_queues: int, count: int, id_space_bits: int = 32, rng_seed: int = 0) -> list[np.ndarray]:
    seeds = np.random.SeedSequence(rng_seed).spawn(n_queues)
    return [generate_uniform_queue(count, id_space_bits, s) for s in seeds]


def uniform_crawl(endpoint, username: str, password: str, queues: Sequence[Sequence[int]],
                  agents: int | None = None, out_dir=None, max_duration: float | None = None,
                  **client_kw) -> RawCrawl:
    """Rejection-sampling crawl: one agent thread per queue of random IDs.

    404 means no such user (rejected), 403 an existing private user, 200 a
    sample whose friend list is recorded.  Agents share nothing but the sink.
    """
    agents = len(queues) if agents is None else agents
    if agents != len(queues):
        raise ConfigError(f"{agents} agents for {len(queues)} queues")
    make_transport = transport_factory(endpoint)
    deadline = time.monotonic() + max_duration if max_duration is not None else None

    store = CrawlStore(out_dir) if out_dir is not None else None
    done = [0] * agents
    if store is not None and store.has_crawl():
        crawl = store.load()
        if crawl.mode != "uni":
            raise CrawlError(f"{out_dir} holds a {crawl.mode} crawl")
        queues = store.read_queues()
        for rec in crawl.visits:
            done[rec.agent] += 1
        log.info("resuming UNI crawl: %d attempts done", sum(done))
    else:
        queues = [np.asarray(q, dtype=np.uint64) for q in queues]
        crawl = RawCrawl("uni", meta={"mode": "uni", "agents": str(agents),
                                      "queue_len": str(max(len(q) for q in queues))})
        if store is not None:
            store.write_meta(crawl.meta)
            store.write_queues(queues)

    lock = threading.Lock()
    per_agent: list[list[tuple[VisitRecord, list[int]]]] = [[] for _ in range(agents)]
    failures: list[BaseException] = []
    throttled = [0] * agents

    def run(a: int) -> None:
        client = OSNClient(make_transport(), deadline=deadline, **client_kw)
        try:
            client.login(username, password)
            for user in np.asarray(queues[a])[done[a]:].tolist():
                try:
                    got = client.fetch_friends(user)
                except DeadlineReached:
                    break
                friends = got.friends if got.outcome == VISITED else []
                rec = VisitRecord(user, got.outcome, len(friends), got.truncated, None, a)
                per_agent[a].append((rec, friends))
                if store is not None:
                    store.record(rec, friends)
        except BaseException as exc:
            with lock:
                failures.append(exc)
        finally:
            throttled[a] = client.throttled
            client.transport.close()

    if store is not None:
        store.open()
    try:
        threads = [threading.Thread(target=run, args=(a,), name=f"uni-agent-{a}") for a in range(agents)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    finally:
        if store is not None:
            store.close()
    if failures:
        raise failures[0]

    for a in range(agents):
        for rec, friends in per_agent[a]:
            crawl.visits.append(rec)
            crawl.observations.extend((rec.user_id, f) for f in friends)
    crawl.enqueued = sum(len(q) for q in queues)
    crawl.dequeued = len(crawl.visits)
    crawl.throttled = sum(throttled)
    return crawl


def crawl_statistics(crawl: RawCrawl) -> dict[str, float]:
    """Counters used by the harness: hits, privacy discrepancy, observed degree moments."""
    counts = crawl.outcome_counts()
    attempts = sum(counts.values())
    visited, private = counts[VISITED], counts[PRIVATE]
    existing = visited + private
    degs = np.array(list(crawl.observed_degrees().values()), dtype=float)
    return {
        "attempts": attempts,
        "visited": visited,
        "private": private,
        "not_found": counts[NOT_FOUND],
        "errors": counts[ERROR],
        "unique_visited": len(crawl.observed_degrees()),
        "hit_rate": existing / attempts if attempts else 0.0,
        "private_fraction": private / existing if existing else 0.0,
        "mean_observed_degree": float(degs.mean()) if degs.size else 0.0,
        "sd_observed_degree": float(degs.std(ddof=1)) if degs.size > 1 else 0.0,
        "throttled": crawl.throttled,
    }
