"""Mock OSN web service over a :class:`~osnlab.world.SyntheticWorld`.

Endpoints::

    POST /login              form fields username, password -> session cookie
    GET  /friends?id=X&filter=afp
                             {"id": X, "friends": [...], "truncated": bool}
    GET  /healthz

Friend lists are capped at ``friend_cap`` entries (lowest IDs first); private
profiles answer 403 unless the requester is the profile owner or one of its
friends; unassigned IDs answer 404.  Each session owns a token bucket.
"""

from __future__ import annotations

import json
import logging
import math
import secrets
import threading
import time
from dataclasses import dataclass, field
from http import HTTPStatus
from http.cookies import SimpleCookie
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable
from urllib.parse import parse_qs, urlsplit

import numpy as np

from .errors import ConfigError
from .world import SyntheticWorld

log = logging.getLogger(__name__)

COOKIE_NAME = "session"
FRIENDS_PATHS = ("/friends", "/friends/", "/friends/ajax/friends.php")


@dataclass(frozen=True)
class Credential:
    username: str
    password: str
    seed_node_id: int


@dataclass
class ServiceConfig:
    listen_address: str = "127.0.0.1:8080"
    friend_cap: int | None = 400
    rate_limit: float = 0.0
    credentials: list[Credential] = field(default_factory=list)

    def validate(self) -> None:
        if self.friend_cap is not None and self.friend_cap < 1:
            raise ConfigError("friend_cap must be >= 1 (or None to disable)")
        if self.rate_limit < 0:
            raise ConfigError("rate_limit must be >= 0")

    @property
    def host_port(self) -> tuple[str, int]:
        host, _, port = self.listen_address.rpartition(":")
        return host or "127.0.0.1", int(port)


@dataclass
class Session:
    token: str
    user_node: int
    created_at: float


class TokenBucket:
    """Token bucket holding at most ``rate`` tokens, refilled at ``rate``/s.

    A rate of 0 disables limiting.  ``clock`` is injectable for tests.
    """

    def __init__(self, rate: float, clock: Callable[[], float] = time.monotonic):
        self.rate = float(rate)
        self.clock = clock
        self.tokens = self.rate
        self.stamp = clock()
        self._lock = threading.Lock()

    def acquire(self) -> float:
        """Take a token; returns 0.0 when allowed, else seconds until one frees up."""
        if self.rate <= 0:
            return 0.0
        with self._lock:
            now = self.clock()
            self.tokens = min(self.rate, self.tokens + (now - self.stamp) * self.rate)
            self.stamp = now
            if self.tokens >= 1.0:
                self.tokens -= 1.0
                return 0.0
            return (1.0 - self.tokens) / self.rate


def rate_limiter(bucket: TokenBucket) -> tuple[bool, float]:
    wait = bucket.acquire()
    return wait == 0.0, wait


@dataclass
class Response:
    status: int
    body: bytes = b""
    headers: list[tuple[str, str]] = field(default_factory=list)

    @classmethod
    def json(cls, status: int, payload, headers=()) -> "Response":
        body = json.dumps(payload, separators=(",", ":")).encode()
        return cls(status, body, [("Content-Type", "application/json"), *headers])

    @classmethod
    def error(cls, status: int, message: str, headers=(), **extra) -> "Response":
        return cls.json(status, {"error": message, **extra}, headers)


class OSNService:
    """Request handling independent of the transport.

    :meth:`handle` is what the HTTP server calls; in-process clients can call
    it directly and see byte-identical responses.
    """

    def __init__(self, world: SyntheticWorld, config: ServiceConfig, clock: Callable[[], float] = time.monotonic):
        config.validate()
        for cred in config.credentials:
            if not world.is_id_assigned(cred.seed_node_id):
                raise ConfigError(f"credential {cred.username!r} bound to unknown node {cred.seed_node_id}")
        self.world = world
        self.config = config
        self.clock = clock
        self._users = {c.username: c for c in config.credentials}
        self._sessions: dict[str, Session] = {}
        self._buckets: dict[str, TokenBucket] = {}
        self._lock = threading.Lock()
        self.stats = {"requests": 0, "throttled": 0}

    # -- operations ------------------------------------------------------

    def login(self, form: dict[str, str]) -> Response:
        username, password = form.get("username"), form.get("password")
        if username is None or password is None:
            return Response.error(400, "username and password are required")
        cred = self._users.get(username)
        if cred is None or not secrets.compare_digest(cred.password, password):
            return Response.error(401, "bad credentials")
        token = secrets.token_hex(16)
        with self._lock:
            self._sessions[token] = Session(token, cred.seed_node_id, time.time())
            self._buckets[token] = TokenBucket(self.config.rate_limit, self.clock)
        cookie = f"{COOKIE_NAME}={token}; Path=/; HttpOnly"
        return Response.json(200, {"user": cred.seed_node_id}, [("Set-Cookie", cookie)])

    def friend_list(self, target: int) -> tuple[list[int], bool]:
        row = self.world.friends(target)
        cap = self.config.friend_cap
        truncated = cap is not None and row.size > cap
        if truncated:
            row = row[:cap]
        return row.tolist(), bool(truncated)

    def can_see(self, viewer: int, target: int) -> bool:
        if viewer == target or not self.world.privacy_of(target):
            return True
        return self.world.are_friends(target, viewer)

    def friends(self, session: Session, query: dict[str, str]) -> Response:
        raw = query.get("id")
        if raw is None or raw == "":
            target = session.user_node
        else:
            try:
                target = int(raw, 10)
            except ValueError:
                return Response.error(400, f"malformed id {raw!r}")
            if target < 0:
                return Response.error(400, f"malformed id {raw!r}")
        if query.get("filter", "afp") != "afp":
            return Response.error(400, "unsupported filter")
        if not self.world.is_id_assigned(target):
            return Response.error(404, "no such user")
        if not self.can_see(session.user_node, target):
            return Response.error(403, "friend list is private")
        friends, truncated = self.friend_list(target)
        return Response.json(200, {"id": target, "friends": friends, "truncated": truncated})

    # -- dispatch -------------------------------------------------------------

    def session_for(self, cookie_header: str | None) -> Session | None:
        if not cookie_header:
            return None
        jar = SimpleCookie()
        try:
            jar.load(cookie_header)
        except Exception:
            return None
        morsel = jar.get(COOKIE_NAME)
        if morsel is None:
            return None
        with self._lock:
            return self._sessions.get(morsel.value)

    def handle(self, method: str, target: str, headers: dict[str, str] | None = None, body: bytes = b"") -> Response:
        headers = {k.lower(): v for k, v in (headers or {}).items()}
        parts = urlsplit(target)
        query = {k: v[0] for k, v in parse_qs(parts.query, keep_blank_values=True).items()}
        path = parts.path
        with self._lock:
            self.stats["requests"] += 1

        if path == "/healthz":
            return Response(200, b"ok\n", [("Content-Type", "text/plain")])
        if path == "/login":
            if method != "POST":
                return Response.error(405, "use POST", [("Allow", "POST")])
            form = {k: v[0] for k, v in parse_qs(body.decode("utf-8", "replace"), keep_blank_values=True).items()}
            return self.login(form)
        if path in FRIENDS_PATHS:
            if method != "GET":
                return Response.error(405, "use GET", [("Allow", "GET")])
            session = self.session_for(headers.get("cookie"))
            if session is None:
                return Response.error(401, "login required")
            allowed, wait = rate_limiter(self._buckets[session.token])
            if not allowed:
                with self._lock:
                    self.stats["throttled"] += 1
                retry = max(1, math.ceil(wait))
                return Response.error(429, "rate limit exceeded", [("Retry-After", str(retry))], retry_after=wait)
            return self.friends(session, query)
        return Response.error(404, "no such endpoint")


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "osnlab/1"
    # headers and body leave in one write; without this, Nagle plus delayed
    # ACKs stall every keep-alive round trip by ~40 ms
    disable_nagle_algorithm = True
    service: OSNService  # set on the subclass built per server

    def _dispatch(self, method: str) -> None:
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else b""
        try:
            resp = self.service.handle(method, self.path, dict(self.headers.items()), body)
        except Exception:  # never drop the connection on a handler bug
            log.exception("request failed: %s %s", method, self.path)
            resp = Response.error(500, "internal error")
        self.send_response(resp.status)
        for name, value in resp.headers:
            self.send_header(name, value)
        self.send_header("Content-Length", str(len(resp.body)))
        self._headers_buffer.append(b"\r\n" + resp.body)
        self.flush_headers()

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def log_message(self, fmt, *args):
        log.debug("%s - %s", self.address_string(), fmt % args)


class ServiceServer:
    """Threaded HTTP front-end; use as a context manager or call start/stop."""

    def __init__(self, service: OSNService, host: str = "127.0.0.1", port: int = 0):
        handler = type("BoundHandler", (_Handler,), {"service": service})
        self.service = service
        self.httpd = ThreadingHTTPServer((host, port), handler)
        self.httpd.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        host, port = self.httpd.server_address[:2]
        return host, port

    @property
    def url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}"

    def start(self) -> "ServiceServer":
        self._thread = threading.Thread(target=self.httpd.serve_forever, name="osn-service", daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self.httpd.serve_forever()

    def stop(self) -> None:
        # shutdown() blocks until a running serve_forever loop exits, so only
        # call it for the background thread started here
        if self._thread is not None:
            self.httpd.shutdown()
            self._thread.join(timeout=5)
            self._thread = None
        self.httpd.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def default_credential(world: SyntheticWorld, username: str = "crawler", password: str = "crawler") -> Credential:
    """A credential bound to the first generated user that has friends."""
    degrees = world.graph.degrees()
    for user in world.id_of.tolist():
        if degrees[world.graph.index_of(user)] > 0:
            return Credential(username, password, int(user))
    return Credential(username, password, int(world.id_of[0]))
