"""Rate-limited, concurrent model-hub API client.

Talks to ``{base}/api/models`` (paginated listing) and
``{base}/api/models/{id}`` (per-model detail). All requests share one token
bucket so the configured requests-per-second ceiling holds across the
listing loop and the detail worker pool. Transient failures (429, 5xx,
transport errors) are retried with exponential backoff and jitter; other
4xx fail fast.
"""

from __future__ import annotations

import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Callable, Optional

import requests

from .errors import CrawlError, NotFound, UsageError

RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})

# Requests are spaced for rate/(1 + headroom) rather than the raw rate.
# A granted request can sit for tens of milliseconds before it reaches the
# wire (thread scheduling, connection checkout), which compresses arrival
# times at the server; the headroom keeps the server-observed 1-second
# request count at or below ceil(rate) + 1 for delivery jitter up to
# headroom seconds per request.
THROTTLE_HEADROOM = 0.2


@dataclass(frozen=True)
class CrawlConfig:
    base_url: str
    auth_token: Optional[str] = None
    max_requests_per_second: float = 10.0
    max_concurrent_requests: int = 4
    max_retries: int = 3
    backoff_base_ms: int = 100
    page_size: int = 100
    since: Optional[datetime] = None

    def __post_init__(self):
        if self.max_requests_per_second <= 0:
            raise UsageError("max_requests_per_second must be positive")
        if self.max_concurrent_requests < 1:
            raise UsageError("max_concurrent_requests must be >= 1")
        if self.max_retries < 0:
            raise UsageError("max_retries must be non-negative")
        if self.backoff_base_ms <= 0:
            raise UsageError("backoff_base_ms must be positive")
        if self.page_size < 1:
            raise UsageError("page_size must be >= 1")


@dataclass
class RawModelPage:
    items: list[dict[str, Any]]
    next_cursor: Optional[str] = None


@dataclass
class CrawlReport:
    models_fetched: int = 0
    requests_made: int = 0
    retries: int = 0
    failures: list[tuple[str, str]] = field(default_factory=list)
    wall_time_ms: float = 0.0
    observed_peak_rps: float = 0.0


class TokenBucket:
    """Thread-safe token bucket; ``acquire`` blocks until a token is free.

    The default capacity is a single token, which makes the bucket a strict
    request spacer: no 1-second window ever sees more than ceil(rate) + 1
    grants, even right after startup. A larger capacity permits bursts
    after idle periods at the cost of that guarantee.
    """

    def __init__(self, rate: float, capacity: float = 1.0):
        if rate <= 0:
            raise UsageError("rate must be positive")
        self.rate = rate
        self.capacity = capacity
        self._tokens = 1.0
        self._last = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            time.sleep(wait)


class HubClient:
    """One crawl session: shared HTTP connection pool, rate limiter,
    retry bookkeeping."""

    def __init__(self, config: CrawlConfig):
        self.config = config
        self._bucket = TokenBucket(config.max_requests_per_second / (1.0 + THROTTLE_HEADROOM))
        self._session = requests.Session()
        if config.auth_token:
            self._session.headers["Authorization"] = f"Bearer {config.auth_token}"
        self._lock = threading.Lock()
        self._request_times: list[float] = []
        self.requests_made = 0
        self.retries = 0

    def close(self) -> None:
        self._session.close()

    def __enter__(self) -> "HubClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- low-level request with throttling and retries -------------------

    def _request(self, url: str, params: Optional[dict] = None) -> dict[str, Any]:
        cfg = self.config
        rng = random.Random()
        attempt = 0
        while True:
            self._bucket.acquire()
            with self._lock:
                self.requests_made += 1
                self._request_times.append(time.monotonic())
            try:
                resp = self._session.get(url, params=params, timeout=30)
                status = resp.status_code
            except requests.RequestException as exc:
                status = None
                transport_error = exc
            if status == 200:
                try:
                    return resp.json()
                except ValueError as exc:
                    raise CrawlError("decode", f"malformed JSON from {url}: {exc}")
            if status in (401, 403):
                raise CrawlError("auth", f"HTTP {status} from {url}")
            if status == 404:
                raise NotFound(url)
            if status is not None and status not in RETRYABLE_STATUSES:
                raise CrawlError("transient", f"unexpected HTTP {status} from {url}")

            if attempt >= cfg.max_retries:
                if status == 429:
                    raise CrawlError("throttled", f"rate-limited by {url} after {attempt} retries")
                if status is None:
                    raise CrawlError("transient", f"transport failure for {url}: {transport_error}")
                raise CrawlError("transient", f"HTTP {status} from {url} after {attempt} retries")

            delay_ms = cfg.backoff_base_ms * (2 ** attempt) + rng.uniform(0, cfg.backoff_base_ms - 1e-9)
            time.sleep(delay_ms / 1000.0)
            with self._lock:
                self.retries += 1
            attempt += 1

    # -- spec operations -------------------------------------------------

    def list_models(self, cursor: Optional[str] = None) -> RawModelPage:
        params: dict[str, Any] = {"limit": self.config.page_size}
        if cursor:
            params["cursor"] = cursor
        if self.config.since is not None:
            params["since"] = self.config.since.strftime("%Y-%m-%dT%H:%M:%SZ")
        doc = self._request(f"{self.config.base_url}/api/models", params)
        items = doc.get("items")
        if not isinstance(items, list):
            raise CrawlError("decode", "listing response has no 'items' array")
        return RawModelPage(items=items, next_cursor=doc.get("next_cursor"))

    def fetch_model_detail(self, model_id: str) -> dict[str, Any]:
        if not model_id:
            raise UsageError("model_id must be non-empty")
        return self._request(f"{self.config.base_url}/api/models/{model_id}")

    def crawl_all(self, sink: Callable[[dict[str, Any]], None]) -> CrawlReport:
        """Crawl the whole hub (or everything since ``config.since``).

        Listing pages are walked sequentially; per-model detail fetches run
        on a bounded worker pool. Each model is emitted to ``sink`` exactly
        once as its listing document merged with its detail document.
        Per-model failures are collected, not fatal.
        """
        start = time.monotonic()
        report = CrawlReport()
        items: list[dict[str, Any]] = []
        seen: set[str] = set()
        cursor = None
        while True:
            page = self.list_models(cursor)
            for item in page.items:
                model_id = item.get("id")
                if model_id and model_id not in seen:
                    seen.add(model_id)
                    items.append(item)
            cursor = page.next_cursor
            if not cursor:
                break

        def fetch_one(item: dict[str, Any]) -> tuple[dict[str, Any], Optional[dict[str, Any]], Optional[str]]:
            try:
                return item, self.fetch_model_detail(item["id"]), None
            except NotFound:
                return item, None, "NotFound"
            except CrawlError as exc:
                return item, None, f"CrawlError({exc.kind})"

        with ThreadPoolExecutor(max_workers=self.config.max_concurrent_requests) as pool:
            futures = [pool.submit(fetch_one, item) for item in items]
            for future in as_completed(futures):
                item, detail, error = future.result()
                if error is not None:
                    report.failures.append((item["id"], error))
                    continue
                merged = dict(item)
                merged.update(detail)
                sink(merged)
                report.models_fetched += 1

        report.failures.sort()
        report.requests_made = self.requests_made
        report.retries = self.retries
        report.wall_time_ms = (time.monotonic() - start) * 1000.0
        report.observed_peak_rps = self._peak_rps()
        return report

    def _peak_rps(self) -> float:
        """Max request count over any sliding 1-second window."""
        times = sorted(self._request_times)
        peak = 0
        lo = 0
        for hi, t in enumerate(times):
            while times[lo] <= t - 1.0:
                lo += 1
            peak = max(peak, hi - lo + 1)
        return float(peak)


def list_models(config: CrawlConfig, cursor: Optional[str] = None) -> RawModelPage:
    with HubClient(config) as client:
        return client.list_models(cursor)


def fetch_model_detail(config: CrawlConfig, model_id: str) -> dict[str, Any]:
    with HubClient(config) as client:
        return client.fetch_model_detail(model_id)


def crawl_all(config: CrawlConfig, sink: Callable[[dict[str, Any]], None]) -> CrawlReport:
    with HubClient(config) as client:
        return client.crawl_all(sink)
