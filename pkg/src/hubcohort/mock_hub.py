"""In-process mock hub server and deterministic fixture populations.

The mock serves the same two endpoints the real hub adapter uses
(``/api/models`` and ``/api/models/{id}``) over loopback HTTP, with
optional injected 429/500 failures and a per-request log so tests can
verify throttling behaviour. Tests and the bundled pipeline fixture never
touch the real hub.
"""

from __future__ import annotations

import json
import random
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Optional
from urllib.parse import parse_qs, urlparse

_DOMAIN_TAGS = {
    "NLP": [
        "text-classification",
        "text-generation",
        "question-answering",
        "summarization",
        "translation",
        "fill-mask",
    ],
    "ComputerVision": [
        "image-classification",
        "object-detection",
        "image-segmentation",
        "depth-estimation",
    ],
    "Multimodal": ["text-to-image", "image-to-text", "visual-question-answering"],
    "Audio": ["automatic-speech-recognition", "text-to-speech", "audio-classification"],
    "ReinforcementLearning": ["reinforcement-learning", "robotics"],
}

_AUX_TAGS = [
    "en",
    "fr",
    "de",
    "zh",
    "license:mit",
    "license:apache-2.0",
    "dataset:squad",
    "dataset:imagenet",
    "arxiv:2104.00001",
]

_LIBRARIES = ["pytorch", "tensorflow", "jax"]

_COMMIT_MESSAGES = [
    "fix tokenizer bug on empty input",
    "fix crash when loading config",
    "patch evaluation script",
    "upgrade transformers to 4.30",
    "update dependency versions",
    "bump tokenizers to 0.13",
    "migrate weights to safetensors",
    "improve model card wording",
    "refactor training script",
    "add usage example to readme",
    "optimize inference batching",
    "document hyperparameters",
    "initial commit",
    "first version",
]

_CARDS_WITH_METRICS = [
    "Evaluation results\nAccuracy: 0.91\nF1 = 87.5%\nTrained on public data.",
    "Benchmarks\nrouge1: 44.1\nSee paper for details.",
    "Results table\naccuracy = 76.3\nf1: 0.71",
]


def make_population(n: int, seed: int = 0) -> list[dict[str, Any]]:
    """Generate a deterministic fixture population of ``n`` model documents.

    Each document carries listing fields plus detail fields (commits,
    discussions, card text); the server splits them per endpoint.
    """
    rng = random.Random(seed)
    base = datetime(2023, 1, 1, tzinfo=timezone.utc)
    population = []
    domains = list(_DOMAIN_TAGS)
    for i in range(n):
        domain = rng.choice(domains + ["Unknown"])
        tags = []
        if domain != "Unknown":
            tags.extend(rng.sample(_DOMAIN_TAGS[domain], k=rng.randint(1, 2)))
        tags.extend(rng.sample(_AUX_TAGS, k=rng.randint(0, 3)))
        library = rng.choice(_LIBRARIES)
        tags.append(library)
        rng.shuffle(tags)

        commit_count = rng.randint(1, 8)
        commits = []
        last_modified = base + timedelta(hours=i, minutes=rng.randint(0, 59))
        for c in range(commit_count):
            commits.append(
                {
                    "sha": "%040x" % rng.getrandbits(160),
                    "message": rng.choice(_COMMIT_MESSAGES),
                    "timestamp": (last_modified - timedelta(days=commit_count - c)).strftime(
                        "%Y-%m-%dT%H:%M:%SZ"
                    ),
                }
            )

        card = ""
        if rng.random() < 0.5:
            card = rng.choice(_CARDS_WITH_METRICS)
        doc: dict[str, Any] = {
            "id": f"org{i % 37}/model-{i:05d}",
            "createdAt": (last_modified - timedelta(days=30)).strftime("%Y-%m-%dT%H:%M:%SZ"),
            "lastModified": last_modified.strftime("%Y-%m-%dT%H:%M:%SZ"),
            "downloads": int(rng.paretovariate(1.2) * 10),
            "likes": int(rng.paretovariate(1.5)),
            "size_bytes": int(rng.lognormvariate(18, 2)),
            "tags": tags,
            "library_name": library,
            "commits": commits,
            "discussions": {
                "count": rng.randint(0, 5),
                "titles": [f"question {k}" for k in range(rng.randint(0, 2))],
            },
            "card_text": card,
        }
        if rng.random() < 0.3:
            doc["co2_eq_emissions"] = f"{round(rng.uniform(0.1, 50.0), 2)} kg"
            doc["hardware"] = rng.choice(["V100", "A100", "T4"])
            doc["region"] = rng.choice(["us-east", "eu-west", "ap-south"])
        population.append(doc)
    return population


_LISTING_FIELDS = (
    "id",
    "createdAt",
    "lastModified",
    "downloads",
    "likes",
    "size_bytes",
    "tags",
    "library_name",
)


@dataclass
class MockHubState:
    """Shared mutable state behind the request handler."""

    population: list[dict[str, Any]]
    required_token: Optional[str] = None
    fail_429_rate: float = 0.0
    fail_500_rate: float = 0.0
    always_fail_detail: Optional[int] = None
    failure_seed: int = 0
    request_log: list[tuple[float, str, int]] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def __post_init__(self):
        self._by_id = {doc["id"]: doc for doc in self.population}
        self._rng = random.Random(self.failure_seed)

    def injected_status(self, path: str) -> Optional[int]:
        if self.always_fail_detail is not None and path.startswith("/api/models/"):
            return self.always_fail_detail
        with self.lock:
            roll = self._rng.random()
        if roll < self.fail_429_rate:
            return 429
        if roll < self.fail_429_rate + self.fail_500_rate:
            return 500
        return None

    def log(self, path: str, status: int, at: Optional[float] = None) -> None:
        with self.lock:
            self.request_log.append((time.monotonic() if at is None else at, path, status))

    def window_counts(self, window: float = 1.0) -> list[int]:
        """Request count in the sliding window ending at each request."""
        with self.lock:
            times = sorted(t for t, _, _ in self.request_log)
        counts = []
        lo = 0
        for hi, t in enumerate(times):
            while times[lo] <= t - window:
                lo += 1
            counts.append(hi - lo + 1)
        return counts

    def lookup(self, model_id: str) -> Optional[dict[str, Any]]:
        return self._by_id.get(model_id)


class _Handler(BaseHTTPRequestHandler):
    state: MockHubState  # set by serve()
    # Keep-alive matters for the throttle log: with HTTP/1.0 every request
    # needs a fresh connection, and the single accept loop can release a
    # backlog of queued connections in a burst, smearing arrival times.
    protocol_version = "HTTP/1.1"

    def log_message(self, *args):  # silence default stderr chatter
        pass

    def _send(self, status: int, payload: Optional[dict] = None) -> None:
        body = json.dumps(payload if payload is not None else {}).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        arrived = time.monotonic()
        state = self.state
        parsed = urlparse(self.path)
        path = parsed.path

        if state.required_token is not None:
            auth = self.headers.get("Authorization", "")
            if auth != f"Bearer {state.required_token}":
                state.log(path, 401, arrived)
                self._send(401, {"error": "unauthorized"})
                return

        injected = state.injected_status(path)
        if injected is not None:
            state.log(path, injected, arrived)
            self._send(injected, {"error": f"injected {injected}"})
            return

        if path == "/api/models":
            query = parse_qs(parsed.query)
            limit = int(query.get("limit", ["100"])[0])
            offset = int(query.get("cursor", ["0"])[0])
            since = query.get("since", [None])[0]
            docs = state.population
            if since:
                docs = [d for d in docs if d["lastModified"] >= since]
            page = docs[offset : offset + limit]
            items = [{k: d[k] for k in _LISTING_FIELDS if k in d} for d in page]
            payload: dict[str, Any] = {"items": items}
            if offset + limit < len(docs):
                payload["next_cursor"] = str(offset + limit)
            state.log(path, 200, arrived)
            self._send(200, payload)
        elif path.startswith("/api/models/"):
            model_id = path[len("/api/models/") :]
            doc = state.lookup(model_id)
            if doc is None:
                state.log(path, 404, arrived)
                self._send(404, {"error": "not found"})
            else:
                state.log(path, 200, arrived)
                self._send(200, doc)
        else:
            state.log(path, 404, arrived)
            self._send(404, {"error": "unknown endpoint"})


class MockHub:
    """Loopback HTTP server wrapping a :class:`MockHubState`.

    Usable as a context manager; ``base_url`` points at the bound port.
    """

    def __init__(self, state: MockHubState):
        self.state = state
        handler = type("BoundHandler", (_Handler,), {"state": state})
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "MockHub":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self) -> "MockHub":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
