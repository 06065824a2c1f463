"""Chat-completion and embedding backends.

One remote adapter speaks the OpenAI-compatible HTTP dialect
(``/chat/completions`` and ``/embeddings``); deterministic mocks drive tests
and offline runs. This module owns every network connection the package opens:
the judge/embedding calls and the raw document GET used by the evidence store.

Mock script format (JSON)::

    {
      "chat_rules": [
        {"contains": "needle", "response": "canned text"},
        {"contains_all": ["a", "b"], "response": "..."},
        {"regex": "^...", "response": "..."}
      ],
      "default_response": "...",                    # optional
      "embedding": {"mode": "hashed_bag_of_words", "dim": 256}
                   # or {"mode": "scripted", "vectors": {"text": [..]}}
    }

Rules are tried in order; the first match wins. The hashed bag-of-words
embedder is deterministic across processes (BLAKE2-based, no PYTHONHASHSEED
dependence) and effectively injective on small test vocabularies at dim >= 256.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import requests

DEFAULT_API_KEY_ENV = "GROUNDCHECK_API_KEY"
DEFAULT_EMBED_BATCH_SIZE = 128


class BackendError(RuntimeError):
    """Base class for backend failures."""


class BackendConfigError(BackendError):
    """Invalid configuration, detected before any network call."""


class BackendResponseError(BackendError):
    """Malformed or unexpected response body."""


@dataclass(frozen=True)
class BackendConfig:
    endpoint: str
    model: str
    api_key_env: str | None = DEFAULT_API_KEY_ENV
    timeout: float = 60.0
    max_retries: int = 3
    rate_limit_per_minute: int | None = None
    embed_batch_size: int = DEFAULT_EMBED_BATCH_SIZE

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise BackendConfigError("timeout must be > 0")
        if self.max_retries < 0:
            raise BackendConfigError("max retries must be >= 0")
        if self.rate_limit_per_minute is not None and self.rate_limit_per_minute < 1:
            raise BackendConfigError("rate limit must be >= 1 request/minute")


class RateLimiter:
    """Sliding-window limiter: at most ``limit`` acquisitions per 60 s window.

    Clock and sleep are injectable so the contract is testable without waiting.
    """

    WINDOW = 60.0

    def __init__(
        self,
        limit: int,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if limit < 1:
            raise BackendConfigError("rate limit must be >= 1")
        self.limit = limit
        self._clock = clock
        self._sleep = sleep
        self._times: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                while self._times and now - self._times[0] >= self.WINDOW:
                    self._times.popleft()
                if len(self._times) < self.limit:
                    self._times.append(now)
                    return
                wait = self.WINDOW - (now - self._times[0])
            self._sleep(max(wait, 0.0))


class HttpBackend:
    """OpenAI-compatible chat + embeddings client with retry and rate limiting."""

    RETRYABLE_STATUS = {408, 429, 500, 502, 503, 504}

    def __init__(
        self,
        config: BackendConfig,
        session: requests.Session | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        self._session = session or requests.Session()
        self._sleep = sleep
        self._limiter = (
            RateLimiter(config.rate_limit_per_minute, sleep=sleep)
            if config.rate_limit_per_minute
            else None
        )
        self._api_key = self._resolve_api_key()

    def _resolve_api_key(self) -> str | None:
        env = self.config.api_key_env
        if not env:
            return None
        key = os.environ.get(env)
        if key is None:
            raise BackendConfigError(f"API key environment variable {env!r} is not set")
        return key

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        return headers

    def _post(self, path: str, payload: dict) -> dict:
        url = self.config.endpoint.rstrip("/") + path
        attempts = self.config.max_retries + 1
        last_error: Exception | None = None
        for attempt in range(attempts):
            if self._limiter:
                self._limiter.acquire()
            try:
                response = self._session.post(
                    url, json=payload, headers=self._headers(), timeout=self.config.timeout
                )
            except requests.RequestException as exc:
                last_error = exc
            else:
                if response.status_code in (401, 403):
                    raise BackendError(f"authentication failed ({response.status_code}) at {url}")
                if response.status_code == 200:
                    try:
                        return response.json()
                    except ValueError as exc:
                        raise BackendResponseError(f"non-JSON response body from {url}") from exc
                if response.status_code not in self.RETRYABLE_STATUS:
                    raise BackendError(f"HTTP {response.status_code} from {url}: {response.text[:200]}")
                last_error = BackendError(f"HTTP {response.status_code} from {url}")
            if attempt < attempts - 1:
                self._sleep(min(2.0**attempt, 30.0))
        raise BackendError(f"exhausted {attempts} attempts against {url}: {last_error}")

    def chat_complete(self, prompt: str, temperature: float = 0.0, max_tokens: int | None = None) -> str:
        payload: dict = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
        }
        if max_tokens is not None:
            payload["max_tokens"] = max_tokens
        body = self._post("/chat/completions", payload)
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendResponseError(f"malformed chat completion body: {body!r}") from exc
        if not isinstance(content, str):
            raise BackendResponseError(f"completion content is not text: {content!r}")
        return content

    def embed_batch(self, texts: Sequence[str]) -> list[list[float]]:
        if not texts:
            raise BackendError("embed_batch requires at least one text")
        vectors: list[list[float]] = []
        size = self.config.embed_batch_size
        for start in range(0, len(texts), size):
            batch = list(texts[start : start + size])
            body = self._post("/embeddings", {"model": self.config.model, "input": batch})
            try:
                data = sorted(body["data"], key=lambda item: item["index"])
                batch_vectors = [list(map(float, item["embedding"])) for item in data]
            except (KeyError, TypeError, ValueError) as exc:
                raise BackendResponseError(f"malformed embeddings body: {body!r}") from exc
            if len(batch_vectors) != len(batch):
                raise BackendResponseError(
                    f"expected {len(batch)} embeddings, got {len(batch_vectors)}"
                )
            vectors.extend(batch_vectors)
        _check_uniform_dimension(vectors)
        return vectors


def _check_uniform_dimension(vectors: Sequence[Sequence[float]]) -> None:
    dims = {len(v) for v in vectors}
    if len(dims) > 1:
        raise BackendResponseError(f"embedding dimensions differ: {sorted(dims)}")


def hashed_bag_of_words(text: str, dim: int) -> list[float]:
    """Deterministic sparse-ish embedding: signed token counts hashed into ``dim``
    buckets, L2-normalized. Empty/whitespace-only text maps to a fixed basis vector."""
    vec = [0.0] * dim
    for token in re.findall(r"\w+", text.lower()):
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        bucket = int.from_bytes(digest[:4], "big") % dim
        sign = 1.0 if digest[4] % 2 == 0 else -1.0
        vec[bucket] += sign
    norm = math.sqrt(sum(v * v for v in vec))
    if norm == 0.0:
        vec[0] = 1.0
        return vec
    return [v / norm for v in vec]


@dataclass(frozen=True)
class ChatRule:
    response: str
    contains: tuple[str, ...] = ()
    regex: str | None = None

    def matches(self, prompt: str) -> bool:
        if self.contains and not all(needle in prompt for needle in self.contains):
            return False
        if self.regex is not None and re.search(self.regex, prompt) is None:
            return False
        return bool(self.contains or self.regex is not None)


@dataclass
class MockBackend:
    """Scripted backend; never touches the network.

    Chat prompts are matched against the rules in order; embeddings are either
    the hashed bag-of-words or scripted per-text vectors.
    """

    chat_rules: tuple[ChatRule, ...] = ()
    default_response: str | None = None
    embedding_mode: str = "hashed_bag_of_words"
    embedding_dim: int = 256
    scripted_vectors: dict[str, tuple[float, ...]] = field(default_factory=dict)
    chat_calls: int = 0
    embed_calls: int = 0

    def chat_complete(self, prompt: str, temperature: float = 0.0, max_tokens: int | None = None) -> str:
        self.chat_calls += 1
        for rule in self.chat_rules:
            if rule.matches(prompt):
                return rule.response
        if self.default_response is not None:
            return self.default_response
        raise BackendError(f"mock backend has no rule for prompt: {prompt[:120]!r}...")

    def embed_batch(self, texts: Sequence[str]) -> list[list[float]]:
        if not texts:
            raise BackendError("embed_batch requires at least one text")
        self.embed_calls += 1
        if self.embedding_mode == "hashed_bag_of_words":
            return [hashed_bag_of_words(text, self.embedding_dim) for text in texts]
        vectors = []
        for text in texts:
            if text not in self.scripted_vectors:
                raise BackendError(f"mock backend has no scripted vector for {text[:80]!r}")
            vectors.append(list(self.scripted_vectors[text]))
        _check_uniform_dimension(vectors)
        return vectors


def load_mock(path: str | Path) -> MockBackend:
    """Build a MockBackend from a script file (see module docstring for format)."""
    path = Path(path)
    if not path.is_file():
        raise BackendConfigError(f"mock script not found: {path}")
    try:
        with path.open(encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise BackendConfigError(f"{path}: malformed mock script: {exc}") from exc
    return mock_from_dict(raw, source=str(path))


def mock_from_dict(raw: dict, source: str = "<dict>") -> MockBackend:
    rules = []
    for entry in raw.get("chat_rules", []):
        contains: tuple[str, ...]
        if "contains_all" in entry:
            contains = tuple(entry["contains_all"])
        elif "contains" in entry:
            contains = (entry["contains"],)
        else:
            contains = ()
        if not contains and "regex" not in entry:
            raise BackendConfigError(f"{source}: chat rule needs contains/contains_all/regex")
        rules.append(ChatRule(response=entry["response"], contains=contains, regex=entry.get("regex")))

    embedding = raw.get("embedding", {"mode": "hashed_bag_of_words", "dim": 256})
    mode = embedding.get("mode")
    if mode == "hashed_bag_of_words":
        dim = int(embedding.get("dim", 256))
        if dim < 1:
            raise BackendConfigError(f"{source}: embedding dim must be >= 1")
        return MockBackend(
            chat_rules=tuple(rules),
            default_response=raw.get("default_response"),
            embedding_mode=mode,
            embedding_dim=dim,
        )
    if mode == "scripted":
        vectors = {
            text: tuple(map(float, vec)) for text, vec in embedding.get("vectors", {}).items()
        }
        return MockBackend(
            chat_rules=tuple(rules),
            default_response=raw.get("default_response"),
            embedding_mode=mode,
            scripted_vectors=vectors,
        )
    raise BackendConfigError(f"{source}: unknown embedding mode {mode!r}")


# --- Raw document fetch ------------------------------------------------------

# Evidence fetching routes through here so that no module outside this one
# opens a network connection.


@dataclass(frozen=True)
class FetchedPage:
    status_code: int
    content_type: str
    text: str


def http_get(
    url: str, timeout: float, session: requests.Session | None = None
) -> FetchedPage:
    sess = session or requests.Session()
    response = sess.get(url, timeout=timeout, headers={"User-Agent": "groundcheck/0.1"})
    return FetchedPage(
        status_code=response.status_code,
        content_type=response.headers.get("Content-Type", ""),
        text=response.text,
    )
