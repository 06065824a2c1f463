"""Cited-document store: fetching with an on-disk cache, fixed-size chunking,
and exact top-k cosine retrieval.

Documents are cached content-addressed under the cache directory: the SHA-256
of the URL keys a ``<hash>.txt`` body and a ``<hash>.json`` sidecar carrying
``url``, ``fetched_at`` and ``status``. A cache hit is served byte-identically
with no network call; fetch failures are recorded as data, never raised.

Chunks are non-overlapping windows counted in Unicode scalar values; every
chunk except a document's last has exactly ``chunk_size`` characters and their
concatenation restores the document text. The index is exact brute-force
cosine over L2-normalized vectors (an approximate structure buys nothing at
desk scale and would not be checkable against an argsort oracle).
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import backend as backend_mod
from .backend import FetchedPage
from .htmltext import html_to_text
from .ingest import extract_domain

DEFAULT_CHUNK_SIZE = 500
DEFAULT_TOP_K = 5
DEFAULT_FETCH_TIMEOUT = 20.0


class EvidenceError(RuntimeError):
    """Raised for contract violations (not for fetch failures, which are data)."""


class DocumentStatus(Enum):
    OK = "Ok"
    FETCH_FAILED = "FetchFailed"
    EMPTY = "Empty"


@dataclass(frozen=True)
class Document:
    url: str
    domain: str
    text: str
    fetched_at: float
    status: DocumentStatus
    failure_reason: str | None = None

    def __post_init__(self) -> None:
        if self.status is DocumentStatus.OK and not self.text:
            raise EvidenceError(f"{self.url}: Ok document must have non-empty text")


@dataclass(frozen=True)
class EvidenceChunk:
    doc_url: str
    ordinal: int
    text: str


@dataclass(frozen=True)
class ScoredChunk:
    chunk: EvidenceChunk
    similarity: float


@dataclass(frozen=True)
class RetrievalResult:
    chunks: tuple[ScoredChunk, ...]
    k: int

    @property
    def empty(self) -> bool:
        return not self.chunks


class DocumentCache:
    """Content-addressed on-disk cache keyed by URL hash."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _key(self, url: str) -> str:
        return hashlib.sha256(url.encode("utf-8")).hexdigest()

    def get(self, url: str) -> Document | None:
        key = self._key(url)
        sidecar = self.root / f"{key}.json"
        body = self.root / f"{key}.txt"
        if not sidecar.is_file():
            return None
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
        text = body.read_text(encoding="utf-8") if body.is_file() else ""
        return Document(
            url=meta["url"],
            domain=meta["domain"],
            text=text,
            fetched_at=meta["fetched_at"],
            status=DocumentStatus(meta["status"]),
            failure_reason=meta.get("failure_reason"),
        )

    def put(self, document: Document) -> None:
        key = self._key(document.url)
        (self.root / f"{key}.txt").write_text(document.text, encoding="utf-8")
        sidecar = {
            "url": document.url,
            "domain": document.domain,
            "fetched_at": document.fetched_at,
            "status": document.status.value,
        }
        if document.failure_reason is not None:
            sidecar["failure_reason"] = document.failure_reason
        (self.root / f"{key}.json").write_text(
            json.dumps(sidecar, ensure_ascii=False, sort_keys=True), encoding="utf-8"
        )

    def seed(self, url: str, text: str, fetched_at: float = 0.0) -> Document:
        """Store a document directly (fixtures, pre-scraped corpora)."""
        status = DocumentStatus.OK if text else DocumentStatus.EMPTY
        document = Document(url, extract_domain(url), text, fetched_at, status)
        self.put(document)
        return document


_ACCEPTED_CONTENT_TYPES = ("text/html", "application/xhtml+xml", "text/plain")


class Fetcher:
    """Cache-first document fetcher with one retry and per-host serialization."""

    def __init__(
        self,
        cache: DocumentCache,
        timeout: float = DEFAULT_FETCH_TIMEOUT,
        get: Callable[[str, float], FetchedPage] | None = None,
        clock: Callable[[], float] = time.time,
    ):
        self.cache = cache
        self.timeout = timeout
        self._get = get or backend_mod.http_get
        self._clock = clock
        self._host_locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _host_lock(self, host: str) -> threading.Lock:
        with self._locks_guard:
            return self._host_locks.setdefault(host, threading.Lock())

    def fetch(self, url: str) -> Document:
        cached = self.cache.get(url)
        if cached is not None:
            return cached
        domain = extract_domain(url)
        with self._host_lock(domain):
            cached = self.cache.get(url)  # racer may have filled it
            if cached is not None:
                return cached
            document = self._fetch_uncached(url, domain)
        self.cache.put(document)
        return document

    def _fetch_uncached(self, url: str, domain: str) -> Document:
        last_reason = "unknown"
        for _ in range(2):  # one retry
            try:
                page = self._get(url, self.timeout)
            except Exception as exc:  # failures are data, never fatal
                last_reason = f"{type(exc).__name__}: {exc}"
                continue
            if page.status_code != 200:
                last_reason = f"HTTP {page.status_code}"
                continue
            content_type = page.content_type.split(";")[0].strip().lower()
            if content_type and content_type not in _ACCEPTED_CONTENT_TYPES:
                return Document(
                    url, domain, "", self._clock(), DocumentStatus.FETCH_FAILED,
                    failure_reason="unsupported content type",
                )
            text = html_to_text(page.text) if "html" in content_type or not content_type else page.text.strip()
            if not text:
                return Document(url, domain, "", self._clock(), DocumentStatus.EMPTY)
            return Document(url, domain, text, self._clock(), DocumentStatus.OK)
        return Document(
            url, domain, "", self._clock(), DocumentStatus.FETCH_FAILED, failure_reason=last_reason
        )

    def fetch_many(self, urls: Sequence[str], max_workers: int = 4) -> dict[str, Document]:
        from concurrent.futures import ThreadPoolExecutor

        unique = list(dict.fromkeys(urls))
        if not unique:
            return {}
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            documents = list(pool.map(self.fetch, unique))
        return {doc.url: doc for doc in documents}


def chunk_document(document: Document, chunk_size: int = DEFAULT_CHUNK_SIZE) -> list[EvidenceChunk]:
    """Fixed-size chunks; all but the last hold exactly ``chunk_size`` scalars."""
    if chunk_size < 1:
        raise EvidenceError(f"chunk size must be >= 1, got {chunk_size}")
    if document.status is not DocumentStatus.OK:
        return []
    text = document.text
    return [
        EvidenceChunk(document.url, ordinal, text[start : start + chunk_size])
        for ordinal, start in enumerate(range(0, len(text), chunk_size))
    ]


class EvidenceIndex:
    """Immutable exact-search index over embedded chunks."""

    def __init__(self, chunks: Sequence[EvidenceChunk], vectors: np.ndarray):
        if len(chunks) != vectors.shape[0]:
            raise EvidenceError("chunk/vector count mismatch")
        self.chunks = tuple(chunks)
        self.vectors = vectors

    def __len__(self) -> int:
        return len(self.chunks)

    @property
    def dimension(self) -> int:
        return int(self.vectors.shape[1]) if len(self.chunks) else 0


def _normalize_rows(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return vectors / norms


def build_index(chunks: Sequence[EvidenceChunk], embedder) -> EvidenceIndex:
    """Embed every chunk once (single embed_batch call) and normalize vectors."""
    if not chunks:
        return EvidenceIndex((), np.zeros((0, 0)))
    for chunk in chunks:
        if not chunk.text:
            raise EvidenceError(f"{chunk.doc_url}#{chunk.ordinal}: empty chunk text")
    try:
        raw = embedder.embed_batch([chunk.text for chunk in chunks])
    except Exception as exc:
        urls = sorted({c.doc_url for c in chunks})
        raise EvidenceError(f"embedding failed for batch of {len(chunks)} chunks from {urls}: {exc}") from exc
    dims = {len(v) for v in raw}
    if len(dims) != 1:
        raise EvidenceError(f"embedder returned mixed dimensions: {sorted(dims)}")
    vectors = _normalize_rows(np.asarray(raw, dtype=np.float64))
    return EvidenceIndex(chunks, vectors)


def retrieve(query_text: str, index: EvidenceIndex, embedder, k: int = DEFAULT_TOP_K) -> RetrievalResult:
    """Exact top-k by cosine similarity, ties broken by (doc_url, ordinal)."""
    if k < 1:
        raise EvidenceError(f"k must be >= 1, got {k}")
    if len(index) == 0:
        return RetrievalResult((), k)
    query = np.asarray(embedder.embed_batch([query_text])[0], dtype=np.float64)
    if query.shape[0] != index.dimension:
        raise EvidenceError(
            f"query dimension {query.shape[0]} != index dimension {index.dimension}"
        )
    norm = np.linalg.norm(query)
    if norm > 0.0:
        query = query / norm
    similarities = index.vectors @ query
    # Ordering quantizes similarities to 12 decimals so mathematically tied
    # chunks obey the (doc_url, ordinal) tie-break regardless of float
    # accumulation order; reported similarities keep full precision.
    order = sorted(
        range(len(index)),
        key=lambda i: (-round(similarities[i], 12), index.chunks[i].doc_url, index.chunks[i].ordinal),
    )
    top = order[:k]
    return RetrievalResult(
        tuple(ScoredChunk(index.chunks[i], float(similarities[i])) for i in top), k
    )
