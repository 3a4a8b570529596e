"""Embedding providers and vector helpers.

Every vector returned from this module is a 1-D float64 numpy array with unit
L2 norm. Two providers exist: a hashed bag-of-tokens mock that needs no model,
and a remote HTTP client with an on-disk cache.
"""

from __future__ import annotations

import hashlib
import logging
import os
import sqlite3
import string
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import httpx
import numpy as np

from .errors import (
    ConfigError,
    DimensionDriftError,
    DimensionMismatchError,
    EmptyInputError,
    EndpointUnreachableError,
    ZeroVectorError,
)

logger = logging.getLogger(__name__)

ROLES = ("query", "document")
NORM_TOLERANCE = 1e-6


def unit_normalize(vec: np.ndarray) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    norm = float(np.linalg.norm(vec))
    if not np.isfinite(norm) or norm == 0.0:
        raise ZeroVectorError("cannot normalize a zero or non-finite vector")
    return vec / norm


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two vectors, clipped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"dimension mismatch: {a.shape} vs {b.shape}")
    denom = float(np.linalg.norm(a) * np.linalg.norm(b))
    if denom == 0.0:
        raise ZeroVectorError("cosine of a zero vector is undefined")
    return float(np.clip(np.dot(a, b) / denom, -1.0, 1.0))


def average_embedding(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Componentwise mean of the vectors, re-normalized to unit length."""
    if len(vectors) == 0:
        raise EmptyInputError("average_embedding needs at least one vector")
    stacked = np.asarray(np.stack([np.asarray(v, dtype=np.float64) for v in vectors]))
    if stacked.ndim != 2:
        raise DimensionMismatchError("vectors must be 1-D and share one dimension")
    mean = stacked.mean(axis=0)
    try:
        return unit_normalize(mean)
    except ZeroVectorError:
        raise ZeroVectorError("mean of the vectors is zero (antipodal inputs?)") from None


_TOKEN_STRIP = string.punctuation


def mock_tokens(text: str) -> list[str]:
    """Whitespace tokens, case-folded, with surrounding punctuation removed."""
    out = []
    for raw in text.casefold().split():
        tok = raw.strip(_TOKEN_STRIP)
        if tok:
            out.append(tok)
    return out


def _hash64(token: str, salt: bytes) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, person=salt).digest()
    return int.from_bytes(digest, "little")


def token_projection(token: str, dimension: int) -> tuple[int, float]:
    """Bucket index and ±1 sign the mock assigns to ``token``."""
    bucket = _hash64(token, b"pg-bucket") % dimension
    sign = 1.0 if _hash64(token, b"pg-sign") & 1 else -1.0
    return bucket, sign


class EmbeddingProvider:
    """Interface shared by the mock and remote providers."""

    dimension: int

    @property
    def fingerprint(self) -> str:
        raise NotImplementedError

    def embed_texts(self, texts: Sequence[str], role: str = "document") -> list[np.ndarray]:
        raise NotImplementedError

    def embed(self, text: str, role: str = "document") -> np.ndarray:
        return self.embed_texts([text], role=role)[0]


def _check_texts(texts: Sequence[str], role: str) -> None:
    if role not in ROLES:
        raise ValueError(f"role must be one of {ROLES}, got {role!r}")
    if len(texts) == 0:
        raise EmptyInputError("no texts to embed")
    for t in texts:
        if not isinstance(t, str) or not t.strip():
            raise EmptyInputError("texts must be non-empty strings")


class MockEmbeddingProvider(EmbeddingProvider):
    """Hashed bag-of-tokens embedding.

    Each token adds ±1 to one of ``dimension`` buckets; the sum is L2-normalized.
    Word order is ignored, so texts sharing tokens get proportionally higher
    cosine. The ``role`` hint is accepted and ignored.
    """

    def __init__(self, dimension: int = 256):
        if dimension < 8:
            raise ConfigError("embedding dimension must be >= 8")
        self.dimension = dimension

    @property
    def fingerprint(self) -> str:
        return f"mock:hashed-bow:d={self.dimension}"

    def _embed_one(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension, dtype=np.float64)
        for tok in mock_tokens(text):
            bucket, sign = token_projection(tok, self.dimension)
            vec[bucket] += sign
        if not vec.any():
            # all-punctuation text or cancelling collisions: hash the whole string
            bucket, sign = token_projection("\x00" + text, self.dimension)
            vec[bucket] = sign
        return vec / np.linalg.norm(vec)

    def embed_texts(self, texts: Sequence[str], role: str = "document") -> list[np.ndarray]:
        _check_texts(texts, role)
        return [self._embed_one(t) for t in texts]


class EmbeddingCache:
    """SQLite store mapping sha256(fingerprint, role, text) to float32 vector bytes."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._conn = sqlite3.connect(str(self.path), check_same_thread=False)
        with self._lock:
            self._conn.execute(
                "CREATE TABLE IF NOT EXISTS vectors (key TEXT PRIMARY KEY, dim INTEGER NOT NULL, data BLOB NOT NULL)"
            )
            self._conn.commit()

    @staticmethod
    def key(fingerprint: str, role: str, text: str) -> str:
        h = hashlib.sha256()
        for part in (fingerprint, role, text):
            h.update(part.encode("utf-8"))
            h.update(b"\x00")
        return h.hexdigest()

    def get(self, key: str) -> Optional[np.ndarray]:
        with self._lock:
            row = self._conn.execute("SELECT dim, data FROM vectors WHERE key = ?", (key,)).fetchone()
        if row is None:
            return None
        return np.frombuffer(row[1], dtype="<f4").astype(np.float64)

    def put_many(self, items: Iterable[tuple[str, np.ndarray]]) -> None:
        rows = [(k, int(v.shape[0]), np.asarray(v, dtype="<f4").tobytes()) for k, v in items]
        with self._lock:
            self._conn.executemany("INSERT OR REPLACE INTO vectors VALUES (?, ?, ?)", rows)
            self._conn.commit()

    def close(self) -> None:
        with self._lock:
            self._conn.close()


@dataclass
class ProviderConfig:
    kind: str = "mock"
    url: Optional[str] = None
    token: Optional[str] = None
    dimension: int = 256
    batch_size: int = 32
    timeout: float = 30.0
    retries: int = 3
    parallelism: int = 4
    cache_path: Optional[str] = None
    model: str = "remote"

    def __post_init__(self) -> None:
        if self.kind not in ("mock", "remote"):
            raise ConfigError(f"provider kind must be 'mock' or 'remote', got {self.kind!r}")
        if self.dimension < 8:
            raise ConfigError("embedding dimension must be >= 8")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.retries < 0 or self.parallelism < 1:
            raise ConfigError("retries must be >= 0 and parallelism >= 1")


class RemoteEmbeddingProvider(EmbeddingProvider):
    """HTTP embedding client.

    Wire format: POST ``{"texts": [...], "role": ...}`` returning
    ``{"vectors": [[...], ...]}``. Connection failures and 5xx responses are
    retried up to ``config.retries`` times, then raised as
    :class:`EndpointUnreachableError`.
    """

    def __init__(
        self,
        config: ProviderConfig,
        cache: Optional[EmbeddingCache] = None,
        client: Optional[httpx.Client] = None,
        backoff: float = 0.5,
    ):
        url = config.url or os.environ.get("PROPRAG_EMBED_URL")
        if not url:
            raise ConfigError("remote provider needs a URL (config or PROPRAG_EMBED_URL)")
        self.config = config
        self.url = url
        self.token = config.token or os.environ.get("PROPRAG_EMBED_TOKEN")
        self.dimension = config.dimension
        self.backoff = backoff
        if cache is None and config.cache_path:
            cache = EmbeddingCache(config.cache_path)
        self.cache = cache
        self._client = client or httpx.Client(timeout=config.timeout)

    @property
    def fingerprint(self) -> str:
        return f"remote:{self.config.model}:d={self.dimension}"

    def _post(self, batch: list[str], role: str) -> list[np.ndarray]:
        headers = {"Authorization": f"Bearer {self.token}"} if self.token else {}
        last_exc: Optional[Exception] = None
        for attempt in range(self.config.retries + 1):
            try:
                resp = self._client.post(self.url, json={"texts": batch, "role": role}, headers=headers)
                if resp.status_code >= 500:
                    raise EndpointUnreachableError(f"embedding endpoint returned {resp.status_code}")
                resp.raise_for_status()
                vectors = resp.json()["vectors"]
                break
            except (httpx.TransportError, EndpointUnreachableError) as exc:
                last_exc = exc
                logger.warning("embedding request failed (attempt %d): %s", attempt + 1, exc)
                if attempt < self.config.retries and self.backoff:
                    time.sleep(self.backoff * 2**attempt)
        else:
            raise EndpointUnreachableError(f"embedding endpoint unreachable: {last_exc}") from last_exc

        if len(vectors) != len(batch):
            raise DimensionDriftError(f"endpoint returned {len(vectors)} vectors for {len(batch)} texts")
        out = []
        for v in vectors:
            arr = np.asarray(v, dtype=np.float64)
            if arr.shape != (self.dimension,):
                raise DimensionDriftError(f"expected dimension {self.dimension}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise DimensionDriftError("endpoint returned non-finite components")
            out.append(unit_normalize(arr))
        return out

    def embed_texts(self, texts: Sequence[str], role: str = "document") -> list[np.ndarray]:
        _check_texts(texts, role)
        results: list[Optional[np.ndarray]] = [None] * len(texts)
        keys = [EmbeddingCache.key(self.fingerprint, role, t) for t in texts]
        missing: list[int] = []
        for i, key in enumerate(keys):
            cached = self.cache.get(key) if self.cache else None
            if cached is not None:
                results[i] = unit_normalize(cached)  # already float32-rounded
            else:
                missing.append(i)

        batches = [missing[i : i + self.config.batch_size] for i in range(0, len(missing), self.config.batch_size)]
        with ThreadPoolExecutor(max_workers=self.config.parallelism) as pool:
            fetched = list(pool.map(lambda idx: self._post([texts[i] for i in idx], role), batches))

        for idx, vecs in zip(batches, fetched):
            for i, v in zip(idx, vecs):
                # round through float32 so cold and warm-cache calls agree bit-for-bit
                results[i] = unit_normalize(np.asarray(v, dtype="<f4").astype(np.float64))
            if self.cache:
                self.cache.put_many((keys[i], v) for i, v in zip(idx, vecs))
        return results  # type: ignore[return-value]


def provider_from_config(config: ProviderConfig, cache: Optional[EmbeddingCache] = None) -> EmbeddingProvider:
    """Mock or remote provider; ``cache`` only applies to the remote one."""
    if config.kind == "mock":
        return MockEmbeddingProvider(config.dimension)
    return RemoteEmbeddingProvider(config, cache=cache)
