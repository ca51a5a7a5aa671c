"""Pluggable semantic text encoders, cosine similarity, and an embedding cache.

All encoders are deterministic: equal text always yields a bit-identical
float32 vector. That property is what makes the cache transparent and the
experiment pipeline reproducible.
"""

from __future__ import annotations

import hashlib
import struct
import threading
import time
import warnings
import zlib
from pathlib import Path
from typing import Callable, Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import DataError, EncoderProtocolError

_NGRAM_SIZES = (3, 4, 5)
_CACHE_MAGIC = b"DNEC1"


@runtime_checkable
class SemanticEncoder(Protocol):
    """Contract for sentence encoders: fixed dim, deterministic encode."""

    dim: int
    encoder_id: str

    def encode(self, text: str) -> np.ndarray: ...

    def encode_batch(self, texts: Sequence[str]) -> list[np.ndarray]: ...


def encode_hashed_ngram(text: str, dim: int) -> np.ndarray:
    """Bag of character 3-5-grams hashed into ``dim`` buckets, L2-normalized.

    Text is wrapped in boundary markers so any non-empty input produces at
    least one n-gram; only the empty string maps to the zero vector.
    """
    if dim < 16:
        raise DataError(f"encoder dim must be >= 16, got {dim}")
    vec = np.zeros(dim, dtype=np.float32)
    if not text:
        return vec
    padded = f"<{text}>"
    # n-grams over characters, hashed with crc32 (stable across runs)
    for n in _NGRAM_SIZES:
        for i in range(len(padded) - n + 1):
            gram = padded[i : i + n].encode("utf-8", errors="replace")
            vec[zlib.crc32(gram) % dim] += 1.0
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec /= np.float32(norm)
    return vec


class HashedNgramEncoder:
    """Deterministic local encoder; stands in for a sentence-transformer."""

    def __init__(self, dim: int = 256):
        if dim < 16:
            raise DataError(f"encoder dim must be >= 16, got {dim}")
        self.dim = dim
        self.encoder_id = f"hashed-ngram-{dim}"

    def encode(self, text: str) -> np.ndarray:
        return encode_hashed_ngram(text, self.dim)

    def encode_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [self.encode(t) for t in texts]


class RemoteEncoder:
    """Client for an HTTP embedding provider.

    Wire format: POST ``{"texts": [...]}`` as JSON, response
    ``{"vectors": [[...], ...]}``, one round trip per batch. Transient
    failures are retried with exponential backoff (3 attempts total).
    """

    def __init__(
        self,
        url: str,
        dim: int,
        encoder_id: str | None = None,
        timeout: float = 30.0,
        max_attempts: int = 3,
        backoff: float = 0.5,
        post: Callable | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if post is None:
            import requests

            post = requests.post
        self.url = url
        self.dim = dim
        self.encoder_id = encoder_id or f"remote:{url}"
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._post = post
        self._sleep = sleep

    def encode(self, text: str) -> np.ndarray:
        return self.encode_batch([text])[0]

    def encode_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            return []
        payload = {"texts": list(texts)}
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                response = self._post(self.url, json=payload, timeout=self.timeout)
                response.raise_for_status()
                vectors = response.json()["vectors"]
                return self._validate(vectors, len(texts))
            except EncoderProtocolError:
                raise
            except Exception as exc:  # noqa: BLE001 - network/provider errors
                last_error = exc
        raise EncoderProtocolError(
            f"embedding provider at {self.url} failed after "
            f"{self.max_attempts} attempts: {last_error}"
        )

    def _validate(self, vectors, expected: int) -> list[np.ndarray]:
        if not isinstance(vectors, list) or len(vectors) != expected:
            raise EncoderProtocolError(
                f"provider returned {len(vectors) if isinstance(vectors, list) else 'non-list'} "
                f"vectors for {expected} texts"
            )
        out = []
        for vec in vectors:
            arr = np.asarray(vec, dtype=np.float32)
            if arr.ndim != 1 or arr.shape[0] != self.dim:
                raise EncoderProtocolError(
                    f"provider returned a vector of dim {arr.shape}, expected {self.dim}"
                )
            out.append(arr)
        return out


class EmbeddingCache:
    """Persistent digest -> vector map, append-only on disk.

    File layout: magic ``DNEC1``, then records of (32-byte SHA-256 digest,
    u32 little-endian dim, dim little-endian float32 values). Keys are
    SHA-256 over encoder id and text, so one file can serve several encoders.
    With ``path=None`` the cache is memory-only.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._store: dict[bytes, np.ndarray] = {}
        self._lock = threading.Lock()
        self._handle = None
        if self.path is not None:
            self._load()
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._handle = open(self.path, "ab")

    @staticmethod
    def digest(encoder_id: str, text: str) -> bytes:
        h = hashlib.sha256()
        h.update(encoder_id.encode("utf-8"))
        h.update(b"\x00")
        h.update(text.encode("utf-8"))
        return h.digest()

    def _load(self) -> None:
        if not self.path.exists():
            return
        blob = self.path.read_bytes()
        if not blob:
            return
        if not blob.startswith(_CACHE_MAGIC):
            raise DataError(f"{self.path}: not an embedding cache file")
        offset = len(_CACHE_MAGIC)
        while offset < len(blob):
            header_end = offset + 32 + 4
            if header_end > len(blob):
                warnings.warn(f"{self.path}: truncated trailing record dropped")
                break
            key = blob[offset : offset + 32]
            (dim,) = struct.unpack("<I", blob[offset + 32 : header_end])
            record_end = header_end + 4 * dim
            if record_end > len(blob):
                warnings.warn(f"{self.path}: truncated trailing record dropped")
                break
            vec = np.frombuffer(blob[header_end:record_end], dtype="<f4").copy()
            self._store[key] = vec
            offset = record_end

    def get(self, encoder_id: str, text: str) -> np.ndarray | None:
        vec = self._store.get(self.digest(encoder_id, text))
        return None if vec is None else vec.copy()

    def put(self, encoder_id: str, text: str, vector: np.ndarray) -> None:
        vec = np.ascontiguousarray(vector, dtype="<f4")
        key = self.digest(encoder_id, text)
        with self._lock:
            if key in self._store:
                return
            self._store[key] = vec.copy()
            if self._handle is not None:
                if self._handle.tell() == 0:
                    self._handle.write(_CACHE_MAGIC)
                self._handle.write(key)
                self._handle.write(struct.pack("<I", vec.shape[0]))
                self._handle.write(vec.tobytes())
                self._handle.flush()

    def __len__(self) -> int:
        return len(self._store)

    def close(self) -> None:
        if self._handle is not None:
            self._handle.close()
            self._handle = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class CachedEncoder:
    """Wrap an encoder with an EmbeddingCache.

    Vectors are canonicalized to float32 before storage so a cache hit is
    bit-identical to the original encode result.
    """

    def __init__(self, encoder: SemanticEncoder, cache: EmbeddingCache | None = None):
        self.inner = encoder
        self.cache = cache if cache is not None else EmbeddingCache()
        self.dim = encoder.dim
        self.encoder_id = encoder.encoder_id

    def encode(self, text: str) -> np.ndarray:
        hit = self.cache.get(self.encoder_id, text)
        if hit is not None:
            return hit
        vec = np.asarray(self.inner.encode(text), dtype=np.float32)
        self.cache.put(self.encoder_id, text, vec)
        return vec

    def encode_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        out: list[np.ndarray | None] = []
        missing: list[str] = []
        missing_at: list[int] = []
        for i, text in enumerate(texts):
            hit = self.cache.get(self.encoder_id, text)
            out.append(hit)
            if hit is None:
                missing.append(text)
                missing_at.append(i)
        if missing:
            fresh = self.inner.encode_batch(missing)
            for i, vec in zip(missing_at, fresh):
                vec = np.asarray(vec, dtype=np.float32)
                self.cache.put(self.encoder_id, texts[i], vec)
                out[i] = vec
        return out  # type: ignore[return-value]


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity; 0.0 whenever either vector has zero norm."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DataError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def semantic_similarity(encoder: SemanticEncoder, a: str, b: str) -> float:
    """Cosine similarity of the two encoded texts."""
    return cosine(encoder.encode(a), encoder.encode(b))
