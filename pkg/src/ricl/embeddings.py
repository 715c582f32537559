"""Uniform gateway to external text and image embedding providers.

All vectors leaving this module are unit L2 norm, so downstream cosine
similarity reduces to a dot product. Results are cached on disk keyed by
content hash, which makes reruns free and deterministic. The HTTP wire
protocol is documented in ``docs/embedding_protocol.md``.
"""

from __future__ import annotations

import base64
import hashlib
import io
import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .corpus import ScenarioRecord

__all__ = [
    "EmbeddingVector",
    "ProviderConfig",
    "EmbeddingGateway",
    "CacheStats",
    "EmbeddingError",
    "ProviderError",
    "DimensionMismatchError",
    "l2_normalize",
    "default_transport",
]

NORM_TOLERANCE = 1e-6

ENV_TEXT_ENDPOINT = "RICL_TEXT_EMBED_URL"
ENV_IMAGE_ENDPOINT = "RICL_IMAGE_EMBED_URL"
ENV_AUTH_TOKEN = "RICL_EMBED_TOKEN"


class EmbeddingError(Exception):
    """Base class for gateway failures."""


class ProviderError(EmbeddingError):
    """The remote provider failed, timed out, or returned garbage."""


class DimensionMismatchError(EmbeddingError):
    """Provider returned a vector whose length contradicts the config."""


@dataclass(frozen=True)
class EmbeddingVector:
    """A fixed-length real vector, optionally unit-normalized."""

    values: tuple[float, ...]
    dim: int
    normalized: bool

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.values) != self.dim:
            raise DimensionMismatchError(
                f"vector has {len(self.values)} components, declared dim {self.dim}"
            )
        if not all(math.isfinite(v) for v in self.values):
            raise EmbeddingError("vector components must be finite")
        if self.normalized:
            norm = math.sqrt(math.fsum(v * v for v in self.values))
            if abs(norm - 1.0) > NORM_TOLERANCE:
                raise EmbeddingError(f"normalized vector has L2 norm {norm!r}")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


def l2_normalize(values: Sequence[float]) -> EmbeddingVector:
    """Scale ``values`` to unit L2 norm (computed in float64)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise EmbeddingError("expected a non-empty 1-D vector")
    if not np.all(np.isfinite(arr)):
        raise EmbeddingError("vector components must be finite")
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise EmbeddingError("cannot normalize the zero vector")
    return EmbeddingVector(values=tuple((arr / norm).tolist()), dim=arr.size, normalized=True)


@dataclass(frozen=True)
class ProviderConfig:
    """Endpoints and dimensions for the text/image embedding providers."""

    text_endpoint: str
    image_endpoint: str
    text_dim: int
    image_dim: int
    auth: str | None = None
    timeout: float = 30.0
    image_resolution: int = 512

    def __post_init__(self):
        if self.text_dim <= 0 or self.image_dim <= 0:
            raise ValueError("embedding dimensions must be positive")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.image_resolution <= 0:
            raise ValueError("image_resolution must be positive")

    @classmethod
    def from_env(cls, text_dim: int, image_dim: int, **overrides) -> "ProviderConfig":
        """Read endpoint URLs and the auth token from environment variables."""
        return cls(
            text_endpoint=os.environ.get(ENV_TEXT_ENDPOINT, ""),
            image_endpoint=os.environ.get(ENV_IMAGE_ENDPOINT, ""),
            text_dim=text_dim,
            image_dim=image_dim,
            auth=os.environ.get(ENV_AUTH_TOKEN),
            **overrides,
        )


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0
    failures: int = 0

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.hits, self.misses, self.failures)


def default_transport(url: str, payload: dict, timeout: float, headers: dict) -> dict:
    """POST ``payload`` as JSON and return the decoded JSON response."""
    import requests

    try:
        response = requests.post(url, json=payload, timeout=timeout, headers=headers)
    except requests.Timeout as exc:
        raise ProviderError(f"provider timed out after {timeout}s: {url}") from exc
    except requests.RequestException as exc:
        raise ProviderError(f"provider request failed: {exc}") from exc
    if response.status_code != 200:
        raise ProviderError(f"provider returned HTTP {response.status_code}: {url}")
    try:
        return response.json()
    except ValueError as exc:
        raise ProviderError("provider returned a non-JSON body") from exc


class EmbeddingGateway:
    """Embeds text and images through external providers, with a disk cache.

    ``transport`` is injectable: any callable with the signature of
    :func:`default_transport`. Tests use scripted transports; production
    uses HTTP. Parallel use is safe: cache writes are serialized, reads are
    lock-free, and returned vectors are immutable.
    """

    def __init__(
        self,
        config: ProviderConfig,
        cache_dir: str | Path | None = None,
        transport: Callable[[str, dict, float, dict], dict] | None = None,
        max_parallel: int = 4,
    ):
        self.config = config
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self.transport = transport if transport is not None else default_transport
        self.max_parallel = max(1, int(max_parallel))
        self._write_lock = threading.Lock()

    # -- cache -------------------------------------------------------------

    def _cache_path(self, kind: str, key: str) -> Path | None:
        if self.cache_dir is None:
            return None
        return self.cache_dir / kind / f"{key}.npy"

    def _cache_read(self, kind: str, key: str) -> EmbeddingVector | None:
        path = self._cache_path(kind, key)
        if path is None or not path.exists():
            return None
        arr = np.load(path)
        return EmbeddingVector(values=tuple(arr.tolist()), dim=arr.size, normalized=True)

    def _cache_write(self, kind: str, key: str, vector: EmbeddingVector) -> None:
        path = self._cache_path(kind, key)
        if path is None:
            return
        with self._write_lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".npy.tmp")
            with open(tmp, "wb") as fh:
                np.save(fh, np.asarray(vector.values, dtype=np.float64))
            os.replace(tmp, path)

    def is_cached(self, kind: str, key: str) -> bool:
        path = self._cache_path(kind, key)
        return path is not None and path.exists()

    # -- providers ---------------------------------------------------------

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.config.auth:
            headers["Authorization"] = f"Bearer {self.config.auth}"
        return headers

    def _request_one(self, endpoint: str, inputs: list[str], expected_dim: int) -> EmbeddingVector:
        try:
            reply = self.transport(endpoint, {"inputs": inputs}, self.config.timeout, self._headers())
        except EmbeddingError:
            raise
        except Exception as exc:
            raise ProviderError(f"provider transport failed: {exc}") from exc
        vectors = reply.get("vectors") if isinstance(reply, dict) else None
        if not isinstance(vectors, list) or len(vectors) != len(inputs):
            raise ProviderError("provider reply must be {'vectors': [[...], ...]} with one vector per input")
        raw = vectors[0]
        if len(raw) != expected_dim:
            raise DimensionMismatchError(
                f"provider returned dim {len(raw)}, config requires {expected_dim}"
            )
        return l2_normalize(raw)

    @staticmethod
    def text_cache_key(text: str) -> str:
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def image_cache_key(self, data: bytes) -> str:
        h = hashlib.sha256()
        h.update(data)
        h.update(self.config.image_resolution.to_bytes(4, "little"))
        return h.hexdigest()

    def embed_text(self, text: str) -> EmbeddingVector:
        """Unit-norm embedding of ``text``; identical text gives identical vectors."""
        if not text or not text.strip():
            raise EmbeddingError("cannot embed empty text")
        key = self.text_cache_key(text)
        cached = self._cache_read("text", key)
        if cached is not None:
            return cached
        vector = self._request_one(self.config.text_endpoint, [text], self.config.text_dim)
        self._cache_write("text", key, vector)
        return vector

    def _read_image_bytes(self, image_ref: str) -> bytes:
        if image_ref.startswith(("http://", "https://")):
            import requests

            try:
                response = requests.get(image_ref, timeout=self.config.timeout)
            except requests.RequestException as exc:
                raise EmbeddingError(f"cannot fetch image {image_ref!r}: {exc}") from exc
            if response.status_code != 200:
                raise EmbeddingError(f"cannot fetch image {image_ref!r}: HTTP {response.status_code}")
            return response.content
        path = Path(image_ref)
        if not path.exists():
            raise EmbeddingError(f"image reference {image_ref!r} does not resolve to a file")
        return path.read_bytes()

    def _prepare_image(self, data: bytes) -> str:
        from PIL import Image, UnidentifiedImageError

        resolution = self.config.image_resolution
        try:
            with Image.open(io.BytesIO(data)) as img:
                resized = img.convert("RGB").resize((resolution, resolution))
        except UnidentifiedImageError as exc:
            raise EmbeddingError(f"unreadable image data: {exc}") from exc
        buf = io.BytesIO()
        resized.save(buf, format="PNG")
        return base64.b64encode(buf.getvalue()).decode("ascii")

    def embed_image(self, image_ref: str) -> EmbeddingVector:
        """Unit-norm embedding of the image at ``image_ref``.

        The image is resized to the configured resolution before dispatch;
        the cache key covers the original bytes plus that resolution.
        """
        data = self._read_image_bytes(image_ref)
        key = self.image_cache_key(data)
        cached = self._cache_read("image", key)
        if cached is not None:
            return cached
        encoded = self._prepare_image(data)
        vector = self._request_one(self.config.image_endpoint, [encoded], self.config.image_dim)
        self._cache_write("image", key, vector)
        return vector

    # -- bulk --------------------------------------------------------------

    def warm_cache(self, records: Iterable[ScenarioRecord]) -> CacheStats:
        """Ensure both vectors of every record are cached.

        Counts are per vector (two per record). Failures are reported in
        the stats, never raised.
        """
        records = list(records)
        stats = CacheStats()
        lock = threading.Lock()

        def fetch(kind: str, record: ScenarioRecord):
            try:
                if kind == "text":
                    hit = self.is_cached("text", self.text_cache_key(record.outcome))
                    self.embed_text(record.outcome)
                else:
                    try:
                        data = self._read_image_bytes(record.image_ref)
                        hit = self.is_cached("image", self.image_cache_key(data))
                    except EmbeddingError:
                        hit = False
                    self.embed_image(record.image_ref)
            except EmbeddingError:
                with lock:
                    stats.failures += 1
                return
            with lock:
                if hit:
                    stats.hits += 1
                else:
                    stats.misses += 1

        jobs = [(kind, record) for record in records for kind in ("text", "image")]
        if not jobs:
            return stats
        with ThreadPoolExecutor(max_workers=self.max_parallel) as pool:
            list(pool.map(lambda job: fetch(*job), jobs))
        return stats

    def embed_record(self, record: ScenarioRecord) -> tuple[EmbeddingVector, EmbeddingVector]:
        """(image vector, text vector) for a record; text side embeds the outcome."""
        return self.embed_image(record.image_ref), self.embed_text(record.outcome)
