"""Dual-modality ensemble retrieval over an exact-scan vector index.

Each indexed entry stores two unit vectors for one scenario: one in image
embedding space and one in text embedding space. A query is scored against
every entry in both spaces (cosine, which is a plain dot product on unit
vectors), the two similarities are fused as

    fused = alpha * image_score + (1 - alpha) * text_score,

and the top k entries are returned, sorted by fused score descending with
ties broken by ascending scenario id. The scan is exact: no approximate
shortcuts, so results match a full sort of all entries.

Corpora in this pipeline are at most a few hundred entries, so the scan is
a single contiguous float32 matrix per modality; numpy parallelizes the
matrix products internally on large synthetic benchmarks.

Indexes persist to a versioned binary file (little-endian float32 payload,
SHA-256 checksum); see ``docs/index_format.md``.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .embeddings import EmbeddingVector

__all__ = [
    "IndexedEntry",
    "RetrievalQuery",
    "RetrievalHit",
    "EnsembleIndex",
    "RetrievalError",
    "IndexFileError",
    "cosine_similarity",
    "fuse",
    "build_index",
    "retrieve",
    "save_index",
    "load_index",
    "alpha_sweep",
]

DEFAULT_ALPHA = 0.4

INDEX_MAGIC = b"DVIX"
INDEX_VERSION = 1

# Entries are stored as float32; a float64-normalized vector rounded to
# float32 can drift from unit norm by a few float32 ulps per component.
ENTRY_NORM_TOLERANCE = 1e-5


class RetrievalError(ValueError):
    """Invalid query, entry, or index state."""


class IndexFileError(RetrievalError):
    """Corrupt or incompatible index file."""


@dataclass(frozen=True)
class IndexedEntry:
    """One scenario's pair of stored vectors."""

    scenario_id: str
    image_vec: EmbeddingVector
    text_vec: EmbeddingVector


@dataclass(frozen=True)
class RetrievalQuery:
    image_vec: EmbeddingVector
    text_vec: EmbeddingVector
    k: int
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if self.k < 1:
            raise RetrievalError(f"k must be >= 1, got {self.k}")
        if not 0.0 <= self.alpha <= 1.0:
            raise RetrievalError(f"alpha must be in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class RetrievalHit:
    scenario_id: str
    fused_score: float
    image_score: float
    text_score: float
    rank: int


class EnsembleIndex:
    """Immutable dual-vector index; safe to share across workers."""

    def __init__(self, ids: Sequence[str], image_mat: np.ndarray, text_mat: np.ndarray):
        self.ids: tuple[str, ...] = tuple(ids)
        self.image_mat = np.ascontiguousarray(image_mat, dtype=np.float32)
        self.text_mat = np.ascontiguousarray(text_mat, dtype=np.float32)
        self.image_mat.setflags(write=False)
        self.text_mat.setflags(write=False)

    @property
    def size(self) -> int:
        return len(self.ids)

    @property
    def image_dim(self) -> int:
        return self.image_mat.shape[1]

    @property
    def text_dim(self) -> int:
        return self.text_mat.shape[1]

    def entries(self) -> list[IndexedEntry]:
        """Reconstruct the stored entries (float32-exact values)."""
        out = []
        for i, scenario_id in enumerate(self.ids):
            image = self.image_mat[i].astype(np.float64)
            text = self.text_mat[i].astype(np.float64)
            out.append(
                IndexedEntry(
                    scenario_id=scenario_id,
                    image_vec=EmbeddingVector(tuple(image.tolist()), image.size, normalized=False),
                    text_vec=EmbeddingVector(tuple(text.tolist()), text.size, normalized=False),
                )
            )
        return out


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine of the angle between two vectors, clamped to [-1, 1]."""
    if a.dim != b.dim:
        raise RetrievalError(f"dimension mismatch: {a.dim} vs {b.dim}")
    va, vb = a.as_array(), b.as_array()
    na, nb = float(np.linalg.norm(va)), float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise RetrievalError("cosine similarity is undefined for zero vectors")
    return float(np.clip((va * vb).sum() / (na * nb), -1.0, 1.0))


def fuse(image_score: float, text_score: float, alpha: float) -> float:
    """Weighted fusion of the two modality similarities."""
    if not 0.0 <= alpha <= 1.0:
        raise RetrievalError(f"alpha must be in [0, 1], got {alpha}")
    return alpha * image_score + (1.0 - alpha) * text_score


def _check_unit_norm(arr: np.ndarray, label: str) -> None:
    norms = np.linalg.norm(arr.astype(np.float64), axis=1)
    bad = np.abs(norms - 1.0) > ENTRY_NORM_TOLERANCE
    if np.any(bad):
        i = int(np.argmax(bad))
        raise RetrievalError(f"{label} vector at position {i} is not unit norm ({norms[i]!r})")


def build_index(entries: Iterable[IndexedEntry]) -> EnsembleIndex:
    """Build an index from entries with consistent dims and unique ids."""
    entries = list(entries)
    if not entries:
        raise RetrievalError("cannot build an index from zero entries")
    image_dim = entries[0].image_vec.dim
    text_dim = entries[0].text_vec.dim
    seen: set[str] = set()
    for entry in entries:
        if entry.scenario_id in seen:
            raise RetrievalError(f"duplicate scenario id in index: {entry.scenario_id!r}")
        seen.add(entry.scenario_id)
        if entry.image_vec.dim != image_dim or entry.text_vec.dim != text_dim:
            raise RetrievalError(
                f"entry {entry.scenario_id!r} dims ({entry.image_vec.dim}, {entry.text_vec.dim}) "
                f"do not match index dims ({image_dim}, {text_dim})"
            )
    image_mat = np.array([e.image_vec.values for e in entries], dtype=np.float32)
    text_mat = np.array([e.text_vec.values for e in entries], dtype=np.float32)
    _check_unit_norm(image_mat, "image")
    _check_unit_norm(text_mat, "text")
    return EnsembleIndex([e.scenario_id for e in entries], image_mat, text_mat)


def retrieve(index: EnsembleIndex, query: RetrievalQuery) -> list[RetrievalHit]:
    """Exact top-k scan of the whole index.

    Scores are computed in float64 from the float32 stored vectors and
    clamped to [-1, 1]; the result is exactly the k best entries under
    (fused score desc, scenario id asc).
    """
    if index.size == 0:
        raise RetrievalError("index is empty")
    if query.k > index.size:
        raise RetrievalError(f"k={query.k} exceeds index size {index.size}")
    if query.image_vec.dim != index.image_dim or query.text_vec.dim != index.text_dim:
        raise RetrievalError(
            f"query dims ({query.image_vec.dim}, {query.text_vec.dim}) do not match "
            f"index dims ({index.image_dim}, {index.text_dim})"
        )
    q_img = query.image_vec.as_array()
    q_txt = query.text_vec.as_array()
    # Scores use elementwise multiply + numpy's pairwise sum, not BLAS gemv:
    # the reduction is then bit-identical for identical rows regardless of
    # row position, which keeps the tie-break contract exact.
    image_scores = np.clip((index.image_mat.astype(np.float64) * q_img).sum(axis=1), -1.0, 1.0)
    text_scores = np.clip((index.text_mat.astype(np.float64) * q_txt).sum(axis=1), -1.0, 1.0)
    fused = query.alpha * image_scores + (1.0 - query.alpha) * text_scores

    ids = np.asarray(index.ids)
    order = np.lexsort((ids, -fused))[: query.k]
    return [
        RetrievalHit(
            scenario_id=index.ids[i],
            fused_score=float(fused[i]),
            image_score=float(image_scores[i]),
            text_score=float(text_scores[i]),
            rank=rank,
        )
        for rank, i in enumerate(order, start=1)
    ]


# -- binary persistence ------------------------------------------------------


def save_index(index: EnsembleIndex, path: str | Path) -> None:
    """Write the index in the versioned binary format (bit-exact)."""
    parts = [
        INDEX_MAGIC,
        struct.pack("<IIIQ", INDEX_VERSION, index.image_dim, index.text_dim, index.size),
    ]
    for scenario_id in index.ids:
        encoded = scenario_id.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
    parts.append(index.image_mat.astype("<f4").tobytes())
    parts.append(index.text_mat.astype("<f4").tobytes())
    body = b"".join(parts)
    digest = hashlib.sha256(body).digest()
    Path(path).write_bytes(body + digest)


def load_index(path: str | Path) -> EnsembleIndex:
    """Read an index file, verifying magic, version, and checksum."""
    data = Path(path).read_bytes()
    if len(data) < 4 + 20 + 32:
        raise IndexFileError("index file is truncated")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise IndexFileError("index file checksum mismatch")
    if body[:4] != INDEX_MAGIC:
        raise IndexFileError("not an index file (bad magic)")
    version, image_dim, text_dim, count = struct.unpack_from("<IIIQ", body, 4)
    if version != INDEX_VERSION:
        raise IndexFileError(f"unsupported index version {version}")
    offset = 4 + struct.calcsize("<IIIQ")
    ids = []
    for _ in range(count):
        (length,) = struct.unpack_from("<I", body, offset)
        offset += 4
        ids.append(body[offset : offset + length].decode("utf-8"))
        offset += length
    image_bytes = count * image_dim * 4
    text_bytes = count * text_dim * 4
    if len(body) != offset + image_bytes + text_bytes:
        raise IndexFileError("index file payload size mismatch")
    image_mat = np.frombuffer(body, dtype="<f4", count=count * image_dim, offset=offset)
    text_mat = np.frombuffer(body, dtype="<f4", count=count * text_dim, offset=offset + image_bytes)
    return EnsembleIndex(
        ids,
        image_mat.reshape(count, image_dim).copy(),
        text_mat.reshape(count, text_dim).copy(),
    )


def alpha_sweep(
    index: EnsembleIndex,
    queries: Sequence[RetrievalQuery],
    alphas: Sequence[float],
    metric: Callable[[float, list[list[RetrievalHit]]], float],
) -> list[tuple[float, float]]:
    """Run every query at each alpha and aggregate with ``metric``.

    ``metric(alpha, hits_per_query)`` maps the retrieval results of one
    sweep row to a scalar (e.g. a judged win rate). Returns one
    (alpha, value) row per alpha, in input order.
    """
    if len(alphas) == 0:
        raise RetrievalError("alpha sweep needs at least one alpha")
    for alpha in alphas:
        if not 0.0 <= alpha <= 1.0:
            raise RetrievalError(f"alpha must be in [0, 1], got {alpha}")
    table = []
    for alpha in alphas:
        hits = [
            retrieve(index, RetrievalQuery(q.image_vec, q.text_vec, q.k, alpha))
            for q in queries
        ]
        table.append((float(alpha), float(metric(alpha, hits))))
    return table
