"""Retrieval-backed in-context learning toolkit for image/text scenario corpora."""

from .corpus import (
    Explanation,
    ExplanationSource,
    ScenarioRecord,
    Split,
    Subset,
    count_tokens,
    load_corpus,
    save_corpus,
)
from .embeddings import EmbeddingGateway, EmbeddingVector, ProviderConfig, l2_normalize
from .retrieval import (
    EnsembleIndex,
    IndexedEntry,
    RetrievalHit,
    RetrievalQuery,
    build_index,
    cosine_similarity,
    fuse,
    load_index,
    retrieve,
    save_index,
)

__version__ = "0.1.0"
