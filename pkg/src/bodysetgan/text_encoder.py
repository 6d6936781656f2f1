"""Word-level caption embeddings: a deterministic toy embedder plus an
import path for precomputed embedding matrices.

A caption becomes an (n, L) matrix with n = 17 rows and L = 256 features;
captions shorter than n are zero padded, longer ones are truncated.  The
toy embedder maps each token to a seeded pseudo-random unit vector that is
stable across runs and platforms (sha256 of ``"seed:token"`` feeds a
PCG64 stream), which stands in for a pretrained language encoder with the
same interface.
"""

from __future__ import annotations

import hashlib
import string
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import container
from .config import TextConfig
from .errors import ConfigError, EmptyCaption, MalformedRecord, ShapeMismatch

EMBEDDING_FORMAT = "embedding-file"

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def tokenize(text: str) -> list[str]:
    """Lowercase, strip ASCII punctuation, split on whitespace."""
    tokens = [t.translate(_PUNCT_TABLE) for t in text.lower().split()]
    return [t for t in tokens if t]


@dataclass
class WordEmbeddings:
    matrix: np.ndarray          # (n, L) float64, rows >= word_count are zero
    word_count: int
    tokens: tuple[str, ...] = ()

    @property
    def max_words(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def embed_dim(self) -> int:
        return int(self.matrix.shape[1])

    def validate(self) -> None:
        if self.matrix.ndim != 2:
            raise ShapeMismatch(f"embedding matrix must be 2-d, got {self.matrix.shape}")
        if not (0 < self.word_count <= self.max_words):
            raise MalformedRecord(
                f"word_count {self.word_count} outside (0, {self.max_words}]")
        if not np.isfinite(self.matrix).all():
            raise MalformedRecord("embedding matrix contains non-finite entries")
        if self.word_count < self.max_words and np.any(self.matrix[self.word_count:] != 0.0):
            raise MalformedRecord("padding rows past word_count must be exactly zero")


class ToyEmbedder:
    """Deterministic per-token unit-norm embeddings."""

    kind = "toy"

    def __init__(self, cfg: TextConfig = TextConfig()):
        self.cfg = cfg
        self._cache: dict[str, np.ndarray] = {}

    def spec(self) -> dict:
        return {"kind": self.kind, "seed": self.cfg.embedder_seed,
                "max_words": self.cfg.max_words, "embed_dim": self.cfg.embed_dim}

    def embed_token(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            digest = hashlib.sha256(f"{self.cfg.embedder_seed}:{token}".encode("utf-8")).digest()
            rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))
            vec = rng.standard_normal(self.cfg.embed_dim)
            vec /= np.linalg.norm(vec)
            self._cache[token] = vec
        return vec


def embedder_from_spec(spec: dict) -> ToyEmbedder:
    if spec.get("kind") != "toy":
        raise ConfigError(f"cannot instantiate embedder of kind {spec.get('kind')!r}; "
                          "non-toy embeddings must be stored inline")
    return ToyEmbedder(TextConfig(max_words=int(spec["max_words"]),
                                  embed_dim=int(spec["embed_dim"]),
                                  embedder_seed=int(spec["seed"])))


def encode_caption(tokens: Sequence[str], embedder: ToyEmbedder) -> WordEmbeddings:
    """Embed the first ``max_words`` tokens; pad the rest of the rows with zeros."""
    tokens = list(tokens)
    if not tokens:
        raise EmptyCaption("caption has no tokens after normalization")
    n, length = embedder.cfg.max_words, embedder.cfg.embed_dim
    kept = tokens[:n]
    matrix = np.zeros((n, length), dtype=np.float64)
    for i, tok in enumerate(kept):
        matrix[i] = embedder.embed_token(tok)
    return WordEmbeddings(matrix=matrix, word_count=len(kept), tokens=tuple(kept))


def text_distance(x1: WordEmbeddings, x2: WordEmbeddings) -> float:
    """Euclidean norm of the flattened matrix difference (padding included)."""
    if x1.matrix.shape != x2.matrix.shape:
        raise ShapeMismatch(
            f"embedding shapes differ: {x1.matrix.shape} vs {x2.matrix.shape}")
    return float(np.linalg.norm(x1.matrix - x2.matrix))


@dataclass
class EmbeddingRecord:
    caption_id: str
    word_count: int
    matrix: np.ndarray  # (n, L) float32 on disk


def save_embedding_file(records: Sequence[EmbeddingRecord], path,
                        max_words: int, embed_dim: int) -> None:
    metas = []
    arrays = {}
    for i, rec in enumerate(sorted(records, key=lambda r: r.caption_id)):
        if rec.matrix.shape != (max_words, embed_dim):
            raise ShapeMismatch(
                f"record {rec.caption_id!r}: matrix shape {rec.matrix.shape} != "
                f"({max_words}, {embed_dim})")
        metas.append({"caption_id": rec.caption_id, "word_count": rec.word_count})
        arrays[f"embedding_{i:06d}"] = rec.matrix.astype(np.float32)
    meta = {"max_words": max_words, "embed_dim": embed_dim, "records": metas}
    container.save(path, EMBEDDING_FORMAT, meta, arrays)


def load_embedding_file(path) -> list[EmbeddingRecord]:
    meta, arrays = container.load(path, EMBEDDING_FORMAT)
    records = []
    for i, rec in enumerate(meta["records"]):
        matrix = arrays.get(f"embedding_{i:06d}")
        if matrix is None:
            raise MalformedRecord(f"embedding file record {i} has no matrix array")
        records.append(EmbeddingRecord(caption_id=rec["caption_id"],
                                       word_count=int(rec["word_count"]),
                                       matrix=matrix))
    return records
