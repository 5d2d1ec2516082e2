"""Report-level embeddings from token blocks and from sentence embeddings."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .io import N_TOPICS, DatasetBundle

__all__ = [
    "FULL_CONTEXT",
    "SENTENCE_SEGMENTED",
    "TokenEmbeddingBlock",
    "SentenceEmbedding",
    "ReportEmbedding",
    "pairwise_sum",
    "aggregate_full_context",
    "aggregate_sentences",
    "SentenceIndex",
]

FULL_CONTEXT = "full-context"
SENTENCE_SEGMENTED = "sentence-segmented"
ALL_TOPICS = frozenset(range(N_TOPICS))


@dataclass(frozen=True, eq=False)
class TokenEmbeddingBlock:
    """Contextual token vectors of one report, shaped (layers, tokens, dims)."""

    vectors: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.vectors)
        if v.ndim != 3:
            raise ValueError(f"token block must be (layers, tokens, dims), got shape {v.shape}")
        if v.shape[0] < 1 or v.shape[1] < 1 or v.shape[2] < 1:
            raise ValueError("token block needs at least one layer, one token and one dimension")
        if not np.isfinite(v).all():
            raise ValueError("token block contains non-finite values")
        object.__setattr__(self, "vectors", v)

    @classmethod
    def from_vectors(cls, layers: Sequence[Sequence[Sequence[float]]]) -> "TokenEmbeddingBlock":
        """Build from nested per-layer, per-token vectors, checking every length."""
        dims = None
        for layer in layers:
            for vec in layer:
                if dims is None:
                    dims = len(vec)
                elif len(vec) != dims:
                    raise ValueError(f"dimension mismatch: {len(vec)} != {dims}")
        n_tok = {len(layer) for layer in layers}
        if len(n_tok) > 1:
            raise ValueError("every layer must carry the same number of tokens")
        return cls(np.asarray(layers, dtype=np.float64))

    @property
    def n_layers(self) -> int:
        return self.vectors.shape[0]

    @property
    def n_tokens(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True, eq=False)
class SentenceEmbedding:
    vector: np.ndarray
    token_count: int
    topic_id: int
    sentence_idx: int = 0

    def __post_init__(self) -> None:
        if self.token_count < 1:
            raise ValueError("token_count must be >= 1")
        if not 0 <= self.topic_id < N_TOPICS:
            raise ValueError(f"topic_id {self.topic_id} outside [0, {N_TOPICS - 1}]")


@dataclass(frozen=True, eq=False)
class ReportEmbedding:
    vector: np.ndarray
    mode: str
    topic_mask: frozenset[int] | None = None  # None means every topic


def pairwise_sum(rows: np.ndarray) -> np.ndarray:
    """Tree summation over axis 0 with float64 accumulation."""
    a = np.asarray(rows, dtype=np.float64)
    if a.shape[0] == 0:
        return np.zeros(a.shape[1:], dtype=np.float64)
    return _tree(a, 0, a.shape[0])


def _tree(a: np.ndarray, lo: int, hi: int) -> np.ndarray:
    n = hi - lo
    if n == 1:
        return a[lo].copy()
    if n == 2:
        return a[lo] + a[lo + 1]
    mid = lo + n // 2
    return _tree(a, lo, mid) + _tree(a, mid, hi)


def aggregate_full_context(block: TokenEmbeddingBlock) -> ReportEmbedding:
    """Mean of every token vector over every layer."""
    v = block.vectors
    flat = v.reshape(-1, v.shape[2])
    mean = pairwise_sum(flat) / (block.n_layers * block.n_tokens)
    return ReportEmbedding(mean, FULL_CONTEXT, None)


def _normalize_mask(mask: Iterable[int] | str | None) -> frozenset[int] | None:
    if mask is None or (isinstance(mask, str) and mask == "all"):
        return None
    m = frozenset(int(t) for t in mask)
    bad = [t for t in m if not 0 <= t < N_TOPICS]
    if bad:
        raise ValueError(f"topic ids {sorted(bad)} outside [0, {N_TOPICS - 1}]")
    return m


def aggregate_sentences(
    sentences: Sequence[SentenceEmbedding],
    mask: Iterable[int] | str | None = None,
) -> ReportEmbedding:
    """Token-weighted mean of the sentence vectors whose topic lies in ``mask``.

    Sentences are put in ``sentence_idx`` order before a pairwise sum, so the result
    does not depend on input order. When no sentence falls inside the mask the zero
    vector is returned.
    """
    if not sentences:
        raise ValueError("at least one sentence is required")
    dims = np.asarray(sentences[0].vector).shape
    for s in sentences:
        if np.asarray(s.vector).shape != dims:
            raise ValueError(f"dimension mismatch: {np.asarray(s.vector).shape} != {dims}")
    m = _normalize_mask(mask)
    chosen = [s for s in sentences if m is None or s.topic_id in m]
    if not chosen:
        return ReportEmbedding(np.zeros(dims, dtype=np.float64), SENTENCE_SEGMENTED, m)
    chosen.sort(key=lambda s: (s.sentence_idx, s.topic_id, s.token_count,
                               np.asarray(s.vector, dtype=np.float64).tobytes()))
    tokens = np.array([s.token_count for s in chosen], dtype=np.float64)
    vecs = np.stack([np.asarray(s.vector, dtype=np.float64) for s in chosen])
    total = pairwise_sum(tokens[:, None] * vecs)
    return ReportEmbedding(total / tokens.sum(), SENTENCE_SEGMENTED, m)


class SentenceIndex:
    """Vectorized sentence-segmented embeddings for many reports at once.

    Used where every topic subset must be rebuilt for thousands of reports
    (Shapley sweeps). Rows follow ``report_ids``; reports with no sentence in the
    requested topics get the zero vector, the same rule as ``aggregate_sentences``.
    """

    def __init__(self, bundle: DatasetBundle, report_ids: Sequence[str]):
        store = bundle.stores.get("sentence")
        if store is None:
            raise ValueError("bundle has no sentence embedding store")
        self.report_ids = tuple(report_ids)
        self.dims = store.dims
        pos, topic, tokens, rows = [], [], [], []
        for i, rid in enumerate(self.report_ids):
            for s in bundle.sentences_for(rid):
                pos.append(i)
                topic.append(s.topic_id)
                tokens.append(s.token_count)
                rows.append(s.embedding_row)
        self._pos = np.asarray(pos, dtype=np.int64)
        self._topic = np.asarray(topic, dtype=np.int64)
        self._tokens = np.asarray(tokens, dtype=np.float64)
        weighted = store.data[np.asarray(rows, dtype=np.int64)].astype(np.float64) if rows else \
            np.zeros((0, self.dims))
        self._weighted = weighted * self._tokens[:, None]

    @property
    def topics(self) -> tuple[int, ...]:
        return tuple(int(t) for t in np.unique(self._topic))

    def embeddings(self, mask: Iterable[int] | str | None = None) -> np.ndarray:
        m = _normalize_mask(mask)
        n = len(self.report_ids)
        if m is None:
            sel = np.ones(len(self._topic), dtype=bool)
        else:
            sel = np.isin(self._topic, np.fromiter(m, dtype=np.int64, count=len(m)))
        out = np.zeros((n, self.dims), dtype=np.float64)
        mass = np.zeros(n, dtype=np.float64)
        if sel.any():
            np.add.at(out, self._pos[sel], self._weighted[sel])
            np.add.at(mass, self._pos[sel], self._tokens[sel])
        nz = mass > 0
        out[nz] /= mass[nz, None]
        return out

    def topic_lengths(self) -> dict[int, tuple[int, int]]:
        """Total (sentence count, token count) per topic over the indexed reports."""
        out = {}
        for t in self.topics:
            sel = self._topic == t
            out[t] = (int(sel.sum()), int(self._tokens[sel].sum()))
        return out
