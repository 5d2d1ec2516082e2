"""Shapley attribution of out-of-sample explanatory power across topics.

A value function maps a set of topics to a real number (typically the pooled
R2_oos of a model fed embeddings built only from sentences in those topics).
``shapley_exact`` enumerates every subset; ``shapley_montecarlo`` samples
orderings. Both go through ``ValueCache`` so each subset is evaluated at most once
and an interrupted sweep can be resumed from its cache file.
"""

from __future__ import annotations

import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .io import N_TOPICS

__all__ = [
    "MAX_EXACT_TOPICS",
    "TopicSet",
    "ValueCache",
    "BudgetExhausted",
    "ShapleyAttribution",
    "shapley_weights",
    "shapley_exact",
    "shapley_montecarlo",
    "scale_by_length",
    "topic_r2_value_function",
]

MAX_EXACT_TOPICS = 20
_MAX_BITS = max(N_TOPICS, MAX_EXACT_TOPICS)


@dataclass(frozen=True, order=True)
class TopicSet:
    """Bitmask over topic ids; bit ``t`` set means topic ``t`` is in the set."""

    mask: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.mask < (1 << _MAX_BITS):
            raise ValueError(f"mask {self.mask} outside {_MAX_BITS} bits")

    @classmethod
    def of(cls, topics: Iterable[int]) -> "TopicSet":
        m = 0
        for t in topics:
            if not 0 <= int(t) < _MAX_BITS:
                raise ValueError(f"topic id {t} outside [0, {_MAX_BITS - 1}]")
            m |= 1 << int(t)
        return cls(m)

    @property
    def topics(self) -> tuple[int, ...]:
        return tuple(t for t in range(_MAX_BITS) if self.mask >> t & 1)

    def __len__(self) -> int:
        return bin(self.mask).count("1")

    def __contains__(self, topic: int) -> bool:
        return bool(self.mask >> int(topic) & 1)

    def __or__(self, other: "TopicSet") -> "TopicSet":
        return TopicSet(self.mask | other.mask)

    def without(self, topic: int) -> "TopicSet":
        return TopicSet(self.mask & ~(1 << int(topic)))


class BudgetExhausted(RuntimeError):
    """Raised when a cache with an evaluation budget needs more evaluations."""


class ValueCache:
    """Memoizing wrapper around a value function, optionally backed by a file.

    The file holds one ``bitmask,value`` line per evaluated subset and is appended
    to (and flushed) as soon as a value is known, so a killed run loses at most
    the subset in flight. A truncated final line is ignored on reload.
    """

    def __init__(
        self,
        value_fn: Callable[[TopicSet], float],
        path: str | Path | None = None,
        max_evaluations: int | None = None,
    ):
        self._fn = value_fn
        self._values: dict[int, float] = {}
        self._lock = threading.Lock()
        self.evaluations = 0
        self.max_evaluations = max_evaluations
        self.path = Path(path) if path is not None else None
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        text = self.path.read_text()
        lines = text.split("\n")
        # the last element is "" for a complete file, else an unterminated
        # (possibly cut-off) line from an interrupted write; never trust it
        partial = lines.pop()
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                key, value = line.split(",")
                self._values[int(key)] = float(value)
            except ValueError:
                raise ValueError(f"{self.path}: malformed cache line {i + 1}: {line!r}") from None
        if partial:
            self.path.write_text("".join(f"{k},{v!r}\n" for k, v in self._values.items()))

    def __len__(self) -> int:
        return len(self._values)

    def __contains__(self, s: TopicSet | int) -> bool:
        return (s.mask if isinstance(s, TopicSet) else int(s)) in self._values

    def cached(self) -> dict[int, float]:
        return dict(self._values)

    def __call__(self, s: TopicSet) -> float:
        key = s.mask
        with self._lock:
            if key in self._values:
                return self._values[key]
            if self.max_evaluations is not None and self.evaluations >= self.max_evaluations:
                raise BudgetExhausted(
                    f"evaluation budget of {self.max_evaluations} used up with {len(self._values)} "
                    f"subsets cached; rerun with the same cache file to resume")
        value = float(self._fn(s))
        if not math.isfinite(value):
            raise ValueError(f"value function returned {value!r} for topic set {s.topics}")
        with self._lock:
            if key not in self._values:
                self._values[key] = value
                self.evaluations += 1
                if self.path is not None:
                    with open(self.path, "a") as fh:
                        fh.write(f"{key},{value!r}\n")
                        fh.flush()
                        os.fsync(fh.fileno())
            return self._values[key]

    def evaluate_many(self, sets: Sequence[TopicSet], threads: int = 1) -> np.ndarray:
        todo = [s for s in dict.fromkeys(sets) if s.mask not in self._values]
        if threads > 1 and len(todo) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(self, todo))
        else:
            for s in todo:
                self(s)
        return np.array([self._values[s.mask] for s in sets], dtype=np.float64)


@dataclass(frozen=True, eq=False)
class ShapleyAttribution:
    topics: tuple[int, ...]
    phi: np.ndarray
    total: float  # v(all topics) - v(empty set)
    stderr: np.ndarray | None = None

    def as_dict(self) -> dict[int, float]:
        return {t: float(p) for t, p in zip(self.topics, self.phi)}


def shapley_weights(n_players: int) -> np.ndarray:
    """w[s] = s! (n - s - 1)! / n! for s = 0..n-1, computed through log-gamma."""
    s = np.arange(n_players)
    lw = [math.lgamma(k + 1) + math.lgamma(n_players - k) - math.lgamma(n_players + 1) for k in s]
    return np.exp(np.array(lw))


def _as_cache(value_fn) -> ValueCache:
    return value_fn if isinstance(value_fn, ValueCache) else ValueCache(value_fn)


def _topic_list(topics: TopicSet | Iterable[int]) -> tuple[int, ...]:
    ts = topics.topics if isinstance(topics, TopicSet) else tuple(sorted(set(int(t) for t in topics)))
    if not ts:
        raise ValueError("at least one topic is required")
    TopicSet.of(ts)
    return ts


def _popcount(a: np.ndarray) -> np.ndarray:
    c = np.zeros_like(a)
    x = a.copy()
    while x.any():
        c += x & 1
        x >>= 1
    return c


def shapley_exact(
    value_fn: Callable[[TopicSet], float] | ValueCache,
    topics: TopicSet | Iterable[int],
    threads: int = 1,
) -> ShapleyAttribution:
    """Exact Shapley values by enumerating all 2^|P| subsets of ``topics``."""
    ts = _topic_list(topics)
    n = len(ts)
    if n > MAX_EXACT_TOPICS:
        raise ValueError(f"exact enumeration supports at most {MAX_EXACT_TOPICS} topics, got {n}")
    cache = _as_cache(value_fn)
    local = np.arange(1 << n, dtype=np.int64)
    bits = np.array([1 << t for t in ts], dtype=np.int64)
    glob = np.zeros_like(local)
    for i in range(n):
        glob |= np.where(local >> i & 1, bits[i], 0)
    v = cache.evaluate_many([TopicSet(int(m)) for m in glob], threads)
    size = _popcount(local)
    w = shapley_weights(n)
    phi = np.empty(n)
    for i in range(n):
        without = local[(local >> i & 1) == 0]
        phi[i] = float(np.dot(w[size[without]], v[without | (1 << i)] - v[without]))
    return ShapleyAttribution(ts, phi, float(v[-1] - v[0]), None)


def _generator(seed: int, tag: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), tag])))


def shapley_montecarlo(
    value_fn: Callable[[TopicSet], float] | ValueCache,
    topics: TopicSet | Iterable[int],
    n_permutations: int,
    seed: int = 0,
    threads: int = 1,
) -> ShapleyAttribution:
    """Permutation-sampling Shapley estimate with per-topic standard errors.

    Each sampled ordering contributes one marginal gain per topic. The sample mean
    is unbiased; any remaining gap between the estimates' sum and v(P) - v(empty)
    is spread over topics in proportion to |phi|.
    """
    if n_permutations < 2:
        raise ValueError("n_permutations must be at least 2")
    ts = _topic_list(topics)
    n = len(ts)
    cache = _as_cache(value_fn)
    rng = _generator(seed, 0x5AA9)
    perms = np.argsort(rng.random((n_permutations, n)), axis=1, kind="stable")
    bits = np.array([1 << t for t in ts], dtype=np.int64)
    prefix = np.zeros((n_permutations, n + 1), dtype=np.int64)
    np.cumsum(bits[perms], axis=1, out=prefix[:, 1:])
    uniq, inv = np.unique(prefix, return_inverse=True)
    vals = cache.evaluate_many([TopicSet(int(m)) for m in uniq], threads)
    pv = vals[inv.reshape(prefix.shape)]
    gains = np.diff(pv, axis=1)
    contrib = np.empty_like(gains)
    np.put_along_axis(contrib, perms, gains, axis=1)
    phi = contrib.mean(axis=0)
    stderr = contrib.std(axis=0, ddof=1) / math.sqrt(n_permutations)
    full = cache(TopicSet(int(bits.sum())))
    empty = cache(TopicSet(0))
    total = full - empty
    resid = total - float(phi.sum())
    if resid != 0:
        a = np.abs(phi)
        phi = phi + (resid * a / a.sum() if a.sum() > 0 else resid / n)
    return ShapleyAttribution(ts, phi, float(total), stderr)


def scale_by_length(attr: ShapleyAttribution, lengths: Mapping[int, float]) -> ShapleyAttribution:
    """Divide each phi by its topic length, then rescale so the sum is unchanged."""
    lens = []
    for t in attr.topics:
        ln = lengths.get(t)
        if ln is None or not ln > 0:
            raise ValueError(f"topic {t} needs a positive length, got {ln!r}")
        lens.append(float(ln))
    raw = attr.phi / np.array(lens)
    denom = float(raw.sum())
    if denom == 0:
        raise ValueError("length-normalized values sum to zero; rescaling undefined")
    scaled = raw * (float(attr.phi.sum()) / denom)
    stderr = None if attr.stderr is None else attr.stderr / np.array(lens) * abs(float(attr.phi.sum()) / denom)
    return ShapleyAttribution(attr.topics, scaled, attr.total, stderr)


def topic_r2_value_function(bundle, plan, model_kind: str = "ridge", threads: int = 1):
    """Value function: pooled R2_oos of the expanding-window model on topic-masked embeddings.

    The empty set is the all-zero embedding, whose forecast is the training mean.
    """
    from .embed import SentenceIndex
    from .oos.metrics import r2_oos
    from .oos.window import build_features, run_expanding_window

    base = build_features(bundle, "sentence", "all")
    index = SentenceIndex(bundle, base.report_ids)

    def value(s: TopicSet) -> float:
        X = index.embeddings(s.topics)
        kind = model_kind
        if not s.topics and kind == "pls":
            kind = "ridge"  # PLS is undefined on a constant design
        feats = base.with_matrix(X)
        preds = run_expanding_window(None, plan, "sentence", kind, features=feats, threads=threads)
        return r2_oos(preds)

    return value
