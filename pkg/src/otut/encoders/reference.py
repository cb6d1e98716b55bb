"""Deterministic, training-free backends for offline runs and tests.

All vectors come from seeded feature hashing of character n-grams, so two
surface forms that share most of their spelling get similar vectors. No
model files, no network.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from typing import Iterable

import numpy as np

from ..corpus import TokenSequence, tokenize
from .base import MaskSuggestion


class NgramHasher:
    """Maps a string to a unit vector by signed hashing of its char n-grams."""

    def __init__(self, dim: int = 64, seed: int = 0, ngram_range=(2, 4)):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.seed = seed
        self.ngram_range = tuple(ngram_range)
        self._key = seed.to_bytes(8, "little", signed=True)
        self._cache: dict[str, np.ndarray] = {}

    def _ngrams(self, token: str):
        s = f"<{token.lower()}>"
        lo, hi = self.ngram_range
        for n in range(lo, hi + 1):
            for i in range(max(len(s) - n + 1, 1)):
                yield s[i : i + n]

    def __call__(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is not None:
            return vec
        vec = np.zeros(self.dim)
        for gram in self._ngrams(token):
            h = int.from_bytes(
                hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=self._key).digest(), "little"
            )
            vec[h % self.dim] += 1.0 if (h >> 63) & 1 else -1.0
        norm = np.linalg.norm(vec)
        if norm == 0:
            # every n-gram cancelled out; fall back to a single hashed axis
            vec[int.from_bytes(hashlib.blake2b(token.encode(), digest_size=8, key=self._key).digest(), "little") % self.dim] = 1.0
        else:
            vec /= norm
        vec.setflags(write=False)
        self._cache[token] = vec
        return vec

    def describe(self) -> dict:
        return {"dim": self.dim, "seed": self.seed, "ngram_range": list(self.ngram_range)}


class FrequencyMaskFiller:
    """Mask filler that ranks corpus words by frequency.

    Score is the unigram count, plus ``context_weight`` times the bigram counts
    linking the candidate to the tokens either side of the mask. With the
    default ``context_weight=0`` it is a pure unigram ranker.
    """

    subword_prefix = "##"

    def __init__(self, counts: dict[str, int] | Counter, bigrams: Counter | None = None, context_weight: float = 0.0):
        self.unigrams = Counter(counts)
        self.bigrams = Counter(bigrams or {})
        self.context_weight = context_weight
        # ties broken alphabetically so ranking is total and reproducible
        self._ranked = sorted(self.unigrams.items(), key=lambda kv: (-kv[1], kv[0]))
        self._suggestions = [MaskSuggestion(w, float(c)) for w, c in self._ranked]
        self._follows: dict[str, Counter] = {}
        self._precedes: dict[str, Counter] = {}
        for (a, b), c in self.bigrams.items():
            self._follows.setdefault(a, Counter())[b] += c
            self._precedes.setdefault(b, Counter())[a] += c

    @classmethod
    def from_texts(cls, texts: Iterable[str], context_weight: float = 0.0) -> "FrequencyMaskFiller":
        uni: Counter = Counter()
        bi: Counter = Counter()
        for text in texts:
            toks = tokenize(text).tokens
            uni.update(toks)
            bi.update(zip(toks, toks[1:]))
        return cls(uni, bi, context_weight)

    def fill_mask(self, tokens: TokenSequence, mask_index: int, top_k: int) -> list[MaskSuggestion]:
        if not 0 <= mask_index <= len(tokens):
            raise IndexError(f"mask index {mask_index} outside 0..{len(tokens)}")
        if top_k <= 0:
            return []
        if not self.context_weight:
            return self._suggestions[:top_k]
        head = self._ranked[:top_k]
        prev = tokens[mask_index - 1] if mask_index > 0 else None
        nxt = tokens[mask_index] if mask_index < len(tokens) else None
        bonus: Counter = Counter()
        if prev is not None:
            bonus.update(self._follows.get(prev, {}))
        if nxt is not None:
            bonus.update(self._precedes.get(nxt, {}))
        pool = {w for w, _ in head} | set(bonus)
        scored = [(w, self.unigrams[w] + self.context_weight * bonus[w]) for w in pool]
        scored.sort(key=lambda kv: (-kv[1], kv[0]))
        return [MaskSuggestion(w, float(s)) for w, s in scored[:top_k]]

    def describe(self) -> dict:
        return {"kind": "reference", "vocab_size": len(self.unigrams), "context_weight": self.context_weight}


class HashedWordVectors:
    """Static word vectors; every token gets its hashed n-gram vector."""

    def __init__(self, dim: int = 64, seed: int = 0):
        self._hash = NgramHasher(dim, seed)
        self.dim = dim

    def vector(self, token: str) -> np.ndarray:
        return self._hash(token)

    def describe(self) -> dict:
        return {"kind": "reference", **self._hash.describe()}


class HashedSentenceEncoder:
    """Cross-lingual sentence vector: mean of hashed token vectors.

    Only "cross-lingual" for languages that share spelling (cognates), which
    is what the toy desk languages are built to do.
    """

    def __init__(self, dim: int = 64, seed: int = 1):
        self._hash = NgramHasher(dim, seed)
        self.dim = dim

    def encode(self, text: str, lang: str = "en") -> np.ndarray:
        toks = tokenize(text, lang).tokens
        if not toks:
            raise ValueError("cannot encode empty text")
        return np.mean([self._hash(t) for t in toks], axis=0)

    def describe(self) -> dict:
        return {"kind": "reference", **self._hash.describe()}


class HashedContextualEncoder:
    """Joint pair encoder: ``[BOS] source [SEP] target [EOS]``, one row per slot.

    Row layout (``dim`` columns):

    * ``dim - 3`` columns: hashed token vector blended with the mean over a
      +-``window`` neighbourhood inside the same segment;
    * segment flag (+1 source, -1 target, 0 marker);
    * alignment: best cosine between this token and any token of the other
      segment, a crude stand-in for cross-attention;
    * relative position inside the segment.
    """

    n_special = 3

    def __init__(self, dim: int = 64, seed: int = 2, window: int = 2, mix: float = 0.5, capacity: int = 512):
        if dim < 8:
            raise ValueError("contextual dim must be at least 8")
        self.dim = dim
        self.seed = seed
        self.window = window
        self.mix = mix
        self.capacity = capacity
        self._hash = NgramHasher(dim - 3, seed)
        self._markers = [self._hash(m) for m in ("[BOS]", "[SEP]", "[EOS]")]

    def _segment(self, tokens, other: np.ndarray, flag: float) -> np.ndarray:
        base = np.stack([self._hash(t) for t in tokens])
        n = len(base)
        csum = np.vstack([np.zeros(base.shape[1]), np.cumsum(base, axis=0)])
        idx = np.arange(n)
        lo = np.maximum(idx - self.window, 0)
        hi = np.minimum(idx + self.window + 1, n)
        local = (csum[hi] - csum[lo]) / (hi - lo)[:, None]
        mixed = (1 - self.mix) * base + self.mix * local
        align = (base @ other.T).max(axis=1)
        pos = idx / max(n - 1, 1)
        return np.column_stack([mixed, np.full(n, flag), align, pos])

    def encode_pair(self, source: TokenSequence, target: TokenSequence) -> np.ndarray:
        if len(source) == 0 or len(target) == 0:
            raise ValueError("contextual encoding needs non-empty source and target")
        need = len(source) + len(target) + self.n_special
        if need > self.capacity:
            from .base import CapacityError

            raise CapacityError(f"pair needs {need} positions, encoder capacity is {self.capacity}")
        src_base = np.stack([self._hash(t) for t in source])
        tgt_base = np.stack([self._hash(t) for t in target])
        marker = lambda v: np.concatenate([v, [0.0, 0.0, 0.0]])  # noqa: E731
        rows = [
            marker(self._markers[0])[None],
            self._segment(source, tgt_base, 1.0),
            marker(self._markers[1])[None],
            self._segment(target, src_base, -1.0),
            marker(self._markers[2])[None],
        ]
        return np.vstack(rows).astype(np.float32)

    def describe(self) -> dict:
        return {
            "kind": "reference",
            "dim": self.dim,
            "seed": self.seed,
            "window": self.window,
            "mix": self.mix,
            "capacity": self.capacity,
        }
