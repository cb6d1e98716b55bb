from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from ..corpus import TokenSequence


class CapacityError(ValueError):
    """Input longer than an encoder can take."""


@dataclass(frozen=True)
class MaskSuggestion:
    token: str
    score: float


@runtime_checkable
class MaskFiller(Protocol):
    subword_prefix: str

    def fill_mask(self, tokens: TokenSequence, mask_index: int, top_k: int) -> list[MaskSuggestion]: ...

    def describe(self) -> dict: ...


@runtime_checkable
class WordVectors(Protocol):
    dim: int

    def vector(self, token: str) -> np.ndarray: ...

    def describe(self) -> dict: ...


@runtime_checkable
class SentenceEncoder(Protocol):
    dim: int

    def encode(self, text: str, lang: str) -> np.ndarray: ...

    def describe(self) -> dict: ...


@runtime_checkable
class ContextualEncoder(Protocol):
    dim: int
    n_special: int
    capacity: int

    def encode_pair(self, source: TokenSequence, target: TokenSequence) -> np.ndarray: ...

    def describe(self) -> dict: ...


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine undefined for a zero vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def sentence_vector(tokens: TokenSequence | Sequence[str], backend: WordVectors) -> np.ndarray:
    """Arithmetic mean of the per-token static vectors."""
    toks = list(tokens)
    if not toks:
        raise ValueError("sentence_vector needs at least one token")
    return np.mean([backend.vector(t) for t in toks], axis=0)


def fill_mask(tokens: TokenSequence, mask_index: int, top_k: int, backend: MaskFiller) -> list[MaskSuggestion]:
    if not 0 <= mask_index <= len(tokens):
        raise IndexError(f"mask index {mask_index} outside 0..{len(tokens)}")
    if top_k <= 0:
        return []
    return backend.fill_mask(tokens, mask_index, top_k)


def contextual_encode(source: TokenSequence, target: TokenSequence, backend: ContextualEncoder) -> np.ndarray:
    if len(source) == 0 or len(target) == 0:
        raise ValueError("contextual encoding needs non-empty source and target")
    needed = len(source) + len(target) + backend.n_special
    if needed > backend.capacity:
        raise CapacityError(f"pair needs {needed} positions, encoder capacity is {backend.capacity}")
    return backend.encode_pair(source, target)


@dataclass
class EncoderBundle:
    mask_filler: MaskFiller
    word_vectors: WordVectors
    xsim: SentenceEncoder
    contextual: ContextualEncoder
    # set by backends that must not be called concurrently
    exclusive: bool = False

    def __post_init__(self):
        for name in ("mask_filler", "word_vectors", "xsim", "contextual"):
            if getattr(self, name) is None:
                raise ValueError(f"encoder bundle is missing its {name} backend")
        if self.contextual.dim <= 0:
            raise ValueError("contextual dim must be positive")

    def describe(self) -> dict:
        return {
            "mask_filler": self.mask_filler.describe(),
            "word_vectors": self.word_vectors.describe(),
            "xsim": self.xsim.describe(),
            "contextual": self.contextual.describe(),
        }

    def fingerprint(self) -> str:
        """Hash of the contextual encoder config; the only backend a trained head depends on."""
        blob = json.dumps(self.contextual.describe(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]
