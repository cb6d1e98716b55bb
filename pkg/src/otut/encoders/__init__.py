"""Embedding backends: mask filler, static word vectors, cross-lingual sentence
vectors and a contextual pair encoder, plus the helpers that use them."""

from __future__ import annotations

from typing import Iterable, Optional

from .base import (
    CapacityError,
    ContextualEncoder,
    EncoderBundle,
    MaskFiller,
    MaskSuggestion,
    SentenceEncoder,
    WordVectors,
    contextual_encode,
    cosine,
    fill_mask,
    sentence_vector,
)
from .reference import (
    FrequencyMaskFiller,
    HashedContextualEncoder,
    HashedSentenceEncoder,
    HashedWordVectors,
    NgramHasher,
)

__all__ = [
    "CapacityError",
    "ContextualEncoder",
    "EncoderBundle",
    "MaskFiller",
    "MaskSuggestion",
    "SentenceEncoder",
    "WordVectors",
    "contextual_encode",
    "cosine",
    "fill_mask",
    "sentence_vector",
    "FrequencyMaskFiller",
    "HashedContextualEncoder",
    "HashedSentenceEncoder",
    "HashedWordVectors",
    "NgramHasher",
    "build_bundle",
    "reference_bundle",
]


def reference_bundle(texts: Iterable[str] = (), dim: int = 64, seed: int = 0, context_weight: float = 0.0) -> EncoderBundle:
    """All-reference bundle; the mask filler is fitted on ``texts``."""
    return EncoderBundle(
        mask_filler=FrequencyMaskFiller.from_texts(texts, context_weight),
        word_vectors=HashedWordVectors(dim, seed),
        xsim=HashedSentenceEncoder(dim, seed + 1),
        contextual=HashedContextualEncoder(dim, seed + 2),
    )


def build_bundle(cfg: Optional[dict] = None, texts: Iterable[str] = ()) -> EncoderBundle:
    """Build a bundle from a config block ``{kind, dim, seed, ...}``.

    ``kind: reference`` needs nothing else. ``kind: adapter`` takes
    ``mask_model``, ``glove_path``, ``xsim_model`` and ``contextual_model``;
    any adapter field left out falls back to the reference backend.
    """
    cfg = dict(cfg or {})
    kind = cfg.get("kind", "reference")
    dim = int(cfg.get("dim", 64))
    seed = int(cfg.get("seed", 0))
    bundle = reference_bundle(texts, dim, seed, float(cfg.get("context_weight", 0.0)))
    if kind == "reference":
        return bundle
    if kind != "adapter":
        raise ValueError(f"unknown encoder kind {kind!r}; expected reference or adapter")

    from . import adapters

    available = adapters.probe_adapters()
    needs_hf = any(cfg.get(k) for k in ("mask_model", "contextual_model"))
    if needs_hf and not (available["transformers"] and available["torch"]):
        raise RuntimeError("adapter backends need the transformers and torch packages")
    if cfg.get("xsim_model") and not available["sentence_transformers"]:
        raise RuntimeError("xsim_model needs the sentence-transformers package")
    if cfg.get("mask_model"):
        bundle.mask_filler = adapters.HFMaskFiller.from_pretrained(cfg["mask_model"])
    if cfg.get("glove_path"):
        bundle.word_vectors = adapters.GloveVectors(cfg["glove_path"], seed=seed)
    if cfg.get("xsim_model"):
        bundle.xsim = adapters.SentenceTransformerEncoder.from_pretrained(cfg["xsim_model"])
    if cfg.get("contextual_model"):
        bundle.contextual = adapters.HFContextualEncoder.from_pretrained(cfg["contextual_model"], int(cfg.get("layer", -1)))
        bundle.exclusive = True
    return bundle
