"""Adapters that put externally supplied pretrained models behind the backend interfaces.

Nothing here downloads anything on its own; pass loaded objects, or a local
path / hub name that ``from_pretrained`` can already resolve.
"""

from __future__ import annotations

import importlib.util
import logging
from pathlib import Path

import numpy as np

from ..corpus import TokenSequence, detokenize
from .base import CapacityError, MaskSuggestion
from .reference import NgramHasher

logger = logging.getLogger(__name__)


def probe_adapters() -> dict[str, bool]:
    """Which optional adapter dependencies import cleanly. Call once at startup."""
    return {
        name: importlib.util.find_spec(mod) is not None
        for name, mod in (
            ("transformers", "transformers"),
            ("torch", "torch"),
            ("sentence_transformers", "sentence_transformers"),
        )
    }


class GloveVectors:
    """Static vectors read from a GloVe-format text file (``word v1 v2 ...``).

    Out-of-vocabulary tokens get a hashed n-gram vector scaled to the mean
    norm of the table, never a zero vector.
    """

    def __init__(self, path: str | Path, lowercase: bool = True, seed: int = 0):
        self.path = str(path)
        self.lowercase = lowercase
        table: dict[str, np.ndarray] = {}
        with open(path, encoding="utf-8") as f:
            for line in f:
                parts = line.rstrip().split(" ")
                if len(parts) < 2:
                    continue
                table[parts[0]] = np.asarray(parts[1:], dtype=float)
        if not table:
            raise ValueError(f"no vectors in {path}")
        dims = {v.shape[0] for v in table.values()}
        if len(dims) != 1:
            raise ValueError(f"inconsistent vector widths in {path}: {sorted(dims)}")
        self.dim = dims.pop()
        self.table = table
        self._oov = NgramHasher(self.dim, seed)
        self._oov_scale = float(np.mean([np.linalg.norm(v) for v in table.values()])) or 1.0

    def vector(self, token: str) -> np.ndarray:
        key = token.lower() if self.lowercase else token
        vec = self.table.get(key)
        if vec is None:
            return self._oov(key) * self._oov_scale
        return vec

    def describe(self) -> dict:
        return {"kind": "glove", "path": self.path, "dim": self.dim, "size": len(self.table)}


class HFMaskFiller:
    """Masked-LM mask filler over a Hugging Face model and tokenizer.

    The mask is inserted as a new slot at ``mask_index`` and the model's
    vocabulary distribution at that slot is returned as log-probabilities.
    """

    def __init__(self, model, tokenizer, subword_prefix: str = "##", name: str = ""):
        import torch  # noqa: F401

        self.model = model.eval()
        self.tokenizer = tokenizer
        self.subword_prefix = subword_prefix
        self.name = name or getattr(getattr(model, "config", None), "_name_or_path", "")

    @classmethod
    def from_pretrained(cls, name: str):
        from transformers import AutoModelForMaskedLM, AutoTokenizer

        return cls(AutoModelForMaskedLM.from_pretrained(name), AutoTokenizer.from_pretrained(name), name=name)

    def fill_mask(self, tokens: TokenSequence, mask_index: int, top_k: int) -> list[MaskSuggestion]:
        import torch

        if not 0 <= mask_index <= len(tokens):
            raise IndexError(f"mask index {mask_index} outside 0..{len(tokens)}")
        if top_k <= 0:
            return []
        probe = tokens.insert(mask_index, self.tokenizer.mask_token)
        enc = self.tokenizer(detokenize(probe), return_tensors="pt", truncation=True)
        pos = (enc["input_ids"][0] == self.tokenizer.mask_token_id).nonzero()
        if len(pos) != 1:
            raise RuntimeError("mask token was lost during tokenization")
        with torch.no_grad():
            logits = self.model(**enc).logits[0, pos[0, 0]]
        logp = torch.log_softmax(logits, dim=-1)
        k = min(top_k, logp.shape[0])
        vals, ids = torch.topk(logp, k)
        out = []
        for v, i in zip(vals.tolist(), ids.tolist()):
            tok = self.tokenizer.convert_ids_to_tokens(i)
            if tok:
                out.append(MaskSuggestion(tok, float(v)))
        return out

    def describe(self) -> dict:
        return {"kind": "hf-mlm", "model": self.name}


class SentenceTransformerEncoder:
    """Cross-lingual sentence vectors (LaBSE, LASER-style) via sentence-transformers."""

    def __init__(self, model, name: str = ""):
        self.model = model
        self.name = name
        self.dim = int(model.get_sentence_embedding_dimension())

    @classmethod
    def from_pretrained(cls, name: str):
        from sentence_transformers import SentenceTransformer

        return cls(SentenceTransformer(name), name)

    def encode(self, text: str, lang: str = "en") -> np.ndarray:
        return np.asarray(self.model.encode([text])[0], dtype=float)

    def describe(self) -> dict:
        return {"kind": "sentence-transformers", "model": self.name, "dim": self.dim}


class HFContextualEncoder:
    """Frozen multilingual encoder; subword states are mean-pooled back to our tokens.

    Layout is ``[CLS] source [SEP] target [SEP]``; marker rows are the
    encoder's own states for those special tokens.
    """

    n_special = 3

    def __init__(self, model, tokenizer, name: str = "", layer: int = -1):
        self.model = model.eval()
        self.tokenizer = tokenizer
        self.name = name or getattr(getattr(model, "config", None), "_name_or_path", "")
        self.layer = layer
        self.dim = int(model.config.hidden_size)
        self.capacity = int(getattr(model.config, "max_position_embeddings", 512))

    @classmethod
    def from_pretrained(cls, name: str, layer: int = -1):
        from transformers import AutoModel, AutoTokenizer

        return cls(AutoModel.from_pretrained(name), AutoTokenizer.from_pretrained(name), name, layer)

    def encode_pair(self, source: TokenSequence, target: TokenSequence) -> np.ndarray:
        import torch

        if len(source) == 0 or len(target) == 0:
            raise ValueError("contextual encoding needs non-empty source and target")
        enc = self.tokenizer(
            list(source.tokens), list(target.tokens), is_split_into_words=True, return_tensors="pt"
        )
        n_pieces = enc["input_ids"].shape[1]
        if n_pieces > self.capacity:
            raise CapacityError(f"pair needs {n_pieces} subword positions, encoder capacity is {self.capacity}")
        with torch.no_grad():
            out = self.model(**enc, output_hidden_states=True)
        states = out.hidden_states[self.layer][0].numpy()
        word_ids = enc.word_ids(0)
        seq_ids = enc.sequence_ids(0)
        specials = [i for i, w in enumerate(word_ids) if w is None]
        if len(specials) != self.n_special:
            raise RuntimeError(f"expected {self.n_special} special tokens, tokenizer produced {len(specials)}")
        rows = [states[specials[0]]]
        for seg, toks in ((0, source), (1, target)):
            for w in range(len(toks)):
                idx = [i for i, (wid, sid) in enumerate(zip(word_ids, seq_ids)) if wid == w and sid == seg]
                rows.append(states[idx].mean(axis=0) if idx else np.zeros(self.dim))
            rows.append(states[specials[1 + seg]])
        return np.vstack(rows).astype(np.float32)

    def describe(self) -> dict:
        return {"kind": "hf-encoder", "model": self.name, "dim": self.dim, "layer": self.layer}
