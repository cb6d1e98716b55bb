"""Parallel subtitle corpus: loading, tokenization, sentence splitting, seed filtering."""

from __future__ import annotations

import json
import logging
import re
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "SubtitlePair",
    "TokenSequence",
    "SeedFilterConfig",
    "FilterDecision",
    "RecordError",
    "CorpusError",
    "BackendError",
    "tokenize",
    "detokenize",
    "split_sentences",
    "join_sentences",
    "load_corpus",
    "read_srt",
    "seed_filter",
]


class CorpusError(Exception):
    """Fatal ingestion failure (unreadable file, misaligned srt pair)."""


class BackendError(RuntimeError):
    """An embedding backend failed; distinct from a filter rejection."""


@dataclass(frozen=True)
class SubtitlePair:
    id: str
    source_text: str
    target_text: str
    source_lang: str = "en"
    target_lang: str = "und"
    extra: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if not self.source_text.strip():
            raise ValueError(f"pair {self.id}: empty source text")
        if not self.target_text.strip():
            raise ValueError(f"pair {self.id}: empty target text")

    def to_record(self) -> dict:
        rec = dict(self.extra)
        rec.update(
            id=self.id,
            src=self.source_text,
            tgt=self.target_text,
            src_lang=self.source_lang,
            tgt_lang=self.target_lang,
        )
        return rec


# ---------------------------------------------------------------------------
# Tokenization
# ---------------------------------------------------------------------------

_CJK_RE = re.compile(
    "[぀-ヿ㐀-䶿一-鿿豈-﫿가-힯"
    "\U00020000-\U0002a6df]"
)


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch)[0] in "PS"


@dataclass(frozen=True)
class TokenSequence:
    """Surface tokens plus, per token, whether it was glued to its predecessor.

    ``glued`` is what lets ``detokenize`` put "Hello, world." back together;
    it is ignored for the first token.
    """

    tokens: tuple[str, ...]
    lang: str = "en"
    glued: tuple[bool, ...] = ()

    def __post_init__(self):
        if not self.glued:
            object.__setattr__(self, "glued", (False,) * len(self.tokens))
        if len(self.glued) != len(self.tokens):
            raise ValueError("glued flags must align with tokens")
        if self.glued and self.glued[0]:
            object.__setattr__(self, "glued", (False,) + tuple(self.glued[1:]))

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __getitem__(self, i):
        return self.tokens[i]

    def insert(self, index: int, token: str) -> "TokenSequence":
        if not 0 <= index <= len(self.tokens):
            raise IndexError(f"insertion slot {index} outside 0..{len(self.tokens)}")
        toks = list(self.tokens)
        glue = list(self.glued)
        toks.insert(index, token)
        glue.insert(index, False)
        return _repair(TokenSequence(tuple(toks), self.lang, tuple(glue)), index + 1)

    def remove(self, index: int) -> "TokenSequence":
        if not 0 <= index < len(self.tokens):
            raise IndexError(f"token index {index} outside 0..{len(self.tokens) - 1}")
        toks = list(self.tokens)
        glue = list(self.glued)
        removed_glue = glue[index]
        del toks[index], glue[index]
        if index < len(toks) and not _is_punct(toks[index][0]):
            # a word stays attached only if the removed token was attached too
            glue[index] = glue[index] and removed_glue
        return _repair(TokenSequence(tuple(toks), self.lang, tuple(glue)), index)


def _round_trips_near(seq: TokenSequence, site: int) -> bool:
    # whitespace-delimited chunks away from the edit are untouched, so only
    # the chunks spanning site-1..site+1 need re-tokenizing
    n = len(seq.tokens)
    lo = max(min(site - 1, n - 1), 0)
    while lo > 0 and seq.glued[lo]:
        lo -= 1
    hi = min(site + 2, n)
    while hi < n and seq.glued[hi]:
        hi += 1
    part = TokenSequence(seq.tokens[lo:hi], seq.lang, (False,) + seq.glued[lo + 1 : hi])
    return tokenize(detokenize(part), seq.lang).tokens == part.tokens


def _repair(seq: TokenSequence, site: int) -> TokenSequence:
    """Un-glue tokens around an edit site until the sequence round-trips."""
    if not seq.tokens or _round_trips_near(seq, site):
        return seq
    glue = list(seq.glued)
    if site < len(glue):
        glue[site] = False
        fixed = TokenSequence(seq.tokens, seq.lang, tuple(glue))
        if _round_trips_near(fixed, site):
            return fixed
    # fully space-separated output always re-tokenizes to the same tokens
    return TokenSequence(seq.tokens, seq.lang)


def _split_chunk(chunk: str) -> list[str]:
    lead = []
    i = 0
    while i < len(chunk) and _is_punct(chunk[i]):
        lead.append(chunk[i])
        i += 1
    j = len(chunk)
    trail = []
    while j > i and _is_punct(chunk[j - 1]):
        trail.append(chunk[j - 1])
        j -= 1
    core = chunk[i:j]
    parts = lead
    if core:
        if _CJK_RE.search(core):
            # ideographic scripts: one token per CJK character
            buf = ""
            for ch in core:
                if _CJK_RE.match(ch):
                    if buf:
                        parts.extend(_split_chunk(buf))
                        buf = ""
                    parts.append(ch)
                else:
                    buf += ch
            if buf:
                parts.extend(_split_chunk(buf))
        else:
            parts.append(core)
    parts.extend(reversed(trail))
    return parts


def tokenize(text: str, lang: str = "en") -> TokenSequence:
    """Split on whitespace, detaching leading and trailing punctuation.

    >>> tokenize("Hello, world.").tokens
    ('Hello', ',', 'world', '.')
    """
    tokens: list[str] = []
    glued: list[bool] = []
    for chunk in text.split():
        for k, part in enumerate(_split_chunk(chunk)):
            tokens.append(part)
            glued.append(k > 0)
    return TokenSequence(tuple(tokens), lang, tuple(glued))


def detokenize(seq: TokenSequence) -> str:
    out = []
    for k, (tok, glue) in enumerate(zip(seq.tokens, seq.glued)):
        if k and not glue:
            out.append(" ")
        out.append(tok)
    return "".join(out)


# ---------------------------------------------------------------------------
# Sentence splitting
# ---------------------------------------------------------------------------

_TERMINALS = ".!?…"
_CLOSERS = "\"'”’»)]}"
_DASHES = {"-", "–", "—"}


def _ends_sentence(chunk: str) -> bool:
    stripped = chunk.rstrip(_CLOSERS)
    return bool(stripped) and stripped[-1] in _TERMINALS


def split_sentences(text: str) -> list[str]:
    """Rule-based sentence split on terminal punctuation and dialogue dashes.

    >>> split_sentences("- Fair enough. - So?")
    ['- Fair enough.', '- So?']
    """
    sentences: list[str] = []
    current: list[str] = []
    for chunk in text.split():
        if chunk in _DASHES and current:
            sentences.append(" ".join(current))
            current = []
        current.append(chunk)
        if _ends_sentence(chunk):
            sentences.append(" ".join(current))
            current = []
    if current:
        sentences.append(" ".join(current))
    return sentences


def join_sentences(sentences: Sequence[str]) -> str:
    return " ".join(sentences)


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RecordError:
    """A malformed record; the stream carries on past it."""

    line: int
    message: str
    path: str = ""

    def __str__(self):
        return f"{self.path}:{self.line}: {self.message}"


def _iter_jsonl(path: Path, errors: list) -> Iterator[SubtitlePair]:
    with path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                errors.append(RecordError(lineno, f"invalid json at line {lineno}: {exc.msg}", str(path)))
                continue
            if not isinstance(rec, dict):
                errors.append(RecordError(lineno, f"record at line {lineno} is not an object", str(path)))
                continue
            missing = [k for k in ("src", "tgt") if not isinstance(rec.get(k), str)]
            if missing:
                errors.append(RecordError(lineno, f"missing field {missing[0]} at line {lineno}", str(path)))
                continue
            extra = {k: v for k, v in rec.items() if k not in ("id", "src", "tgt", "src_lang", "tgt_lang")}
            try:
                yield SubtitlePair(
                    id=str(rec.get("id") or f"{path.name}:{lineno}"),
                    source_text=rec["src"],
                    target_text=rec["tgt"],
                    source_lang=rec.get("src_lang", "en"),
                    target_lang=rec.get("tgt_lang", "und"),
                    extra=extra,
                )
            except ValueError as exc:
                errors.append(RecordError(lineno, f"{exc} at line {lineno}", str(path)))


_TIME_RE = re.compile(r"^\s*\d+:\d+:\d+[,.]\d+\s*-->\s*\d+:\d+:\d+[,.]\d+")


def read_srt(path: str | Path) -> list[tuple[int, str]]:
    """Parse a SubRip file into (line number of cue, text) in cue order.

    Multi-line cue text is joined with single spaces.
    """
    path = Path(path)
    cues: list[tuple[int, str]] = []
    with path.open(encoding="utf-8-sig") as f:
        lines = f.read().splitlines()
    i = 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        start = i + 1
        if lines[i].strip().isdigit() and i + 1 < len(lines) and _TIME_RE.match(lines[i + 1]):
            i += 2
        elif _TIME_RE.match(lines[i]):
            i += 1
        else:
            raise CorpusError(f"{path}:{start}: expected cue index or timing line")
        text = []
        while i < len(lines) and lines[i].strip():
            text.append(lines[i].strip())
            i += 1
        cues.append((start, " ".join(text)))
    return cues


def _iter_srt_pair(src_path: Path, tgt_path: Path, tgt_lang: str, errors: list) -> Iterator[SubtitlePair]:
    src = read_srt(src_path)
    tgt = read_srt(tgt_path)
    if len(src) != len(tgt):
        raise CorpusError(
            f"cue count mismatch: {src_path} has {len(src)} cues, {tgt_path} has {len(tgt)}"
        )
    for (line, s), (_, t) in zip(src, tgt):
        try:
            yield SubtitlePair(f"{src_path.name}:{line}", s, t, "en", tgt_lang)
        except ValueError as exc:
            errors.append(RecordError(line, f"{exc} at line {line}", str(src_path)))


def load_corpus(
    path: str | Path | tuple,
    format: str = "jsonl",
    errors: Optional[list] = None,
    tgt_lang: str = "und",
) -> Iterator[SubtitlePair]:
    """Stream pairs from ``path`` in file order.

    For ``format="srt-pair"`` pass ``(source.srt, target.srt)``. Malformed
    records are appended to ``errors`` (a list of ``RecordError``) and skipped;
    an unreadable file raises ``CorpusError``.
    """
    if errors is None:
        errors = []
    if format == "jsonl":
        p = Path(path)
        if not p.is_file():
            raise CorpusError(f"cannot read corpus file {p}")
        return _iter_jsonl(p, errors)
    if format == "srt-pair":
        src_path, tgt_path = (Path(x) for x in path)
        for p in (src_path, tgt_path):
            if not p.is_file():
                raise CorpusError(f"cannot read subtitle file {p}")
        return _iter_srt_pair(src_path, tgt_path, tgt_lang, errors)
    raise ValueError(f"unknown corpus format {format!r}; expected jsonl or srt-pair")


# ---------------------------------------------------------------------------
# Seed filter
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SeedFilterConfig:
    min_tokens: int = 5
    max_tokens: int = 60
    similarity_threshold: float = 0.8

    def __post_init__(self):
        if not 0 < self.min_tokens <= self.max_tokens:
            raise ValueError("need 0 < min_tokens <= max_tokens")
        if not -1.0 <= self.similarity_threshold <= 1.0:
            raise ValueError("similarity_threshold must lie in [-1, 1]")


@dataclass(frozen=True)
class FilterDecision:
    accepted: bool
    reason: Optional[str] = None  # "length" or "similarity"
    detail: str = ""
    similarity: Optional[float] = None

    def __bool__(self):
        return self.accepted


def seed_filter(pair: SubtitlePair, cfg: SeedFilterConfig, xsim) -> FilterDecision:
    """Length bounds on both sides, then strict cross-lingual cosine threshold."""
    from .encoders import cosine  # local: encoders imports corpus

    for side, text, lang in (
        ("source", pair.source_text, pair.source_lang),
        ("target", pair.target_text, pair.target_lang),
    ):
        n = len(tokenize(text, lang))
        if not cfg.min_tokens <= n <= cfg.max_tokens:
            return FilterDecision(
                False, "length", f"{side} has {n} tokens, outside {cfg.min_tokens}..{cfg.max_tokens}"
            )
    try:
        u = np.asarray(xsim.encode(pair.source_text, pair.source_lang), dtype=float)
        v = np.asarray(xsim.encode(pair.target_text, pair.target_lang), dtype=float)
        sim = cosine(u, v)
    except Exception as exc:  # any backend fault is surfaced, never read as a reject
        raise BackendError(f"cross-lingual backend failed on pair {pair.id}: {exc}") from exc
    if not sim > cfg.similarity_threshold:
        return FilterDecision(
            False, "similarity", f"cosine {sim:.4f} <= {cfg.similarity_threshold}", sim
        )
    return FilterDecision(True, similarity=sim)
