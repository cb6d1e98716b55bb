"""Synthetic over-/under-translation samples from clean subtitle pairs.

Only the English source is ever edited; the target is left byte-for-byte
alone. Under-translation (UT) samples get extra source material, so the
target now says less than the source; over-translation (OT) samples lose
source material.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from functools import lru_cache
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import __version__
from .corpus import (
    SubtitlePair,
    TokenSequence,
    _is_punct,
    detokenize,
    join_sentences,
    split_sentences,
    tokenize,
)
from .encoders import EncoderBundle, cosine, sentence_vector
from .stopwords import ENGLISH_STOPWORDS, NUMBER_WORDS

logger = logging.getLogger(__name__)

LABELS = ("NE", "OT", "UT")
GRANULARITIES = ("none", "subtle", "gross")
EDIT_KINDS = ("insert_token", "omit_token", "add_sentence", "remove_sentence")


class SynthesisError(Exception):
    pass


class CorpusTooSmall(SynthesisError):
    def __init__(self, requested: int, achievable: int, detail: str = ""):
        self.requested = requested
        self.achievable = achievable
        super().__init__(
            f"corpus too small for {requested} samples; achievable maximum is about {achievable}"
            + (f" ({detail})" if detail else "")
        )


@dataclass(frozen=True)
class EditRecord:
    kind: str
    position: int
    payload: str = ""

    def __post_init__(self):
        if self.kind not in EDIT_KINDS:
            raise ValueError(f"unknown edit kind {self.kind!r}")
        if self.kind in ("insert_token", "add_sentence") and not self.payload:
            raise ValueError(f"{self.kind} needs a payload")


@dataclass(frozen=True)
class LabeledSample:
    pair: SubtitlePair
    label: str
    granularity: str = "none"
    edits: tuple[EditRecord, ...] = ()
    original_source: str = ""
    similarity_to_original: Optional[float] = None

    def __post_init__(self):
        if not self.original_source:
            object.__setattr__(self, "original_source", self.pair.source_text)
        if self.label not in LABELS:
            raise ValueError(f"unknown label {self.label!r}")
        if self.granularity not in GRANULARITIES:
            raise ValueError(f"unknown granularity {self.granularity!r}")
        clean = self.label == "NE"
        if clean != (self.granularity == "none") or clean != (not self.edits):
            raise ValueError("NE samples, and only they, have granularity none and no edits")

    def to_record(self) -> dict:
        return {
            "id": self.pair.id,
            "src": self.pair.source_text,
            "tgt": self.pair.target_text,
            "tgt_lang": self.pair.target_lang,
            "label": self.label,
            "granularity": self.granularity,
            "edits": [asdict(e) for e in self.edits],
            "orig_src": self.original_source,
            "sim": self.similarity_to_original,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "LabeledSample":
        pair = SubtitlePair(
            rec["id"], rec["src"], rec["tgt"], rec.get("src_lang", "en"), rec.get("tgt_lang", "und")
        )
        return cls(
            pair,
            rec["label"],
            rec.get("granularity", "none" if rec["label"] == "NE" else "subtle"),
            tuple(EditRecord(**e) for e in rec.get("edits", ())),
            rec.get("orig_src") or rec["src"],
            rec.get("sim"),
        )


@dataclass(frozen=True)
class SynthesisConfig:
    max_token_edits: int = 5
    candidates_per_pair: int = 20
    percentile_drop_fraction: float = 0.4
    mask_top_k: int = 50
    class_mix: dict = field(default_factory=lambda: {"ot": 0.30, "ut": 0.30, "ne": 0.40})
    subtle_fraction_of_errors: float = 0.83
    train_fraction: float = 0.80
    seed: int = 0
    n_samples: Optional[int] = None
    max_donor_tries: int = 5

    def __post_init__(self):
        if self.max_token_edits < 1:
            raise ValueError("max_token_edits must be >= 1")
        if set(self.class_mix) != {"ot", "ut", "ne"}:
            raise ValueError("class_mix needs exactly the keys ot, ut, ne")
        if abs(sum(self.class_mix.values()) - 1.0) > 1e-9:
            raise ValueError("class_mix must sum to 1")
        for name in ("subtle_fraction_of_errors", "train_fraction"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if not 0 <= self.percentile_drop_fraction < 1:
            raise ValueError("percentile_drop_fraction must lie in [0, 1)")


# ---------------------------------------------------------------------------
# Edits
# ---------------------------------------------------------------------------

def apply_edit(text: str, edit: EditRecord, lang: str = "en") -> str:
    if edit.kind == "insert_token":
        return detokenize(tokenize(text, lang).insert(edit.position, edit.payload))
    if edit.kind == "omit_token":
        return detokenize(tokenize(text, lang).remove(edit.position))
    sents = split_sentences(text)
    if edit.kind == "add_sentence":
        if not 0 <= edit.position <= len(sents):
            raise IndexError(f"sentence slot {edit.position} outside 0..{len(sents)}")
        sents.insert(edit.position, edit.payload)
    else:
        if not 0 <= edit.position < len(sents):
            raise IndexError(f"sentence index {edit.position} outside 0..{len(sents) - 1}")
        del sents[edit.position]
    return join_sentences(sents)


def replay_edits(original: str, edits: Iterable[EditRecord], lang: str = "en") -> str:
    text = original
    for e in edits:
        text = apply_edit(text, e, lang)
    return text


# ---------------------------------------------------------------------------
# Token filter
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TokenDecision:
    keep: bool
    reason: Optional[str] = None

    def __bool__(self):
        return self.keep


def _plain_chars(token: str) -> bool:
    if not all(ch.isalnum() or ch in "'-’" for ch in token):
        return False
    # a leading/trailing apostrophe or hyphen would be split off by the tokenizer
    return token[0].isalnum() and token[-1].isalnum()


@lru_cache(maxsize=65536)
def _intrinsic_reason(token: str, subword_prefix: str) -> Optional[str]:
    if not token or (subword_prefix and token.startswith(subword_prefix)):
        return "subword"
    if all(_is_punct(ch) for ch in token):
        return "punctuation"
    if token.casefold() in ENGLISH_STOPWORDS:
        return "stopword"
    if not _plain_chars(token):
        return "special"
    return None


@lru_cache(maxsize=65536)
def _is_numeral(token: str) -> bool:
    return any(ch.isdigit() for ch in token) or token.casefold() in NUMBER_WORDS


def token_filter(token: str, prev: Optional[str] = None, next: Optional[str] = None, subword_prefix: str = "##") -> TokenDecision:
    """Decide whether a mask-fill suggestion may be inserted between ``prev`` and ``next``.

    Rules are checked in order and the first hit names the rejection:
    subword, punctuation, stopword, special, repetition, numeral.
    """
    reason = _intrinsic_reason(token, subword_prefix)
    if reason:
        return TokenDecision(False, reason)
    low = token.casefold()
    if any(n is not None and n.casefold() == low for n in (prev, next)):
        return TokenDecision(False, "repetition")
    if _is_numeral(token):
        return TokenDecision(False, "numeral")
    return _KEEP


_KEEP = TokenDecision(True)


# ---------------------------------------------------------------------------
# Percentile filter
# ---------------------------------------------------------------------------

def percentile_filter(scored: Sequence[tuple], drop_fraction: float) -> list:
    """Drop the ``floor(drop_fraction * N)`` most similar candidates.

    ``scored`` holds ``(candidate, score)`` pairs; survivors come back in
    input order. Equal scores keep input order when ranking.
    """
    if not 0 <= drop_fraction < 1:
        raise ValueError("drop_fraction must lie in [0, 1)")
    n = len(scored)
    n_drop = math.floor(round(drop_fraction * n, 9))
    ranked = sorted(range(n), key=lambda i: -scored[i][1])
    dropped = set(ranked[:n_drop])
    return [scored[i][0] for i in range(n) if i not in dropped]


# ---------------------------------------------------------------------------
# Subtle negatives
# ---------------------------------------------------------------------------

def _similarity(a: TokenSequence, b: TokenSequence, bundle: EncoderBundle) -> float:
    return cosine(sentence_vector(a, bundle.word_vectors), sentence_vector(b, bundle.word_vectors))


def _insertion_candidate(tokens: TokenSequence, k: int, bundle: EncoderBundle, cfg: SynthesisConfig, rng) -> Optional[tuple]:
    filler = bundle.mask_filler
    prefix = getattr(filler, "subword_prefix", "##")
    edits = []
    for _ in range(k):
        for slot in rng.permutation(len(tokens) + 1):
            slot = int(slot)
            prev = tokens[slot - 1] if slot > 0 else None
            nxt = tokens[slot] if slot < len(tokens) else None
            choice = None
            for sugg in filler.fill_mask(tokens, slot, cfg.mask_top_k):
                if token_filter(sugg.token, prev, nxt, prefix):
                    choice = sugg.token
                    break
            if choice is not None:
                tokens = tokens.insert(slot, choice)
                edits.append(EditRecord("insert_token", slot, choice))
                break
        else:
            return None  # no slot admits a valid insertion: abandon this candidate
    return tokens, tuple(edits)


def _omission_candidate(tokens: TokenSequence, k: int, rng) -> tuple:
    edits = []
    for _ in range(k):
        pos = int(rng.integers(len(tokens)))
        tokens = tokens.remove(pos)
        edits.append(EditRecord("omit_token", pos))
    return tokens, tuple(edits)


def _pick(pair: SubtitlePair, candidates, label: str, bundle, cfg, rng) -> Optional[LabeledSample]:
    if not candidates:
        return None
    original = tokenize(pair.source_text, pair.source_lang)
    scored = [(c, _similarity(original, c[0], bundle)) for c in candidates]
    survivors = percentile_filter([(i, s) for i, (_, s) in enumerate(scored)], cfg.percentile_drop_fraction)
    if not survivors:
        return None
    (tokens, edits), sim = scored[survivors[int(rng.integers(len(survivors)))]]
    return LabeledSample(
        replace(pair, source_text=detokenize(tokens)),
        label,
        "subtle",
        edits,
        pair.source_text,
        sim,
    )


def make_ut_subtle(pair: SubtitlePair, bundle: EncoderBundle, cfg: SynthesisConfig, rng) -> Optional[LabeledSample]:
    """Insert 1..max_token_edits mask-filled tokens, one probe per round."""
    tokens = tokenize(pair.source_text, pair.source_lang)
    candidates = []
    for _ in range(cfg.candidates_per_pair):
        k = int(rng.integers(1, cfg.max_token_edits + 1))
        cand = _insertion_candidate(tokens, k, bundle, cfg, rng)
        if cand is not None:
            candidates.append(cand)
    return _pick(pair, candidates, "UT", bundle, cfg, rng)


def make_ot_subtle(pair: SubtitlePair, bundle: EncoderBundle, cfg: SynthesisConfig, rng) -> Optional[LabeledSample]:
    """Remove 1..max_token_edits uniformly chosen tokens, one per round."""
    tokens = tokenize(pair.source_text, pair.source_lang)
    if len(tokens) <= cfg.max_token_edits:
        raise ValueError(
            f"pair {pair.id}: source has {len(tokens)} tokens, need more than {cfg.max_token_edits} to omit from"
        )
    candidates = [
        _omission_candidate(tokens, int(rng.integers(1, cfg.max_token_edits + 1)), rng)
        for _ in range(cfg.candidates_per_pair)
    ]
    return _pick(pair, candidates, "OT", bundle, cfg, rng)


# ---------------------------------------------------------------------------
# Gross negatives
# ---------------------------------------------------------------------------

def make_gross(
    pair: SubtitlePair,
    direction: str,
    donor: Optional[str] = None,
    rng=None,
    bundle: Optional[EncoderBundle] = None,
) -> Optional[LabeledSample]:
    """Remove (``ot``) or add (``ut``) one whole source sentence.

    Returns ``None`` when the edit is not applicable: a single-sentence
    source for ``ot``, or no position where the sentence count changes by
    exactly one. With ``bundle`` given, the similarity to the original is
    recorded.
    """
    if rng is None:
        rng = np.random.default_rng()
    sents = split_sentences(pair.source_text)
    n = len(sents)
    if direction == "ot":
        if n < 2:
            return None
        positions = rng.permutation(n)
        make = lambda j: EditRecord("remove_sentence", int(j))  # noqa: E731
        label, want = "OT", n - 1
    elif direction == "ut":
        if not donor or not donor.strip():
            raise ValueError("gross UT needs a donor sentence")
        donor = " ".join(donor.split())
        positions = rng.permutation(n + 1)
        make = lambda j: EditRecord("add_sentence", int(j), donor)  # noqa: E731
        label, want = "UT", n + 1
    else:
        raise ValueError(f"direction must be 'ot' or 'ut', got {direction!r}")

    for j in positions:
        edit = make(j)
        text = apply_edit(pair.source_text, edit)
        if len(split_sentences(text)) == want:
            sim = None
            if bundle is not None:
                sim = _similarity(tokenize(pair.source_text), tokenize(text), bundle)
            return LabeledSample(replace(pair, source_text=text), label, "gross", (edit,), pair.source_text, sim)
    return None


# ---------------------------------------------------------------------------
# Dataset assembly
# ---------------------------------------------------------------------------

def child_rng(seed: int, *parts) -> np.random.Generator:
    """Generator keyed on (seed, parts); independent of processing order."""
    digest = hashlib.sha256(json.dumps([seed, *parts]).encode()).digest()
    return np.random.default_rng([seed & 0xFFFFFFFF, *np.frombuffer(digest[:16], dtype=np.uint32).tolist()])


def _quotas(n: int, cfg: SynthesisConfig) -> dict:
    n_ot = round(n * cfg.class_mix["ot"])
    n_ut = round(n * cfg.class_mix["ut"])
    n_ne = n - n_ot - n_ut
    gross_ot = round(n_ot * (1 - cfg.subtle_fraction_of_errors))
    gross_ut = round(n_ut * (1 - cfg.subtle_fraction_of_errors))
    # scarcest inputs first: OT gross needs multi-sentence sources
    return {
        ("OT", "gross"): gross_ot,
        ("UT", "gross"): gross_ut,
        ("OT", "subtle"): n_ot - gross_ot,
        ("UT", "subtle"): n_ut - gross_ut,
        ("NE", "none"): n_ne,
    }


class _Attempt:
    def __init__(self, pairs, bundle, cfg):
        self.pairs = pairs
        self.bundle = bundle
        self.cfg = cfg

    def eligible(self, idx: int, task) -> bool:
        pair = self.pairs[idx]
        if task == ("OT", "gross"):
            return len(split_sentences(pair.source_text)) >= 2
        if task == ("OT", "subtle"):
            return len(tokenize(pair.source_text, pair.source_lang)) > self.cfg.max_token_edits
        if task == ("UT", "gross"):
            return len(self.pairs) > 1
        return True

    def __call__(self, idx: int, task) -> Optional[LabeledSample]:
        pair = self.pairs[idx]
        rng = child_rng(self.cfg.seed, pair.id, idx, *task)
        label, gran = task
        if label == "NE":
            return LabeledSample(pair, "NE")
        if gran == "subtle":
            make = make_ot_subtle if label == "OT" else make_ut_subtle
            return make(pair, self.bundle, self.cfg, rng)
        if label == "OT":
            return make_gross(pair, "ot", rng=rng, bundle=self.bundle)
        for _ in range(self.cfg.max_donor_tries):
            d = int(rng.integers(len(self.pairs) - 1))
            d += d >= idx  # never the pair itself
            donor_sents = split_sentences(self.pairs[d].source_text)
            donor = donor_sents[int(rng.integers(len(donor_sents)))]
            sample = make_gross(pair, "ut", donor, rng, self.bundle)
            if sample is not None:
                return sample
        return None


@dataclass
class Dataset:
    train: list
    validation: list
    manifest: dict


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _count_table(samples) -> dict:
    table: dict = {}
    for s in samples:
        by_gran = table.setdefault(s.label, {}).setdefault(s.granularity, {})
        by_gran[s.pair.target_lang] = by_gran.get(s.pair.target_lang, 0) + 1
    return {k: {g: dict(sorted(v.items())) for g, v in sorted(d.items())} for k, d in sorted(table.items())}


def stratified_split(samples: Sequence[LabeledSample], train_fraction: float, seed: int) -> tuple[list, list]:
    """Seeded per-class partition; each class contributes ``round(train_fraction * n)`` to train."""
    in_train = set()
    for label in LABELS:
        idx = [i for i, s in enumerate(samples) if s.label == label]
        perm = child_rng(seed, "split", label).permutation(len(idx))
        n_train = round(train_fraction * len(idx))
        in_train.update(idx[p] for p in perm[:n_train])
    train = [s for i, s in enumerate(samples) if i in in_train]
    val = [s for i, s in enumerate(samples) if i not in in_train]
    return train, val


def assemble_dataset(
    corpus: Iterable[SubtitlePair],
    bundle: EncoderBundle,
    cfg: SynthesisConfig,
    n_samples: Optional[int] = None,
    workers: int = 1,
) -> Dataset:
    """Build the mixed OT/UT/NE dataset and its train/validation split.

    Each corpus pair yields at most one sample. ``n_samples`` (or
    ``cfg.n_samples``) defaults to half the corpus, leaving room for pairs on
    which a subtle edit cannot be made.
    """
    pairs = list(corpus)
    n = n_samples if n_samples is not None else cfg.n_samples
    if n is None:
        n = len(pairs) // 2
    if n <= 0:
        raise SynthesisError("need a positive number of samples")
    if n > len(pairs):
        raise CorpusTooSmall(n, len(pairs), f"only {len(pairs)} pairs, one sample per pair")

    quotas = _quotas(n, cfg)
    order = child_rng(cfg.seed, "order").permutation(len(pairs)).tolist()
    rank = {idx: r for r, idx in enumerate(order)}
    attempt = _Attempt(pairs, bundle, cfg)
    used: set[int] = set()
    chosen: list[tuple[int, LabeledSample]] = []

    lanes = 1 if bundle.exclusive else max(1, workers)
    pool = ThreadPoolExecutor(lanes) if lanes > 1 else None
    try:
        for task, quota in quotas.items():
            got = 0
            queue = [i for i in order if i not in used and attempt.eligible(i, task)]
            pos = 0
            while got < quota and pos < len(queue):
                # attempts are pure functions of (pair, task), so batching does not change results
                batch = queue[pos : pos + max(2 * (quota - got), lanes)]
                pos += len(batch)
                results = pool.map(attempt, batch, [task] * len(batch)) if pool else (attempt(i, task) for i in batch)
                for idx, sample in zip(batch, results):
                    if sample is None or got >= quota:
                        continue
                    used.add(idx)
                    chosen.append((idx, sample))
                    got += 1
            if got < quota:
                share = quota / n
                achievable = min(len(pairs), int(got / share)) if share else len(pairs)
                raise CorpusTooSmall(n, achievable, f"{task[0]} {task[1]}: produced {got} of {quota}")
            logger.info("%s %s: %d samples", task[0], task[1], got)
    finally:
        if pool:
            pool.shutdown()

    # allocation order would cluster gross samples first; emit in a seeded shuffle
    chosen.sort(key=lambda t: rank[t[0]])
    shuffle = child_rng(cfg.seed, "emit").permutation(len(chosen))
    samples = [chosen[i][1] for i in shuffle]
    train, val = stratified_split(samples, cfg.train_fraction, cfg.seed)
    cfg_dict = asdict(cfg)
    cfg_dict["n_samples"] = n
    manifest = {
        "tool": "otut",
        "tool_version": __version__,
        "seed": cfg.seed,
        "config": cfg_dict,
        "config_hash": config_hash(cfg_dict),
        "encoders": bundle.describe(),
        "n_corpus_pairs": len(pairs),
        "n_samples": len(samples),
        "counts": _count_table(samples),
        "split": {
            "train": dict(sorted(Counter(s.label for s in train).items())),
            "validation": dict(sorted(Counter(s.label for s in val).items())),
        },
    }
    return Dataset(train, val, manifest)


def write_samples(samples: Iterable[LabeledSample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for s in samples:
            f.write(json.dumps(s.to_record(), ensure_ascii=False) + "\n")


def read_samples(path: str | Path) -> list[LabeledSample]:
    with open(path, encoding="utf-8") as f:
        return [LabeledSample.from_record(json.loads(line)) for line in f if line.strip()]


def write_dataset(ds: Dataset, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_samples(ds.train, out / "train.jsonl")
    write_samples(ds.validation, out / "validation.jsonl")
    with open(out / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(ds.manifest, f, indent=2, sort_keys=True)
        f.write("\n")
