"""A small synthetic parallel corpus for offline runs.

English subtitle-like lines are generated from templates and "translated"
into toy cognate languages by spelling rewrites, so the hashed reference
encoders can align words across the pair. Target language codes come from
the ISO 639 local-use range (qaa-qtz) so nobody mistakes them for real data.
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Optional

import numpy as np

from .corpus import SubtitlePair

SUBJECTS = [
    "I", "you", "we", "they", "he", "she", "my brother", "the old man", "your mother",
    "the captain", "the doctor", "Ivan", "Maria", "the kids", "our neighbor", "the police",
    "my wife", "his father", "the teacher", "Espada",
]
VERBS = [
    ("found", "find"), ("lost", "lose"), ("took", "take"), ("sold", "sell"), ("painted", "paint"),
    ("brought", "bring"), ("opened", "open"), ("watched", "watch"), ("cleaned", "clean"),
    ("carried", "carry"), ("hid", "hide"), ("fixed", "fix"), ("bought", "buy"), ("read", "read"),
    ("burned", "burn"), ("counted", "count"), ("moved", "move"), ("checked", "check"),
]
OBJECTS = [
    "the green tree", "that book", "a letter", "the money", "my luggage", "the car", "this house",
    "a small boat", "the keys", "your phone", "the map", "the blue door", "her ring", "the horse",
    "those papers", "the old piano", "a bottle of wine", "the camera", "his jacket", "the garden",
]
PLACES = [
    "in the park", "at the station", "near the river", "at the Elephant Cafe", "in the kitchen",
    "behind the church", "on the bridge", "under the table", "at the hospital", "in the city",
    "by the sea", "at school", "in the forest", "at the market",
]
TIMES = [
    "tomorrow morning", "last night", "before the war", "in a week", "after dinner", "every day",
    "this summer", "at midnight", "on Sunday", "for a while", "until the end",
]
INTERJECTIONS = ["Well", "Listen", "Look", "Honestly", "Okay", "Sorry", "Hey"]
REPLIES = [
    "So?", "Fair enough.", "Really?", "Not now.", "I know.", "Come on.", "Why not?",
    "Thank you.", "Of course.", "Be careful.", "Wait here.", "Good night.",
]

# ordered spelling rewrites per toy language
LANGUAGE_RULES = {
    "qaa": [("w", "v"), ("oo", "u"), ("ck", "kk"), ("ph", "f")],
    "qab": [("ee", "i"), ("sh", "ch"), ("y", "i"), ("ck", "k"), ("ph", "f")],
    "qac": [("v", "b"), ("qu", "kw"), ("ou", "u"), ("x", "ks"), ("tion", "sion")],
}


def translate_word(word: str, lang: str) -> str:
    out = word.lower()
    for a, b in LANGUAGE_RULES[lang]:
        out = out.replace(a, b)
    if word[:1].isupper():
        out = out[:1].upper() + out[1:]
    return out


_WORD_RE = re.compile(r"[A-Za-z]+")


def translate(text: str, lang: str) -> str:
    """Word-by-word spelling rewrite; punctuation and spacing are kept."""
    return _WORD_RE.sub(lambda m: translate_word(m.group(0), lang), text)


def _cap(s: str) -> str:
    return s[:1].upper() + s[1:]


def _sentence(rng) -> str:
    pick = lambda xs: xs[int(rng.integers(len(xs)))]  # noqa: E731
    subj = pick(SUBJECTS)
    past, base = pick(VERBS)
    obj = pick(OBJECTS)
    form = int(rng.integers(6))
    if form == 0:
        return f"{_cap(subj)} {past} {obj} {pick(PLACES)}."
    if form == 1:
        return f"{_cap(subj)} {past} {obj} {pick(TIMES)}."
    if form == 2:
        return f"Did {subj} {base} {obj} {pick(PLACES)}?"
    if form == 3:
        return f"{pick(INTERJECTIONS)}, {subj} {past} {obj} {pick(TIMES)}."
    if form == 4:
        return f"Please {base} {obj} {pick(PLACES)} {pick(TIMES)}."
    return f"- {_cap(subj)} {past} {obj}. - {pick(REPLIES)}"


def make_pair(rng, idx: int, lang: str) -> SubtitlePair:
    n_sent = 1 + int(rng.choice(3, p=[0.55, 0.35, 0.10]))
    src = " ".join(_sentence(rng) for _ in range(n_sent))
    return SubtitlePair(f"desk-{idx:06d}", src, translate(src, lang), "en", lang)


def make_desk_corpus(n: int, seed: int = 0, langs=("qaa", "qab", "qac"), noise: float = 0.0) -> list[SubtitlePair]:
    """``n`` pairs; a ``noise`` fraction is misaligned or truncated so a seed filter has work to do."""
    rng = np.random.default_rng(seed)
    pairs = [make_pair(rng, i, langs[i % len(langs)]) for i in range(n)]
    if noise:
        for i in np.flatnonzero(rng.random(n) < noise):
            p = pairs[i]
            if rng.random() < 0.5:
                other = pairs[(i + 1 + int(rng.integers(n - 1))) % n]
                pairs[i] = SubtitlePair(p.id, p.source_text, translate(f"{REPLIES[i % len(REPLIES)]} {other.source_text}", p.target_lang)[:40].strip() or "x", "en", p.target_lang)
            else:
                pairs[i] = SubtitlePair(p.id, " ".join(p.source_text.split()[:3]), p.target_text, "en", p.target_lang)
    return pairs


def write_jsonl(pairs, path: str | Path, extra: Optional[dict] = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for p in pairs:
            rec = {"id": p.id, "src": p.source_text, "tgt": p.target_text, "src_lang": p.source_lang, "tgt_lang": p.target_lang}
            if extra:
                rec.update(extra)
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")
