"""Tokens, sentences and the seed filter on a handful of pairs."""

from otut.corpus import SeedFilterConfig, SubtitlePair, seed_filter, split_sentences, tokenize
from otut.desk import make_desk_corpus
from otut.encoders import reference_bundle

seq = tokenize("Hello, world. We were gonna stop at the Elephant Cafe.")
print(seq.tokens)
print(len(seq), "tokens")

# dialogue dashes open a new sentence
print(split_sentences("- Fair enough. - So?"))

# toy corpus: English subtitles and spelling-shifted "translations"
pairs = make_desk_corpus(8, seed=1, noise=0.3)
xsim = reference_bundle().xsim
for p in pairs:
    d = seed_filter(p, SeedFilterConfig(), xsim)
    sim = "" if d.similarity is None else f"{d.similarity:.3f}"
    print(f"{p.id:10} {p.target_lang} {'keep' if d else d.reason:10} {sim:6} {p.target_text[:50]}")

# too short on the source side
short = SubtitlePair("s", "Not now.", "Nicht jetzt, bitte, danke schön.")
print(seed_filter(short, SeedFilterConfig(), xsim))
