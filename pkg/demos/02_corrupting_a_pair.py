"""Make one sample of each kind from a single pair and replay its edits."""

import numpy as np

from otut.corpus import SubtitlePair
from otut.desk import make_desk_corpus
from otut.encoders import reference_bundle
from otut.synthesis import SynthesisConfig, make_gross, make_ot_subtle, make_ut_subtle, replay_edits

corpus = make_desk_corpus(400, seed=2)
bundle = reference_bundle([p.source_text for p in corpus])  # mask filler learns corpus frequencies
cfg = SynthesisConfig()
rng = np.random.default_rng(0)

pair = SubtitlePair(
    "demo",
    "Ivan is set to pull out of this place in a week. We're moving to Antigua.",
    "Ivan ist dabei, diesen Ort in einer Woche zu verlassen. Wir ziehen nach Antigua.",
    "en",
    "de",
)

samples = [
    make_ut_subtle(pair, bundle, cfg, rng),
    make_ot_subtle(pair, bundle, cfg, rng),
    make_gross(pair, "ot", rng=rng, bundle=bundle),
    make_gross(pair, "ut", "People had envisioned a monster.", rng, bundle),
]
for s in samples:
    print(f"{s.label} {s.granularity:6} sim={s.similarity_to_original:.3f}")
    print("   ", s.pair.source_text)
    for e in s.edits:
        print("    edit:", e.kind, e.position, e.payload)
    # the recorded edits rebuild the corrupted source exactly
    assert replay_edits(s.original_source, s.edits) == s.pair.source_text

# the target side is never touched
assert all(s.pair.target_text == pair.target_text for s in samples)
