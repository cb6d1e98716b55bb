import json
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otut.corpus import SubtitlePair, split_sentences, tokenize
from otut.desk import make_desk_corpus
from otut.encoders import reference_bundle
from otut.synthesis import (
    CorpusTooSmall,
    EditRecord,
    LabeledSample,
    SynthesisConfig,
    apply_edit,
    assemble_dataset,
    child_rng,
    make_gross,
    make_ot_subtle,
    make_ut_subtle,
    percentile_filter,
    read_samples,
    replay_edits,
    stratified_split,
    token_filter,
    write_dataset,
)


class FixedPermutation:
    """Stand-in rng whose permutation puts the chosen slots first."""

    def __init__(self, first):
        self.first = list(first)

    def permutation(self, n):
        rest = [i for i in range(n) if i not in self.first]
        return np.array(self.first + rest)


def _pair(src, pid="p", tgt="placeholder target text here"):
    return SubtitlePair(pid, src, tgt, "en", "qaa")


# -- token filter -----------------------------------------------------------

@pytest.mark.parametrize(
    "token, prev, nxt, reason",
    [
        ("##ing", None, None, "subword"),
        ("the", None, None, "stopword"),
        ("The", None, None, "stopword"),
        (",", None, None, "punctuation"),
        ("...", None, None, "punctuation"),
        ("[UNK]", None, None, "special"),
        ("ca$h", None, None, "special"),
        ("'tis", None, None, "special"),
        ("house", "house", None, "repetition"),
        ("House", None, "house", "repetition"),
        ("42", None, None, "numeral"),
        ("seven", None, None, "numeral"),
        ("2nd", None, None, "numeral"),
    ],
)
def test_token_filter_rejects(token, prev, nxt, reason):
    d = token_filter(token, prev, nxt)
    assert not d and d.reason == reason


@pytest.mark.parametrize("token", ["still", "good", "ma'am", "well-known", "Espada"])
def test_token_filter_keeps(token):
    assert token_filter(token, "it", "is")


def test_token_filter_order_subword_before_stopword():
    assert token_filter("##the").reason == "subword"


# -- edit replay against worked examples -------------------------------------

def test_replay_insertions_five():
    edits = [
        EditRecord("insert_token", 1, "still"),
        EditRecord("insert_token", 8, "fully"),
        EditRecord("insert_token", 12, "already"),
        EditRecord("insert_token", 14, "done"),
        EditRecord("insert_token", 16, "recently"),
    ]
    out = replay_edits("it is my duty to remind you of what you've got there.", edits)
    assert out == "it still is my duty to remind you fully of what you've already got done there recently."
    assert all(token_filter(e.payload) for e in edits)


def test_replay_single_insertion():
    out = replay_edits(
        "put that book away for a while to make money,", [EditRecord("insert_token", 6, "good")]
    )
    assert out == "put that book away for a good while to make money,"


def test_replay_omissions():
    out = replay_edits(
        "Please take care of Espada until this war is over.",
        [EditRecord("omit_token", 1), EditRecord("omit_token", 3)],
    )
    assert out == "Please care of until this war is over."
    out = replay_edits(
        "We were gonna stop at the Elephant Cafe.",
        [EditRecord("omit_token", 2), EditRecord("omit_token", 2), EditRecord("omit_token", 5)],
    )
    assert out == "We were at the Elephant."


def test_gross_omission_removes_chosen_sentence():
    pair = _pair("Ivan is set to pull out of this place in a week. We're moving to Antigua.")
    s = make_gross(pair, "ot", rng=FixedPermutation([1]))
    assert s.label == "OT" and s.granularity == "gross"
    assert s.pair.source_text == "Ivan is set to pull out of this place in a week."
    assert s.pair.target_text == pair.target_text
    assert replay_edits(s.original_source, s.edits) == s.pair.source_text


def test_gross_addition_at_start():
    pair = _pair("- Fair enough. - So?")
    s = make_gross(pair, "ut", "People had envisioned a monster.", rng=FixedPermutation([0]))
    assert s.label == "UT"
    assert s.pair.source_text == "People had envisioned a monster. - Fair enough. - So?"
    assert len(split_sentences(s.pair.source_text)) == 3


def test_gross_not_applicable_and_errors():
    single = _pair("Just one sentence here.")
    assert make_gross(single, "ot", rng=np.random.default_rng(0)) is None
    with pytest.raises(ValueError):
        make_gross(single, "ut", None, rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        make_gross(single, "sideways", rng=np.random.default_rng(0))


def test_apply_edit_bounds():
    with pytest.raises(IndexError):
        apply_edit("a b", EditRecord("omit_token", 2))
    with pytest.raises(IndexError):
        apply_edit("One. Two.", EditRecord("remove_sentence", 2))
    with pytest.raises(ValueError):
        EditRecord("insert_token", 0)


# -- percentile filter ------------------------------------------------------

def test_percentile_filter_examples():
    scored = [(f"c{i}", (i + 1) / 10) for i in range(10)]
    assert percentile_filter(scored, 0.4) == [f"c{i}" for i in range(6)]
    assert percentile_filter(scored, 0.0) == [c for c, _ in scored]
    assert percentile_filter([("only", 0.9)], 0.4) == ["only"]
    assert percentile_filter([], 0.4) == []


def sort_and_slice(scored, drop):
    # independent oracle: stable descending sort, slice off the head
    n_drop = int(np.floor(drop * len(scored) + 1e-9))
    order = sorted(range(len(scored)), key=lambda i: scored[i][1], reverse=True)
    order = sorted(order[:n_drop])
    keep = [i for i in range(len(scored)) if i not in set(order)]
    return [scored[i][0] for i in keep]


@settings(max_examples=300)
@given(st.lists(st.integers(0, 8), max_size=60), st.sampled_from([0.0, 0.1, 0.25, 0.4, 0.5, 0.9]))
def test_percentile_filter_matches_oracle(scores, drop):
    scored = [(i, s / 8) for i, s in enumerate(scores)]
    out = percentile_filter(scored, drop)
    assert out == sort_and_slice(scored, drop)
    assert len(out) == len(scored) - math.floor(drop * len(scored) + 1e-9)


# -- subtle generators ------------------------------------------------------

@pytest.fixture(scope="module")
def big_corpus():
    return make_desk_corpus(2400, seed=3)


@pytest.fixture(scope="module")
def big_bundle(big_corpus):
    return reference_bundle([p.source_text for p in big_corpus])


def test_ut_subtle_abandons_when_only_stopwords():
    bundle = reference_bundle(["the a an of to the of"])
    s = make_ut_subtle(_pair("Ivan is set to pull out."), bundle, SynthesisConfig(), np.random.default_rng(0))
    assert s is None


def test_ot_subtle_on_six_tokens_never_empties():
    pair = _pair("one two three four five six")
    bundle = reference_bundle(["x"])
    for seed in range(50):
        s = make_ot_subtle(pair, bundle, SynthesisConfig(), np.random.default_rng(seed))
        n = len(tokenize(s.pair.source_text))
        assert 1 <= n <= 5


def test_ot_subtle_requires_enough_tokens():
    with pytest.raises(ValueError):
        make_ot_subtle(_pair("one two three four five"), reference_bundle(["x"]), SynthesisConfig(), np.random.default_rng(0))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2399), st.integers(0, 2**31))
def test_subtle_invariants(big_corpus, big_bundle, idx, seed):
    pair = big_corpus[idx]
    cfg = SynthesisConfig()
    rng = np.random.default_rng(seed)
    n0 = len(tokenize(pair.source_text))
    ut = make_ut_subtle(pair, big_bundle, cfg, rng)
    if ut is not None:
        assert 1 <= len(tokenize(ut.pair.source_text)) - n0 <= 5
        assert ut.pair.target_text == pair.target_text
        assert replay_edits(ut.original_source, ut.edits) == ut.pair.source_text
        toks = tokenize(ut.original_source)
        for e in ut.edits:
            assert token_filter(e.payload, toks[e.position - 1] if e.position else None,
                                toks[e.position] if e.position < len(toks) else None)
            toks = toks.insert(e.position, e.payload)
    if n0 > cfg.max_token_edits:
        ot = make_ot_subtle(pair, big_bundle, cfg, rng)
        assert -5 <= len(tokenize(ot.pair.source_text)) - n0 <= -1
        assert replay_edits(ot.original_source, ot.edits) == ot.pair.source_text


def test_subtle_pick_skips_most_similar_candidates(big_corpus, big_bundle, monkeypatch):
    import otut.synthesis as syn

    seen = {}
    real = syn.percentile_filter

    def spy(scored, drop):
        out = real(scored, drop)
        seen["scores"] = [s for _, s in scored]
        seen["kept"] = out
        return out

    monkeypatch.setattr(syn, "percentile_filter", spy)
    pair = next(p for p in big_corpus if len(tokenize(p.source_text)) > 10)
    s = make_ot_subtle(pair, big_bundle, SynthesisConfig(), np.random.default_rng(1))
    scores = seen["scores"]
    assert len(scores) == 20 and len(seen["kept"]) == 12
    cutoff = sorted(scores, reverse=True)[7]
    assert s.similarity_to_original <= cutoff


# -- labelled samples -------------------------------------------------------

def test_labeled_sample_invariants():
    p = _pair("A b c d e.")
    with pytest.raises(ValueError):
        LabeledSample(p, "NE", "subtle")
    with pytest.raises(ValueError):
        LabeledSample(p, "OT", "subtle", ())
    s = LabeledSample(p, "OT", "subtle", (EditRecord("omit_token", 1),), "A x b c d e.", 0.9)
    assert LabeledSample.from_record(json.loads(json.dumps(s.to_record()))) == s


# -- assembly ---------------------------------------------------------------

@pytest.fixture(scope="module")
def thousand(big_corpus, big_bundle):
    return assemble_dataset(big_corpus, big_bundle, SynthesisConfig(seed=9), n_samples=1000)


def test_mix_for_thousand(thousand):
    samples = thousand.train + thousand.validation
    labels = Counter(s.label for s in samples)
    assert abs(labels["OT"] - 300) <= 10 and abs(labels["UT"] - 300) <= 10 and abs(labels["NE"] - 400) <= 10
    errors = [s for s in samples if s.label != "NE"]
    subtle = sum(s.granularity == "subtle" for s in errors) / len(errors)
    assert abs(subtle - 0.83) <= 0.02


def test_each_pair_used_once(thousand):
    ids = [s.pair.id for s in thousand.train + thousand.validation]
    assert len(ids) == len(set(ids))


def test_split_is_stratified(thousand):
    for label in ("NE", "OT", "UT"):
        n_train = sum(s.label == label for s in thousand.train)
        n_all = n_train + sum(s.label == label for s in thousand.validation)
        assert n_train == round(0.8 * n_all)


def test_same_seed_byte_identical(big_corpus, big_bundle, tmp_path, thousand):
    again = assemble_dataset(big_corpus, big_bundle, SynthesisConfig(seed=9), n_samples=1000, workers=3)
    write_dataset(thousand, tmp_path / "a")
    write_dataset(again, tmp_path / "b")
    for name in ("train.jsonl", "validation.jsonl", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert read_samples(tmp_path / "a" / "train.jsonl") == thousand.train


def test_different_seed_differs(big_corpus, big_bundle, thousand):
    other = assemble_dataset(big_corpus, big_bundle, SynthesisConfig(seed=10), n_samples=1000)
    assert [s.pair.id for s in other.train] != [s.pair.id for s in thousand.train]


def test_corpus_too_small_states_maximum(big_bundle):
    pairs = make_desk_corpus(60, seed=1)
    with pytest.raises(CorpusTooSmall) as exc:
        assemble_dataset(pairs, big_bundle, SynthesisConfig(), n_samples=500)
    assert exc.value.achievable <= 60
    assert str(exc.value.achievable) in str(exc.value)


def test_stratified_split_small_classes():
    p = _pair("One two three four five.")
    samples = [LabeledSample(p, "NE")] * 3 + [LabeledSample(p, "OT", "subtle", (EditRecord("omit_token", 0),))]
    train, val = stratified_split(samples, 0.8, 0)
    assert len(train) == 3 and len(val) == 1


def test_child_rng_independent_of_call_order():
    a = child_rng(1, "x", 2).integers(1 << 30, size=4)
    child_rng(1, "y", 3).integers(10)
    b = child_rng(1, "x", 2).integers(1 << 30, size=4)
    assert (a == b).all()
