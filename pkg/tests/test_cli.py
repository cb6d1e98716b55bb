import csv
import json

import numpy as np
import pytest
import torch
import yaml

from otut.cli import main
from otut.corpus import SubtitlePair
from otut.desk import make_desk_corpus, write_jsonl
from otut.models import HeadConfig, build_head, load_checkpoint, save_checkpoint

FAST = {
    "head": {"hidden_dim": 16, "cnn_channels": 8, "dropout": 0.0, "arch": "cnn"},
    "train": {"max_epochs": 3, "patience": None},
}


def _lines(path):
    return [json.loads(x) for x in path.read_text().splitlines() if x.strip()]


# -- filter -----------------------------------------------------------------

def test_filter_counts_and_logs_rejects(tmp_path, capsys):
    pairs = []
    for i in range(10):
        text = "a b c" if i in (2, 5, 8) else "one two three four five six"
        pairs.append(SubtitlePair(f"p{i}", text, text, "en", "qaa"))
    write_jsonl(pairs, tmp_path / "in.jsonl")
    assert main(["filter", str(tmp_path / "in.jsonl"), str(tmp_path / "out.jsonl")]) == 0
    assert len(_lines(tmp_path / "out.jsonl")) == 7
    rejected = _lines(tmp_path / "out.rejected.jsonl")
    assert [r["id"] for r in rejected] == ["p2", "p5", "p8"]
    assert {r["reason"] for r in rejected} == {"length"}
    manifest = json.loads((tmp_path / "out.manifest.json").read_text())
    assert (manifest["accepted"], manifest["rejected"]) == (7, 3)
    assert "accepted 7" in capsys.readouterr().out


def test_filter_empty_input(tmp_path):
    (tmp_path / "in.jsonl").write_text("")
    assert main(["filter", str(tmp_path / "in.jsonl"), str(tmp_path / "out.jsonl")]) == 0
    assert (tmp_path / "out.jsonl").read_text() == ""


def test_filter_missing_input_leaves_nothing(tmp_path, capsys):
    assert main(["filter", str(tmp_path / "nope.jsonl"), str(tmp_path / "out.jsonl")]) != 0
    assert list(tmp_path.iterdir()) == []
    assert "nope.jsonl" in capsys.readouterr().err


def test_filter_srt_pair(tmp_path):
    def srt(path, texts):
        path.write_text("\n".join(f"{i}\n00:00:0{i},000 --> 00:00:0{i},500\n{t}\n" for i, t in enumerate(texts, 1)))

    srt(tmp_path / "en.srt", ["one two three four five", "short"])
    srt(tmp_path / "xx.srt", ["one two three four five", "short"])
    argv = ["filter", str(tmp_path / "en.srt"), str(tmp_path / "out.jsonl"), "--format", "srt-pair",
            "--target-srt", str(tmp_path / "xx.srt"), "--tgt-lang", "qaa"]
    assert main(argv) == 0
    (rec,) = _lines(tmp_path / "out.jsonl")
    assert rec["tgt_lang"] == "qaa"


# -- synthesize -------------------------------------------------------------

@pytest.fixture(scope="module")
def clean_file(tmp_path_factory):
    d = tmp_path_factory.mktemp("clean")
    write_jsonl(make_desk_corpus(2300, seed=21), d / "raw.jsonl")
    assert main(["filter", str(d / "raw.jsonl"), str(d / "clean.jsonl")]) == 0
    assert len(_lines(d / "clean.jsonl")) >= 2000
    return d / "clean.jsonl"


@pytest.fixture(scope="module")
def synthesized(clean_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    assert main(["synthesize", str(clean_file), str(out / "a"), "--n-samples", "1000", "--seed", "4"]) == 0
    return out


def test_synthesize_mix(synthesized):
    recs = _lines(synthesized / "a" / "train.jsonl") + _lines(synthesized / "a" / "validation.jsonl")
    assert len(recs) == 1000
    counts = {lab: sum(r["label"] == lab for r in recs) for lab in ("NE", "OT", "UT")}
    assert abs(counts["OT"] - 300) <= 10 and abs(counts["UT"] - 300) <= 10 and abs(counts["NE"] - 400) <= 10


def test_synthesize_rerun_byte_identical(clean_file, synthesized):
    assert main(["synthesize", str(clean_file), str(synthesized / "b"), "--n-samples", "1000", "--seed", "4"]) == 0
    for name in ("train.jsonl", "validation.jsonl", "manifest.json"):
        assert (synthesized / "a" / name).read_bytes() == (synthesized / "b" / name).read_bytes()


def test_synthesize_too_many(clean_file, tmp_path, capsys):
    assert main(["synthesize", str(clean_file), str(tmp_path / "x"), "--n-samples", "100000"]) != 0
    assert "achievable maximum" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


# -- train ------------------------------------------------------------------

@pytest.fixture(scope="module")
def toy_dir(synthesized):
    d = synthesized / "toy"
    d.mkdir()
    train = (synthesized / "a" / "train.jsonl").read_text().splitlines()[:64]
    val = (synthesized / "a" / "validation.jsonl").read_text().splitlines()[:32]
    (d / "train.jsonl").write_text("\n".join(train) + "\n")
    (d / "validation.jsonl").write_text("\n".join(val) + "\n")
    return d


@pytest.fixture(scope="module")
def trained(toy_dir, tmp_path_factory):
    d = tmp_path_factory.mktemp("ckpt")
    (d / "cfg.yaml").write_text(yaml.safe_dump(FAST))
    argv = ["train", str(toy_dir), str(d / "m.npz"), "--config", str(d / "cfg.yaml"), "--arch", "gru_cnn"]
    assert main(argv) == 0
    return d


def test_train_writes_checkpoint_and_history(trained):
    hist = json.loads((trained / "m.history.json").read_text())
    assert len(hist["train_loss"]) == 3
    best = np.minimum.accumulate(hist["train_loss"])
    assert all(b2 <= b1 for b1, b2 in zip(best, best[1:]))
    manifest = json.loads((trained / "m.manifest.json").read_text())
    assert manifest["arch"] == "gru_cnn"
    assert load_checkpoint(trained / "m.npz").cfg.arch == "gru_cnn"


def test_train_invalid_arch(toy_dir, tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", str(toy_dir), str(tmp_path / "m.npz"), "--arch", "lstm"])
    assert exc.value.code != 0
    err = capsys.readouterr().err
    assert "hybrid" in err and "weighted_gru" in err


# -- evaluate ---------------------------------------------------------------

def _eval_set(tmp_path, with_labels):
    pairs = make_desk_corpus(12, seed=5, langs=("qaa", "qab"))
    labels = ["NE", "OT", "UT"] * 4
    path = tmp_path / "eval.jsonl"
    with open(path, "w") as f:
        for p, lab in zip(pairs, labels):
            rec = p.to_record()
            if with_labels:
                # qab carries only NE gold, so its error recall is n/a
                rec["label"] = lab if p.target_lang == "qaa" else "NE"
            f.write(json.dumps(rec) + "\n")
    return pairs, labels, path


def test_evaluate_prelabelled(trained, tmp_path, capsys):
    pairs, _, path = _eval_set(tmp_path, True)
    out = tmp_path / "rep"
    argv = ["evaluate", str(trained / "m.npz"), str(path), "--out-dir", str(out), "--config", str(trained / "cfg.yaml")]
    assert main(argv) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["pooled"]["lang"] == "all"
    assert report["pooled"]["n_ne"] + report["pooled"]["n_ot"] + report["pooled"]["n_ut"] == 12
    rows = {r["lang"]: r for r in report["languages"]}
    assert set(rows) == {"qaa", "qab"}
    assert rows["qab"]["error_recall"] is None
    assert "n/a" in (out / "report.txt").read_text()
    assert len(_lines(out / "predictions.jsonl")) == 12


def test_evaluate_with_annotations(trained, tmp_path):
    pairs, labels, path = _eval_set(tmp_path, False)
    with open(tmp_path / "ann.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["pair_id", "annotator_id", "mark"])
        for i, (p, lab) in enumerate(zip(pairs, labels)):
            marks = [lab] * 3 if i % 4 else [lab, lab, "abstain"]
            for j, m in enumerate(marks):
                w.writerow([p.id, f"a{j}", "" if m == "abstain" else m])
    out = tmp_path / "rep"
    argv = ["evaluate", str(trained / "m.npz"), str(path), "--annotations", str(tmp_path / "ann.csv"),
            "--out-dir", str(out)]
    assert main(argv) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["collation"]["excluded"] == {"abstention": 3}
    assert manifest["n_scored"] == 9


def test_evaluate_refuses_other_encoder(trained, tmp_path, capsys):
    _, _, path = _eval_set(tmp_path, True)
    (tmp_path / "other.yaml").write_text(yaml.safe_dump({"encoders": {"seed": 9}}))
    argv = ["evaluate", str(trained / "m.npz"), str(path), "--out-dir", str(tmp_path / "r"),
            "--config", str(tmp_path / "other.yaml")]
    assert main(argv) == 1
    assert "fingerprint" in capsys.readouterr().err


# -- flag -------------------------------------------------------------------

def test_flag_lines_and_capacity_error(trained, tmp_path):
    pairs = make_desk_corpus(4, seed=2)
    pairs.append(SubtitlePair("huge", " ".join(["word"] * 300), " ".join(["mot"] * 300)))
    write_jsonl(pairs, tmp_path / "in.jsonl")
    assert main(["flag", str(trained / "m.npz"), str(tmp_path / "in.jsonl"), str(tmp_path / "out.jsonl")]) == 0
    lines = _lines(tmp_path / "out.jsonl")
    assert [x["id"] for x in lines] == [p.id for p in pairs]
    assert "capacity" in lines[-1]["error"]
    for x in lines[:-1]:
        assert x["label"] in ("NE", "OT", "UT")
        assert abs(sum(x["probs"]) - 1) < 1e-5


def test_flag_constant_model_labels_everything_ne(trained, tmp_path):
    model = load_checkpoint(trained / "m.npz")
    with torch.no_grad():
        model.head.out.weight.zero_()
        model.head.out.bias.copy_(torch.tensor([5.0, 0.0, 0.0]))
    save_checkpoint(model, tmp_path / "ne.npz")
    write_jsonl(make_desk_corpus(6, seed=8), tmp_path / "in.jsonl")
    assert main(["flag", str(tmp_path / "ne.npz"), str(tmp_path / "in.jsonl"), str(tmp_path / "out.jsonl")]) == 0
    assert {x["label"] for x in _lines(tmp_path / "out.jsonl")} == {"NE"}


def test_flag_untrained_checkpoint_fails(tmp_path):
    save_checkpoint(build_head(HeadConfig(arch="cnn"), 64), tmp_path / "raw.npz")
    write_jsonl(make_desk_corpus(2, seed=8), tmp_path / "in.jsonl")
    assert main(["flag", str(tmp_path / "raw.npz"), str(tmp_path / "in.jsonl"), str(tmp_path / "out.jsonl")]) == 1
    assert not (tmp_path / "out.jsonl").exists()


# -- collate ----------------------------------------------------------------

def test_collate_command(tmp_path, capsys):
    with open(tmp_path / "ann.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["pair_id", "annotator_id", "mark"])
        for j in range(3):
            w.writerow(["p1", f"a{j}", "NE"])
            w.writerow(["p2", f"a{j}", "OT" if j else "NE"])
    assert main(["collate", str(tmp_path / "ann.csv"), str(tmp_path / "gold.jsonl")]) == 0
    assert _lines(tmp_path / "gold.jsonl") == [{"id": "p1", "label": "NE"}]
    assert _lines(tmp_path / "gold.excluded.jsonl") == [{"id": "p2", "reason": "disagreement"}]
    assert "unanimous 1" in capsys.readouterr().out


def test_unknown_config_key(tmp_path, capsys):
    (tmp_path / "bad.yaml").write_text("head:\n  colour: red\n")
    (tmp_path / "in.jsonl").write_text("")
    argv = ["filter", str(tmp_path / "in.jsonl"), str(tmp_path / "o.jsonl"), "--config", str(tmp_path / "bad.yaml")]
    assert main(argv) == 1
    assert "colour" in capsys.readouterr().err
