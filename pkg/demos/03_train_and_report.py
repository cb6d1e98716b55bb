"""Small end-to-end run in memory: dataset, one head, per-language report."""

from collections import Counter

from otut.corpus import SeedFilterConfig, seed_filter
from otut.desk import make_desk_corpus
from otut.encoders import reference_bundle
from otut.evaluation import per_language_report
from otut.models import HeadConfig, TrainConfig, build_head, predict_batch, train
from otut.synthesis import SynthesisConfig, assemble_dataset

raw = make_desk_corpus(3000, seed=3)
xsim = reference_bundle().xsim
clean = [p for p in raw if seed_filter(p, SeedFilterConfig(), xsim)]
print(len(clean), "of", len(raw), "pairs pass the seed filter")

bundle = reference_bundle([p.source_text for p in clean])
ds = assemble_dataset(clean, bundle, SynthesisConfig(seed=3), n_samples=1200)
print("train", Counter(s.label for s in ds.train))
print("validation", Counter(s.label for s in ds.validation))

head = build_head(HeadConfig(arch="cnn"), bundle.contextual.dim, seed=0)
model, hist = train(head, ds.train, ds.validation, bundle, TrainConfig(max_epochs=5, seed=0))
for e, (tl, va) in enumerate(zip(hist.train_loss, hist.val_accuracy)):
    print(f"epoch {e}: train loss {tl:.3f}  val acc {va:.3f}")

preds = predict_batch(model, [s.pair for s in ds.validation], bundle)
report = per_language_report(
    [s.pair.target_lang for s in ds.validation],
    [s.label for s in ds.validation],
    [lab.name for lab, _ in preds],
)
print(report.to_text())
