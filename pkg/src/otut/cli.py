"""``otut`` command line: filter -> synthesize -> train -> evaluate -> flag, plus collate.

Exit codes: 0 success, 1 fatal error, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
from contextlib import contextmanager
from dataclasses import asdict, replace
from pathlib import Path

from . import __version__
from .config import PipelineConfig

logger = logging.getLogger("otut")


class Fatal(Exception):
    pass


def _sha(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()[:16]


def _manifest(command: str, cfg: PipelineConfig, inputs: dict, **extra) -> dict:
    return {
        "command": command,
        "tool": "otut",
        "tool_version": __version__,
        "config_hash": cfg.hash(),
        "seed": cfg.synthesis.seed,
        "inputs": {k: {"name": Path(v).name, "sha256": _sha(Path(v))} for k, v in inputs.items() if v},
        **extra,
    }


def _dump_json(obj, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(obj, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")


@contextmanager
def _atomic(path: Path):
    """Write to a temp file beside ``path``; rename only if the block succeeds."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            yield f
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _path(arg, cfg: PipelineConfig, key: str, what: str) -> Path:
    value = arg or cfg.paths.get(key)
    if not value:
        raise Fatal(f"no {what} given (argument or paths.{key} in config)")
    return Path(value)


def _bundle(cfg: PipelineConfig, texts=()):
    from .encoders import build_bundle

    return build_bundle(cfg.encoders, texts)


def _load_pairs(path: Path):
    from .corpus import load_corpus

    errors: list = []
    pairs = list(load_corpus(path, "jsonl", errors))
    for e in errors:
        logger.warning("skipped record: %s", e)
    return pairs, errors


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_filter(args, cfg: PipelineConfig) -> int:
    from .corpus import load_corpus, seed_filter

    src = _path(args.input, cfg, "corpus", "input corpus")
    out = _path(args.output, cfg, "filtered", "output path")
    if args.format == "srt-pair":
        if not args.target_srt:
            raise Fatal("--format srt-pair needs --target-srt")
        source = (src, Path(args.target_srt))
    else:
        source = src
    errors: list = []
    stream = load_corpus(source, args.format, errors, tgt_lang=args.tgt_lang)
    bundle = _bundle(cfg)
    accepted = rejected = 0
    reject_path = out.with_name(out.stem + ".rejected.jsonl")
    with _atomic(out) as fa, _atomic(reject_path) as fr:
        for pair in stream:
            decision = seed_filter(pair, cfg.seed_filter, bundle.xsim)
            if decision:
                fa.write(json.dumps(pair.to_record(), ensure_ascii=False) + "\n")
                accepted += 1
            else:
                fr.write(json.dumps({"id": pair.id, "reason": decision.reason, "detail": decision.detail}, ensure_ascii=False) + "\n")
                rejected += 1
        for e in errors:
            fr.write(json.dumps({"id": None, "reason": "malformed", "detail": str(e)}, ensure_ascii=False) + "\n")
    _dump_json(
        _manifest("filter", cfg, {"corpus": src}, accepted=accepted, rejected=rejected, malformed=len(errors),
                  seed_filter=asdict(cfg.seed_filter)),
        out.with_name(out.stem + ".manifest.json"),
    )
    print(f"accepted {accepted}, rejected {rejected}, malformed {len(errors)}")
    return 0


def cmd_synthesize(args, cfg: PipelineConfig) -> int:
    from .synthesis import CorpusTooSmall, assemble_dataset, write_dataset

    src = _path(args.input, cfg, "filtered", "filtered corpus")
    out_dir = _path(args.out_dir, cfg, "dataset", "output directory")
    pairs, _ = _load_pairs(src)
    bundle = _bundle(cfg, (p.source_text for p in pairs))
    try:
        ds = assemble_dataset(pairs, bundle, cfg.synthesis, n_samples=args.n_samples, workers=args.workers)
    except CorpusTooSmall as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(f"achievable maximum: {exc.achievable}", file=sys.stderr)
        return 1
    ds.manifest.update(_manifest("synthesize", cfg, {"corpus": src}))
    write_dataset(ds, out_dir)
    print(f"wrote {len(ds.train)} train / {len(ds.validation)} validation samples to {out_dir}")
    return 0


def cmd_train(args, cfg: PipelineConfig) -> int:
    from .models import build_head, save_checkpoint, train
    from .synthesis import read_samples

    data_dir = _path(args.dataset_dir, cfg, "dataset", "dataset directory")
    ckpt = _path(args.checkpoint, cfg, "checkpoint", "checkpoint path")
    head_cfg = replace(cfg.head, arch=args.arch) if args.arch else cfg.head
    train_set = read_samples(data_dir / "train.jsonl")
    val_set = read_samples(data_dir / "validation.jsonl")
    bundle = _bundle(cfg)
    model = build_head(head_cfg, bundle.contextual.dim, seed=cfg.train.seed)
    model, hist = train(model, train_set, val_set, bundle, cfg.train)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, ckpt, {"config_hash": cfg.hash()})
    _dump_json(asdict(hist), ckpt.with_name(ckpt.stem + ".history.json"))
    _dump_json(
        _manifest(
            "train", cfg,
            {"train": data_dir / "train.jsonl", "validation": data_dir / "validation.jsonl"},
            arch=head_cfg.arch, head=asdict(head_cfg), encoder_fingerprint=bundle.fingerprint(),
            epochs=hist.epochs, best_epoch=hist.best_epoch,
            best_val_accuracy=hist.val_accuracy[hist.best_epoch],
        ),
        ckpt.with_name(ckpt.stem + ".manifest.json"),
    )
    print(f"{head_cfg.arch}: best validation accuracy {hist.val_accuracy[hist.best_epoch]:.4f} at epoch {hist.best_epoch}")
    return 0


def cmd_evaluate(args, cfg: PipelineConfig) -> int:
    from .evaluation import collate_unanimous, per_language_report, read_annotations_csv
    from .models import load_checkpoint, predict_batch

    ckpt = _path(args.checkpoint, cfg, "checkpoint", "checkpoint")
    eval_path = _path(args.eval_path, cfg, "eval", "evaluation set")
    out_dir = _path(args.out_dir, cfg, "reports", "report directory")
    bundle = _bundle(cfg)
    model = load_checkpoint(ckpt, bundle)

    with open(eval_path, encoding="utf-8") as f:
        records = [json.loads(line) for line in f if line.strip()]
    pairs, _ = _load_pairs(eval_path)
    by_id = {p.id: p for p in pairs}
    if args.annotations:
        collation = collate_unanimous(read_annotations_csv(args.annotations), args.annotators)
        gold = {pid: lab for pid, lab in collation.gold.items() if pid in by_id}
        missing = len(collation.gold) - len(gold)
        if missing:
            logger.warning("%d collated pairs are absent from the evaluation set", missing)
    else:
        gold = {str(r.get("id")): r["label"] for r in records if "label" in r}
        collation = None
    if not gold:
        raise Fatal("no gold labels: pass --annotations or an evaluation set with a label field")

    ids = [pid for pid in by_id if pid in gold]
    preds = predict_batch(model, [by_id[i] for i in ids], bundle)
    labels = [lab.name for lab, _ in preds]
    report = per_language_report([by_id[i].target_lang for i in ids], [gold[i] for i in ids], labels)

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out_dir / "report.txt").write_text(report.to_text(), encoding="utf-8")
    with open(out_dir / "predictions.jsonl", "w", encoding="utf-8", newline="\n") as f:
        for pid, (lab, probs) in zip(ids, preds):
            f.write(json.dumps({"id": pid, "label": lab.name, "probs": [round(float(x), 6) for x in probs]}) + "\n")
    extra = {"n_scored": len(ids), "checkpoint_sha256": _sha(ckpt), "encoder_fingerprint": bundle.fingerprint()}
    if collation is not None:
        extra["collation"] = {"gold": collation.counts(), "excluded": collation.exclusion_counts()}
    _dump_json(_manifest("evaluate", cfg, {"eval": eval_path, "annotations": args.annotations}, **extra), out_dir / "manifest.json")
    print(report.to_text(), end="")
    return 0


def cmd_flag(args, cfg: PipelineConfig) -> int:
    from .corpus import load_corpus
    from .models import encode_pair, load_checkpoint, predict_batch

    ckpt = _path(args.checkpoint, cfg, "checkpoint", "checkpoint")
    src = _path(args.input, cfg, "flag_input", "input pairs")
    out = _path(args.output, cfg, "flags", "output path")
    bundle = _bundle(cfg)
    model = load_checkpoint(ckpt, bundle)
    errors: list = []
    n_ok = n_err = 0
    with _atomic(out) as f:
        for pair in load_corpus(src, "jsonl", errors):
            try:
                mat = encode_pair(pair, bundle)
            except ValueError as exc:  # capacity and empty-input errors stay per record
                f.write(json.dumps({"id": pair.id, "error": str(exc)}, ensure_ascii=False) + "\n")
                n_err += 1
                continue
            (lab, probs), = predict_batch(model, [pair], bundle, encoded=[mat])
            f.write(json.dumps({"id": pair.id, "label": lab.name, "probs": [round(float(x), 6) for x in probs]}) + "\n")
            n_ok += 1
        for e in errors:
            f.write(json.dumps({"id": None, "error": str(e)}, ensure_ascii=False) + "\n")
    _dump_json(
        _manifest("flag", cfg, {"input": src}, checkpoint_sha256=_sha(ckpt), flagged=n_ok, errors=n_err + len(errors)),
        out.with_name(out.stem + ".manifest.json"),
    )
    print(f"labelled {n_ok} pairs, {n_err + len(errors)} errors")
    return 0


def cmd_collate(args, cfg: PipelineConfig) -> int:
    from .evaluation import collate_unanimous, read_annotations_csv

    src = Path(args.annotations)
    if not src.is_file():
        raise Fatal(f"cannot read annotations {src}")
    out = Path(args.output)
    col = collate_unanimous(read_annotations_csv(src), args.annotators)
    with _atomic(out) as f:
        for pid, lab in col.gold.items():
            f.write(json.dumps({"id": pid, "label": lab}) + "\n")
    with _atomic(out.with_name(out.stem + ".excluded.jsonl")) as f:
        for pid, reason in col.excluded.items():
            f.write(json.dumps({"id": pid, "reason": reason}) + "\n")
    _dump_json(
        _manifest("collate", cfg, {"annotations": src}, gold=col.counts(), excluded=col.exclusion_counts()),
        out.with_name(out.stem + ".manifest.json"),
    )
    c = col.counts()
    print(f"unanimous {len(col.gold)} (NE {c['NE']}, OT {c['OT']}, UT {c['UT']}); excluded {len(col.excluded)}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    from .models import ARCHITECTURES

    # SUPPRESS so a flag given before the subcommand is not reset by the subparser
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="YAML/JSON pipeline config")
    common.add_argument("--seed", type=int, help="override synthesis and training seeds")
    common.add_argument("--workers", type=int, help="parallel synthesis lanes (default 1)")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    p = argparse.ArgumentParser(prog="otut", description=__doc__.splitlines()[0], parents=[common])
    p.add_argument("--version", action="version", version=f"otut {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("filter", parents=[common], help="apply seed-quality filters to a corpus")
    s.add_argument("input", nargs="?")
    s.add_argument("output", nargs="?")
    s.add_argument("--format", default="jsonl", choices=["jsonl", "srt-pair"])
    s.add_argument("--target-srt", help="target .srt when --format srt-pair")
    s.add_argument("--tgt-lang", default="und", help="target language for srt-pair input")
    s.set_defaults(func=cmd_filter)

    s = sub.add_parser("synthesize", parents=[common], help="build the OT/UT/NE train/validation set")
    s.add_argument("input", nargs="?")
    s.add_argument("out_dir", nargs="?")
    s.add_argument("--n-samples", type=int)
    s.set_defaults(func=cmd_synthesize)

    s = sub.add_parser("train", parents=[common], help="train a classifier head")
    s.add_argument("dataset_dir", nargs="?")
    s.add_argument("checkpoint", nargs="?")
    s.add_argument("--arch", choices=ARCHITECTURES)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", parents=[common], help="score a checkpoint, per-language report")
    s.add_argument("checkpoint", nargs="?")
    s.add_argument("eval_path", nargs="?")
    s.add_argument("--annotations", help="annotator CSV (pair_id, annotator_id, mark)")
    s.add_argument("--annotators", type=int, default=3)
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("flag", parents=[common], help="label pairs as NE/OT/UT")
    s.add_argument("checkpoint", nargs="?")
    s.add_argument("input", nargs="?")
    s.add_argument("output", nargs="?")
    s.set_defaults(func=cmd_flag)

    s = sub.add_parser("collate", parents=[common], help="unanimous-agreement gold labels from annotations")
    s.add_argument("annotations")
    s.add_argument("output")
    s.add_argument("--annotators", type=int, default=3)
    s.set_defaults(func=cmd_collate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("config", None), ("seed", None), ("workers", 1), ("log_level", "WARNING")):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = PipelineConfig.load(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        return args.func(args, cfg)
    except Exception as exc:  # every fatal condition maps to exit code 1
        logger.debug("fatal error", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
