"""Metrics, unanimous-agreement collation and per-language reports."""

from __future__ import annotations

import csv
import json
import logging
import re
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

LABELS = ("NE", "OT", "UT")
ERROR_CLASSES = (1, 2)
ABSTAIN = "abstain"


def as_indices(labels: Iterable) -> np.ndarray:
    """Accept label names ("NE"/"OT"/"UT") or indices 0-2."""
    out = []
    for lab in labels:
        if isinstance(lab, str):
            try:
                out.append(LABELS.index(lab))
            except ValueError:
                raise ValueError(f"unknown label {lab!r}") from None
        else:
            v = int(lab)
            if v not in (0, 1, 2):
                raise ValueError(f"label index {v} outside 0..2")
            out.append(v)
    return np.asarray(out, dtype=np.int64)


def _pair(gold, pred) -> tuple[np.ndarray, np.ndarray]:
    g, p = as_indices(gold), as_indices(pred)
    if len(g) != len(p):
        raise ValueError(f"length mismatch: {len(g)} gold vs {len(p)} predicted labels")
    if len(g) == 0:
        raise ValueError("no labels to score")
    return g, p


def confusion_matrix(gold, pred) -> np.ndarray:
    """3x3 counts, rows gold, columns predicted."""
    g, p = _pair(gold, pred)
    return np.bincount(g * 3 + p, minlength=9).reshape(3, 3)


def accuracy(gold, pred) -> float:
    g, p = _pair(gold, pred)
    return float(np.mean(g == p))


def per_class_f1(cm: np.ndarray) -> np.ndarray:
    tp = np.diag(cm).astype(float)
    denom = cm.sum(0) + cm.sum(1)  # 2TP + FP + FN
    return np.divide(2 * tp, denom, out=np.zeros(3), where=denom > 0)


def weighted_f1(gold, pred) -> float:
    """Per-class F1 averaged with weights proportional to gold support."""
    cm = confusion_matrix(gold, pred)
    support = cm.sum(1)
    return float(per_class_f1(cm) @ support / support.sum())


def error_recall(gold, pred) -> float:
    """Share of gold OT/UT pairs predicted as either error class."""
    g, p = _pair(gold, pred)
    errors = g != 0
    if not errors.any():
        raise ValueError("error recall is undefined without gold OT/UT labels")
    return float(np.mean(p[errors] != 0))


# ---------------------------------------------------------------------------
# Collation
# ---------------------------------------------------------------------------

class DuplicateAnnotation(ValueError):
    pass


@dataclass(frozen=True)
class AnnotationRecord:
    pair_id: str
    annotator_id: str
    mark: str  # NE, OT, UT or "abstain"

    def __post_init__(self):
        mark = self.mark or ABSTAIN
        if mark not in LABELS and mark != ABSTAIN:
            raise ValueError(f"invalid mark {self.mark!r} for pair {self.pair_id}")
        object.__setattr__(self, "mark", mark)


@dataclass
class Collation:
    gold: dict = field(default_factory=dict)  # pair_id -> label, first-seen order
    excluded: dict = field(default_factory=dict)  # pair_id -> disagreement | abstention | incomplete

    def counts(self) -> dict:
        c = Counter(self.gold.values())
        return {lab: c.get(lab, 0) for lab in LABELS}

    def exclusion_counts(self) -> dict:
        return dict(sorted(Counter(self.excluded.values()).items()))


def collate_unanimous(records: Iterable[AnnotationRecord], annotators_required: int = 3) -> Collation:
    """Keep a pair only if every required annotator marked it, identically, without abstaining."""
    marks: dict[str, dict[str, str]] = {}
    for rec in records:
        per_pair = marks.setdefault(rec.pair_id, {})
        if rec.annotator_id in per_pair:
            raise DuplicateAnnotation(f"annotator {rec.annotator_id} marked pair {rec.pair_id} twice")
        per_pair[rec.annotator_id] = rec.mark
    out = Collation()
    for pair_id, by_annotator in marks.items():
        values = list(by_annotator.values())
        if len(values) < annotators_required:
            out.excluded[pair_id] = "incomplete"
        elif ABSTAIN in values:
            out.excluded[pair_id] = "abstention"
        elif len(set(values)) > 1:
            out.excluded[pair_id] = "disagreement"
        else:
            out.gold[pair_id] = values[0]
    return out


def read_annotations_csv(path: str | Path) -> list[AnnotationRecord]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        missing = {"pair_id", "annotator_id", "mark"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        return [AnnotationRecord(r["pair_id"], r["annotator_id"], (r["mark"] or "").strip()) for r in reader]


def write_annotations_csv(records: Iterable[AnnotationRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["pair_id", "annotator_id", "mark"])
        for r in records:
            w.writerow([r.pair_id, r.annotator_id, "" if r.mark == ABSTAIN else r.mark])


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

_LANG_RE = re.compile(r"^[a-z]{2,3}(-[A-Za-z0-9]{2,8})*$")


@dataclass
class LanguageRow:
    lang: str
    n_ne: int
    n_ut: int
    n_ot: int
    accuracy: float
    f1: float
    error_recall: Optional[float]  # None when the row has no gold errors

    @property
    def total(self) -> int:
        return self.n_ne + self.n_ut + self.n_ot


@dataclass
class EvalReport:
    rows: list
    pooled: LanguageRow

    def to_dict(self) -> dict:
        return {"languages": [asdict(r) for r in self.rows], "pooled": asdict(self.pooled)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        """Aligned columns: language, (#NE, #UT, #OT), accuracy, F1, error recall."""
        head = ("Target", "(#NE, #UT, #OT)", "Accuracy", "F1", "Error Recall")
        lines = []
        for r in [*self.rows, self.pooled]:
            er = "n/a" if r.error_recall is None else f"{r.error_recall:.4f}"
            lines.append((r.lang, f"({r.n_ne}, {r.n_ut}, {r.n_ot})", f"{r.accuracy:.4f}", f"{r.f1:.4f}", er))
        widths = [max(len(x[i]) for x in [head, *lines]) for i in range(5)]
        fmt = lambda row: "  ".join(c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths)))  # noqa: E731
        rule = "-" * len(fmt(head))
        return "\n".join([fmt(head), rule, *(fmt(x) for x in lines[:-1]), rule, fmt(lines[-1])]) + "\n"


def _row(lang: str, g: np.ndarray, p: np.ndarray) -> LanguageRow:
    c = np.bincount(g, minlength=3)
    er = error_recall(g, p) if (g != 0).any() else None
    return LanguageRow(lang, int(c[0]), int(c[2]), int(c[1]), accuracy(g, p), weighted_f1(g, p), er)


def per_language_report(langs: Sequence[Optional[str]], gold, pred) -> EvalReport:
    """One row per target language (sorted by code) plus a pooled row."""
    g, p = _pair(gold, pred)
    if len(langs) != len(g):
        raise ValueError("need one language tag per label")
    groups: dict[str, list[int]] = defaultdict(list)
    for i, lang in enumerate(langs):
        if not lang or not _LANG_RE.match(lang):
            logger.warning("unknown language tag %r grouped under 'other'", lang)
            lang = "other"
        groups[lang].append(i)
    rows = [_row(lang, g[idx], p[idx]) for lang, idx in sorted(groups.items())]
    return EvalReport(rows, _row("all", g, p))
