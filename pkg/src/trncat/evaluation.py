"""Micro/macro F1 over a fixed label space."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

from .corpus_io import Corpus, CorpusError, LabelSpace

MACRO_NOTE = "macro-F1 averages every label-space class; unsupported classes score 0"


@dataclass(frozen=True)
class ClassScore:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class EvalReport:
    micro_f1: float | None
    macro_f1: float | None
    per_class: dict[str, ClassScore] = field(default_factory=dict)
    n_evaluated: int = 0
    n_skipped: int = 0

    @property
    def undefined(self) -> bool:
        return self.n_evaluated == 0

    def to_dict(self) -> dict:
        return {
            "micro_f1": self.micro_f1,
            "macro_f1": self.macro_f1,
            "undefined": self.undefined,
            "n_evaluated": self.n_evaluated,
            "n_skipped": self.n_skipped,
            "note": MACRO_NOTE,
            "per_class": {
                lab: {"precision": s.precision, "recall": s.recall, "f1": s.f1,
                      "support": s.support}
                for lab, s in self.per_class.items()
            },
        }


def _ratio(a: int, b: int) -> float:
    return a / b if b else 0.0


def evaluate(predictions: Mapping[str, str], gold: Corpus, labels: LabelSpace) -> EvalReport:
    """Score ``predictions`` (doc id -> label id) against gold labels.

    Predicted documents without a gold label are skipped and counted.
    """
    known = set(labels.ids)
    tp = {lab: 0 for lab in labels.ids}
    fp = dict(tp)
    fn = dict(tp)
    support = dict(tp)
    n_eval = n_skip = correct = 0
    for doc_id, pred in predictions.items():
        if doc_id not in gold:
            raise CorpusError(f"prediction for unknown document {doc_id!r}")
        if pred not in known:
            raise CorpusError(f"predicted label {pred!r} not in label space")
        truth = gold[doc_id].gold_label
        if truth is None:
            n_skip += 1
            continue
        if truth not in known:
            raise CorpusError(f"gold label {truth!r} of {doc_id!r} not in label space")
        n_eval += 1
        support[truth] += 1
        if pred == truth:
            correct += 1
            tp[truth] += 1
        else:
            fp[pred] += 1
            fn[truth] += 1
    if n_eval == 0:
        return EvalReport(None, None, {}, 0, n_skip)
    per_class = {}
    for lab in labels.ids:
        p = _ratio(tp[lab], tp[lab] + fp[lab])
        r = _ratio(tp[lab], tp[lab] + fn[lab])
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        per_class[lab] = ClassScore(p, r, f1, support[lab])
    macro = sum(s.f1 for s in per_class.values()) / len(per_class)
    return EvalReport(correct / n_eval, macro, per_class, n_eval, n_skip)
