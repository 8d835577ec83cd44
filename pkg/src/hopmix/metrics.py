"""Evaluation metrics: Hits@1, easy/strict accuracy, EM/F1."""
from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

from .errors import ValidationError
from .labels import normalize_answer


@dataclass
class MetricReport:
    n: int = 0
    hits_at_1: float | None = None
    evidence_coverage: float | None = None
    em: float | None = None
    f1: float | None = None
    easy_acc: float | None = None
    strict_acc: float | None = None
    throughput_qps: float | None = None

    def to_json(self) -> dict:
        return asdict(self)


def hits_at_1(predictions: Mapping, gold: Mapping) -> float:
    """Fraction of queries whose top-ranked sentence is one of the gold sentences.

    ``predictions`` maps query id to ``(para, sent)`` (or ``None``); ``gold``
    maps query id to a collection of ``(para, sent)``.
    """
    if set(predictions) != set(gold):
        missing = set(gold) ^ set(predictions)
        raise ValidationError(f"prediction/gold ids differ: {sorted(missing)[:5]}")
    if not gold:
        raise ValidationError("no queries to score")
    hit = sum(1 for qid, top in predictions.items()
              if top is not None and tuple(top) in {tuple(g) for g in gold[qid]})
    return hit / len(gold)


def strict_accuracy(class_preds: Sequence, class_gold: Sequence,
                    retrieved_sets: Sequence, evidence_sets: Sequence) -> tuple[float, float]:
    """``easy`` = class accuracy; ``strict`` also requires every evidence item to be retrieved."""
    n = len(class_gold)
    if not (len(class_preds) == len(retrieved_sets) == len(evidence_sets) == n):
        raise ValidationError("class predictions, gold, retrieved and evidence lists differ in length")
    if n == 0:
        raise ValidationError("no examples")
    easy = strict = 0
    for pred, gold, got, need in zip(class_preds, class_gold, retrieved_sets, evidence_sets):
        if pred == gold:
            easy += 1
            if {tuple(x) for x in need} <= {tuple(x) for x in got}:
                strict += 1
    return easy / n, strict / n


def _f1(pred_toks, gold_toks) -> float:
    if not pred_toks or not gold_toks:
        return float(pred_toks == gold_toks)
    common = sum((Counter(pred_toks) & Counter(gold_toks)).values())
    if common == 0:
        return 0.0
    precision = common / len(pred_toks)
    recall = common / len(gold_toks)
    return 2 * precision * recall / (precision + recall)


def em_f1(pred_text: str, gold_texts: Sequence[str]) -> tuple[float, float]:
    """Normalized exact match and token F1, each maximized over the gold answers."""
    if not gold_texts:
        raise ValidationError("need at least one gold answer")
    pred = normalize_answer(pred_text)
    em = max(float(pred == normalize_answer(g)) for g in gold_texts)
    f1 = max(_f1(pred.split(), normalize_answer(g).split()) for g in gold_texts)
    return em, f1


def evaluate(predictions: Sequence[dict], gold: Sequence, docs: Mapping | None = None) -> MetricReport:
    """Compute every metric the gold records support.

    ``predictions`` are prediction rows (``query_id``, ``ranked``, ``class``,
    ``retrieved``); ``gold`` are ``QueryRecord``s. Metrics without gold
    information stay ``None``.
    """
    by_id = {p["query_id"]: p for p in predictions}
    gold_ids = [g.query_id for g in gold]
    if set(by_id) != set(gold_ids):
        raise ValidationError("prediction and gold query ids differ")
    report = MetricReport(n=len(gold))

    with_sent = [g for g in gold if g.gold_sentences()]
    if with_sent:
        tops = {g.query_id: _top(by_id[g.query_id]) for g in with_sent}
        report.hits_at_1 = hits_at_1(tops, {g.query_id: g.gold_sentences() for g in with_sent})

    with_ev = [g for g in gold if g.evidence]
    if with_ev:
        report.evidence_coverage = sum(
            {tuple(e) for e in g.evidence} <= _retrieved(by_id[g.query_id]) for g in with_ev) / len(with_ev)

    with_cls = [g for g in gold if g.gold_class is not None]
    if with_cls:
        report.easy_acc, report.strict_acc = strict_accuracy(
            [by_id[g.query_id].get("class") for g in with_cls],
            [g.gold_class for g in with_cls],
            [_retrieved(by_id[g.query_id]) for g in with_cls],
            [g.evidence for g in with_cls])

    with_ans = [g for g in gold if g.answers]
    if with_ans and docs is not None:
        ems, f1s = [], []
        for g in with_ans:
            top = _top(by_id[g.query_id])
            text = docs[g.doc_id].sentence(*top).text if top is not None else ""
            em, f1 = em_f1(text, g.answers)
            ems.append(em)
            f1s.append(f1)
        report.em = sum(ems) / len(ems)
        report.f1 = sum(f1s) / len(f1s)
    return report


def _top(pred: dict):
    ranked = pred.get("ranked") or []
    if not ranked:
        return None
    return int(ranked[0]["para"]), int(ranked[0]["sent"])


def _retrieved(pred: dict) -> set:
    return {(int(r["para"]), int(r["sent"])) for r in pred.get("retrieved") or []}
