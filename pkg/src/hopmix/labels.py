"""Distantly supervised per-hop retrieval labels.

Conversational examples: the positive paragraph is the one with the highest
BLEU (no brevity penalty) against the gold snippet, and each gold sentence
maps to the document sentence with the smallest token edit distance.
Extractive examples: sentences containing the normalized answer and their
parent paragraphs.
"""
from __future__ import annotations

import math
import re
import string
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .doc import StructuredDocument
from .errors import LabelError, SchemaError, ValidationError

BLEU_DROP_THRESHOLD = 0.7

_PUNCT_RE = re.compile(f"[{re.escape(string.punctuation)}]")

Loc = tuple  # (kind, para, sent); sent == -1 for paragraphs


@dataclass(frozen=True)
class StepLabels:
    """Positive entries per hop as ``(kind, para, sent)`` locations.

    An empty set means the hop is not supervised. ``drop`` marks an example
    the heuristics rejected.
    """

    hops: tuple[frozenset, ...]
    drop: bool = False
    bleu: float | None = None

    @classmethod
    def of(cls, *hops) -> "StepLabels":
        return cls(tuple(frozenset(_loc(x) for x in h) for h in hops))

    @classmethod
    def dropped(cls, bleu: float | None = None) -> "StepLabels":
        return cls((), drop=True, bleu=bleu)

    def entry_sets(self, index) -> list[list[int]]:
        out = []
        for hop in self.hops:
            ents = []
            for kind, para, sent in hop:
                if not 0 <= para < index.n_paragraphs:
                    raise ValidationError(f"label paragraph {para} out of range")
                row = int(index.para_rows[para])
                if kind == "sentence":
                    n = len(index.sentence_entries(para))
                    if not 0 <= sent < n:
                        raise ValidationError(f"label sentence {para}/{sent} out of range")
                    row += 1 + sent
                ents.append(row)
            out.append(sorted(ents))
        return out

    def to_json(self) -> dict:
        return {str(t): [{"kind": k, "para": p, "sent": s} for k, p, s in sorted(h)]
                for t, h in enumerate(self.hops)}

    @classmethod
    def from_json(cls, obj: dict, drop: bool = False) -> "StepLabels":
        if not isinstance(obj, dict):
            raise SchemaError("labels must be an object keyed by hop")
        hops = []
        for t in sorted(obj, key=int):
            locs = []
            for item in obj[t]:
                try:
                    locs.append((item["kind"], int(item["para"]), int(item.get("sent", -1))))
                except (KeyError, TypeError) as exc:
                    raise SchemaError(f"label at hop {t} is malformed: {exc}") from None
            while len(hops) < int(t):
                hops.append(frozenset())
            hops.append(frozenset(_loc(x) for x in locs))
        return cls(tuple(hops), drop=drop)


def _loc(x) -> Loc:
    kind, para, sent = x
    if kind not in ("paragraph", "sentence"):
        raise ValidationError(f"unknown label kind {kind!r}")
    if kind == "paragraph":
        sent = -1
    return (kind, int(para), int(sent))


def tokens(text: str) -> list[str]:
    """Lowercased whitespace tokens."""
    return text.lower().split()


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace."""
    return " ".join(_PUNCT_RE.sub(" ", text.lower()).split())


def bleu_no_bp(candidate: Sequence[str], reference: Sequence[str], max_n: int = 4) -> float:
    """Geometric mean of clipped n-gram precisions, without brevity penalty.

    Orders run up to ``min(max_n, len(candidate))``; any zero precision gives 0.
    """
    if not candidate or not reference:
        raise ValidationError("BLEU needs non-empty candidate and reference")
    top = min(max_n, len(candidate))
    log_sum = 0.0
    for n in range(1, top + 1):
        cand = Counter(tuple(candidate[i:i + n]) for i in range(len(candidate) - n + 1))
        ref = Counter(tuple(reference[i:i + n]) for i in range(len(reference) - n + 1))
        hits = sum(min(c, ref[g]) for g, c in cand.items())
        if hits == 0:
            return 0.0
        log_sum += math.log(hits / sum(cand.values()))
    return math.exp(log_sum / top)


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Levenshtein distance with unit costs (works on strings or token lists)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def build_distant_labels_conversational(doc: StructuredDocument, gold_snippet: str,
                                        gold_sentences: Sequence[str], hops: int = 1,
                                        threshold: float = BLEU_DROP_THRESHOLD) -> StepLabels:
    """Same positive set (best paragraph + closest sentences) at every hop."""
    if not doc.paragraphs:
        raise ValidationError("empty document")
    ref = tokens(gold_snippet)
    if not ref:
        raise ValidationError("empty gold snippet")
    scores = [bleu_no_bp(tokens(p.text(with_title=False)), ref) for p in doc.paragraphs]
    best = max(range(len(scores)), key=lambda i: (scores[i], -i))
    if scores[best] < threshold:
        return StepLabels.dropped(scores[best])
    positives = {("paragraph", best, -1)}
    sents = list(doc.sentences())
    sent_toks = [tokens(s.text) for s in sents]
    for g in gold_sentences:
        gt = tokens(g)
        dists = [edit_distance(gt, st) for st in sent_toks]
        k = min(range(len(dists)), key=lambda i: dists[i])
        positives.add(("sentence", sents[k].para_idx, sents[k].sent_idx))
    return StepLabels(tuple(frozenset(positives) for _ in range(hops)), bleu=scores[best])


def build_distant_labels_extractive(doc: StructuredDocument, answer: str) -> StepLabels:
    """Hop 0: paragraphs holding the answer; hop 1: sentences containing it."""
    norm = normalize_answer(answer)
    if not norm:
        raise ValidationError("empty answer")
    sent_pos, para_pos = set(), set()
    for s in doc.sentences():
        if norm in normalize_answer(s.text):
            sent_pos.add(("sentence", s.para_idx, s.sent_idx))
            para_pos.add(("paragraph", s.para_idx, -1))
    if not sent_pos:
        raise LabelError(f"answer {answer!r} not found in any sentence of {doc.id!r}")
    return StepLabels((frozenset(para_pos), frozenset(sent_pos)))
