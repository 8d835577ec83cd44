"""Query -> trace -> prediction row, shared by the CLI and the experiment scripts."""
from __future__ import annotations

import numpy as np

from .doc import QueryKind, StructuredDocument
from .embed import embed_query_units
from .heads import FusionWeights, classify_conversation, fused_sentence_scores
from .hops import MixParams, QueryState, RetrievalTrace, run_hops
from .index import CombinedIndex, EntryKind, score_all
from .errors import ValidationError

_MASK_NAMES = {
    "p": EntryKind.PARAGRAPH, "paragraph": EntryKind.PARAGRAPH, "para": EntryKind.PARAGRAPH,
    "s": EntryKind.SENTENCE, "sentence": EntryKind.SENTENCE, "sent": EntryKind.SENTENCE,
    "any": None, "all": None, "none": None, "-": None,
}


def parse_masks(text: str | None):
    if text is None:
        return None
    try:
        return tuple(_MASK_NAMES[part.strip().lower()] for part in text.split(","))
    except KeyError as exc:
        raise ValidationError(f"unknown mask {exc.args[0]!r}; use paragraph, sentence or any") from None


def default_masks(kind: QueryKind, hops: int):
    """Extractive (multi-hop) queries: paragraph first, then sentences. Conversational: unmasked."""
    if kind is QueryKind.CONVERSATIONAL:
        return (None,) * hops
    return (EntryKind.PARAGRAPH,) + (EntryKind.SENTENCE,) * (hops - 1)


def fit_masks(masks, hops: int):
    """Stretch a user mask list to ``hops`` by repeating its last element."""
    if masks is None:
        return None
    masks = tuple(masks)
    return (masks + (masks[-1],) * hops)[:hops]


def predict(query_id: str, qp, doc: StructuredDocument, index: CombinedIndex, provider,
            params: MixParams, weights: FusionWeights, masks=None, update: bool = True,
            top_k: int = 10) -> tuple[dict, RetrievalTrace]:
    vectors = embed_query_units(provider, qp, query_id)
    masks = fit_masks(masks, len(vectors)) or default_masks(qp.kind, len(vectors))
    trace = run_hops(QueryState.from_vectors(vectors), index, params, masks, update)
    row = {"query_id": query_id, "class": None, "class_probs": None}
    if qp.kind is QueryKind.CONVERSATIONAL:
        logits = classify_conversation(trace, params)
        row["class"] = logits.label
        row["class_probs"] = logits.probs.tolist()
        cand, scores = score_all(trace.records[-1].query, index, EntryKind.SENTENCE)
    else:
        q0, q1 = trace.records[0].query, trace.records[-1].query
        texts = [p.text() for p in doc.paragraphs]
        question = qp.units[0]
        cand, scores = fused_sentence_scores(q0, q1, index, weights, question, texts)
    order = np.argsort(-scores, kind="stable")[:top_k]
    row["ranked"] = [{"para": int(index.para_idx[cand[i]]), "sent": int(index.sent_idx[cand[i]]),
                      "score": float(scores[i])} for i in order]
    row["retrieved"] = [{"para": p, "sent": s} for p, s in trace.retrieved_sentences(index)]
    return row, trace
