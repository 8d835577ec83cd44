"""Final ranking heads: dense+sparse sentence score fusion and the 4-way classifier."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .embed import softmax
from .errors import ValidationError
from .index import CombinedIndex, realize_paragraphs

CLASS_NAMES = ("Yes", "No", "Irrelevant", "Inquire")

# per-dataset fusion settings (dense paragraph weight, sparse LCS weight)
FUSION_PRESETS = {"hybridqa": (1.5, 3.0), "qasper": (0.5, 0.0)}


@dataclass(frozen=True)
class FusionWeights:
    lambda1: float = 1.5
    lambda2: float = 3.0

    def __post_init__(self):
        if not (np.isfinite(self.lambda1) and np.isfinite(self.lambda2)):
            raise ValidationError("fusion weights must be finite")


@dataclass
class ClassLogits:
    m: np.ndarray
    gamma: np.ndarray
    k_tilde: np.ndarray

    def __post_init__(self):
        if self.m.shape != (4,):
            raise ValidationError(f"expected 4 logits, got shape {self.m.shape}")

    @property
    def probs(self) -> np.ndarray:
        return softmax(self.m)

    @property
    def label(self) -> str:
        return CLASS_NAMES[int(np.argmax(self.m))]


def _norm_text(s: str) -> str:
    return " ".join(s.lower().split())


def lcs_len(a: str, b: str) -> int:
    """Length of the longest common contiguous substring (characters, normalized)."""
    a, b = _norm_text(a), _norm_text(b)
    if not a or not b:
        return 0
    if len(b) > len(a):
        a, b = b, a
    best = 0
    prev = [0] * (len(b) + 1)
    for ch in a:
        cur = [0] * (len(b) + 1)
        for j, cb in enumerate(b, 1):
            if ch == cb:
                v = prev[j - 1] + 1
                cur[j] = v
                if v > best:
                    best = v
        prev = cur
    return best


def fused_sentence_scores(q0, q1, index: CombinedIndex, weights: FusionWeights,
                          question_text: str = "", paragraph_texts: Sequence[str] | None = None):
    """Per-sentence score: sentence score under ``q1`` plus the weighted
    paragraph score under ``q0`` and the weighted question/paragraph LCS length.

    Returns ``(sentence_entry_indices, scores)`` in index order.
    """
    q0 = np.asarray(q0, dtype=np.float64)
    q1 = np.asarray(q1, dtype=np.float64)
    if q0.shape != (index.dim,) or q1.shape != (index.dim,):
        raise ValidationError(f"query dims {q0.shape}/{q1.shape} != index dim {index.dim}")
    sent_scores = index.sent_block @ q1
    P, _ = realize_paragraphs(index, q0)
    para_scores = weights.lambda1 * (P @ q0)
    if weights.lambda2 != 0.0:
        if paragraph_texts is None or len(paragraph_texts) != index.n_paragraphs:
            raise ValidationError("paragraph texts must align with the index paragraphs")
        para_scores = para_scores + weights.lambda2 * np.array(
            [lcs_len(question_text, t) for t in paragraph_texts], dtype=np.float64)
    return index.sent_rows, sent_scores + para_scores[index.sent_para]


def classify_conversation(trace, params) -> ClassLogits:
    """Attention-pool the mixing vectors of every hop and project to 4 logits."""
    if trace is None or not trace.records:
        raise ValidationError("classification needs a non-empty trace")
    K = np.concatenate([r.k_vectors for r in trace.records])
    gamma = softmax(K @ params.u)
    k_tilde = gamma @ K
    return ClassLogits(k_tilde @ params.W_c, gamma, k_tilde)


def classification_loss(m, gold: int) -> float:
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (4,):
        raise ValidationError(f"expected 4 logits, got shape {m.shape}")
    if isinstance(gold, bool) or gold not in range(4):
        raise ValidationError(f"gold class must be in 0..3, got {gold!r}")
    mx = m.max()
    return float(mx + np.log(np.exp(m - mx).sum()) - m[gold])
