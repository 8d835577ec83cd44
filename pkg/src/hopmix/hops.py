"""Multi-hop retrieve -> mix -> update loop over a combined index."""
from __future__ import annotations

import json
import time
from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .embed import softmax
from .errors import StateError, ValidationError
from .index import CombinedIndex, EntryKind, score_all, score_batch

N_CLASSES = 4


@dataclass
class MixParams:
    W_q: np.ndarray   # (2*dim, dim)
    v: np.ndarray     # (dim,)
    u: np.ndarray     # (dim,)
    W_c: np.ndarray   # (dim, 4)

    NAMES = ("W_q", "v", "u", "W_c")

    def __post_init__(self):
        self.W_q = np.asarray(self.W_q, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        self.u = np.asarray(self.u, dtype=np.float64)
        self.W_c = np.asarray(self.W_c, dtype=np.float64)
        d = self.v.shape[0]
        shapes = {"W_q": (2 * d, d), "v": (d,), "u": (d,), "W_c": (d, N_CLASSES)}
        for name, shape in shapes.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValidationError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} has non-finite entries")

    @property
    def dim(self) -> int:
        return self.v.shape[0]

    @classmethod
    def random(cls, dim: int, rng: np.random.Generator | int = 0, scale: float = 1.0) -> "MixParams":
        rng = np.random.default_rng(rng)
        return cls(
            W_q=rng.normal(0, scale / np.sqrt(2 * dim), (2 * dim, dim)),
            v=rng.normal(0, scale / np.sqrt(dim), dim),
            u=rng.normal(0, scale / np.sqrt(dim), dim),
            W_c=rng.normal(0, scale / np.sqrt(dim), (dim, N_CLASSES)),
        )

    @classmethod
    def zeros(cls, dim: int) -> "MixParams":
        return cls(np.zeros((2 * dim, dim)), np.zeros(dim), np.zeros(dim), np.zeros((dim, N_CLASSES)))

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.NAMES}

    def copy(self) -> "MixParams":
        return MixParams(**{k: v.copy() for k, v in self.tensors().items()})


@dataclass(frozen=True)
class QueryState:
    vectors: tuple[np.ndarray, ...]
    current_hop: int = 0

    def __post_init__(self):
        if not 0 <= self.current_hop <= len(self.vectors):
            raise StateError(f"current_hop {self.current_hop} outside 0..{len(self.vectors)}")

    @classmethod
    def from_vectors(cls, vectors) -> "QueryState":
        return cls(tuple(np.array(v, dtype=np.float64) for v in vectors))

    @property
    def hops(self) -> int:
        return len(self.vectors)

    @property
    def current(self) -> np.ndarray:
        return self.vectors[self.current_hop]


@dataclass
class HopRecord:
    hop: int
    query: np.ndarray                 # q_t as used for scoring
    candidates: np.ndarray            # entry indices that were scored
    scores: np.ndarray
    retrieved: int
    kind: str
    para: int
    sent: int                         # -1 when a paragraph was retrieved
    mixed_rows: np.ndarray            # entry indices of the sentences that were mixed
    k_vectors: np.ndarray             # (n_mixed, dim)
    q_tilde: np.ndarray
    alpha: np.ndarray | None = None
    beta: np.ndarray | None = None

    @property
    def score(self) -> float:
        return float(self.scores[np.searchsorted(self.candidates, self.retrieved)])

    def to_json(self) -> dict:
        return {
            "hop": self.hop,
            "retrieved": {"kind": self.kind, "para": self.para, "sent": self.sent},
            "score": self.score,
            "alpha": None if self.alpha is None else self.alpha.tolist(),
            "beta": None if self.beta is None else self.beta.tolist(),
        }


@dataclass
class RetrievalTrace:
    records: list[HopRecord]
    final_sentence: tuple[int, int] | None
    masks: tuple = ()
    update: bool = True

    def retrieved_sentences(self, index: CombinedIndex) -> list[tuple[int, int]]:
        out = []
        for r in self.records:
            for m in r.mixed_rows:
                key = (int(index.para_idx[m]), int(index.sent_idx[m]))
                if key not in out:
                    out.append(key)
        return out

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_json()) + "\n" for r in self.records)


class StageTimer:
    """Accumulates wall-clock seconds per named stage."""

    def __init__(self):
        self.totals = defaultdict(float)

    def add(self, stage, seconds):
        self.totals[stage] += seconds


def _concat_check(q, s):
    if q.shape != s.shape[-1:]:
        raise ValidationError(f"query dim {q.shape} != sentence dim {s.shape[-1:]}")


def mix_sentence(q, s, params: MixParams) -> tuple[np.ndarray, np.ndarray]:
    """``k = W_q^T [q; s]``; the mixed vector is ``k`` itself. Returns ``(q_tilde, k)``."""
    q = np.asarray(q, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    _concat_check(q, s)
    k = np.concatenate([q, s]) @ params.W_q
    return k, k


def mix_paragraph(q, sent_vecs, params: MixParams, alpha=None):
    """Mix a retrieved paragraph into the query.

    ``alpha`` (query attention over the sentences) is reused when the caller
    already has it. Returns ``(q_tilde, alpha, beta, K)`` with one row of
    ``K`` per sentence.
    """
    q = np.asarray(q, dtype=np.float64)
    S = np.asarray(sent_vecs, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] == 0:
        raise ValidationError("paragraph has no sentence vectors")
    _concat_check(q, S)
    if alpha is None:
        alpha = softmax(S @ q)
    X = np.concatenate([alpha[:, None] * q[None, :], S], axis=1)
    K = X @ params.W_q
    beta = softmax(K @ params.v)
    return beta @ K, alpha, beta, K


def update_query(state: QueryState, q_tilde) -> QueryState:
    """Residual update of the next hop's query; advances ``current_hop``."""
    t = state.current_hop
    if t + 1 >= len(state.vectors):
        raise StateError(f"no hop after {t} to update")
    vectors = list(state.vectors)
    vectors[t + 1] = vectors[t + 1] + np.asarray(q_tilde, dtype=np.float64)
    return replace(state, vectors=tuple(vectors), current_hop=t + 1)


def _advance(state: QueryState) -> QueryState:
    return replace(state, current_hop=state.current_hop + 1)


def _normalize_masks(hop_masks, hops):
    if hop_masks is None:
        return (None,) * hops
    masks = tuple(None if m is None else EntryKind(m) for m in hop_masks)
    if len(masks) != hops:
        raise ValidationError(f"{len(masks)} hop masks for {hops} hops")
    return masks


def _mix_retrieved(t, q, cand, scores, m, index, params):
    kind, para, sent = index.locate(m)
    if kind == "sentence":
        q_tilde, k = mix_sentence(q, index.vecs[m], params)
        return HopRecord(t, q, cand, scores, m, kind, para, sent,
                         np.array([m]), k[None, :], q_tilde)
    S = index.sentence_vectors(para)
    q_tilde, alpha, beta, K = mix_paragraph(q, S, params)
    return HopRecord(t, q, cand, scores, m, kind, para, sent,
                     index.sentence_entries(para), K, q_tilde, alpha, beta)


def _final_sentence(rec: HopRecord, index) -> tuple[int, int]:
    if rec.kind == "sentence":
        return rec.para, rec.sent
    m = rec.mixed_rows[int(np.argmax(rec.beta))]
    return int(index.para_idx[m]), int(index.sent_idx[m])


def run_hops(state: QueryState, index: CombinedIndex, params: MixParams,
             hop_masks: Sequence | None = None, update: bool = True,
             forced: Sequence[int] | None = None, timer: StageTimer | None = None) -> RetrievalTrace:
    """Run every hop of ``state`` against ``index``.

    ``update=False`` skips the residual query update (ablation). ``forced``
    pins the retrieved entry per hop instead of taking the argmax; it is used
    by the finite-difference checks, which must stay on one branch.
    """
    masks = _normalize_masks(hop_masks, state.hops)
    records = []
    clock = time.perf_counter
    for t in range(state.hops):
        q = state.current
        t0 = clock()
        cand, scores = score_all(q, index, masks[t])
        m = int(forced[t]) if forced is not None else int(cand[np.argmax(scores)])
        t1 = clock()
        rec = _mix_retrieved(t, q, cand, scores, m, index, params)
        records.append(rec)
        t2 = clock()
        if t + 1 < state.hops:
            state = update_query(state, rec.q_tilde) if update else _advance(state)
        if timer is not None:
            timer.add("score", t1 - t0)
            timer.add("mix", t2 - t1)
            timer.add("update", clock() - t2)
    return RetrievalTrace(records, _final_sentence(records[-1], index), masks, update)


def run_hops_batch(query_vectors: np.ndarray, index: CombinedIndex, params: MixParams,
                   hop_masks: Sequence | None = None, update: bool = True,
                   timer: StageTimer | None = None) -> list[RetrievalTrace]:
    """Hop-synchronous version of ``run_hops`` for a ``(B, hops, dim)`` batch.

    Scoring for all queries of a hop is one matrix product; selection and
    mixing are per query. Results match ``run_hops`` query by query.
    """
    Q = np.array(query_vectors, dtype=np.float64)
    B, hops, _ = Q.shape
    masks = _normalize_masks(hop_masks, hops)
    records = [[] for _ in range(B)]
    clock = time.perf_counter
    for t in range(hops):
        t0 = clock()
        cand, S = score_batch(Q[:, t, :], index, masks[t])
        best = cand[np.argmax(S, axis=1)]
        t1 = clock()
        for b in range(B):
            records[b].append(_mix_retrieved(t, Q[b, t].copy(), cand, S[b], int(best[b]), index, params))
        t2 = clock()
        if update and t + 1 < hops:
            Q[:, t + 1, :] += np.stack([records[b][t].q_tilde for b in range(B)])
        if timer is not None:
            timer.add("score", t1 - t0)
            timer.add("mix", t2 - t1)
            timer.add("update", clock() - t2)
    return [RetrievalTrace(r, _final_sentence(r[-1], index), masks, update) for r in records]


def write_trace(fh, trace: RetrievalTrace, query_id: str | None = None) -> None:
    for rec in trace.records:
        row = rec.to_json()
        if query_id is not None:
            row = {"query_id": query_id, **row}
        fh.write(json.dumps(row) + "\n")
