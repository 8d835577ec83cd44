"""Synthetic planted-chain benchmark.

Each document gets one query. The query's first vector ``q_0`` is the sum of
the gold paragraph's "context" sentences, so the gold paragraph wins hop 0 on
paragraph entries while no single sentence stands out. Every paragraph also
has one "link" sentence carrying a shared link direction ``e``; the gold
answer at hop 1 is ``normalize(A @ link)`` for a hidden orthogonal map ``A``,
planted in another paragraph. Later hops (if any) continue the chain with
``normalize(A @ previous)``.

The remaining query vectors are small noise, so the answer is reachable only
by mixing the retrieved paragraph into the next query: a learned projection
has to approximate ``A`` and the attention vector has to find the link
sentence. ``oracle_params`` writes those parameters down directly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .doc import StructuredDocument, build_multihop_query, make_document, make_paragraph, QueryParagraph
from .embed import FileProvider, query_key, sentence_key
from .errors import ValidationError
from .hops import MixParams, QueryState, run_hops
from .index import CombinedIndex, EntryKind, Regime, build_index, score_all
from .labels import StepLabels

LINK_WEIGHT = 1.0        # weight of the shared link direction inside a link sentence
QUERY_NOISE = 0.3        # norm scale of the noise added to q_0
DUMMY_NOISE = 0.3        # norm scale of the later (dummy) query vectors
ORACLE_GAIN = 3.0
ORACLE_ATTENTION = 10.0


@dataclass(frozen=True)
class SynthSpec:
    n_docs: int = 200
    paras_per_doc: int = 10
    sents_per_para: int = 5
    dim: int = 32
    hops: int = 2
    seed: int = 0

    def __post_init__(self):
        for name in ("n_docs", "paras_per_doc", "sents_per_para", "dim", "hops"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive")
        if self.paras_per_doc < 2 or self.sents_per_para < 2:
            raise ValidationError("planted chains need >= 2 paragraphs of >= 2 sentences")
        if self.paras_per_doc < self.hops:
            raise ValidationError("need at least as many paragraphs as hops")


@dataclass
class SynthQuery:
    query_id: str
    doc_id: str
    query: QueryParagraph
    vectors: np.ndarray                 # (hops, dim)
    chain: list                          # per hop (kind, para, sent)
    link_sent: int                       # link slot of the gold paragraph

    n_sents: int = 0

    @property
    def labels(self) -> StepLabels:
        return StepLabels.of(*[[loc] for loc in self.chain])

    def labels_for(self, sentence_only: bool = False) -> StepLabels:
        """Chain labels; with sentence-only retrieval the gold paragraph is
        replaced by its sentences."""
        if not sentence_only:
            return self.labels
        hops = []
        for kind, para, sent in self.chain:
            if kind == "paragraph":
                hops.append([("sentence", para, j) for j in range(self.n_sents)])
            else:
                hops.append([(kind, para, sent)])
        return StepLabels.of(*hops)

    @property
    def gold_sentence(self) -> tuple[int, int]:
        _, p, s = self.chain[-1]
        return p, s


@dataclass
class SynthData:
    spec: SynthSpec
    documents: list[StructuredDocument]
    queries: list[SynthQuery]
    table: dict                          # embedding table keyed as in the HMIX format
    transform: np.ndarray                # hidden map A
    link_dir: np.ndarray                 # shared link direction e
    rejected: int = 0
    _indexes: dict = field(default_factory=dict, repr=False)

    @property
    def provider(self) -> FileProvider:
        return FileProvider(self.table, self.spec.dim)

    def index(self, doc_id: str) -> CombinedIndex:
        if doc_id not in self._indexes:
            doc = next(d for d in self.documents if d.id == doc_id)
            self._indexes[doc_id] = build_index(doc, self.provider, Regime.AGNOSTIC)
        return self._indexes[doc_id]

    def split(self, test_fraction: float = 0.2):
        """Deterministic train/test split of the queries (test = last fraction after a seeded shuffle)."""
        order = np.random.default_rng(self.spec.seed + 1).permutation(len(self.queries))
        n_test = int(round(test_fraction * len(self.queries)))
        test = sorted(order[len(order) - n_test:])
        train = sorted(order[:len(order) - n_test])
        return [self.queries[i] for i in train], [self.queries[i] for i in test]

    def hop_masks(self, sentence_only: bool = False):
        if sentence_only:
            return (EntryKind.SENTENCE,) * self.spec.hops
        return (EntryKind.PARAGRAPH,) + (EntryKind.SENTENCE,) * (self.spec.hops - 1)


def _unit(x):
    return x / np.linalg.norm(x)


def _f32(x):
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def oracle_params(transform: np.ndarray, link_dir: np.ndarray, gain: float = ORACLE_GAIN,
                  attention: float = ORACLE_ATTENTION) -> MixParams:
    """Mixing parameters that follow planted chains by construction."""
    d = len(link_dir)
    W_q = np.zeros((2 * d, d))
    W_q[d:] = gain * transform.T
    v = attention * (transform @ link_dir)
    return MixParams(W_q, v, np.zeros(d), np.zeros((d, 4)))


def _chain_ok(S, q_vecs, chain, transform, link_dir, spec) -> bool:
    """Gold paragraph is a strict argmax at hop 0 and the oracle follows the chain."""
    P, n = spec.paras_per_doc, spec.sents_per_para
    paras = _f32(S.mean(axis=1))
    ps = paras @ q_vecs[0]
    g = chain[0][1]
    if np.sum(ps >= ps[g]) != 1:
        return False
    vecs, kinds, pi, si = [], [], [], []
    for i in range(P):
        vecs.append(paras[i]); kinds.append(0); pi.append(i); si.append(-1)
        for j in range(n):
            vecs.append(S[i, j]); kinds.append(1); pi.append(i); si.append(j)
    index = CombinedIndex("check", np.array(vecs), kinds, pi, si)
    masks = (EntryKind.PARAGRAPH,) + (EntryKind.SENTENCE,) * (spec.hops - 1)
    trace = run_hops(QueryState.from_vectors(q_vecs), index, oracle_params(transform, link_dir), masks)
    for t, rec in enumerate(trace.records):
        kind, para, sent = chain[t]
        if (rec.kind, rec.para, rec.sent) != (kind, para, sent):
            return False
        cand, scores = rec.candidates, rec.scores
        if np.sum(scores >= scores[np.searchsorted(cand, rec.retrieved)]) != 1:
            return False
    return True


def synth_generate(spec: SynthSpec) -> SynthData:
    rng = np.random.default_rng(spec.seed)
    d, P, n, H = spec.dim, spec.paras_per_doc, spec.sents_per_para, spec.hops
    A, _ = np.linalg.qr(rng.normal(size=(d, d)))
    e = _unit(rng.normal(size=d))
    documents, queries, table = [], [], {}
    rejected = 0
    for k in range(spec.n_docs):
        doc_id = f"doc{k}"
        while True:
            S = rng.normal(size=(P, n, d))
            S /= np.linalg.norm(S, axis=2, keepdims=True)
            links = rng.integers(n, size=P)
            for i in range(P):
                S[i, links[i]] = _unit(_unit(rng.normal(size=d)) + LINK_WEIGHT * e)
            g = int(rng.integers(P))
            chain = [("paragraph", g, -1)]
            prev = S[g, links[g]]
            used = {g}
            for _ in range(1, H):
                h = int(rng.choice([i for i in range(P) if i not in used]))
                slot = int(rng.choice([j for j in range(n) if j != links[h]]))
                S[h, slot] = _unit(A @ prev)
                prev = S[h, slot]
                used.add(h)
                chain.append(("sentence", h, slot))
            S = _f32(S)
            context = [j for j in range(n) if j != links[g]]
            q = np.empty((H, d))
            q[0] = S[g, context].sum(axis=0) + QUERY_NOISE * rng.normal(size=d) / np.sqrt(d)
            q[1:] = DUMMY_NOISE * rng.normal(size=(H - 1, d)) / np.sqrt(d)
            q = _f32(q)
            if _chain_ok(S, q, chain, A, e, spec):
                break
            rejected += 1
        paras = []
        for i in range(P):
            texts = [f"{doc_id} paragraph {i} sentence {j}" + (" link" if j == links[i] else "")
                     for j in range(n)]
            paras.append(make_paragraph(f"p{i}", i, texts))
            for j in range(n):
                table[sentence_key(doc_id, i, j)] = S[i, j]
        documents.append(make_document(doc_id, paras))
        qid = f"q{k}"
        qp = build_multihop_query(f"question about {doc_id}", H)
        for t in range(H):
            table[query_key(qid, t)] = q[t]
        queries.append(SynthQuery(qid, doc_id, qp, q, chain, int(links[g]), n))
    return SynthData(spec, documents, queries, table, A, e, rejected)


def gold_paragraph_is_argmax(data: SynthData, query: SynthQuery) -> bool:
    cand, scores = score_all(query.vectors[0], data.index(query.doc_id), EntryKind.PARAGRAPH)
    return int(cand[np.argmax(scores)]) == int(data.index(query.doc_id).para_rows[query.chain[0][1]])
