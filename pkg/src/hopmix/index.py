"""Combined paragraph+sentence index of one document and inner-product scoring.

Entries are stored in document order ``p_0, s_0^0, ..., p_1, s_0^1, ...`` in a
single contiguous ``(n_entries, dim)`` block. Vectors are rounded to float32
at build time so that the on-disk ``HIDX`` form round-trips exactly.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .doc import StructuredDocument
from .embed import embed_sentences, paragraph_embedding_agnostic
from .errors import FormatError, TruncatedFileError, ValidationError

HIDX_MAGIC = b"HIDX"
HIDX_VERSION = 1

PARAGRAPH, SENTENCE, DEFERRED = 0, 1, 2


class EntryKind(str, enum.Enum):
    PARAGRAPH = "paragraph"
    SENTENCE = "sentence"


class Regime(str, enum.Enum):
    AGNOSTIC = "agnostic"
    QUERY_DEPENDENT = "query-dependent"


class IndexEntry(NamedTuple):
    kind: EntryKind
    vec: np.ndarray
    para_idx: int
    sent_idx: int


def _f32(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float32).astype(np.float64)


@dataclass(eq=False)
class CombinedIndex:
    doc_id: str
    vecs: np.ndarray          # (n_entries, dim) float64
    kinds: np.ndarray         # (n_entries,) uint8: PARAGRAPH / SENTENCE / DEFERRED
    para_idx: np.ndarray      # (n_entries,) int32
    sent_idx: np.ndarray      # (n_entries,) int32, -1 for paragraph entries

    para_rows: np.ndarray = field(init=False, repr=False)
    sent_rows: np.ndarray = field(init=False, repr=False)
    sent_para: np.ndarray = field(init=False, repr=False)
    seg_starts: np.ndarray = field(init=False, repr=False)
    sent_block: np.ndarray = field(init=False, repr=False)
    para_block: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.vecs = np.ascontiguousarray(self.vecs, dtype=np.float64)
        self.kinds = np.asarray(self.kinds, dtype=np.uint8)
        self.para_idx = np.asarray(self.para_idx, dtype=np.int32)
        self.sent_idx = np.asarray(self.sent_idx, dtype=np.int32)
        n = len(self.kinds)
        if self.vecs.ndim != 2 or self.vecs.shape[0] != n:
            raise ValidationError("entry block shape does not match entry count")
        if not (len(self.para_idx) == len(self.sent_idx) == n):
            raise ValidationError("entry metadata arrays differ in length")
        is_para = self.kinds != SENTENCE
        if np.any((self.sent_idx == -1) != is_para):
            raise ValidationError("paragraph entries must have sent_idx == -1 and sentences >= 0")
        deferred = self.kinds == DEFERRED
        if deferred.any() and not deferred[is_para].all():
            raise ValidationError("index mixes deferred and materialized paragraph entries")
        self.para_rows = np.flatnonzero(is_para)
        self.sent_rows = np.flatnonzero(~is_para)
        if len(self.para_rows) == 0 or self.para_rows[0] != 0:
            raise ValidationError("index must start with a paragraph entry")
        if np.any(self.para_idx[self.para_rows] != np.arange(len(self.para_rows))):
            raise ValidationError("paragraph entries out of order")
        counts = np.diff(np.append(self.para_rows, n)) - 1
        if np.any(counts < 1):
            raise ValidationError("every paragraph needs at least one sentence entry")
        expect_para = np.repeat(np.arange(len(self.para_rows)), counts)
        expect_sent = np.concatenate([np.arange(c) for c in counts])
        if np.any(self.para_idx[self.sent_rows] != expect_para) or \
                np.any(self.sent_idx[self.sent_rows] != expect_sent):
            raise ValidationError("sentence entries out of order")
        self.sent_para = expect_para
        self.seg_starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        self.sent_block = np.ascontiguousarray(self.vecs[self.sent_rows])
        self.para_block = np.ascontiguousarray(self.vecs[self.para_rows])

    @property
    def dim(self) -> int:
        return self.vecs.shape[1]

    @property
    def n_entries(self) -> int:
        return len(self.kinds)

    @property
    def n_paragraphs(self) -> int:
        return len(self.para_rows)

    @property
    def deferred(self) -> bool:
        return bool(self.kinds[0] == DEFERRED)

    @property
    def regime(self) -> Regime:
        return Regime.QUERY_DEPENDENT if self.deferred else Regime.AGNOSTIC

    @property
    def para_offsets(self) -> dict[int, tuple[int, np.ndarray]]:
        ends = np.append(self.para_rows[1:], self.n_entries)
        return {i: (int(r), np.arange(r + 1, e)) for i, (r, e) in enumerate(zip(self.para_rows, ends))}

    @property
    def entries(self) -> list[IndexEntry]:
        out = []
        for m in range(self.n_entries):
            kind = EntryKind.SENTENCE if self.kinds[m] == SENTENCE else EntryKind.PARAGRAPH
            out.append(IndexEntry(kind, self.vecs[m], int(self.para_idx[m]), int(self.sent_idx[m])))
        return out

    def is_paragraph(self, m: int) -> bool:
        return self.kinds[m] != SENTENCE

    def sentence_entries(self, para: int) -> np.ndarray:
        start = self.para_rows[para] + 1
        end = self.para_rows[para + 1] if para + 1 < self.n_paragraphs else self.n_entries
        return np.arange(start, end)

    def sentence_vectors(self, para: int) -> np.ndarray:
        s = self.seg_starts[para]
        e = self.seg_starts[para + 1] if para + 1 < self.n_paragraphs else len(self.sent_rows)
        return self.sent_block[s:e]

    def candidates(self, mask: EntryKind | None = None) -> np.ndarray:
        if mask is None:
            return np.arange(self.n_entries)
        return self.para_rows if EntryKind(mask) is EntryKind.PARAGRAPH else self.sent_rows

    def locate(self, m: int) -> tuple[str, int, int]:
        kind = "sentence" if self.kinds[m] == SENTENCE else "paragraph"
        return kind, int(self.para_idx[m]), int(self.sent_idx[m])

    def same_as(self, other: "CombinedIndex") -> bool:
        return (self.doc_id == other.doc_id
                and np.array_equal(self.kinds, other.kinds)
                and np.array_equal(self.para_idx, other.para_idx)
                and np.array_equal(self.sent_idx, other.sent_idx)
                and self.vecs.shape == other.vecs.shape
                and self.vecs.tobytes() == other.vecs.tobytes())

    def scaled(self, factor: float) -> "CombinedIndex":
        return CombinedIndex(self.doc_id, self.vecs * factor, self.kinds, self.para_idx, self.sent_idx)


def build_index(doc: StructuredDocument, provider, regime: Regime = Regime.AGNOSTIC) -> CombinedIndex:
    regime = Regime(regime)
    vecs, kinds, paras, sents = [], [], [], []
    for i, p in enumerate(doc.paragraphs):
        svecs = [_f32(v) for v in embed_sentences(provider, p, doc.id)]
        for v in svecs:
            if v.shape != (provider.dim,) or not np.all(np.isfinite(v)):
                raise ValidationError(f"bad sentence vector in {doc.id!r} paragraph {i}")
        if regime is Regime.AGNOSTIC:
            pvec = _f32(paragraph_embedding_agnostic(svecs, provider.paragraph(doc.id, i)))
            kinds.append(PARAGRAPH)
        else:
            pvec = np.zeros(provider.dim)
            kinds.append(DEFERRED)
        vecs.append(pvec)
        paras.append(i)
        sents.append(-1)
        for j, v in enumerate(svecs):
            vecs.append(v)
            kinds.append(SENTENCE)
            paras.append(i)
            sents.append(j)
    return CombinedIndex(doc.id, np.array(vecs), kinds, paras, sents)


# -- scoring ------------------------------------------------------------------

def segment_softmax(z: np.ndarray, starts: np.ndarray) -> np.ndarray:
    """Softmax of ``z`` along axis 0 within contiguous segments beginning at ``starts``."""
    counts = np.diff(np.append(starts, z.shape[0]))
    mx = np.maximum.reduceat(z, starts, axis=0)
    e = np.exp(z - np.repeat(mx, counts, axis=0))
    return e / np.repeat(np.add.reduceat(e, starts, axis=0), counts, axis=0)


def deferred_paragraph_scores(index: CombinedIndex, sent_scores: np.ndarray):
    """Paragraph scores ``q . sum_j alpha_j s_j = sum_j alpha_j (q . s_j)`` and the alphas."""
    alpha = segment_softmax(sent_scores, index.seg_starts)
    return np.add.reduceat(alpha * sent_scores, index.seg_starts, axis=0), alpha


def realize_paragraphs(index: CombinedIndex, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Paragraph vectors under query ``q``: stored vectors, or attention sums if deferred.

    Returns ``(P, alpha)``; ``alpha`` is the flat per-sentence weight array
    (``None`` for materialized indexes).
    """
    if not index.deferred:
        return index.para_block, None
    alpha = segment_softmax(index.sent_block @ q, index.seg_starts)
    return np.add.reduceat(alpha[:, None] * index.sent_block, index.seg_starts, axis=0), alpha


def _check_dim(q, index):
    if q.shape[-1] != index.dim:
        raise ValidationError(f"query dim {q.shape[-1]} != index dim {index.dim}")


def score_all(q, index: CombinedIndex, mask: EntryKind | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Inner-product scores of ``q`` against every unmasked entry.

    Returns ``(entry_indices, scores)`` in ascending entry order.
    """
    q = np.asarray(q, dtype=np.float64)
    _check_dim(q, index)
    idx, scores = score_batch(q[None, :], index, mask)
    return idx, scores[0]


def score_batch(Q: np.ndarray, index: CombinedIndex, mask: EntryKind | None = None):
    """Scores for a batch of queries ``Q`` of shape ``(B, dim)``; returns ``(idx, (B, n))``."""
    Q = np.asarray(Q, dtype=np.float64)
    _check_dim(Q, index)
    mask = None if mask is None else EntryKind(mask)
    if not index.deferred:
        if mask is None:
            return index.candidates(None), Q @ index.vecs.T
        block = index.para_block if mask is EntryKind.PARAGRAPH else index.sent_block
        return index.candidates(mask), Q @ block.T
    zs = index.sent_block @ Q.T                       # (S, B)
    if mask is EntryKind.SENTENCE:
        return index.sent_rows, zs.T
    zp, _ = deferred_paragraph_scores(index, zs)      # (P, B)
    if mask is EntryKind.PARAGRAPH:
        return index.para_rows, zp.T
    out = np.empty((Q.shape[0], index.n_entries))
    out[:, index.sent_rows] = zs.T
    out[:, index.para_rows] = zp.T
    return index.candidates(None), out


def argmax_entry(scores, indices=None) -> tuple[int, float]:
    """Best-scoring entry; ties go to the lowest entry index."""
    scores = np.asarray(scores)
    if scores.size == 0:
        raise ValidationError("cannot take argmax of no scores")
    if indices is None:
        k = int(np.argmax(scores))
        return k, float(scores[k])
    indices = np.asarray(indices)
    best = scores.max()
    k = int(indices[scores == best].min())
    return k, float(best)


# -- HIDX file ----------------------------------------------------------------

def _record_dtype(dim):
    return np.dtype([("kind", "u1"), ("para", "<i4"), ("sent", "<i4"), ("vec", "<f4", (dim,))])


def save_index(index: CombinedIndex, path) -> None:
    rec = np.zeros(index.n_entries, dtype=_record_dtype(index.dim))
    rec["kind"] = index.kinds
    rec["para"] = index.para_idx
    rec["sent"] = index.sent_idx
    rec["vec"] = index.vecs.astype(np.float32)
    with open(path, "wb") as fh:
        fh.write(HIDX_MAGIC)
        fh.write(struct.pack("<IIII", HIDX_VERSION, index.dim, index.n_paragraphs, index.n_entries))
        fh.write(rec.tobytes())


def load_index(path, doc_id: str | None = None) -> CombinedIndex:
    """Read an ``HIDX`` file; ``doc_id`` defaults to the file stem."""
    from pathlib import Path

    path = Path(path)
    data = path.read_bytes()
    if data[:4] != HIDX_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {HIDX_MAGIC!r}")
    if len(data) < 20:
        raise TruncatedFileError(f"{path}: truncated header")
    version, dim, n_para, n_entries = struct.unpack_from("<IIII", data, 4)
    if version != HIDX_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dim == 0:
        raise FormatError(f"{path}: zero dim")
    dt = _record_dtype(dim)
    payload = len(data) - 20
    if payload < n_entries * dt.itemsize:
        raise TruncatedFileError(f"{path}: {payload} payload bytes, expected {n_entries * dt.itemsize}")
    if payload > n_entries * dt.itemsize:
        raise FormatError(f"{path}: {payload - n_entries * dt.itemsize} trailing bytes (dim mismatch?)")
    rec = np.frombuffer(data, dtype=dt, count=n_entries, offset=20)
    if np.any(rec["kind"] > DEFERRED):
        raise FormatError(f"{path}: unknown entry kind")
    try:
        index = CombinedIndex(doc_id if doc_id is not None else path.stem,
                              rec["vec"].astype(np.float64), rec["kind"], rec["para"], rec["sent"])
    except ValidationError as exc:
        raise FormatError(f"{path}: inconsistent entries ({exc})") from None
    if index.n_paragraphs != n_para:
        raise FormatError(f"{path}: header says {n_para} paragraphs, found {index.n_paragraphs}")
    return index
