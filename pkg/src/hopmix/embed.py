"""Embedding providers and paragraph aggregation.

The neural encoder is replaced by a provider. ``ToyProvider`` hashes text
into platform-stable pseudo-embeddings; ``FileProvider`` looks vectors up in
an ``HMIX`` binary table.

Toy scheme, per component ``k`` of a ``dim``-vector::

    h = FNV64_OFFSET ^ ((k * GOLDEN64) mod 2**64)
    for byte in utf8(text):  h = ((h ^ byte) * FNV64_PRIME) mod 2**64
    component_k = ((h mod 2001) - 1000) / 1000
"""
from __future__ import annotations

import enum
import struct
from typing import Mapping, Sequence

import numpy as np

from .doc import Paragraph, QueryKind, QueryParagraph, is_dummy
from .errors import EmbeddingKeyError, FormatError, TruncatedFileError, ValidationError

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
GOLDEN64 = 0x9E3779B97F4A7C15

HMIX_MAGIC = b"HMIX"
HMIX_VERSION = 1


class ProviderMode(str, enum.Enum):
    TOY = "toy"
    FILE = "file"


def toy_vector(text: str, dim: int) -> np.ndarray:
    k = np.arange(dim, dtype=np.uint64)
    h = np.uint64(FNV64_OFFSET) ^ (k * np.uint64(GOLDEN64))
    prime = np.uint64(FNV64_PRIME)
    for b in text.encode("utf-8"):
        h = (h ^ np.uint64(b)) * prime
    return ((h % np.uint64(2001)).astype(np.int64) - 1000) / 1000.0


def sentence_key(doc_id: str, para_idx: int, sent_idx: int) -> str:
    return f"{doc_id}|{para_idx}|{sent_idx}"


def paragraph_key(doc_id: str, para_idx: int) -> str:
    return f"{doc_id}|{para_idx}|PARA"


def query_key(query_id: str, t: int) -> str:
    return f"{query_id}|unit{t}"


class ToyProvider:
    mode = ProviderMode.TOY

    def __init__(self, dim: int):
        if dim <= 0:
            raise ValidationError(f"dim must be positive, got {dim}")
        self.dim = dim

    def sentence(self, doc_id, para_idx, sent_idx, text):
        return toy_vector(text, self.dim)

    def paragraph(self, doc_id, para_idx):
        return None

    def query_unit(self, query_id, t, text):
        return toy_vector(text, self.dim)


class FileProvider:
    """Vectors looked up by key in an embedding table (see ``read_embedding_table``)."""

    mode = ProviderMode.FILE

    def __init__(self, table: Mapping[str, np.ndarray], dim: int | None = None):
        self.table = dict(table)
        if dim is None:
            if not self.table:
                raise ValidationError("empty embedding table needs an explicit dim")
            dim = len(next(iter(self.table.values())))
        self.dim = dim

    @classmethod
    def from_path(cls, path) -> "FileProvider":
        dim, table = read_embedding_table(path)
        return cls(table, dim)

    def _get(self, key):
        try:
            return self.table[key]
        except KeyError:
            raise EmbeddingKeyError(key) from None

    def sentence(self, doc_id, para_idx, sent_idx, text):
        return self._get(sentence_key(doc_id, para_idx, sent_idx))

    def paragraph(self, doc_id, para_idx):
        return self.table.get(paragraph_key(doc_id, para_idx))

    def query_unit(self, query_id, t, text):
        return self._get(query_key(query_id, t))


def embed_sentences(provider, paragraph: Paragraph, doc_id: str = "") -> list[np.ndarray]:
    return [np.asarray(provider.sentence(doc_id, s.para_idx, s.sent_idx, s.text), dtype=np.float64)
            for s in paragraph.sentences]


def embed_query_units(provider, qp: QueryParagraph, query_id: str = "") -> list[np.ndarray]:
    """One vector per unit; dummy units are embedded together with the question."""
    out = []
    for t, unit in enumerate(qp.units):
        text = unit
        if qp.kind is QueryKind.MULTIHOP and t > 0 and is_dummy(unit):
            text = f"{unit} {qp.units[0]}"
        out.append(np.asarray(provider.query_unit(query_id, t, text), dtype=np.float64))
    return out


def softmax(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max())
    return e / e.sum()


def paragraph_embedding_agnostic(sent_vecs: Sequence[np.ndarray], provided=None) -> np.ndarray:
    if provided is not None:
        return np.asarray(provided, dtype=np.float64)
    if len(sent_vecs) == 0:
        raise ValidationError("paragraph has no sentence vectors")
    return np.mean(np.asarray(sent_vecs, dtype=np.float64), axis=0)


def paragraph_embedding_query_dep(q: np.ndarray, sent_vecs) -> tuple[np.ndarray, np.ndarray]:
    """Attention-weighted sum of sentence vectors; returns ``(p, alpha)``."""
    S = np.asarray(sent_vecs, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] == 0:
        raise ValidationError("paragraph has no sentence vectors")
    if S.shape[1] != q.shape[0]:
        raise ValidationError(f"query dim {q.shape[0]} != sentence dim {S.shape[1]}")
    alpha = softmax(S @ q)
    return alpha @ S, alpha


# -- HMIX embedding table -----------------------------------------------------

def write_embedding_table(path, table: Mapping[str, np.ndarray], dim: int) -> None:
    with open(path, "wb") as fh:
        fh.write(HMIX_MAGIC)
        fh.write(struct.pack("<IIQ", HMIX_VERSION, dim, len(table)))
        for key, vec in table.items():
            vec = np.asarray(vec)
            if vec.shape != (dim,):
                raise ValidationError(f"vector for {key!r} has shape {vec.shape}, expected ({dim},)")
            kb = key.encode("utf-8")
            fh.write(struct.pack("<I", len(kb)))
            fh.write(kb)
            fh.write(vec.astype("<f4").tobytes())


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedFileError(f"truncated file while reading {what}")
    return buf


def read_embedding_table(path) -> tuple[int, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != HMIX_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {HMIX_MAGIC!r}")
        version, dim, count = struct.unpack("<IIQ", _read_exact(fh, 16, "header"))
        if version != HMIX_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        if dim == 0:
            raise FormatError(f"{path}: zero dim")
        table = {}
        for _ in range(count):
            (klen,) = struct.unpack("<I", _read_exact(fh, 4, "key length"))
            key = _read_exact(fh, klen, "key").decode("utf-8")
            vec = np.frombuffer(_read_exact(fh, 4 * dim, f"vector {key!r}"), dtype="<f4")
            table[key] = vec.astype(np.float64)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after {count} records (dim mismatch?)")
    return dim, table
