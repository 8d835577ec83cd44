"""Structured documents: paragraph/sentence hierarchy and query paragraphs.

Documents are built from JSON Lines records, table rows (one row becomes one
paragraph) or sectioned papers (one leaf subsection becomes one paragraph).
"""
from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .errors import SchemaError, ValidationError

DUMMY_TEMPLATE = "[NULL_{}]"
FOLLOWUP_TEMPLATE = "Q: {question} A: {answer}"

_SPLIT_RE = re.compile(r"(?<=[.!?])\s+(?=[A-Z])|\s*\n\s*")


class QueryKind(str, enum.Enum):
    CONVERSATIONAL = "conversational"
    MULTIHOP = "multihop"


@dataclass(frozen=True)
class Sentence:
    id: str
    text: str
    para_idx: int
    sent_idx: int


@dataclass(frozen=True)
class Paragraph:
    id: str
    sentences: tuple[Sentence, ...]
    title: str | None = None

    def text(self, with_title: bool = True) -> str:
        body = " ".join(s.text for s in self.sentences)
        if with_title and self.title:
            return f"{self.title} {body}"
        return body


@dataclass(frozen=True)
class StructuredDocument:
    id: str
    paragraphs: tuple[Paragraph, ...]

    @property
    def n_sentences(self) -> int:
        return sum(len(p.sentences) for p in self.paragraphs)

    def sentences(self) -> Iterator[Sentence]:
        for p in self.paragraphs:
            yield from p.sentences

    def sentence(self, para_idx: int, sent_idx: int) -> Sentence:
        return self.paragraphs[para_idx].sentences[sent_idx]


@dataclass(frozen=True)
class QueryParagraph:
    units: tuple[str, ...]
    kind: QueryKind

    def __post_init__(self):
        if not self.units:
            raise ValidationError("query paragraph needs at least one unit")

    @property
    def hops(self) -> int:
        return len(self.units)


def dummy_marker(t: int) -> str:
    return DUMMY_TEMPLATE.format(t)


def is_dummy(unit: str) -> bool:
    return re.fullmatch(r"\[NULL_\d+\]", unit) is not None


def split_sentences(text: str) -> list[str]:
    """Rule-based splitter: break after ``.!?`` + whitespace + uppercase, or at newlines."""
    return [s.strip() for s in _SPLIT_RE.split(text) if s and s.strip()]


def make_paragraph(para_id: str, para_idx: int, texts: Sequence[str],
                   title: str | None = None) -> Paragraph:
    if not texts:
        raise ValidationError(f"paragraph {para_id!r} has no sentences")
    sents = []
    for j, t in enumerate(texts):
        if not isinstance(t, str) or not t.strip():
            raise ValidationError(f"paragraph {para_id!r} sentence {j} is empty")
        sents.append(Sentence(f"{para_id}#{j}", t, para_idx, j))
    return Paragraph(para_id, tuple(sents), title)


def make_document(doc_id: str, paragraphs: Iterable[Paragraph]) -> StructuredDocument:
    paragraphs = tuple(paragraphs)
    if not paragraphs:
        raise ValidationError(f"document {doc_id!r} has no paragraphs")
    seen = set()
    for i, p in enumerate(paragraphs):
        if p.id in seen:
            raise ValidationError(f"duplicate paragraph id {p.id!r} in {doc_id!r}")
        seen.add(p.id)
        if not p.sentences:
            raise ValidationError(f"paragraph {p.id!r} has no sentences")
        for s in p.sentences:
            if s.para_idx != i:
                raise ValidationError(f"sentence {s.id!r} has para_idx {s.para_idx}, expected {i}")
            if s.id in seen:
                raise ValidationError(f"duplicate sentence id {s.id!r} in {doc_id!r}")
            seen.add(s.id)
    return StructuredDocument(doc_id, paragraphs)


def _require(obj, key, where):
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected an object, got {type(obj).__name__}")
    if key not in obj:
        raise SchemaError(f"{where}: missing field {key!r}")
    return obj[key]


def parse_document(record: dict) -> StructuredDocument:
    doc_id = _require(record, "id", "document")
    paras = _require(record, "paragraphs", f"document {doc_id!r}")
    if not isinstance(paras, list):
        raise SchemaError(f"document {doc_id!r}: 'paragraphs' must be a list")
    built = []
    for i, p in enumerate(paras):
        where = f"document {doc_id!r} paragraph {i}"
        sents = _require(p, "sentences", where)
        if not isinstance(sents, list):
            raise SchemaError(f"{where}: 'sentences' must be a list")
        pid = p.get("id", f"p{i}")
        built.append(make_paragraph(str(pid), i, sents, p.get("title")))
    return make_document(str(doc_id), built)


def document_to_record(doc: StructuredDocument) -> dict:
    return {
        "id": doc.id,
        "paragraphs": [
            {"id": p.id, "title": p.title, "sentences": [s.text for s in p.sentences]}
            for p in doc.paragraphs
        ],
    }


def read_documents(path) -> dict[str, StructuredDocument]:
    docs = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            doc = parse_document(record)
            docs[doc.id] = doc
    return docs


def write_documents(path, docs: Iterable[StructuredDocument]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for doc in docs:
            fh.write(json.dumps(document_to_record(doc), ensure_ascii=False) + "\n")


def linearize_table_row(headers: Sequence[str], cells: Sequence[str],
                        linked_texts: Sequence[Sequence[str]] | None = None,
                        para_id: str = "row", para_idx: int = 0) -> Paragraph:
    """One table row as a paragraph: header, cell, then the cell's linked sentences."""
    if len(headers) != len(cells):
        raise ValidationError(f"{len(headers)} headers but {len(cells)} cells")
    if linked_texts is None:
        linked_texts = [[] for _ in headers]
    if len(linked_texts) != len(headers):
        raise ValidationError(f"{len(headers)} headers but {len(linked_texts)} link lists")
    texts = []
    for header, cell, links in zip(headers, cells, linked_texts):
        texts.append(header)
        texts.append(cell)
        texts.extend(links)
    return make_paragraph(para_id, para_idx, texts)


def linearize_table(doc_id: str, headers: Sequence[str], rows: Sequence[Sequence[str]],
                    links: Sequence[Sequence[Sequence[str]]] | None = None) -> StructuredDocument:
    paras = []
    for i, cells in enumerate(rows):
        row_links = links[i] if links is not None else None
        paras.append(linearize_table_row(headers, cells, row_links, para_id=f"row{i}", para_idx=i))
    return make_document(doc_id, paras)


def _heading(titles: Sequence[str]) -> str:
    parts = []
    for t in titles:
        t = t.strip()
        if t:
            parts.append(t if t[-1] in ".!?" else t + ".")
    return " ".join(parts)


def linearize_paper(doc_id: str, sections: Sequence[dict]) -> StructuredDocument:
    """Flatten a section tree (``{title, text, children}`` nodes) depth-first.

    Leaves become paragraphs; a parent's own text becomes a paragraph placed
    before its children. Every paragraph starts with the chain of titles.
    """
    if not sections:
        raise ValidationError("empty section tree")
    chunks: list[tuple[str, list[str]]] = []

    def visit(node, titles):
        if not isinstance(node, dict):
            raise SchemaError("section nodes must be objects")
        titles = titles + [node.get("title") or ""]
        children = node.get("children") or []
        body = split_sentences(node.get("text") or "")
        if body or not children:
            chunks.append((_heading(titles), body))
        for child in children:
            visit(child, titles)

    for sec in sections:
        visit(sec, [])
    paras = []
    for i, (heading, body) in enumerate(chunks):
        texts = ([heading] if heading else []) + body
        if not texts:
            raise ValidationError(f"section {i} of {doc_id!r} has neither title nor text")
        paras.append(make_paragraph(f"sec{i}", i, texts))
    return make_document(doc_id, paras)


def render_followup(question: str, answer: str) -> str:
    return FOLLOWUP_TEMPLATE.format(question=question, answer=answer)


def build_conversational_query(q0: str, followups: Sequence[tuple[str, str]] = ()) -> QueryParagraph:
    if not q0 or not q0.strip():
        raise ValidationError("initial question is empty")
    units = [q0] + [render_followup(f, a) for f, a in followups]
    return QueryParagraph(tuple(units), QueryKind.CONVERSATIONAL)


def build_multihop_query(q0: str, hops: int) -> QueryParagraph:
    if hops < 1:
        raise ValidationError(f"hops must be >= 1, got {hops}")
    if not q0 or not q0.strip():
        raise ValidationError("question is empty")
    units = [q0] + [dummy_marker(t) for t in range(1, hops)]
    return QueryParagraph(tuple(units), QueryKind.MULTIHOP)


def load_paper_json(path) -> list[dict]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return data["sections"] if isinstance(data, dict) else data
