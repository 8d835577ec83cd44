"""JSON Lines query/training-set records and prediction rows.

Query record::

    {"query_id": str, "doc_id": str,
     "query": {"units": [str, ...], "kind": "conversational" | "multihop"},
     "labels": {"0": [{"kind": "paragraph", "para": 3, "sent": -1}, ...], ...},
     "drop": bool,
     "answers": [str, ...], "class": "Yes" | "No" | "Irrelevant" | "Inquire",
     "evidence": [[para, sent], ...]}

``labels``, ``drop``, ``answers``, ``class`` and ``evidence`` are optional.

Prediction row::

    {"query_id": str, "ranked": [{"para", "sent", "score"}, ...],
     "class": str | null, "class_probs": [4 floats] | null,
     "retrieved": [{"para", "sent"}, ...]}
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from .doc import QueryKind, QueryParagraph
from .errors import SchemaError, ValidationError
from .heads import CLASS_NAMES
from .labels import StepLabels


@dataclass
class QueryRecord:
    query_id: str
    doc_id: str
    query: QueryParagraph
    labels: StepLabels | None = None
    drop: bool = False
    answers: list = field(default_factory=list)
    gold_class: str | None = None
    evidence: list = field(default_factory=list)

    def gold_sentences(self) -> list[tuple[int, int]]:
        if self.labels is None:
            return []
        for hop in reversed(self.labels.hops):
            sents = sorted((p, s) for k, p, s in hop if k == "sentence")
            if sents:
                return sents
        return []

    @property
    def gold_class_index(self) -> int | None:
        return None if self.gold_class is None else CLASS_NAMES.index(self.gold_class)

    def to_json(self) -> dict:
        row = {"query_id": self.query_id, "doc_id": self.doc_id,
               "query": {"units": list(self.query.units), "kind": self.query.kind.value},
               "drop": self.drop}
        if self.labels is not None:
            row["labels"] = self.labels.to_json()
        if self.answers:
            row["answers"] = list(self.answers)
        if self.gold_class is not None:
            row["class"] = self.gold_class
        if self.evidence:
            row["evidence"] = [list(e) for e in self.evidence]
        return row


def parse_query_record(obj: dict, where: str = "record") -> QueryRecord:
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected an object")
    for key in ("query_id", "doc_id", "query"):
        if key not in obj:
            raise SchemaError(f"{where}: missing field {key!r}")
    q = obj["query"]
    if not isinstance(q, dict) or "units" not in q:
        raise SchemaError(f"{where}: 'query' needs a 'units' list")
    try:
        kind = QueryKind(q.get("kind", "multihop"))
    except ValueError:
        raise SchemaError(f"{where}: unknown query kind {q.get('kind')!r}") from None
    drop = bool(obj.get("drop", False))
    labels = StepLabels.from_json(obj["labels"], drop=drop) if "labels" in obj else None
    gold_class = obj.get("class")
    if gold_class is not None and gold_class not in CLASS_NAMES:
        raise SchemaError(f"{where}: unknown class {gold_class!r}")
    try:
        qp = QueryParagraph(tuple(q["units"]), kind)
    except ValidationError as exc:
        raise SchemaError(f"{where}: {exc}") from None
    return QueryRecord(str(obj["query_id"]), str(obj["doc_id"]), qp, labels, drop,
                       list(obj.get("answers") or []), gold_class,
                       [tuple(e) for e in obj.get("evidence") or []])


def read_jsonl(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
    return rows


def write_jsonl(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def read_queries(path) -> list[QueryRecord]:
    return [parse_query_record(row, f"{path}:{i + 1}") for i, row in enumerate(read_jsonl(path))]


def write_queries(path, records) -> None:
    write_jsonl(path, (r.to_json() for r in records))


def read_predictions(path) -> list[dict]:
    rows = read_jsonl(path)
    for i, row in enumerate(rows):
        if not isinstance(row, dict) or "query_id" not in row or "ranked" not in row:
            raise SchemaError(f"{path}:{i + 1}: prediction rows need 'query_id' and 'ranked'")
    return rows
