import json

import pytest
from hypothesis import given, strategies as st

from hopmix.doc import (QueryKind, build_conversational_query, build_multihop_query, document_to_record,
                        dummy_marker, is_dummy, linearize_paper, linearize_table, linearize_table_row,
                        parse_document, read_documents, render_followup, split_sentences, write_documents)
from hopmix.errors import SchemaError, ValidationError

words = st.text(alphabet="abcdefgh XYZ", min_size=1, max_size=12).filter(lambda s: s.strip())


def test_parse_minimal():
    doc = parse_document({"id": "d", "paragraphs": [{"sentences": ["a"]}]})
    assert len(doc.paragraphs) == 1
    assert len(doc.paragraphs[0].sentences) == 1
    assert doc.n_sentences == 1


def test_parse_counts_and_para_idx():
    doc = parse_document({"id": "d", "paragraphs": [{"sentences": ["a", "b"]},
                                                    {"sentences": ["c", "d", "e"]}]})
    assert doc.n_sentences == 5
    assert {s.para_idx for s in doc.sentences()} == {0, 1}
    assert [s.sent_idx for s in doc.sentences()] == [0, 1, 0, 1, 2]


def test_duplicate_paragraph_id():
    with pytest.raises(ValidationError):
        parse_document({"id": "d", "paragraphs": [{"id": "x", "sentences": ["a"]},
                                                  {"id": "x", "sentences": ["b"]}]})


@pytest.mark.parametrize("record", [
    {"paragraphs": []},
    {"id": "d"},
    {"id": "d", "paragraphs": [{"title": "t"}]},
    {"id": "d", "paragraphs": "nope"},
])
def test_schema_errors(record):
    with pytest.raises(SchemaError):
        parse_document(record)


def test_empty_sentence_rejected():
    with pytest.raises(ValidationError):
        parse_document({"id": "d", "paragraphs": [{"sentences": ["ok", "  "]}]})


def test_read_documents_bad_json(tmp_path):
    path = tmp_path / "docs.jsonl"
    path.write_text('{"id": "d", "paragraphs": [{"sentences": ["a"]}]}\n{oops\n')
    with pytest.raises(SchemaError):
        read_documents(path)


@given(st.lists(st.lists(words, min_size=1, max_size=4), min_size=1, max_size=4),
       st.lists(st.one_of(st.none(), words), min_size=4, max_size=4))
def test_record_round_trip(paras, titles):
    record = {"id": "doc", "paragraphs": [{"id": f"p{i}", "title": titles[i], "sentences": s}
                                          for i, s in enumerate(paras)]}
    doc = parse_document(record)
    again = parse_document(json.loads(json.dumps(document_to_record(doc))))
    assert again == doc


def test_file_round_trip(tmp_path):
    doc = parse_document({"id": "d", "paragraphs": [{"sentences": ["a", "b"]}, {"sentences": ["ü"]}]})
    write_documents(tmp_path / "x.jsonl", [doc])
    assert read_documents(tmp_path / "x.jsonl") == {"d": doc}


def test_medalist_row():
    para = linearize_table_row(["Medal", "Name"], ["Gold", "Rudolf Svensson"])
    assert [s.text for s in para.sentences] == ["Medal", "Gold", "Name", "Rudolf Svensson"]


def test_row_empty_links_count():
    para = linearize_table_row(["a", "b", "c"], ["1", "2", "3"], [[], [], []])
    assert len(para.sentences) == 6


def test_row_links_follow_their_cell():
    para = linearize_table_row(["H0", "H1"], ["c0", "c1"], [["link one.", "link two."], []])
    texts = [s.text for s in para.sentences]
    at = texts.index("c0")
    assert texts[at + 1:at + 3] == ["link one.", "link two."]
    assert texts == ["H0", "c0", "link one.", "link two.", "H1", "c1"]


def test_row_length_mismatch():
    with pytest.raises(ValidationError):
        linearize_table_row(["a", "b"], ["1"])


@given(st.integers(1, 5).flatmap(lambda n: st.tuples(
    st.lists(words, min_size=n, max_size=n), st.lists(words, min_size=n, max_size=n),
    st.lists(st.lists(words, max_size=3), min_size=n, max_size=n))))
def test_row_length_invariant(case):
    headers, cells, links = case
    para = linearize_table_row(headers, cells, links)
    assert len(para.sentences) == 2 * len(headers) + sum(len(x) for x in links)


def test_linearize_table_doc():
    doc = linearize_table("t", ["Medal", "Name"], [["Gold", "A"], ["Silver", "B"]])
    assert len(doc.paragraphs) == 2
    assert doc.sentence(1, 1).text == "Silver"


def test_paper_two_subsections():
    tree = [{"title": "Method", "children": [{"title": "A", "text": "One."}, {"title": "B", "text": "Two."}]}]
    assert len(linearize_paper("p", tree).paragraphs) == 2


def test_paper_loose_text_first():
    tree = [{"title": "Intro", "text": "Loose text here.", "children": [{"title": "Sub", "text": "Inner."}]}]
    doc = linearize_paper("p", tree)
    assert len(doc.paragraphs) == 2
    assert doc.paragraphs[0].sentences[1].text == "Loose text here."
    assert doc.paragraphs[1].sentences[1].text == "Inner."


def test_paper_heading_chain():
    tree = [{"title": "Experiments", "children": [{"title": "Setup", "text": "We ran it."}]}]
    doc = linearize_paper("p", tree)
    assert doc.paragraphs[0].sentences[0].text == "Experiments. Setup."


def test_paper_empty():
    with pytest.raises(ValidationError):
        linearize_paper("p", [])


def _tree(depth):
    leaf = st.fixed_dictionaries({"title": words, "text": st.one_of(st.just(""), words)})
    if depth == 0:
        return leaf
    return st.fixed_dictionaries({"title": words, "text": st.one_of(st.just(""), words),
                                  "children": st.lists(_tree(depth - 1), max_size=3)})


def _flatten(nodes, out, path):
    # reference traversal: each node gets a unique tag in its text
    for node in nodes:
        kids = node.get("children") or []
        if node["text"] or not kids:
            out.append(node["text"])
        _flatten(kids, out, path)
    return out


@given(st.lists(_tree(2), min_size=1, max_size=3))
def test_paper_order_and_count(tree):
    # tag every body so the order is observable
    counter = iter(range(10_000))

    def tag(nodes):
        for n in nodes:
            if n["text"]:
                n["text"] = f"Body {next(counter)}"
            tag(n.get("children") or [])
    tag(tree)
    expected = _flatten(tree, [], [])
    doc = linearize_paper("p", tree)
    assert len(doc.paragraphs) == len(expected)
    got = [next((s.text for s in p.sentences if s.text.startswith("Body ")), "") for p in doc.paragraphs]
    assert got == expected


def test_split_sentences():
    assert split_sentences("One thing. Two things! three") == ["One thing.", "Two things! three"]
    assert split_sentences("") == []


def test_conversational_queries():
    assert build_conversational_query("Can I?").units == ("Can I?",)
    qp = build_conversational_query("Can I?", [("a?", "Yes"), ("b?", "No")])
    assert len(qp.units) == 3
    assert qp.kind is QueryKind.CONVERSATIONAL


def test_followup_render():
    unit = build_conversational_query("q", [("Are you a resident?", "No")]).units[1]
    assert unit == render_followup("Are you a resident?", "No") == "Q: Are you a resident? A: No"


def test_multihop_queries():
    qp = build_multihop_query("who?", 2)
    assert qp.units == ("who?", dummy_marker(1))
    assert is_dummy(qp.units[1]) and not is_dummy("who?")
    assert build_multihop_query("who?", 1).units == ("who?",)
    three = build_multihop_query("who?", 3).units
    assert len(three) == 3 and len(set(three[1:])) == 2
    with pytest.raises(ValidationError):
        build_multihop_query("who?", 0)
