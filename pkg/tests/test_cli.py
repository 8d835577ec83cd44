import json
import subprocess
import sys

import pytest

from hopmix.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def synth_dir(tmp_path, capsys):
    code, out, _ = run(capsys, "synth", "--seed", 7, "--n-docs", 40, "--out-dir", tmp_path)
    assert code == 0 and json.loads(out)["train"] == 32
    return tmp_path


def test_synth_train_eval_pipeline(synth_dir, capsys):
    d = synth_dir
    common = ["--docs", d / "docs.jsonl", "--embeddings", d / "embeddings.hmix"]
    code, out, _ = run(capsys, "train", "--queries", d / "train.jsonl", *common, "-o", d / "ck.hckp",
                       "--steps", 40, "--lr", 0.1, "--seed", 7)
    assert code == 0
    summary = json.loads(out)
    assert summary["final_loss"] < summary["initial_loss"]
    code, out, err = run(capsys, "eval", "--gold", d / "test.jsonl", "--checkpoint", d / "ck.hckp", *common)
    assert code == 0
    report = json.loads(out)
    assert set(report) >= {"hits_at_1", "em", "f1", "easy_acc", "strict_acc", "throughput_qps"}
    assert 0.0 <= report["hits_at_1"] <= 1.0 and report["n"] == 8
    assert "hits_at_1" in err


def test_retrieve_trace_and_predictions(synth_dir, capsys):
    d = synth_dir
    common = ["--docs", d / "docs.jsonl", "--embeddings", d / "embeddings.hmix"]
    run(capsys, "train", "--queries", d / "train.jsonl", *common, "-o", d / "ck.hckp", "--steps", 2)
    code, out, _ = run(capsys, "retrieve", "--queries", d / "test.jsonl", "--checkpoint", d / "ck.hckp",
                       *common, "--trace", "-o", d / "pred.jsonl")
    assert code == 0
    rows = [json.loads(line) for line in out.splitlines()]
    assert len(rows) == 16 and [r["hop"] for r in rows[:2]] == [0, 1]
    assert rows[0]["retrieved"]["kind"] == "paragraph" and rows[1]["retrieved"]["kind"] == "sentence"
    code, out, _ = run(capsys, "eval", "--gold", d / "test.jsonl", "--predictions", d / "pred.jsonl")
    assert code == 0 and json.loads(out)["throughput_qps"] is None


def test_retrieve_mask_and_fusion_flags(synth_dir, capsys):
    d = synth_dir
    common = ["--docs", d / "docs.jsonl", "--embeddings", d / "embeddings.hmix"]
    run(capsys, "train", "--queries", d / "train.jsonl", *common, "-o", d / "ck.hckp", "--steps", 1,
        "--multi-positive", "sumce", "--batch", 4)
    code, out, _ = run(capsys, "retrieve", "--queries", d / "test.jsonl", "--checkpoint", d / "ck.hckp", *common,
                       "--mask", "sentence", "--lambda1", 0, "--lambda2", 0, "--top-k", 3)
    assert code == 0
    row = json.loads(out.splitlines()[0])
    assert len(row["ranked"]) == 3
    assert row["ranked"][0]["score"] >= row["ranked"][1]["score"]


def _write(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))


def test_eval_strict_fixture(tmp_path, capsys):
    q = {"units": ["may I?"], "kind": "conversational"}
    gold = [
        {"query_id": "a", "doc_id": "d", "query": q, "class": "Yes", "evidence": [[0, 1]]},
        {"query_id": "b", "doc_id": "d", "query": q, "class": "No", "evidence": [[0, 0], [1, 0]]},
        {"query_id": "c", "doc_id": "d", "query": q, "class": "Inquire", "evidence": [[1, 0]]},
        {"query_id": "e", "doc_id": "d", "query": q, "class": "Irrelevant"},
    ]
    ret = lambda *locs: [{"para": p, "sent": s} for p, s in locs]
    preds = [
        {"query_id": "a", "ranked": [], "class": "Yes", "retrieved": ret((0, 0), (0, 1))},   # easy + strict
        {"query_id": "b", "ranked": [], "class": "No", "retrieved": ret((0, 0))},            # easy only
        {"query_id": "c", "ranked": [], "class": "Yes", "retrieved": ret((1, 0))},           # neither
        {"query_id": "e", "ranked": [], "class": "Irrelevant", "retrieved": []},             # vacuous evidence
    ]
    _write(tmp_path / "gold.jsonl", gold)
    _write(tmp_path / "pred.jsonl", preds)
    code, out, _ = run(capsys, "eval", "--gold", tmp_path / "gold.jsonl", "--predictions", tmp_path / "pred.jsonl",
                       "--strict")
    assert code == 0
    report = json.loads(out)
    assert report["easy_acc"] == 0.75 and report["strict_acc"] == 0.5
    assert report["evidence_coverage"] == pytest.approx(2 / 3)
    assert report["n"] == 4 and report["hits_at_1"] is None


def test_ingest_embed_index(tmp_path, capsys):
    tables = [{"id": "t1", "headers": ["Medal", "Name"], "rows": [["Gold", "Rudolf Svensson"]],
               "links": [[[], ["Swedish wrestler."]]]}]
    _write(tmp_path / "tables.jsonl", tables)
    assert run(capsys, "ingest", tmp_path / "tables.jsonl", "--format", "table", "-o", tmp_path / "docs.jsonl")[0] == 0
    doc = json.loads((tmp_path / "docs.jsonl").read_text())
    assert doc["paragraphs"][0]["sentences"] == ["Medal", "Gold", "Name", "Rudolf Svensson", "Swedish wrestler."]
    papers = [{"id": "p1", "sections": [{"title": "Experiments", "children": [{"title": "Setup", "text": "Ran."}]}]}]
    _write(tmp_path / "papers.jsonl", papers)
    assert run(capsys, "ingest", tmp_path / "papers.jsonl", "--format", "paper", "-o", tmp_path / "pd.jsonl")[0] == 0
    assert json.loads((tmp_path / "pd.jsonl").read_text())["paragraphs"][0]["sentences"][0] == "Experiments. Setup."

    code, out, _ = run(capsys, "embed", "--docs", tmp_path / "docs.jsonl", "--dim", 8, "-o", tmp_path / "e.hmix")
    assert code == 0 and json.loads(out)["vectors"] == 6
    for regime in ("agnostic", "query-dependent"):
        code, out, _ = run(capsys, "index", "--docs", tmp_path / "docs.jsonl", "--embeddings", tmp_path / "e.hmix",
                           "--regime", regime, "--out-dir", tmp_path / regime)
        assert code == 0 and (tmp_path / regime / "t1.hidx").exists()


def test_bench_command(capsys):
    code, out, err = run(capsys, "bench", "--entries", 1000, "--dim", 16, "--queries", 100, "--batch", 4)
    assert code == 0
    rep = json.loads(out)
    assert rep["batch"] == 4 and set(rep["stages"]) == {"score", "mix", "update"}
    assert "queries/s" in err


def test_usage_errors(tmp_path, capsys):
    assert run(capsys, "bogus")[0] == 1
    assert run(capsys, "synth", "--out-dir", tmp_path, "--no-such-flag")[0] == 1
    assert run(capsys, "eval", "--gold", tmp_path / "missing.jsonl")[0] == 1
    assert run(capsys, "eval", "--gold", tmp_path / "missing.jsonl", "--predictions", "x")[0] == 1


def test_data_errors(tmp_path, capsys):
    (tmp_path / "docs.jsonl").write_text("{broken\n")
    code, _, err = run(capsys, "index", "--docs", tmp_path / "docs.jsonl", "--out-dir", tmp_path / "i")
    assert code == 2 and "data error" in err
    (tmp_path / "e.hmix").write_bytes(b"NOPE" + bytes(16))
    _write(tmp_path / "docs.jsonl", [{"id": "d", "paragraphs": [{"sentences": ["a"]}]}])
    code, _, _ = run(capsys, "index", "--docs", tmp_path / "docs.jsonl", "--embeddings", tmp_path / "e.hmix",
                     "--out-dir", tmp_path / "i")
    assert code == 2


def test_numeric_error(synth_dir, capsys):
    d = synth_dir
    code, _, err = run(capsys, "train", "--queries", d / "train.jsonl", "--docs", d / "docs.jsonl",
                       "--embeddings", d / "embeddings.hmix", "-o", d / "ck.hckp", "--lr", 1e300, "--steps", 20)
    assert code == 3 and "numeric" in err


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "hopmix.cli", "bench", "--entries", "500", "--dim", "8",
                           "--queries", "100"], capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["n_entries"] == 500
    proc = subprocess.run([sys.executable, "-m", "hopmix.cli", "--bad"], capture_output=True, text=True)
    assert proc.returncode == 1
