"""Command line: ingest | embed | index | train | retrieve | eval | synth | bench.

Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import doc as docmod
from .bench import measure_throughput, random_index
from .dataset import QueryRecord, read_jsonl, read_predictions, read_queries, write_jsonl, write_queries
from .embed import (FileProvider, ToyProvider, embed_query_units, embed_sentences, paragraph_embedding_agnostic,
                    paragraph_key, query_key, sentence_key, write_embedding_table)
from .errors import HopmixError, TrainingError, ValidationError
from .heads import FUSION_PRESETS, FusionWeights
from .hops import MixParams, write_trace
from .index import Regime, build_index, load_index, save_index
from .metrics import evaluate
from .pipeline import default_masks, fit_masks, parse_masks, predict
from .synth import SynthSpec, synth_generate
from .train import MultiPositive, TrainConfig, TrainExample, fit, load_checkpoint, save_checkpoint

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _provider(args):
    if getattr(args, "embeddings", None):
        return FileProvider.from_path(args.embeddings)
    return ToyProvider(args.dim)


def _indexes(args, docs, provider):
    regime = Regime(args.regime)
    if getattr(args, "index_dir", None):
        out = {}
        for doc_id in docs:
            out[doc_id] = load_index(Path(args.index_dir) / f"{doc_id}.hidx", doc_id)
        return out
    return {doc_id: build_index(d, provider, regime) for doc_id, d in docs.items()}


def _lookup_doc(docs, rec: QueryRecord):
    if rec.doc_id not in docs:
        raise ValidationError(f"query {rec.query_id!r} refers to unknown document {rec.doc_id!r}")
    return docs[rec.doc_id]


def _weights(args) -> FusionWeights:
    l1, l2 = FUSION_PRESETS[args.preset] if args.preset else (1.5, 3.0)
    return FusionWeights(l1 if args.lambda1 is None else args.lambda1,
                         l2 if args.lambda2 is None else args.lambda2)


# -- subcommands --------------------------------------------------------------

def cmd_ingest(args):
    rows = read_jsonl(args.input)
    docs = []
    for i, row in enumerate(rows):
        if args.format == "jsonl":
            docs.append(docmod.parse_document(row))
        elif args.format == "table":
            for key in ("id", "headers", "rows"):
                if key not in row:
                    raise docmod.SchemaError(f"{args.input}:{i + 1}: missing field {key!r}")
            docs.append(docmod.linearize_table(row["id"], row["headers"], row["rows"], row.get("links")))
        else:
            for key in ("id", "sections"):
                if key not in row:
                    raise docmod.SchemaError(f"{args.input}:{i + 1}: missing field {key!r}")
            docs.append(docmod.linearize_paper(row["id"], row["sections"]))
    docmod.write_documents(args.output, docs)
    print(json.dumps({"documents": len(docs), "output": str(args.output)}))


def cmd_embed(args):
    provider = ToyProvider(args.dim)
    table = {}
    docs = docmod.read_documents(args.docs)
    for d in docs.values():
        for i, p in enumerate(d.paragraphs):
            vecs = embed_sentences(provider, p, d.id)
            for j, v in enumerate(vecs):
                table[sentence_key(d.id, i, j)] = v
            table[paragraph_key(d.id, i)] = paragraph_embedding_agnostic(vecs)
    n_queries = 0
    if args.queries:
        for rec in read_queries(args.queries):
            for t, v in enumerate(embed_query_units(provider, rec.query, rec.query_id)):
                table[query_key(rec.query_id, t)] = v
            n_queries += 1
    write_embedding_table(args.output, table, args.dim)
    print(json.dumps({"vectors": len(table), "documents": len(docs), "queries": n_queries,
                      "dim": args.dim, "output": str(args.output)}))


def cmd_index(args):
    docs = docmod.read_documents(args.docs)
    provider = _provider(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    total = 0
    for doc_id, d in docs.items():
        index = build_index(d, provider, Regime(args.regime))
        save_index(index, out_dir / f"{doc_id}.hidx")
        total += index.n_entries
    print(json.dumps({"indexes": len(docs), "entries": total, "out_dir": str(out_dir)}))


def _examples(args, records, docs, provider, indexes, masks):
    examples = []
    for rec in records:
        if rec.labels is None:
            raise ValidationError(f"training query {rec.query_id!r} has no labels")
        if rec.drop or rec.labels.drop:
            continue
        _lookup_doc(docs, rec)
        vecs = np.array(embed_query_units(provider, rec.query, rec.query_id))
        hop_masks = fit_masks(masks, len(vecs)) or default_masks(rec.query.kind, len(vecs))
        examples.append(TrainExample(rec.query_id, vecs, indexes[rec.doc_id], rec.labels,
                                     hop_masks, rec.gold_class_index))
    return examples


def cmd_train(args):
    docs = docmod.read_documents(args.docs)
    provider = _provider(args)
    indexes = _indexes(args, docs, provider)
    records = read_queries(args.queries)
    examples = _examples(args, records, docs, provider, indexes, parse_masks(args.mask))
    config = TrainConfig(learning_rate=args.lr, steps=args.steps, seed=args.seed,
                         multi_positive_rule=MultiPositive(args.multi_positive),
                         momentum=args.momentum, batch_size=args.batch_size)
    start = time.perf_counter()
    with np.errstate(over="ignore", invalid="ignore"):  # divergence surfaces as TrainingError
        result = fit(examples, config, update=not args.no_update)
    save_checkpoint(result.params, args.output)
    print(json.dumps({"examples": len(examples), "steps": args.steps, "seconds": time.perf_counter() - start,
                      "initial_loss": result.losses[0] if result.losses else None,
                      "final_loss": result.losses[-1] if result.losses else None,
                      "losses": result.losses, "checkpoint": str(args.output)}))


def _run_predictions(args, docs, provider, indexes, records, params, trace_fh=None):
    masks = parse_masks(args.mask)
    weights = _weights(args)
    rows = []
    for rec in records:
        d = _lookup_doc(docs, rec)
        row, trace = predict(rec.query_id, rec.query, d, indexes[rec.doc_id], provider, params, weights,
                             masks, update=not args.no_update, top_k=args.top_k)
        rows.append(row)
        if trace_fh is not None:
            write_trace(trace_fh, trace, rec.query_id)
    return rows


def cmd_retrieve(args):
    docs = docmod.read_documents(args.docs)
    provider = _provider(args)
    indexes = _indexes(args, docs, provider)
    params = load_checkpoint(args.checkpoint)
    records = read_queries(args.queries)
    rows = _run_predictions(args, docs, provider, indexes, records, params,
                            sys.stdout if args.trace else None)
    if args.output:
        write_jsonl(args.output, rows)
    elif not args.trace:
        for row in rows:
            sys.stdout.write(json.dumps(row) + "\n")


def cmd_eval(args):
    gold = read_queries(args.gold)
    docs = docmod.read_documents(args.docs) if args.docs else None
    qps = None
    if args.predictions:
        preds = read_predictions(args.predictions)
    else:
        if not (args.checkpoint and docs is not None):
            raise UsageError("eval needs --predictions, or --checkpoint with --docs")
        provider = _provider(args)
        indexes = _indexes(args, docs, provider)
        params = load_checkpoint(args.checkpoint)
        start = time.perf_counter()
        preds = _run_predictions(args, docs, provider, indexes, gold, params)
        qps = len(gold) / (time.perf_counter() - start)
    report = evaluate(preds, gold, docs)
    report.throughput_qps = qps
    if args.strict and report.strict_acc is None:
        raise ValidationError("--strict needs gold records with 'class' (and 'evidence')")
    out = report.to_json()
    print(json.dumps(out))
    for key, val in out.items():
        if val is not None:
            print(f"{key:>18}  {val:.4f}" if isinstance(val, float) else f"{key:>18}  {val}", file=sys.stderr)


def cmd_synth(args):
    spec = SynthSpec(args.n_docs, args.paras, args.sents, args.dim, args.hops, args.seed)
    data = synth_generate(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    docmod.write_documents(out / "docs.jsonl", data.documents)
    write_embedding_table(out / "embeddings.hmix", data.table, spec.dim)
    train, test = data.split(args.test_fraction)

    def records(qs):
        return [QueryRecord(q.query_id, q.doc_id, q.query, q.labels) for q in qs]

    write_queries(out / "train.jsonl", records(train))
    write_queries(out / "test.jsonl", records(test))
    print(json.dumps({"documents": len(data.documents), "train": len(train), "test": len(test),
                      "rejected": data.rejected, "out_dir": str(out)}))


def cmd_bench(args):
    index = random_index(args.entries, args.dim, seed=args.seed)
    rng = np.random.default_rng(args.seed + 1)
    queries = rng.normal(size=(args.queries, args.hops, args.dim)) / np.sqrt(args.dim)
    params = MixParams.random(args.dim, args.seed)
    masks = fit_masks(parse_masks(args.mask), args.hops)
    result = measure_throughput(index, queries, params, args.batch, masks, parallel=args.parallel)
    print(json.dumps(result))
    print(f"{result['qps']:.1f} queries/s over {result['n_entries']} entries, dim {result['dim']}, "
          f"batch {result['batch']}, threads {result['threads']}", file=sys.stderr)
    for stage, sec in result["stages"].items():
        print(f"{stage:>8}  {sec:.4f}s", file=sys.stderr)


# -- parser -------------------------------------------------------------------

def _add_provider(p, dim_default=64):
    p.add_argument("--embeddings", help="HMIX embedding table (default: toy hash embeddings)")
    p.add_argument("--dim", type=int, default=dim_default, help="toy embedding dimension")
    p.add_argument("--regime", choices=[r.value for r in Regime], default=Regime.AGNOSTIC.value)
    p.add_argument("--index-dir", help="directory of prebuilt <doc_id>.hidx files")


def _add_retrieval(p):
    p.add_argument("--mask", help="per-hop entry filter, comma list of paragraph|sentence|any")
    p.add_argument("--lambda1", type=float, default=None)
    p.add_argument("--lambda2", type=float, default=None)
    p.add_argument("--preset", choices=sorted(FUSION_PRESETS))
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--no-update", action="store_true", help="skip the residual query update")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hopmix", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="convert raw inputs to document JSON Lines")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--format", choices=["jsonl", "table", "paper"], default="jsonl")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("embed", help="write toy embeddings for documents and queries")
    p.add_argument("--docs", required=True)
    p.add_argument("--queries")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("index", help="build one HIDX index per document")
    p.add_argument("--docs", required=True)
    p.add_argument("--out-dir", required=True)
    _add_provider(p)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("train", help="fit mixing parameters")
    p.add_argument("--queries", required=True, help="training set JSON Lines")
    p.add_argument("--docs", required=True)
    p.add_argument("-o", "--output", required=True, help="checkpoint path")
    _add_provider(p)
    p.add_argument("--mask")
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch", "--batch-size", dest="batch_size", type=int, default=None,
                   help="minibatch size (default: full batch)")
    p.add_argument("--multi-positive", choices=[m.value for m in MultiPositive], default="marginal")
    p.add_argument("--no-update", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("retrieve", help="rank sentences for queries")
    p.add_argument("--queries", required=True)
    p.add_argument("--docs", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("-o", "--output")
    p.add_argument("--trace", action="store_true", help="print per-hop trace JSON Lines")
    _add_provider(p)
    _add_retrieval(p)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("eval", help="score predictions against gold records")
    p.add_argument("--gold", required=True)
    p.add_argument("--predictions")
    p.add_argument("--docs")
    p.add_argument("--checkpoint", help="run retrieval on the gold queries instead of reading predictions")
    p.add_argument("--strict", action="store_true", help="require strict (evidence-checked) accuracy")
    _add_provider(p)
    _add_retrieval(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate the planted-chain benchmark")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-docs", type=int, default=200)
    p.add_argument("--paras", type=int, default=10)
    p.add_argument("--sents", type=int, default=5)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--hops", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="measure hop-pipeline throughput")
    p.add_argument("--entries", type=int, default=10_000)
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--queries", type=int, default=2000)
    p.add_argument("--hops", type=int, default=2)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--mask")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--parallel", action="store_true", help="allow HOPMIX_THREADS (or all) BLAS threads")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, or a usage error already printed by argparse
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    threads = os.environ.get("HOPMIX_THREADS")
    try:
        if threads and args.command != "bench":
            with threadpool_limits(int(threads)):
                args.func(args)
        else:
            args.func(args)
    except UsageError as exc:
        print(f"hopmix: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"hopmix: error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as exc:
        print(f"hopmix: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except HopmixError as exc:
        print(f"hopmix: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
