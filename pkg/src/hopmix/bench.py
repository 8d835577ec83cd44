"""Throughput of the full hop pipeline on random indexes."""
from __future__ import annotations

import os
import time

import numpy as np
from threadpoolctl import threadpool_limits

from .hops import MixParams, StageTimer, run_hops_batch
from .index import DEFERRED, PARAGRAPH, SENTENCE, CombinedIndex


def random_index(n_entries: int, dim: int, sents_per_para: int = 9, seed: int = 0,
                 deferred: bool = False) -> CombinedIndex:
    """Random index with paragraphs of ``sents_per_para`` sentences (last one may be shorter)."""
    rng = np.random.default_rng(seed)
    kinds, paras, sents = [], [], []
    i = 0
    while len(kinds) < n_entries:
        n = min(sents_per_para, n_entries - len(kinds) - 1)
        if n < 1:
            break
        kinds.append(DEFERRED if deferred else PARAGRAPH)
        paras.append(i)
        sents.append(-1)
        kinds.extend([SENTENCE] * n)
        paras.extend([i] * n)
        sents.extend(range(n))
        i += 1
    vecs = rng.normal(size=(len(kinds), dim)).astype(np.float32).astype(np.float64)
    vecs /= np.sqrt(dim)
    if deferred:
        vecs[np.asarray(kinds) == DEFERRED] = 0.0
    return CombinedIndex(f"bench{seed}", vecs, kinds, paras, sents)


def thread_count(parallel: bool) -> int:
    if not parallel:
        return 1
    return int(os.environ.get("HOPMIX_THREADS", os.cpu_count() or 1))


def measure_throughput(index: CombinedIndex, queries: np.ndarray, params: MixParams,
                       batch: int = 8, hop_masks=None, parallel: bool = False) -> dict:
    """Queries/second over ``run_hops`` in sequential batches of ``batch``.

    ``queries`` has shape ``(n_queries, hops, dim)``.
    """
    queries = np.asarray(queries, dtype=np.float64)
    threads = thread_count(parallel)
    timer = StageTimer()
    with threadpool_limits(threads):
        start = time.perf_counter()
        for lo in range(0, len(queries), batch):
            run_hops_batch(queries[lo:lo + batch], index, params, hop_masks, timer=timer)
        total = time.perf_counter() - start
    return {
        "qps": len(queries) / total,
        "seconds": total,
        "n_queries": len(queries),
        "n_entries": index.n_entries,
        "dim": index.dim,
        "hops": queries.shape[1],
        "batch": batch,
        "threads": threads,
        "parallel": parallel,
        "stages": {k: timer.totals.get(k, 0.0) for k in ("score", "mix", "update")},
    }
