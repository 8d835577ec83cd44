"""Synthetic-task experiments: training runs and ablations on planted chains."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from .hops import MixParams, QueryState, run_hops
from .index import EntryKind, score_all
from .synth import SynthData, SynthSpec, synth_generate
from .train import MultiPositive, TrainConfig, TrainExample, fit

VARIANTS = ("full", "no-update", "sentence-only", "single-hop")


@dataclass
class VariantResult:
    variant: str
    seed: int
    untrained_hits: float
    trained_hits: float
    initial_loss: float | None
    final_loss: float | None
    train_seconds: float

    def to_json(self) -> dict:
        return asdict(self)


def hop_hits(data: SynthData, queries, params: MixParams, masks, update: bool = True) -> float:
    """Fraction of queries whose last-hop retrieval lands on the gold sentence."""
    ok = 0
    for q in queries:
        trace = run_hops(QueryState.from_vectors(q.vectors), data.index(q.doc_id), params, masks, update)
        ok += trace.final_sentence == q.gold_sentence
    return ok / len(queries)


def single_hop_hits(data: SynthData, queries) -> float:
    """One retrieval over sentences with ``q_0`` alone: no mixing, nothing to train."""
    ok = 0
    for q in queries:
        index = data.index(q.doc_id)
        cand, z = score_all(q.vectors[0], index, EntryKind.SENTENCE)
        ok += index.locate(int(cand[np.argmax(z)]))[1:] == q.gold_sentence
    return ok / len(queries)


def run_variant(data: SynthData, variant: str, steps: int = 60, lr: float = 0.1, momentum: float = 0.9,
                rule=MultiPositive.MARGINAL, test_fraction: float = 0.2) -> VariantResult:
    seed = data.spec.seed
    train, test = data.split(test_fraction)
    if variant == "single-hop":
        hits = single_hop_hits(data, test)
        return VariantResult(variant, seed, hits, hits, None, None, 0.0)
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    sentence_only = variant == "sentence-only"
    update = variant != "no-update"
    masks = data.hop_masks(sentence_only)
    examples = [TrainExample(q.query_id, q.vectors, data.index(q.doc_id), q.labels_for(sentence_only), masks)
                for q in train]
    config = TrainConfig(learning_rate=lr, steps=steps, seed=seed, momentum=momentum, multi_positive_rule=rule)
    init = MixParams.random(data.spec.dim, np.random.default_rng(seed), config.init_scale)
    start = time.perf_counter()
    result = fit(examples, config, init, update=update)
    seconds = time.perf_counter() - start
    return VariantResult(variant, seed, hop_hits(data, test, init, masks, update),
                         hop_hits(data, test, result.params, masks, update),
                         result.losses[0], result.losses[-1], seconds)


def run_synthetic(seed: int, variants=VARIANTS, spec: SynthSpec | None = None, **kw) -> dict[str, VariantResult]:
    spec = spec or SynthSpec(seed=seed)
    data = synth_generate(spec)
    return {v: run_variant(data, v, **kw) for v in variants}
