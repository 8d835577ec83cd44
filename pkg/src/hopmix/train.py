"""Per-hop retrieval loss, reverse-mode gradients and a small SGD loop.

The forward pass is ``run_hops`` itself: retrieval is a hard argmax, so
gradients flow through the scores, the softmaxes of the mixing step and the
residual update, but not through the choice of entry.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .embed import softmax
from .errors import FormatError, LabelError, StateError, TrainingError, TruncatedFileError, ValidationError
from .hops import MixParams, QueryState, RetrievalTrace, run_hops
from .heads import classification_loss, classify_conversation
from .index import SENTENCE, CombinedIndex, EntryKind, score_all, segment_softmax
from .labels import StepLabels

HCKP_MAGIC = b"HCKP"
HCKP_VERSION = 1


class MultiPositive(str, enum.Enum):
    MARGINAL = "marginal"   # -log sum_{m in pos} p_m
    SUMCE = "sumce"         # -sum_{m in pos} log p_m


def _logsumexp(z):
    mx = z.max()
    return mx + np.log(np.exp(z - mx).sum())


def loss_from_scores(scores: np.ndarray, pos: np.ndarray, rule=MultiPositive.MARGINAL):
    """Loss and its gradient w.r.t. ``scores``; ``pos`` are positions into ``scores``."""
    z = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(pos, dtype=np.intp)
    if pos.size == 0:
        raise LabelError("a supervised hop needs at least one positive")
    if pos.min() < 0 or pos.max() >= z.size:
        raise ValidationError(f"positive position out of range for {z.size} scores")
    p = softmax(z)
    if MultiPositive(rule) is MultiPositive.MARGINAL:
        lse = _logsumexp(z)
        loss = lse - _logsumexp(z[pos])
        dz = p.copy()
        dz[pos] -= softmax(z[pos])
    else:
        loss = pos.size * _logsumexp(z) - z[pos].sum()
        dz = pos.size * p
        np.add.at(dz, pos, -1.0)
    return max(float(loss), 0.0), dz


def _positions(cand: np.ndarray, entries) -> np.ndarray:
    entries = np.asarray(sorted(entries), dtype=np.intp)
    pos = np.searchsorted(cand, entries)
    if np.any(pos >= len(cand)) or np.any(cand[np.minimum(pos, len(cand) - 1)] != entries):
        raise LabelError(f"positive entries {entries.tolist()} not among the scored candidates")
    return pos


def step_loss(q, index: CombinedIndex, positives, mask: EntryKind | None = None,
              rule=MultiPositive.MARGINAL) -> float:
    """Softmax cross entropy of one hop's scores against a set of positive entry indices."""
    positives = list(positives)
    if not positives:
        raise LabelError("a supervised hop needs at least one positive")
    if min(positives) < 0 or max(positives) >= index.n_entries:
        raise ValidationError(f"positive entry out of range 0..{index.n_entries - 1}")
    cand, scores = score_all(q, index, mask)
    return loss_from_scores(scores, _positions(cand, positives), rule)[0]


@dataclass
class Tape:
    queries: np.ndarray           # (hops, dim) initial query vectors
    index: CombinedIndex
    params: MixParams
    trace: RetrievalTrace
    positions: list               # per hop: positions into that hop's candidates, or None
    rule: MultiPositive
    gold_class: int | None
    hop_losses: list
    class_loss: float | None

    @property
    def loss(self) -> float:
        return float(sum(self.hop_losses) + (self.class_loss or 0.0))


@dataclass
class GradReport:
    grads: dict
    loss: float
    fd_max_rel_error: float | None = None
    fd_errors: dict = field(default_factory=dict)


def forward(queries, index: CombinedIndex, params: MixParams, labels: StepLabels | None = None,
            hop_masks=None, update: bool = True, rule=MultiPositive.MARGINAL,
            gold_class: int | None = None, forced=None) -> Tape:
    queries = np.asarray(queries, dtype=np.float64)
    trace = run_hops(QueryState.from_vectors(queries), index, params, hop_masks, update, forced)
    entry_sets = labels.entry_sets(index) if labels is not None else [None] * len(trace.records)
    if len(entry_sets) > len(trace.records):
        raise ValidationError(f"labels for {len(entry_sets)} hops but only {len(trace.records)} hops ran")
    positions, losses = [], []
    for t, rec in enumerate(trace.records):
        ents = entry_sets[t] if t < len(entry_sets) else None
        if not ents:
            positions.append(None)
            continue
        pos = _positions(rec.candidates, ents)
        positions.append(pos)
        losses.append(loss_from_scores(rec.scores, pos, rule)[0])
    class_loss = None
    if gold_class is not None:
        class_loss = classification_loss(classify_conversation(trace, params).m, gold_class)
    return Tape(queries, index, params, trace, positions, MultiPositive(rule), gold_class, losses, class_loss)


def total_loss(queries, index, params, labels, hop_masks=None, update=True,
               rule=MultiPositive.MARGINAL, gold_class=None, forced=None) -> float:
    return forward(queries, index, params, labels, hop_masks, update, rule, gold_class, forced).loss


def _segments_for(index, cand):
    """Split candidate positions into paragraph and sentence ones."""
    is_para = index.kinds[cand] != SENTENCE
    return np.flatnonzero(is_para), np.flatnonzero(~is_para)


def backward(tape: Tape | None) -> GradReport:
    """Exact gradients of ``tape.loss`` w.r.t. the mixing parameters, the
    initial query vectors (``"queries"``) and the index entry vectors
    (``"entries"``)."""
    if tape is None:
        raise StateError("backward needs a tape from forward()")
    P, index, recs = tape.params, tape.index, tape.trace.records
    T, d = len(recs), P.dim
    W = P.W_q
    gW, gv, gu, gWc = np.zeros_like(W), np.zeros(d), np.zeros(d), np.zeros_like(P.W_c)
    gE = np.zeros_like(index.vecs)
    gq = np.zeros((T, d))
    gK = [np.zeros_like(r.k_vectors) for r in recs]

    if tape.gold_class is not None:
        sizes = [len(r.k_vectors) for r in recs]
        Kall = np.concatenate([r.k_vectors for r in recs])
        gamma = softmax(Kall @ P.u)
        kt = gamma @ Kall
        dm = softmax(kt @ P.W_c)
        dm[tape.gold_class] -= 1.0
        gWc += np.outer(kt, dm)
        dkt = P.W_c @ dm
        dgamma = Kall @ dkt
        da = gamma * (dgamma - gamma @ dgamma)
        gu += da @ Kall
        dKall = np.outer(gamma, dkt) + np.outer(da, P.u)
        gK = np.split(dKall, np.cumsum(sizes)[:-1])

    for t in reversed(range(T)):
        r = recs[t]
        q = r.query
        dqt = gq[t + 1] if (tape.trace.update and t + 1 < T) else np.zeros(d)
        if r.kind == "sentence":
            m = r.mixed_rows[0]
            dk = dqt + gK[t][0]
            gW += np.outer(np.concatenate([q, index.vecs[m]]), dk)
            dx = W @ dk
            gq[t] += dx[:d]
            gE[m] += dx[d:]
        else:
            S = index.vecs[r.mixed_rows]
            K, alpha, beta = r.k_vectors, r.alpha, r.beta
            dK = np.outer(beta, dqt) + gK[t]
            dbeta = K @ dqt
            db = beta * (dbeta - beta @ dbeta)
            gv += db @ K
            dK += np.outer(db, P.v)
            X = np.concatenate([alpha[:, None] * q[None, :], S], axis=1)
            gW += X.T @ dK
            dX = dK @ W.T
            dAq, dS = dX[:, :d], dX[:, d:].copy()
            gq[t] += alpha @ dAq
            dalpha = dAq @ q
            dl = alpha * (dalpha - alpha @ dalpha)
            gq[t] += dl @ S
            dS += np.outer(dl, q)
            gE[r.mixed_rows] += dS
        if tape.positions[t] is not None:
            _, dz = loss_from_scores(r.scores, tape.positions[t], tape.rule)
            _score_backward(index, r.candidates, dz, q, gq[t], gE)

    grads = {"W_q": gW, "v": gv, "u": gu, "W_c": gWc, "queries": gq, "entries": gE}
    return GradReport(grads, tape.loss)


def _score_backward(index, cand, dz, q, gq_t, gE):
    """Accumulate gradients of ``scores = C[cand] @ q`` into ``gq_t`` and ``gE`` in place."""
    if not index.deferred:
        C = index.vecs[cand]
        gq_t += dz @ C
        gE[cand] += np.outer(dz, q)
        return
    ppos, spos = _segments_for(index, cand)
    dz_sent = np.zeros(len(index.sent_rows))
    srows = cand[spos]
    # sentence rows are ordered, so their position in sent_block is a searchsorted away
    dz_sent[np.searchsorted(index.sent_rows, srows)] += dz[spos]
    if len(ppos):
        zs = index.sent_block @ q
        alpha = segment_softmax(zs, index.seg_starts)
        zp = np.add.reduceat(alpha * zs, index.seg_starts)
        counts = np.diff(np.append(index.seg_starts, len(zs)))
        paras = index.para_idx[cand[ppos]]
        dzp = np.zeros(index.n_paragraphs)
        dzp[paras] = dz[ppos]
        dzp_rep = np.repeat(dzp, counts)
        dz_sent += dzp_rep * alpha * (1.0 + zs - np.repeat(zp, counts))
    gq_t += dz_sent @ index.sent_block
    gE[index.sent_rows] += np.outer(dz_sent, q)


# -- finite differences -------------------------------------------------------

def finite_difference_check(queries, index, params: MixParams, labels, hop_masks=None, update=True,
                            rule=MultiPositive.MARGINAL, gold_class=None, h: float = 1e-4,
                            names: Sequence[str] = MixParams.NAMES) -> GradReport:
    """Compare ``backward`` against central differences for the named tensors.

    The retrieved entry of every hop is pinned to the unperturbed forward's
    choice so both sides differentiate the same branch. Per tensor the
    relative error is ``max|a - n| / max(max|a|, max|n|)`` (0 when both are
    below 1e-12 in magnitude).
    """
    tape = forward(queries, index, params, labels, hop_masks, update, rule, gold_class)
    report = backward(tape)
    forced = [r.retrieved for r in tape.trace.records]

    def loss_at(p):
        return forward(queries, index, p, labels, hop_masks, update, rule, gold_class, forced).loss

    worst = 0.0
    for name in names:
        base = getattr(params, name)
        num = np.zeros_like(base)
        for ix in np.ndindex(base.shape):
            plus, minus = params.copy(), params.copy()
            getattr(plus, name)[ix] += h
            getattr(minus, name)[ix] -= h
            num[ix] = (loss_at(plus) - loss_at(minus)) / (2 * h)
        ana = report.grads[name]
        scale = max(np.abs(ana).max(), np.abs(num).max())
        err = 0.0 if scale < 1e-12 else float(np.abs(ana - num).max() / scale)
        report.fd_errors[name] = err
        worst = max(worst, err)
    report.fd_max_rel_error = worst
    return report


# -- training loop ------------------------------------------------------------

@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    steps: int = 200
    seed: int = 0
    multi_positive_rule: MultiPositive = MultiPositive.MARGINAL
    momentum: float = 0.9
    batch_size: int | None = None         # None: full batch
    init_scale: float = 1.0
    train_mix: bool = True
    train_queries: bool = False
    train_sentences: bool = False

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValidationError(f"learning_rate must be >= 0, got {self.learning_rate}")
        self.multi_positive_rule = MultiPositive(self.multi_positive_rule)


@dataclass
class TrainExample:
    query_id: str
    queries: np.ndarray            # (hops, dim)
    index: CombinedIndex
    labels: StepLabels
    hop_masks: tuple = None
    gold_class: int | None = None


@dataclass
class FitResult:
    params: MixParams
    losses: list                   # mean loss per step, measured before the update
    examples: list


def _index_with(index: CombinedIndex, vecs) -> CombinedIndex:
    return CombinedIndex(index.doc_id, vecs, index.kinds, index.para_idx, index.sent_idx)


def fit(examples: Sequence[TrainExample], config: TrainConfig, params: MixParams | None = None,
        update: bool = True) -> FitResult:
    """Gradient descent (with optional momentum) on the summed per-hop losses."""
    examples = [e for e in examples if not e.labels.drop]
    if not examples:
        raise ValidationError("no usable training examples")
    dim = examples[0].index.dim
    rng = np.random.default_rng(config.seed)
    params = MixParams.random(dim, rng, config.init_scale) if params is None else params.copy()
    examples = [TrainExample(e.query_id, np.array(e.queries, dtype=np.float64), e.index, e.labels,
                             e.hop_masks, e.gold_class) for e in examples]
    lr, mu = config.learning_rate, config.momentum
    vel = {name: np.zeros_like(t) for name, t in params.tensors().items()}
    qvel = [np.zeros_like(e.queries) for e in examples]
    evel: dict[int, np.ndarray] = {}
    losses = []
    n = len(examples)
    bs = n if config.batch_size is None else max(1, min(config.batch_size, n))
    for step in range(config.steps):
        order = np.arange(n) if bs == n else rng.permutation(n)
        step_losses = []
        for start in range(0, n, bs):
            batch = order[start:start + bs]
            acc = {name: np.zeros_like(t) for name, t in params.tensors().items()}
            entry_grads: dict[int, np.ndarray] = {}
            for i in batch:
                e = examples[i]
                tape = forward(e.queries, e.index, params, e.labels, e.hop_masks, update,
                               config.multi_positive_rule, e.gold_class)
                rep = backward(tape)
                if not np.isfinite(rep.loss):
                    raise TrainingError(f"loss became {rep.loss} at step {step} on {e.query_id!r}; "
                                        f"param norms " + ", ".join(
                                            f"{k}={np.linalg.norm(v):.3g}" for k, v in params.tensors().items()))
                step_losses.append(rep.loss)
                for name in acc:
                    acc[name] += rep.grads[name]
                if config.train_queries:
                    qvel[i] = mu * qvel[i] + rep.grads["queries"] / len(batch)
                    e.queries = e.queries - lr * qvel[i]
                if config.train_sentences:
                    key = id(e.index)
                    entry_grads[key] = entry_grads.get(key, 0) + rep.grads["entries"]
            if config.train_mix:
                new = {}
                for name, g in acc.items():
                    g = g / len(batch)
                    if not np.all(np.isfinite(g)):
                        raise TrainingError(f"non-finite gradient for {name} at step {step}")
                    vel[name] = mu * vel[name] + g
                    new[name] = getattr(params, name) - lr * vel[name]
                    if not np.all(np.isfinite(new[name])):
                        raise TrainingError(f"{name} diverged at step {step} (learning rate {lr})")
                params = MixParams(**new)
            if config.train_sentences and entry_grads:
                _apply_entry_grads(examples, entry_grads, evel, lr, mu, len(batch))
        losses.append(float(np.mean(step_losses)))
    return FitResult(params, losses, examples)


def _apply_entry_grads(examples, entry_grads, evel, lr, mu, batch_len):
    replaced = {}
    for key, g in entry_grads.items():
        g = g / batch_len
        evel[key] = mu * evel.get(key, 0) + g
    for e in examples:
        key = id(e.index)
        if key in entry_grads:
            if key not in replaced:
                replaced[key] = _index_with(e.index, e.index.vecs - lr * evel[key])
            e.index = replaced[key]
    for old, idx in replaced.items():
        evel[id(idx)] = evel.pop(old)


# -- checkpoint file ----------------------------------------------------------

def save_checkpoint(params: MixParams, path) -> None:
    tensors = params.tensors()
    with open(path, "wb") as fh:
        fh.write(HCKP_MAGIC)
        fh.write(struct.pack("<III", HCKP_VERSION, params.dim, len(tensors)))
        for name, arr in tensors.items():
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)) + nb)
            fh.write(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> MixParams:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != HCKP_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {HCKP_MAGIC!r}")
    off = 4

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(data):
            raise TruncatedFileError(f"{path}: truncated checkpoint")
        vals = struct.unpack_from(fmt, data, off)
        off += size
        return vals

    version, dim, count = take("<III")
    if version != HCKP_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    tensors = {}
    for _ in range(count):
        (nlen,) = take("<I")
        name = bytes(take(f"<{nlen}s")[0]).decode("utf-8")
        (ndim,) = take("<I")
        shape = take(f"<{ndim}I")
        size = int(np.prod(shape)) * 8
        if off + size > len(data):
            raise TruncatedFileError(f"{path}: truncated tensor {name!r}")
        tensors[name] = np.frombuffer(data, dtype="<f8", count=size // 8, offset=off).reshape(shape).copy()
        off += size
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes")
    if set(tensors) != set(MixParams.NAMES):
        raise FormatError(f"{path}: expected tensors {MixParams.NAMES}, found {sorted(tensors)}")
    try:
        params = MixParams(**tensors)
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if params.dim != dim:
        raise FormatError(f"{path}: header dim {dim} != tensor dim {params.dim}")
    return params
