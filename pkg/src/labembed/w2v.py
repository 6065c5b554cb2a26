"""Word2Vec trainers over lab-order sentences: skip-gram with negative sampling, and CBOW.

Training runs deterministic minibatch SGD: pairs are processed in a seeded
shuffled order, gradients within one batch are accumulated per parameter row,
and the learning rate decays linearly with overall progress. Negative targets
are drawn from the unigram distribution raised to a configurable exponent.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .corpus import Sentence, Vocabulary, corpus_fingerprint, merge_sentences_by_visit
from .embedstore import DimensionMismatch, EmbeddingModel
from .util import log_sigmoid, sigmoid


class Algorithm(enum.Enum):
    SkipGram = "SkipGram"
    CBOW = "CBOW"


class EmptyCorpus(ValueError):
    pass


class DegenerateVocab(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class W2vHyperparams:
    dim: int = 50
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    initial_lr: float = 0.025
    min_lr: float = 1e-4
    noise_exponent: float = 0.75
    subsample_threshold: float | None = None
    algorithm: Algorithm = Algorithm.SkipGram
    seed: int = 0
    # window positions are meaningless after intra-order shuffling, so the
    # usual uniform window shrinking is off unless asked for
    dynamic_window: bool = False
    cross_order_windows: bool = False
    # duplicate rows inside a minibatch sum their gradients, so the stable
    # batch size scales with vocabulary size; 512 is safe down to tiny vocabs
    batch_size: int = 512
    max_vector_norm: float = 1e3

    def validate(self) -> None:
        if self.dim < 1 or self.window < 1 or self.negatives < 1 or self.epochs < 1:
            raise ValueError("dim, window, negatives and epochs must all be >= 1")
        if not self.initial_lr > self.min_lr >= 0.0:
            raise ValueError("need initial_lr > min_lr >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def noise_distribution(vocab: Vocabulary, exponent: float = 0.75) -> np.ndarray:
    """Negative-sampling distribution: token count ** exponent, normalized."""
    counts = np.array([vocab.counts[t] for t in vocab.tokens], dtype=np.float64)
    weights = counts**exponent
    return weights / weights.sum()


def _sample_negatives(cum: np.ndarray, rng: np.random.Generator, shape) -> np.ndarray:
    idx = np.searchsorted(cum, rng.random(shape), side="right")
    return np.minimum(idx, cum.size - 1).astype(np.int64)


def extract_pairs(
    sentences: list[Sentence],
    window: int,
    dynamic: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """All (center, context) index pairs within `window` inside each sentence.

    With dynamic=True each center position draws its own effective window
    uniformly from [1, window], as done by several reference implementations.
    """
    if dynamic and rng is None:
        raise ValueError("dynamic window extraction needs an rng")
    centers: list[np.ndarray] = []
    contexts: list[np.ndarray] = []
    for s in sentences:
        ids = s.token_ids
        n = len(ids)
        if n < 2:
            continue
        w = rng.integers(1, window + 1, size=n) if dynamic else None
        for d in range(1, min(window, n - 1) + 1):
            left = ids[:-d]
            right = ids[d:]
            if dynamic:
                m_left = w[:-d] >= d
                m_right = w[d:] >= d
                if m_left.any():
                    centers.append(left[m_left])
                    contexts.append(right[m_left])
                if m_right.any():
                    centers.append(right[m_right])
                    contexts.append(left[m_right])
            else:
                centers.append(left)
                contexts.append(right)
                centers.append(right)
                contexts.append(left)
    if not centers:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    return (
        np.concatenate(centers).astype(np.int64),
        np.concatenate(contexts).astype(np.int64),
    )


def extract_cbow_examples(
    sentences: list[Sentence],
    window: int,
    dynamic: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-position CBOW examples: center id, padded context ids, context count.

    Context rows are padded with -1 up to the widest context in the corpus.
    """
    if dynamic and rng is None:
        raise ValueError("dynamic window extraction needs an rng")
    centers: list[int] = []
    ctx_rows: list[list[int]] = []
    for s in sentences:
        ids = s.token_ids
        n = len(ids)
        if n < 2:
            continue
        w_arr = rng.integers(1, window + 1, size=n) if dynamic else None
        for i in range(n):
            w = int(w_arr[i]) if dynamic else window
            lo = max(0, i - w)
            hi = min(n, i + w + 1)
            ctx = [int(ids[j]) for j in range(lo, hi) if j != i]
            if not ctx:
                continue
            centers.append(int(ids[i]))
            ctx_rows.append(ctx)
    if not centers:
        return (
            np.empty(0, dtype=np.int64),
            np.empty((0, 0), dtype=np.int64),
            np.empty(0, dtype=np.int64),
        )
    width = max(len(r) for r in ctx_rows)
    ctx_pad = np.full((len(ctx_rows), width), -1, dtype=np.int64)
    for i, row in enumerate(ctx_rows):
        ctx_pad[i, : len(row)] = row
    lengths = np.array([len(r) for r in ctx_rows], dtype=np.int64)
    return np.asarray(centers, dtype=np.int64), ctx_pad, lengths


def sgns_pair_loss(center_vec, context_vec, negative_vecs) -> float:
    """Negative-sampling loss of one pair: -log s(u.v) - sum -log terms for negatives."""
    v = np.asarray(center_vec, dtype=np.float64)
    u = np.asarray(context_vec, dtype=np.float64)
    negs = np.atleast_2d(np.asarray(negative_vecs, dtype=np.float64))
    if v.shape != u.shape or (negs.size and negs.shape[1] != v.shape[0]):
        raise DimensionMismatch(
            f"center {v.shape}, context {u.shape}, negatives {negs.shape}"
        )
    loss = -log_sigmoid(float(u @ v))
    if negs.size:
        loss = loss - log_sigmoid(-(negs @ v)).sum()
    return float(loss)


def cbow_example_loss(context_vecs, center_vec, negative_vecs) -> float:
    """CBOW loss of one example: predict the center from the mean context vector."""
    ctx = np.atleast_2d(np.asarray(context_vecs, dtype=np.float64))
    u = np.asarray(center_vec, dtype=np.float64)
    negs = np.atleast_2d(np.asarray(negative_vecs, dtype=np.float64))
    if ctx.shape[1] != u.shape[0] or (negs.size and negs.shape[1] != u.shape[0]):
        raise DimensionMismatch(
            f"contexts {ctx.shape}, center {u.shape}, negatives {negs.shape}"
        )
    h = ctx.mean(axis=0)
    loss = -log_sigmoid(float(u @ h))
    if negs.size:
        loss = loss - log_sigmoid(-(negs @ h)).sum()
    return float(loss)


def _subsample(sentences: list[Sentence], vocab: Vocabulary, threshold: float, rng: np.random.Generator) -> list[Sentence]:
    """Randomly discard frequent tokens, word2vec style; redraw every epoch."""
    counts = np.array([vocab.counts[t] for t in vocab.tokens], dtype=np.float64)
    total = counts.sum()
    freq = counts / total
    keep_p = np.minimum(1.0, (np.sqrt(freq / threshold) + 1.0) * threshold / freq)
    out = []
    for s in sentences:
        mask = rng.random(len(s.token_ids)) < keep_p[s.token_ids]
        kept = s.token_ids[mask]
        if kept.size:
            out.append(Sentence(token_ids=kept, visit_id=s.visit_id))
    return out


def _scatter_add(W: np.ndarray, ids: np.ndarray, grads: np.ndarray) -> None:
    """W[ids] += grads with duplicate ids accumulated (sort + segment reduce)."""
    order = np.argsort(ids, kind="stable")
    ids_s = ids[order]
    g_s = grads[order]
    starts = np.flatnonzero(np.concatenate([[True], ids_s[1:] != ids_s[:-1]]))
    sums = np.add.reduceat(g_s, starts, axis=0)
    W[ids_s[starts]] += sums


def _sgns_eval_loss(W_in, W_out, centers, contexts, negs) -> float:
    v = W_in[centers]
    s_pos = np.einsum("bd,bd->b", W_out[contexts], v)
    s_neg = np.einsum("bkd,bd->bk", W_out[negs], v)
    return float(np.mean(-log_sigmoid(s_pos) - log_sigmoid(-s_neg).sum(axis=1)))


def _cbow_eval_loss(W_in, W_out, centers, ctx_pad, lengths, negs) -> float:
    mask = ctx_pad >= 0
    h = (W_in[np.maximum(ctx_pad, 0)] * mask[:, :, None]).sum(axis=1) / lengths[:, None]
    s_pos = np.einsum("bd,bd->b", W_out[centers], h)
    s_neg = np.einsum("bkd,bd->bk", W_out[negs], h)
    return float(np.mean(-log_sigmoid(s_pos) - log_sigmoid(-s_neg).sum(axis=1)))


def _finish_model(W_in, W_out, vocab, hp, algorithm, loss_curve, fingerprint) -> EmbeddingModel:
    if not np.all(np.isfinite(W_in)) or not np.all(np.isfinite(W_out)):
        raise TrainingDiverged("non-finite entries in trained matrices")
    norms = np.linalg.norm(W_in, axis=1)
    if norms.max(initial=0.0) > hp.max_vector_norm:
        raise TrainingDiverged(f"vector norm {norms.max():.3g} exceeds bound {hp.max_vector_norm:.3g}")
    metadata = {
        "algorithm": algorithm.value,
        "dim": hp.dim,
        "window": hp.window,
        "negatives": hp.negatives,
        "epochs": hp.epochs,
        "initial_lr": hp.initial_lr,
        "min_lr": hp.min_lr,
        "noise_exponent": hp.noise_exponent,
        "dynamic_window": hp.dynamic_window,
        "cross_order_windows": hp.cross_order_windows,
        "subsample_threshold": hp.subsample_threshold,
        "seed": hp.seed,
        "token_mode": vocab.mode.value,
        "corpus": fingerprint[:16],
        "loss_curve": ",".join("%.6g" % x for x in loss_curve),
    }
    return EmbeddingModel(
        tokens=list(vocab.tokens), vectors=W_in, metadata=metadata, context_vectors=W_out
    )


def _prepare(sentences, vocab, hp, algorithm):
    hp.validate()
    if hp.algorithm is not algorithm:
        raise ValueError(f"hyperparams specify {hp.algorithm.value}, trainer is {algorithm.value}")
    if len(vocab) < 2:
        raise DegenerateVocab(f"need at least 2 tokens, have {len(vocab)}")
    if not sentences:
        raise EmptyCorpus("no sentences")
    sents = merge_sentences_by_visit(sentences) if hp.cross_order_windows else sentences
    rng = np.random.default_rng(hp.seed)
    W_in = (rng.random((len(vocab), hp.dim)) - 0.5) / hp.dim
    W_out = np.zeros((len(vocab), hp.dim))
    cum = np.cumsum(noise_distribution(vocab, hp.noise_exponent))
    fingerprint = corpus_fingerprint(vocab, sents)
    return sents, rng, W_in, W_out, cum, fingerprint


def train_sgns(sentences: list[Sentence], vocab: Vocabulary, hp: W2vHyperparams) -> EmbeddingModel:
    """Skip-gram with negative sampling; returns input vectors as the embedding."""
    sents, rng, W_in, W_out, cum, fingerprint = _prepare(sentences, vocab, hp, Algorithm.SkipGram)
    rebuild = hp.dynamic_window or hp.subsample_threshold is not None

    def build():
        active = _subsample(sents, vocab, hp.subsample_threshold, rng) if hp.subsample_threshold else sents
        return extract_pairs(active, hp.window, dynamic=hp.dynamic_window, rng=rng)

    centers, contexts = build()
    if centers.size == 0:
        raise EmptyCorpus("no training pairs (all sentences shorter than 2 tokens?)")

    n_eval = min(10000, centers.size)
    eval_idx = rng.choice(centers.size, size=n_eval, replace=False)
    eval_c, eval_x = centers[eval_idx], contexts[eval_idx]
    eval_negs = _sample_negatives(cum, rng, (n_eval, hp.negatives))

    K = hp.negatives
    loss_curve = []
    for epoch in range(hp.epochs):
        if rebuild and epoch > 0:
            centers, contexts = build()
            if centers.size == 0:
                continue
        perm = rng.permutation(centers.size)
        n_batches = (centers.size + hp.batch_size - 1) // hp.batch_size
        for b in range(n_batches):
            rows = perm[b * hp.batch_size : (b + 1) * hp.batch_size]
            c = centers[rows]
            x = contexts[rows]
            negs = _sample_negatives(cum, rng, (rows.size, K))
            progress = (epoch + b / n_batches) / hp.epochs
            lr = hp.initial_lr + (hp.min_lr - hp.initial_lr) * progress

            v = W_in[c]
            u = W_out[x]
            un = W_out[negs]
            g_pos = sigmoid(np.einsum("bd,bd->b", u, v)) - 1.0
            g_neg = sigmoid(np.einsum("bkd,bd->bk", un, v))
            grad_v = g_pos[:, None] * u + np.einsum("bk,bkd->bd", g_neg, un)
            grad_u = g_pos[:, None] * v
            grad_un = g_neg[:, :, None] * v[:, None, :]
            _scatter_add(W_in, c, -lr * grad_v)
            _scatter_add(
                W_out,
                np.concatenate([x, negs.ravel()]),
                np.concatenate([-lr * grad_u, (-lr * grad_un).reshape(-1, hp.dim)]),
            )
        loss_curve.append(_sgns_eval_loss(W_in, W_out, eval_c, eval_x, eval_negs))
    return _finish_model(W_in, W_out, vocab, hp, Algorithm.SkipGram, loss_curve, fingerprint)


def train_cbow(sentences: list[Sentence], vocab: Vocabulary, hp: W2vHyperparams) -> EmbeddingModel:
    """CBOW with negative sampling: predict the center from the mean context vector.

    The mean's gradient is split evenly across the contributing context rows,
    so the update matches the analytic derivative of the example loss.
    """
    sents, rng, W_in, W_out, cum, fingerprint = _prepare(sentences, vocab, hp, Algorithm.CBOW)
    rebuild = hp.dynamic_window or hp.subsample_threshold is not None

    def build():
        active = _subsample(sents, vocab, hp.subsample_threshold, rng) if hp.subsample_threshold else sents
        return extract_cbow_examples(active, hp.window, dynamic=hp.dynamic_window, rng=rng)

    centers, ctx_pad, lengths = build()
    if centers.size == 0:
        raise EmptyCorpus("no training examples (all sentences shorter than 2 tokens?)")

    n_eval = min(10000, centers.size)
    eval_idx = rng.choice(centers.size, size=n_eval, replace=False)
    eval_set = (centers[eval_idx], ctx_pad[eval_idx], lengths[eval_idx])
    eval_negs = _sample_negatives(cum, rng, (n_eval, hp.negatives))

    K = hp.negatives
    loss_curve = []
    for epoch in range(hp.epochs):
        if rebuild and epoch > 0:
            centers, ctx_pad, lengths = build()
            if centers.size == 0:
                continue
        perm = rng.permutation(centers.size)
        n_batches = (centers.size + hp.batch_size - 1) // hp.batch_size
        for b in range(n_batches):
            rows = perm[b * hp.batch_size : (b + 1) * hp.batch_size]
            c = centers[rows]
            ctx = ctx_pad[rows]
            ln = lengths[rows]
            negs = _sample_negatives(cum, rng, (rows.size, K))
            progress = (epoch + b / n_batches) / hp.epochs
            lr = hp.initial_lr + (hp.min_lr - hp.initial_lr) * progress

            mask = ctx >= 0
            h = (W_in[np.maximum(ctx, 0)] * mask[:, :, None]).sum(axis=1) / ln[:, None]
            u = W_out[c]
            un = W_out[negs]
            g_pos = sigmoid(np.einsum("bd,bd->b", u, h)) - 1.0
            g_neg = sigmoid(np.einsum("bkd,bd->bk", un, h))
            grad_h = g_pos[:, None] * u + np.einsum("bk,bkd->bd", g_neg, un)
            grad_u = g_pos[:, None] * h
            grad_un = g_neg[:, :, None] * h[:, None, :]

            per_ctx = (grad_h / ln[:, None])[:, None, :] * mask[:, :, None]
            flat_ids = ctx[mask]
            flat_grads = per_ctx[mask]
            _scatter_add(W_in, flat_ids, -lr * flat_grads)
            _scatter_add(
                W_out,
                np.concatenate([c, negs.ravel()]),
                np.concatenate([-lr * grad_u, (-lr * grad_un).reshape(-1, hp.dim)]),
            )
        loss_curve.append(_cbow_eval_loss(W_in, W_out, *eval_set, eval_negs))
    return _finish_model(W_in, W_out, vocab, hp, Algorithm.CBOW, loss_curve, fingerprint)
