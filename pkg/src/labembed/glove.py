"""GloVe: windowed co-occurrence counting and weighted least-squares factorization.

The objective sums f(X_ij) * (w_i . w~_j + b_i + b~_j - log X_ij)^2 over the
nonzero co-occurrence entries, optimized by batched per-coordinate adaptive
gradient steps over seeded shuffled entries. The published embedding for a
token is w + w~.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .corpus import Sentence, Vocabulary
from .embedstore import EmbeddingModel
from .w2v import DegenerateVocab, EmptyCorpus, TrainingDiverged


class NonPositiveCount(ValueError):
    pass


@dataclass
class GloveHyperparams:
    dim: int = 50
    x_max: float = 100.0
    alpha: float = 0.75
    epochs: int = 30
    initial_lr: float = 0.05
    seed: int = 0
    batch_size: int = 4096
    max_vector_norm: float = 1e3

    def validate(self) -> None:
        if self.dim < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("dim, epochs and batch_size must be >= 1")
        if self.x_max <= 0.0:
            raise ValueError("x_max must be > 0")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.initial_lr <= 0.0:
            raise ValueError("initial_lr must be > 0")


@dataclass
class CooccurrenceTable:
    """Sparse symmetric co-occurrence weights, self-pairs excluded.

    Parallel arrays (rows, cols, weights) hold every nonzero directed entry;
    `entries` offers dict-style lookup for inspection and tests.
    """

    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray
    vocab_size: int
    window: int
    distance_weighting: bool
    vocab_fingerprint: str

    @property
    def n_entries(self) -> int:
        return int(self.rows.size)

    @property
    def entries(self) -> dict[tuple[int, int], float]:
        return {
            (int(i), int(j)): float(x)
            for i, j, x in zip(self.rows, self.cols, self.weights)
        }

    def value(self, i: int, j: int) -> float:
        key = np.searchsorted(self._keys(), i * self.vocab_size + j)
        if key < self.rows.size and self.rows[key] == i and self.cols[key] == j:
            return float(self.weights[key])
        return 0.0

    def _keys(self) -> np.ndarray:
        return self.rows.astype(np.int64) * self.vocab_size + self.cols


def vocab_fingerprint(vocab: Vocabulary) -> str:
    h = hashlib.sha256()
    for t in vocab.tokens:
        h.update(t.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


def build_cooccurrence(
    sentences: list[Sentence],
    vocab: Vocabulary,
    window: int = 5,
    distance_weighting: bool = True,
) -> CooccurrenceTable:
    """Accumulate within-sentence co-occurrence weights (1/distance or 1 per pair).

    Weights are accumulated once per unordered pair and mirrored, so the table
    is exactly symmetric. A token co-occurring with itself (duplicate code in
    one order) contributes nothing.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if not sentences:
        raise EmptyCorpus("no sentences")
    V = len(vocab)
    lo_keys: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    for s in sentences:
        ids = s.token_ids.astype(np.int64)
        n = ids.size
        for d in range(1, min(window, n - 1) + 1):
            a = ids[:-d]
            b = ids[d:]
            keep = a != b
            if not keep.any():
                continue
            a = a[keep]
            b = b[keep]
            lo = np.minimum(a, b)
            hi = np.maximum(a, b)
            lo_keys.append(lo * V + hi)
            w = 1.0 / d if distance_weighting else 1.0
            vals.append(np.full(a.size, w))
    if not lo_keys:
        raise EmptyCorpus("no co-occurring pairs within the window")
    keys = np.concatenate(lo_keys)
    weights = np.concatenate(vals)
    uniq, inverse = np.unique(keys, return_inverse=True)
    sums = np.bincount(inverse, weights=weights, minlength=uniq.size)
    i_lo = (uniq // V).astype(np.int64)
    j_hi = (uniq % V).astype(np.int64)
    # mirror to directed entries, sorted by (row, col) for a stable layout
    rows = np.concatenate([i_lo, j_hi])
    cols = np.concatenate([j_hi, i_lo])
    w2 = np.concatenate([sums, sums])
    order = np.lexsort((cols, rows))
    return CooccurrenceTable(
        rows=rows[order],
        cols=cols[order],
        weights=w2[order],
        vocab_size=V,
        window=window,
        distance_weighting=distance_weighting,
        vocab_fingerprint=vocab_fingerprint(vocab),
    )


def glove_weight(x: float, x_max: float = 100.0, alpha: float = 0.75) -> float:
    """Loss weight f(x): (x/x_max)^alpha below the cap, 1 at or above it."""
    if x <= 0.0:
        raise NonPositiveCount(f"co-occurrence weight must be > 0, got {x}")
    if x_max <= 0.0:
        raise NonPositiveCount(f"x_max must be > 0, got {x_max}")
    if x >= x_max:
        return 1.0
    return float((x / x_max) ** alpha)


def glove_entry_loss(w_i, w_j, b_i: float, b_j: float, x: float, x_max: float = 100.0, alpha: float = 0.75) -> float:
    """Weighted squared residual of one co-occurrence entry."""
    w_i = np.asarray(w_i, dtype=np.float64)
    w_j = np.asarray(w_j, dtype=np.float64)
    weight = glove_weight(x, x_max, alpha)
    diff = float(w_i @ w_j) + b_i + b_j - np.log(x)
    return weight * diff * diff


def save_cooccurrence(table: CooccurrenceTable, path) -> None:
    header = {
        "vocab_fingerprint": table.vocab_fingerprint,
        "vocab_size": table.vocab_size,
        "window": table.window,
        "distance_weighting": table.distance_weighting,
        "n_entries": table.n_entries,
    }
    with open(path, "wb") as f:
        f.write(b"COOC1 ")
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        f.write(table.rows.astype("<i4").tobytes())
        f.write(table.cols.astype("<i4").tobytes())
        f.write(table.weights.astype("<f8").tobytes())


def load_cooccurrence(path) -> CooccurrenceTable:
    with open(path, "rb") as f:
        line = f.readline()
        if not line.startswith(b"COOC1 "):
            raise ValueError("not a co-occurrence file")
        header = json.loads(line[6:].decode("utf-8"))
        n = header["n_entries"]
        rows = np.frombuffer(f.read(4 * n), dtype="<i4").astype(np.int64)
        cols = np.frombuffer(f.read(4 * n), dtype="<i4").astype(np.int64)
        weights = np.frombuffer(f.read(8 * n), dtype="<f8").copy()
    return CooccurrenceTable(
        rows=rows,
        cols=cols,
        weights=weights,
        vocab_size=header["vocab_size"],
        window=header["window"],
        distance_weighting=header["distance_weighting"],
        vocab_fingerprint=header["vocab_fingerprint"],
    )


def _scatter_rows(target: np.ndarray, acc: np.ndarray, ids: np.ndarray, grads: np.ndarray, lr: float) -> None:
    """One batched adaptive-gradient step on the rows named by ids.

    Gradient contributions of duplicate ids are summed, the squared summed
    gradient feeds the per-coordinate accumulator, and the step divides by the
    accumulator's square root.
    """
    order = np.argsort(ids, kind="stable")
    ids_s = ids[order]
    g_s = grads[order]
    starts = np.flatnonzero(np.concatenate([[True], ids_s[1:] != ids_s[:-1]]))
    sums = np.add.reduceat(g_s, starts, axis=0)
    uniq = ids_s[starts]
    target[uniq] -= lr * sums / np.sqrt(acc[uniq])
    acc[uniq] += sums * sums


def train_glove(cooc: CooccurrenceTable, vocab: Vocabulary, hp: GloveHyperparams) -> EmbeddingModel:
    """Factorize log co-occurrence by adaptive-gradient weighted least squares."""
    hp.validate()
    if cooc.n_entries == 0:
        raise EmptyCorpus("empty co-occurrence table")
    V = cooc.vocab_size
    if V < 2:
        raise DegenerateVocab(f"need at least 2 tokens, have {V}")
    if len(vocab) != V:
        raise ValueError(f"vocab size {len(vocab)} does not match table ({V})")

    rng = np.random.default_rng(hp.seed)
    W = (rng.random((V, hp.dim)) - 0.5) / hp.dim
    Wt = (rng.random((V, hp.dim)) - 0.5) / hp.dim
    b = np.zeros(V)
    bt = np.zeros(V)
    acc_W = np.ones((V, hp.dim))
    acc_Wt = np.ones((V, hp.dim))
    acc_b = np.ones(V)
    acc_bt = np.ones(V)

    i_arr = cooc.rows
    j_arr = cooc.cols
    logx = np.log(cooc.weights)
    f_arr = np.where(
        cooc.weights >= hp.x_max, 1.0, (cooc.weights / hp.x_max) ** hp.alpha
    )

    n = i_arr.size
    n_eval = min(10000, n)
    eval_idx = rng.choice(n, size=n_eval, replace=False)

    def eval_loss() -> float:
        i, j = i_arr[eval_idx], j_arr[eval_idx]
        diff = np.einsum("bd,bd->b", W[i], Wt[j]) + b[i] + bt[j] - logx[eval_idx]
        return float(np.mean(f_arr[eval_idx] * diff * diff))

    loss_curve = []
    for _epoch in range(hp.epochs):
        perm = rng.permutation(n)
        for s in range(0, n, hp.batch_size):
            rows = perm[s : s + hp.batch_size]
            i = i_arr[rows]
            j = j_arr[rows]
            diff = np.einsum("bd,bd->b", W[i], Wt[j]) + b[i] + bt[j] - logx[rows]
            g = 2.0 * f_arr[rows] * diff
            _scatter_rows(W, acc_W, i, g[:, None] * Wt[j], hp.initial_lr)
            _scatter_rows(Wt, acc_Wt, j, g[:, None] * W[i], hp.initial_lr)
            _scatter_rows(b, acc_b, i, g, hp.initial_lr)
            _scatter_rows(bt, acc_bt, j, g, hp.initial_lr)
        loss_curve.append(eval_loss())

    combined = W + Wt
    if not np.all(np.isfinite(combined)):
        raise TrainingDiverged("non-finite entries in trained matrices")
    norms = np.linalg.norm(combined, axis=1)
    if norms.max(initial=0.0) > hp.max_vector_norm:
        raise TrainingDiverged(f"vector norm {norms.max():.3g} exceeds bound {hp.max_vector_norm:.3g}")

    metadata = {
        "algorithm": "GloVe",
        "dim": hp.dim,
        "window": cooc.window,
        "x_max": hp.x_max,
        "alpha": hp.alpha,
        "epochs": hp.epochs,
        "initial_lr": hp.initial_lr,
        "seed": hp.seed,
        "token_mode": vocab.mode.value,
        "distance_weighting": cooc.distance_weighting,
        "combination": "w+wt",
        "corpus": cooc.vocab_fingerprint[:16],
        "loss_curve": ",".join("%.6g" % x for x in loss_curve),
    }
    return EmbeddingModel(
        tokens=list(vocab.tokens), vectors=combined, metadata=metadata, context_vectors=Wt
    )
