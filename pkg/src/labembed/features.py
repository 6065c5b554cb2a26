"""Per-patient feature construction from observation-window lab events.

Three feature families: bag-of-words token counts, truncated-SVD reductions of
the count matrix, and elementwise aggregations of token embeddings. Embedding
features carry one extra trailing column flagging windows with no usable
tokens, so "no labs" is distinguishable from "average labs".
"""

from __future__ import annotations

import enum
import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .corpus import TokenMode, Vocabulary, event_token
from .embedstore import EmbeddingModel
from .synthgen import CohortRecord


class RankDeficiencyWarning(UserWarning):
    pass


class Aggregation(enum.Enum):
    Mean = "Mean"
    Median = "Median"
    Min = "Min"
    Max = "Max"


@dataclass
class FeatureMatrix:
    X: object  # scipy sparse for BOW, ndarray otherwise
    kind: str  # 'BOW', 'SVD' or 'Embedding'
    aggregation: Aggregation | None = None
    provenance: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.X.shape


def bow_features(record: CohortRecord, vocab: Vocabulary, binary: bool = False, counters: Counter | None = None):
    """Sparse token-count row over the vocabulary; OOV events are dropped."""
    cols = []
    for e in record.observation_events:
        idx = vocab.index.get(event_token(e, vocab.mode))
        if idx is None:
            if counters is not None:
                counters["oov_dropped"] += 1
            continue
        cols.append(idx)
    if not cols:
        if counters is not None:
            counters["empty_windows"] += 1
        return sparse.csr_matrix((1, len(vocab)), dtype=np.float64)
    data = np.ones(len(cols))
    row = sparse.csr_matrix(
        (data, (np.zeros(len(cols), dtype=np.int64), np.asarray(cols, dtype=np.int64))),
        shape=(1, len(vocab)),
    )
    row.sum_duplicates()
    if binary:
        row.data[:] = 1.0
    return row


def bow_matrix(
    records: list[CohortRecord],
    vocab: Vocabulary,
    binary: bool = False,
    counters: Counter | None = None,
) -> FeatureMatrix:
    rows = [bow_features(r, vocab, binary=binary, counters=counters) for r in records]
    X = sparse.vstack(rows, format="csr") if rows else sparse.csr_matrix((0, len(vocab)))
    return FeatureMatrix(X=X, kind="BOW", provenance={"mode": vocab.mode.value, "binary": binary})


def embed_features(
    record: CohortRecord,
    model: EmbeddingModel,
    agg: Aggregation = Aggregation.Mean,
    mode: TokenMode | None = None,
    distinct: bool = False,
) -> np.ndarray:
    """Aggregate window-token embeddings elementwise; trailing column flags empty windows.

    Duplicate tokens count once per occurrence unless distinct is set.
    """
    if mode is None:
        mode = TokenMode(model.metadata["token_mode"])
    idxs = []
    for e in record.observation_events:
        idx = model.token_index.get(event_token(e, mode))
        if idx is not None:
            idxs.append(idx)
    if distinct:
        idxs = sorted(set(idxs))
    out = np.zeros(model.dim + 1)
    if not idxs:
        out[-1] = 1.0
        return out
    stack = model.vectors[np.asarray(idxs, dtype=np.int64)]
    if agg is Aggregation.Mean:
        out[:-1] = stack.mean(axis=0)
    elif agg is Aggregation.Median:
        out[:-1] = np.median(stack, axis=0)
    elif agg is Aggregation.Min:
        out[:-1] = stack.min(axis=0)
    elif agg is Aggregation.Max:
        out[:-1] = stack.max(axis=0)
    else:
        raise ValueError(f"unknown aggregation {agg!r}")
    return out


def embed_matrix(
    records: list[CohortRecord],
    model: EmbeddingModel,
    agg: Aggregation = Aggregation.Mean,
    mode: TokenMode | None = None,
    distinct: bool = False,
) -> FeatureMatrix:
    X = np.vstack([embed_features(r, model, agg=agg, mode=mode, distinct=distinct) for r in records]) if records else np.zeros((0, model.dim + 1))
    return FeatureMatrix(
        X=X,
        kind="Embedding",
        aggregation=agg,
        provenance={
            "algorithm": model.metadata.get("algorithm"),
            "dim": model.dim,
            "corpus": model.metadata.get("corpus"),
        },
    )


def _randomized_svd(A, k: int, seed: int, oversample: int = 10, power_iters: int = 2):
    """Randomized range finder + exact SVD of the projected matrix.

    Power iterations are re-orthonormalized each half-step to keep the basis
    numerically orthonormal for ill-conditioned inputs.
    """
    n, m = A.shape
    rank_cap = min(n, m)
    ell = min(k + oversample, rank_cap)
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((m, ell))
    Y = A @ G
    Q, _ = np.linalg.qr(Y)
    for _ in range(power_iters):
        Z = A.T @ Q
        Z, _ = np.linalg.qr(Z)
        Y = A @ Z
        Q, _ = np.linalg.qr(Y)
    B = Q.T @ A
    B = np.asarray(B)
    Ub, s, Vt = np.linalg.svd(B, full_matrices=False)
    U = Q @ Ub[:, :k]
    return U, s[:k], Vt[:k]


def truncated_svd(matrix, k: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Top-k left factors scaled by singular values, plus the singular values."""
    n, m = matrix.shape
    if not 1 <= k <= min(n, m):
        raise ValueError(f"k must lie in [1, {min(n, m)}], got {k}")
    U, s, _ = _randomized_svd(matrix, k, seed)
    if s[0] <= 0.0 or s[-1] / s[0] < 1e-12:
        warnings.warn(
            f"rank-deficient input: singular value ratio {0.0 if s[0] <= 0 else s[-1] / s[0]:.3g}",
            RankDeficiencyWarning,
            stacklevel=2,
        )
    return U * s, s


class SvdReducer:
    """Truncated-SVD reduction fit on training rows, applied to any rows by projection.

    Keeps test rows out of the fit so a temporal train/test split stays leak-free.
    """

    def __init__(self, k: int, seed: int = 0):
        self.k = k
        self.seed = seed
        self.components: np.ndarray | None = None  # k x m
        self.singular_values: np.ndarray | None = None

    def fit(self, X) -> "SvdReducer":
        n, m = X.shape
        if not 1 <= self.k <= min(n, m):
            raise ValueError(f"k must lie in [1, {min(n, m)}], got {self.k}")
        _, s, Vt = _randomized_svd(X, self.k, self.seed)
        if s[0] <= 0.0 or s[-1] / s[0] < 1e-12:
            warnings.warn(
                "rank-deficient training matrix", RankDeficiencyWarning, stacklevel=2
            )
        self.components = Vt
        self.singular_values = s
        return self

    def transform(self, X) -> np.ndarray:
        if self.components is None:
            raise RuntimeError("fit before transform")
        return np.asarray(X @ self.components.T)
