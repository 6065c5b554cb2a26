"""Embedding containers, cosine similarity queries and the text save format.

Save format (word2vec text convention): first line `<vocab_size> <dim>`, then
one row per token `<token> <v1> ... <vdim>` with values at 6 significant
digits. A `<path>.meta` sidecar stores key=value training metadata.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class UnknownToken(KeyError):
    pass


class DimensionMismatch(ValueError):
    pass


class ZeroVector(ValueError):
    pass


class FormatError(ValueError):
    def __init__(self, offset: int, reason: str):
        super().__init__(f"byte offset {offset}: {reason}")
        self.offset = offset
        self.reason = reason


@dataclass
class EmbeddingModel:
    """Learned token vectors plus the metadata needed to reproduce them.

    `vectors` is the canonical matrix used for all similarity queries and
    downstream features: the input (target-side) matrix for the two
    predictive trainers, the sum of the two matrices for the count-based
    trainer. `context_vectors` keeps the second parameter matrix when the
    trainer has one, for inspection only.
    """

    tokens: list[str]
    vectors: np.ndarray
    metadata: dict = field(default_factory=dict)
    context_vectors: np.ndarray | None = None
    token_index: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise DimensionMismatch(f"vectors must be 2-d, got shape {self.vectors.shape}")
        if len(self.tokens) != self.vectors.shape[0]:
            raise DimensionMismatch(
                f"{len(self.tokens)} tokens but {self.vectors.shape[0]} vector rows"
            )
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate tokens")
        self.token_index = {t: i for i, t in enumerate(self.tokens)}

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.token_index

    def vector(self, token: str) -> np.ndarray:
        idx = self.token_index.get(token)
        if idx is None:
            raise UnknownToken(token)
        return self.vectors[idx]

    def unit_vectors(self) -> np.ndarray:
        """Row-normalized copy; zero rows stay zero."""
        norms = np.linalg.norm(self.vectors, axis=1, keepdims=True)
        safe = np.where(norms == 0.0, 1.0, norms)
        return self.vectors / safe


def cosine_similarity(u, v) -> float:
    """u.v / (|u||v|), clamped to [-1, 1] against rounding."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise DimensionMismatch(f"shape {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ZeroVector("cosine similarity undefined for zero vectors")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def nearest_neighbors(model: EmbeddingModel, token: str, k: int = 10) -> list[tuple[str, float]]:
    """k most cosine-similar tokens to `token`, excluding the query itself.

    Equal similarities rank lexicographically by token string.
    """
    idx = model.token_index.get(token)
    if idx is None:
        raise UnknownToken(token)
    if k < 0:
        raise ValueError("k must be >= 0")
    unit = model.unit_vectors()
    sims = unit @ unit[idx]
    sims[idx] = -np.inf
    k = min(k, len(model.tokens) - 1)
    if k <= 0:
        return []
    lex_rank = np.empty(len(model.tokens), dtype=np.int64)
    lex_rank[np.argsort(np.asarray(model.tokens))] = np.arange(len(model.tokens))
    order = np.lexsort((lex_rank, -sims))[:k]
    return [(model.tokens[i], float(sims[i])) for i in order]


def save_model(model: EmbeddingModel, path) -> None:
    path = str(path)
    for token in model.tokens:
        if any(c.isspace() for c in token):
            raise ValueError(f"token {token!r} contains whitespace, unrepresentable in the text format")
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{len(model.tokens)} {model.dim}\n")
        for token, row in zip(model.tokens, model.vectors):
            f.write(token + " " + " ".join("%.6g" % x for x in row) + "\n")
    if model.metadata:
        with open(path + ".meta", "w", encoding="utf-8") as f:
            for key in sorted(model.metadata):
                f.write(f"{key}={model.metadata[key]}\n")


def load_model(path) -> EmbeddingModel:
    path = str(path)
    with open(path, "rb") as f:
        offset = 0
        line = f.readline()
        header = line.split()
        if len(header) != 2:
            raise FormatError(offset, f"bad header {line!r}")
        try:
            n, dim = int(header[0]), int(header[1])
        except ValueError:
            raise FormatError(offset, f"non-integer header {line!r}") from None
        tokens: list[str] = []
        rows = np.empty((n, dim), dtype=np.float64)
        for i in range(n):
            offset = f.tell()
            line = f.readline()
            if not line:
                raise FormatError(offset, f"expected {n} token rows, file ends after {i}")
            parts = line.split()
            if len(parts) != dim + 1:
                raise FormatError(offset, f"row {i}: expected {dim + 1} fields, got {len(parts)}")
            tokens.append(parts[0].decode("utf-8"))
            try:
                rows[i] = [float(x) for x in parts[1:]]
            except ValueError:
                raise FormatError(offset, f"row {i}: non-numeric vector entry") from None
        offset = f.tell()
        if f.readline().strip():
            raise FormatError(offset, f"trailing content after {n} token rows")
    metadata: dict = {}
    import os

    if os.path.exists(path + ".meta"):
        with open(path + ".meta", "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line and "=" in line:
                    key, value = line.split("=", 1)
                    metadata[key] = value
    return EmbeddingModel(tokens=tokens, vectors=rows, metadata=metadata)
