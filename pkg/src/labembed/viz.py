"""Exact t-SNE projection to 2-D and a self-contained SVG scatter plot.

The O(n^2) formulation: Gaussian conditional affinities calibrated per point
by binary search so each row's entropy matches log2(perplexity), symmetrized
to a joint distribution; Student-t kernel in the plane; gradient descent with
early exaggeration, a two-stage momentum schedule, and per-coordinate gains.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .corpus import Vocabulary, token_stem
from .embedstore import EmbeddingModel


class PerplexityTooLarge(ValueError):
    pass


class DegenerateInput(ValueError):
    pass


@dataclass
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250
    learning_rate: float = 200.0
    momentum_early: float = 0.5
    momentum_late: float = 0.8
    momentum_switch_iter: int = 250
    seed: int = 0
    entropy_tol_bits: float = 1e-6

    def validate(self, n_points: int) -> None:
        if self.iterations < 250:
            raise ValueError("iterations must be >= 250")
        if self.perplexity <= 1.0:
            raise ValueError("perplexity must be > 1")
        if 3.0 * self.perplexity >= n_points:
            raise PerplexityTooLarge(
                f"3*perplexity = {3 * self.perplexity:.0f} must stay below n = {n_points}"
            )


def _pairwise_sq_dists(X: np.ndarray) -> np.ndarray:
    sq = np.sum(X * X, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.fill_diagonal(d2, 0.0)
    return np.maximum(d2, 0.0)


def _row_affinity(d2_row: np.ndarray, beta: float) -> tuple[np.ndarray, float]:
    """Gaussian affinities at precision beta and their entropy in bits."""
    p = np.exp(-d2_row * beta)
    total = p.sum()
    if total <= 0.0:
        return np.zeros_like(p), 0.0
    p = p / total
    nz = p > 0.0
    entropy_bits = float(-(p[nz] * np.log2(p[nz])).sum())
    return p, entropy_bits


def calibrate_affinities(
    X: np.ndarray, perplexity: float, tol_bits: float = 1e-6, max_steps: int = 200
) -> np.ndarray:
    """Per-point conditional affinities with entropy log2(perplexity), by binary search."""
    n = X.shape[0]
    d2 = _pairwise_sq_dists(X)
    target = np.log2(perplexity)
    P = np.zeros((n, n))
    for i in range(n):
        row = np.delete(d2[i], i)
        beta, lo, hi = 1.0, 0.0, np.inf
        p, h = _row_affinity(row, beta)
        for _ in range(max_steps):
            if abs(h - target) <= tol_bits:
                break
            if h > target:  # too spread out: raise precision
                lo = beta
                beta = beta * 2.0 if not np.isfinite(hi) else 0.5 * (beta + hi)
            else:
                hi = beta
                beta = beta / 2.0 if lo == 0.0 else 0.5 * (beta + lo)
            p, h = _row_affinity(row, beta)
        P[i, np.arange(n) != i] = p
    return P


def _kl(P: np.ndarray, Q: np.ndarray) -> float:
    mask = P > 0.0
    return float((P[mask] * np.log(P[mask] / Q[mask])).sum())


def tsne(vectors: np.ndarray, cfg: TsneConfig, history: dict | None = None) -> np.ndarray:
    """Project rows of `vectors` to 2-D; deterministic per cfg.seed.

    When a dict is passed as `history`, it receives kl_initial and kl_final
    (computed against the unexaggerated joint affinities).
    """
    X = np.asarray(vectors, dtype=np.float64)
    n = X.shape[0]
    if n < 10:
        raise ValueError(f"need at least 10 points, got {n}")
    cfg.validate(n)
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite input")
    if _pairwise_sq_dists(X).max() == 0.0:
        raise DegenerateInput("all points identical")

    cond = calibrate_affinities(X, cfg.perplexity, cfg.entropy_tol_bits)
    P = (cond + cond.T) / (2.0 * n)
    P = np.maximum(P, 1e-12)
    np.fill_diagonal(P, 0.0)

    rng = np.random.default_rng(cfg.seed)
    Y = rng.normal(0.0, 1e-4, size=(n, 2))
    inc = np.zeros_like(Y)
    gains = np.ones_like(Y)

    def q_matrix(Y):
        num = 1.0 / (1.0 + _pairwise_sq_dists(Y))
        np.fill_diagonal(num, 0.0)
        return num / num.sum(), num

    Q0, _ = q_matrix(Y)
    kl_initial = _kl(P, np.maximum(Q0, 1e-12))

    for it in range(cfg.iterations):
        exag = cfg.early_exaggeration if it < cfg.exaggeration_iters else 1.0
        momentum = cfg.momentum_early if it < cfg.momentum_switch_iter else cfg.momentum_late
        Q, num = q_matrix(Y)
        W = (exag * P - np.maximum(Q, 1e-12)) * num
        grad = 4.0 * ((np.diag(W.sum(axis=1)) - W) @ Y)
        same_sign = np.sign(grad) == np.sign(inc)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        gains = np.maximum(gains, 0.01)
        inc = momentum * inc - cfg.learning_rate * gains * grad
        Y = Y + inc
        Y = Y - Y.mean(axis=0)

    Qf, _ = q_matrix(Y)
    kl_final = _kl(P, np.maximum(Qf, 1e-12))
    if history is not None:
        history["kl_initial"] = kl_initial
        history["kl_final"] = kl_final
    return Y


def top_k_frequent(model: EmbeddingModel, vocab: Vocabulary, k: int) -> tuple[np.ndarray, list[str]]:
    """Vectors of the k most frequent tokens (vocabulary order breaks ties)."""
    if k > len(vocab):
        raise ValueError(f"k = {k} exceeds vocabulary size {len(vocab)}")
    tokens = vocab.tokens[:k]
    rows = np.array([model.token_index[t] for t in tokens], dtype=np.int64)
    return model.vectors[rows], list(tokens)


def read_class_table(path) -> dict[str, str]:
    table: dict[str, str] = {}
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["loinc", "class_label"]:
            raise ValueError(f"bad class table header: {header!r}")
        for row in reader:
            if row:
                table[row[0]] = row[1]
    return table


PALETTE = [
    "#4e79a7",
    "#f28e2b",
    "#e15759",
    "#76b7b2",
    "#59a14f",
    "#edc948",
    "#b07aa1",
    "#ff9da7",
    "#9c755f",
    "#86bcb6",
]
OTHERS_COLOR = "#bab0ac"
OTHERS = "Others"


def emit_plot(
    coords: np.ndarray,
    tokens: list[str],
    class_table: dict[str, str],
    out_csv,
    out_svg,
    title: str = "lab code embedding map",
    max_classes: int = 10,
) -> None:
    """Write `token,x,y,class` CSV plus a self-contained SVG scatter.

    Tokens map to classes through their code stem; unmapped stems become
    "Others". The SVG colors the `max_classes` largest classes explicitly and
    folds the rest into "Others" as well.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape[0] != len(tokens):
        raise ValueError("coords and tokens length differ")
    classes = [class_table.get(token_stem(t), OTHERS) for t in tokens]

    with open(out_csv, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["token", "x", "y", "class"])
        for t, (x, y), c in zip(tokens, coords, classes):
            writer.writerow([t, "%.6g" % x, "%.6g" % y, c])

    sizes: dict[str, int] = {}
    for c in classes:
        sizes[c] = sizes.get(c, 0) + 1
    named = sorted((c for c in sizes if c != OTHERS), key=lambda c: (-sizes[c], c))
    shown = named[:max_classes]
    color_of = {c: PALETTE[i % len(PALETTE)] for i, c in enumerate(shown)}
    display = [c if c in color_of else OTHERS for c in classes]
    legend = shown + ([OTHERS] if OTHERS in display else [])

    width, height, pad, legend_w = 760, 560, 40, 200
    span_x = coords[:, 0].max() - coords[:, 0].min() or 1.0
    span_y = coords[:, 1].max() - coords[:, 1].min() or 1.0
    plot_w = width - 2 * pad - legend_w
    plot_h = height - 2 * pad
    xs = pad + (coords[:, 0] - coords[:, 0].min()) / span_x * plot_w
    ys = pad + (1.0 - (coords[:, 1] - coords[:, 1].min()) / span_y) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{pad}" y="{pad - 16}" font-family="sans-serif" font-size="14">{title}</text>',
    ]
    for x, y, c, tok in zip(xs, ys, display, tokens):
        color = color_of.get(c, OTHERS_COLOR)
        parts.append(
            f'<circle class="pt" cx="{x:.2f}" cy="{y:.2f}" r="3" fill="{color}" '
            f'fill-opacity="0.8"><title>{tok} ({c})</title></circle>'
        )
    lx = width - legend_w - pad / 2
    for i, c in enumerate(legend):
        ly = pad + 18 * i
        color = color_of.get(c, OTHERS_COLOR)
        parts.append(f'<rect class="legend" x="{lx}" y="{ly}" width="10" height="10" fill="{color}"/>')
        parts.append(
            f'<text x="{lx + 16}" y="{ly + 9}" font-family="sans-serif" font-size="11">{c}</text>'
        )
    parts.append("</svg>")
    with open(out_svg, "w", encoding="utf-8") as f:
        f.write("\n".join(parts) + "\n")
