"""L2 logistic regression with randomized hyperparameter search, plus ranking metrics.

The trainer minimizes mean log-loss + (lambda/2)*|w|^2 (intercept unpenalized)
on internally standardized features, to a 2-norm gradient tolerance. ROC AUC
is the exact Mann-Whitney statistic with ties counted half; average precision
follows the rank-by-rank definition with stable descending-score order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, sparse

from .util import log_sigmoid, sigmoid


class SingleClassInput(ValueError):
    pass


class NoPositives(ValueError):
    pass


class FoldTooSmall(ValueError):
    pass


class NonConvergence(RuntimeError):
    def __init__(self, iterations: int, grad_norm: float):
        super().__init__(f"gradient norm {grad_norm:.3g} after {iterations} iterations")
        self.iterations = iterations
        self.grad_norm = grad_norm


@dataclass
class LogRegModel:
    """Fitted weights on the standardized scale; intercept is the last entry."""

    weights: np.ndarray
    lambda_: float
    mean: np.ndarray
    scale: np.ndarray

    def decision(self, X) -> np.ndarray:
        X = _as_dense(X)
        Z = (X - self.mean) / self.scale
        return Z @ self.weights[:-1] + self.weights[-1]

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.decision(X))


@dataclass
class EvalReport:
    roc_auc: float
    average_precision: float
    n_pos: int
    n_neg: int
    search_trace: list = field(default_factory=list)


def _as_dense(X) -> np.ndarray:
    if sparse.issparse(X):
        return X.toarray().astype(np.float64)
    return np.asarray(X, dtype=np.float64)


def logreg_loss_grad(w_full: np.ndarray, Z: np.ndarray, y: np.ndarray, lambda_: float, sample_weight: np.ndarray):
    """Weighted mean log-loss plus L2 penalty (intercept unpenalized), and its gradient."""
    w = w_full[:-1]
    b = w_full[-1]
    z = Z @ w + b
    total = sample_weight.sum()
    loss = float(
        -(sample_weight * (y * log_sigmoid(z) + (1.0 - y) * log_sigmoid(-z))).sum() / total
        + 0.5 * lambda_ * (w @ w)
    )
    resid = sample_weight * (sigmoid(z) - y) / total
    grad = np.empty_like(w_full)
    grad[:-1] = Z.T @ resid + lambda_ * w
    grad[-1] = resid.sum()
    return loss, grad


def _class_weights(y: np.ndarray, scheme: str | None) -> np.ndarray:
    if scheme in (None, "none"):
        return np.ones(y.size)
    if scheme == "balanced":
        n_pos = int(y.sum())
        n_neg = y.size - n_pos
        w = np.where(y > 0.5, y.size / (2.0 * n_pos), y.size / (2.0 * n_neg))
        return w
    raise ValueError(f"unknown class weight scheme {scheme!r}")


def train_logreg(
    X,
    y,
    lambda_: float = 1.0,
    tol: float = 1e-8,
    max_iter: int = 500,
    class_weight: str | None = None,
) -> LogRegModel:
    """Fit by quasi-Newton descent, then Newton-polish to the gradient tolerance."""
    if lambda_ <= 0.0:
        raise ValueError("lambda must be > 0")
    X = _as_dense(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.shape[0] != y.size:
        raise ValueError("X and y row counts differ")
    classes = np.unique(y)
    if classes.size < 2:
        raise SingleClassInput(f"labels contain a single class {classes!r}")

    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale == 0.0, 1.0, scale)
    Z = (X - mean) / scale
    sw = _class_weights(y, class_weight)

    w0 = np.zeros(X.shape[1] + 1)
    res = optimize.minimize(
        logreg_loss_grad,
        w0,
        args=(Z, y, lambda_, sw),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iter, "ftol": 1e-14, "gtol": tol / (10.0 * np.sqrt(w0.size))},
    )
    w_full = res.x
    iterations = int(res.nit)

    # polish with damped Newton steps until the 2-norm tolerance holds
    total = sw.sum()
    for _ in range(50):
        loss, grad = logreg_loss_grad(w_full, Z, y, lambda_, sw)
        if np.linalg.norm(grad) <= tol:
            break
        z = Z @ w_full[:-1] + w_full[-1]
        p = sigmoid(z)
        d = sw * p * (1.0 - p) / total
        Za = np.hstack([Z, np.ones((Z.shape[0], 1))])
        H = Za.T @ (Za * d[:, None])
        H[np.arange(Z.shape[1]), np.arange(Z.shape[1])] += lambda_
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        while t > 1e-8:
            cand = w_full - t * step
            if logreg_loss_grad(cand, Z, y, lambda_, sw)[0] <= loss:
                break
            t *= 0.5
        w_full = w_full - t * step
        iterations += 1
    _, grad = logreg_loss_grad(w_full, Z, y, lambda_, sw)
    gnorm = float(np.linalg.norm(grad))
    if gnorm > tol:
        raise NonConvergence(iterations, gnorm)
    return LogRegModel(weights=w_full, lambda_=lambda_, mean=mean, scale=scale)


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.size, dtype=np.float64)
    xs = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def roc_auc(scores, labels) -> float:
    """Exact Mann-Whitney AUC: P(pos > neg) + 0.5 P(tie)."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if scores.size != labels.size:
        raise ValueError("scores and labels length differ")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassInput("AUC needs both classes")
    ranks = _average_ranks(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """Mean of precision at each positive's rank, descending scores, stable ties."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if scores.size != labels.size:
        raise ValueError("scores and labels length differ")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise NoPositives("average precision needs at least one positive")
    order = np.argsort(-scores, kind="mergesort")
    hits = labels[order]
    cum_pos = np.cumsum(hits)
    ranks = np.arange(1, labels.size + 1)
    return float((cum_pos[hits] / ranks[hits]).sum() / n_pos)


def roc_curve_points(scores, labels) -> np.ndarray:
    """(fpr, tpr) at every distinct score threshold, ends included."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassInput("ROC needs both classes")
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    hits = labels[order]
    tp = np.cumsum(hits)
    fp = np.cumsum(~hits)
    distinct = np.flatnonzero(np.diff(sorted_scores)) if scores.size > 1 else np.array([], dtype=int)
    idx = np.concatenate([distinct, [scores.size - 1]])
    pts = np.column_stack([fp[idx] / n_neg, tp[idx] / n_pos])
    return np.vstack([[0.0, 0.0], pts])


def pr_curve_points(scores, labels) -> np.ndarray:
    """(recall, precision) at every distinct score threshold."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise NoPositives("PR curve needs at least one positive")
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    hits = labels[order]
    tp = np.cumsum(hits)
    ranks = np.arange(1, labels.size + 1)
    distinct = np.flatnonzero(np.diff(sorted_scores)) if scores.size > 1 else np.array([], dtype=int)
    idx = np.concatenate([distinct, [scores.size - 1]])
    return np.column_stack([tp[idx] / n_pos, tp[idx] / ranks[idx]])


def stratified_folds(y: np.ndarray, k_folds: int, seed: int) -> np.ndarray:
    """Fold index per row: seeded shuffle within each class, then round-robin."""
    y = np.asarray(y).ravel().astype(bool)
    if k_folds < 2:
        raise ValueError("k_folds must be >= 2")
    rng = np.random.default_rng(seed)
    folds = np.empty(y.size, dtype=np.int64)
    for cls in (False, True):
        idx = np.flatnonzero(y == cls)
        if idx.size < k_folds:
            raise FoldTooSmall(
                f"class {int(cls)} has {idx.size} rows, fewer than {k_folds} folds"
            )
        rng.shuffle(idx)
        folds[idx] = np.arange(idx.size) % k_folds
    return folds


@dataclass
class SearchSpace:
    lambda_range: tuple[float, float] = (1e-5, 1e3)
    class_weights: tuple = (None, "balanced")


@dataclass
class SearchResult:
    best_params: dict
    model: LogRegModel
    trace: list  # (params dict, mean CV AUC)


def random_search_cv(
    X,
    y,
    space: SearchSpace | None = None,
    n_draws: int = 30,
    k_folds: int = 5,
    seed: int = 0,
    tol: float = 1e-6,
) -> SearchResult:
    """Draw configurations, score each by mean validation AUC over stratified folds,
    refit the best configuration on all rows."""
    space = space or SearchSpace()
    X = _as_dense(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    folds = stratified_folds(y, k_folds, seed)
    rng = np.random.default_rng(seed)
    log_lo, log_hi = np.log10(space.lambda_range[0]), np.log10(space.lambda_range[1])

    trace = []
    best_idx = -1
    best_score = -np.inf
    for t in range(n_draws):
        lam = float(10.0 ** rng.uniform(log_lo, log_hi))
        cw = space.class_weights[int(rng.integers(0, len(space.class_weights)))]
        scores = []
        for f in range(k_folds):
            tr = folds != f
            va = ~tr
            model = train_logreg(X[tr], y[tr], lambda_=lam, tol=tol, class_weight=cw)
            scores.append(roc_auc(model.decision(X[va]), y[va]))
        mean_score = float(np.mean(scores))
        trace.append(({"lambda": lam, "class_weight": cw or "none"}, mean_score))
        if mean_score > best_score:
            best_score = mean_score
            best_idx = t
    best_params = trace[best_idx][0]
    model = train_logreg(
        X,
        y,
        lambda_=best_params["lambda"],
        tol=tol,
        class_weight=None if best_params["class_weight"] == "none" else best_params["class_weight"],
    )
    return SearchResult(best_params=best_params, model=model, trace=trace)
