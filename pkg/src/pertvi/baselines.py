"""Ridge logistic regression, PCA, and two-step embed-then-classify pipelines."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

DEFAULT_LAMBDA_GRID = tuple(10.0 ** k for k in range(-3, 4))


class Standardizer:
    """Per-feature z-score using statistics of the fitting data."""

    def fit(self, X: np.ndarray) -> "Standardizer":
        X = np.asarray(X, dtype=np.float64)
        self.mean_ = X.mean(axis=0)
        sd = X.std(axis=0)
        self.scale_ = np.where(sd > 1e-12, sd, 1.0)
        return self

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean_) / self.scale_


# ridge logistic regression


@dataclass
class RidgeLrModel:
    weights: np.ndarray
    intercept: float
    lam: float
    loss_history: list[float] = field(default_factory=list)
    grad_norm: float = 0.0

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != len(self.weights):
            raise ValueError(f"expected {len(self.weights)} features, got {X.shape[-1]}")
        return X @ self.weights + self.intercept

    def predict_proba(self, X) -> np.ndarray:
        return 0.5 * (1.0 + np.tanh(0.5 * self.decision_function(X)))


def ridge_loss(X, y, w, b, lam) -> float:
    f = X @ w + b
    return float(np.mean(np.logaddexp(0.0, f) - y * f) + 0.5 * lam * (w @ w))


def ridge_fit(X, y, lam: float, max_iter: int = 200, tol: float = 1e-6) -> RidgeLrModel:
    """Minimize mean logistic loss + (lam/2)||w||^2 (intercept unpenalized).

    Damped Newton with Armijo backtracking; stops when the gradient norm
    drops below ``tol``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(X) != len(y):
        raise ValueError("X and y row counts differ")
    if lam < 0:
        raise ValueError("lam must be non-negative")
    if len(np.unique(y)) < 2:
        raise ValueError("ridge_fit needs both classes in y")
    n, p = X.shape
    Xa = np.hstack([X, np.ones((n, 1))])
    reg = np.full(p + 1, lam)
    reg[-1] = 0.0
    theta = np.zeros(p + 1)
    prior = y.mean()
    theta[-1] = np.log(prior / (1.0 - prior))

    def loss(t):
        return ridge_loss(X, y, t[:-1], t[-1], lam)

    cur = loss(theta)
    history = [cur]
    gnorm = np.inf
    for _ in range(max_iter):
        mu = 0.5 * (1.0 + np.tanh(0.5 * (Xa @ theta)))
        grad = Xa.T @ (mu - y) / n + reg * theta
        gnorm = float(np.linalg.norm(grad))
        if gnorm < tol:
            break
        H = (Xa * (mu * (1.0 - mu))[:, None]).T @ Xa / n + np.diag(reg)
        H[np.diag_indices_from(H)] += 1e-12
        step = np.linalg.solve(H, grad)
        t = 1.0
        while True:
            cand = theta - t * step
            new = loss(cand)
            if new <= cur - 1e-4 * t * (grad @ step) or t < 1e-10:
                break
            t *= 0.5
        if new > cur:
            break
        theta, cur = cand, new
        history.append(cur)
    return RidgeLrModel(theta[:-1].copy(), float(theta[-1]), lam, history, gnorm)


def _group_folds(groups: np.ndarray, k: int, seed: int) -> list[np.ndarray]:
    uniq = np.array(sorted(set(groups.tolist())), dtype=object)
    perm = np.random.default_rng(seed).permutation(len(uniq))
    parts = np.array_split(uniq[perm], min(k, len(uniq)))
    return [np.flatnonzero(np.isin(groups, p)) for p in parts]


def select_lambda(X, y, grid=DEFAULT_LAMBDA_GRID, n_folds: int = 3, groups=None,
                  seed: int = 0) -> float:
    """Inner grouped k-fold choice of lam by mean held-out log-loss."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    groups = np.arange(len(y)) if groups is None else np.asarray(groups)
    folds = _group_folds(groups, n_folds, seed)
    scores = []
    for lam in grid:
        losses = []
        for test in folds:
            train = np.setdiff1d(np.arange(len(y)), test)
            if len(np.unique(y[train])) < 2 or len(test) == 0:
                continue
            m = ridge_fit(X[train], y[train], lam)
            f = m.decision_function(X[test])
            losses.append(np.mean(np.logaddexp(0.0, f) - y[test] * f))
        scores.append(np.mean(losses) if losses else np.inf)
    return float(grid[int(np.argmin(scores))])


class RidgeClassifier:
    """Standardize, pick lam by inner CV (unless fixed), fit ridge LR."""

    def __init__(self, grid=DEFAULT_LAMBDA_GRID, lam: float | None = None,
                 n_folds: int = 3, seed: int = 0):
        self.grid, self.lam, self.n_folds, self.seed = tuple(grid), lam, n_folds, seed

    def fit(self, X, y, groups=None) -> "RidgeClassifier":
        self.scaler_ = Standardizer().fit(X)
        Z = self.scaler_.transform(X)
        lam = self.lam
        if lam is None:
            lam = select_lambda(Z, y, self.grid, self.n_folds, groups, self.seed)
        self.model_ = ridge_fit(Z, y, lam)
        return self

    def predict_proba(self, X) -> np.ndarray:
        return self.model_.predict_proba(self.scaler_.transform(X))


# PCA


@dataclass
class PcaModel:
    components: np.ndarray  # (k, G), orthonormal rows
    mean: np.ndarray
    explained_variance: np.ndarray


def pca_fit(X, k: int) -> PcaModel:
    X = np.asarray(X, dtype=np.float64)
    n, g = X.shape
    if not 1 <= k <= min(n, g):
        raise ValueError(f"k={k} must be in [1, min(rows, genes)={min(n, g)}]")
    mean = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - mean, full_matrices=False)
    comps = vt[:k]
    # deterministic sign: largest-magnitude loading positive
    flip = np.sign(comps[np.arange(k), np.abs(comps).argmax(axis=1)])
    comps = comps * flip[:, None]
    var = s[:k] ** 2 / max(n - 1, 1)
    return PcaModel(comps, mean, var)


def pca_transform(model: PcaModel, X) -> np.ndarray:
    return (np.asarray(X, dtype=np.float64) - model.mean) @ model.components.T


def pca_reconstruct(model: PcaModel, scores) -> np.ndarray:
    return np.asarray(scores) @ model.components + model.mean


# two-step pipelines


class Embedder(Protocol):
    def transform(self, X: np.ndarray) -> np.ndarray: ...


class IdentityEmbedder:
    def transform(self, X):
        return np.asarray(X, dtype=np.float64)


class PcaEmbedder:
    """Standardize then project onto the first k principal components."""

    def __init__(self, k: int):
        self.k = k

    def fit(self, X) -> "PcaEmbedder":
        self.scaler_ = Standardizer().fit(X)
        self.model_ = pca_fit(self.scaler_.transform(X), min(self.k, *np.shape(X)))
        return self

    def transform(self, X):
        return pca_transform(self.model_, self.scaler_.transform(X))


class PertVaeEmbedder:
    """Frozen PertVAE latent means: ``which='z1'`` (pre-treatment) or ``'z2'``
    (predicted post-treatment, the mean of E_q(z1|x)[p(z2|z1)])."""

    def __init__(self, model, which: str = "z1", n_samples: int = 64, seed: int = 0):
        if which not in ("z1", "z2"):
            raise ValueError("which must be 'z1' or 'z2'")
        self.model, self.which, self.n_samples, self.seed = model, which, n_samples, seed

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.model.config.n_genes:
            raise ValueError(f"embedder expects {self.model.config.n_genes} genes, got {X.shape[-1]}")
        rng = np.random.default_rng(self.seed)
        fn = self.model.embed_z1 if self.which == "z1" else self.model.embed_z2
        return fn(X, self.n_samples, rng)


class TwoStepPipeline:
    """Embed with a frozen, already-fitted embedder, then fit a classifier."""

    def __init__(self, embedder: Embedder, classifier: RidgeClassifier | None = None):
        self.embedder = embedder
        self.classifier = classifier if classifier is not None else RidgeClassifier()

    def fit(self, X, y, groups=None) -> "TwoStepPipeline":
        self.classifier.fit(self.embedder.transform(X), y, groups)
        return self

    def predict_proba(self, X) -> np.ndarray:
        return self.classifier.predict_proba(self.embedder.transform(X))


def two_step_pipeline(embedder: Embedder, classifier: RidgeClassifier | None = None) -> TwoStepPipeline:
    return TwoStepPipeline(embedder, classifier)
