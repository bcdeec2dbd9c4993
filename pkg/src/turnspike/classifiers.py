"""Linear decision stages shared by the models and baselines.

All classifiers follow one contract: fit(features, labels) with labels in
{0, 1}, score(x) returning a real number that grows with class-1 confidence,
and decide(x) thresholding that score. Scores accept a single vector or a
stack of rows.
"""
from __future__ import annotations

import numpy as np

from .errors import DataError
from .metrics import f1

DEFAULT_C_GRID = (0.1, 1.0, 10.0)


def _as_matrix(features):
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim != 2:
        raise DataError("features must be a vector or a matrix")
    return x, False


def _check_binary(labels):
    y = np.asarray(labels, dtype=np.int64).ravel()
    present = np.unique(y)
    if not np.all(np.isin(present, (0, 1))):
        raise DataError("labels must be 0 or 1")
    if present.size < 2:
        raise DataError("training labels contain a single class")
    return y


class LinearSvm:
    """L2-regularized hinge loss minimized by full-batch subgradient descent.

    The bias rides along as an appended constant feature, and the reported
    solution is the running average of the iterates, which smooths out the
    subgradient zig-zag. decide(x) is 1 exactly when score(x) >= 0.
    """

    def __init__(self, c=1.0, epochs=300):
        if c <= 0:
            raise DataError("regularization parameter c must be positive")
        self.c = float(c)
        self.epochs = int(epochs)
        self.weights_ = None
        self.bias_ = 0.0
        self.objective_trace_ = None

    def _objective(self, xb, y, w, lam):
        margins = 1.0 - y * (xb @ w)
        return 0.5 * lam * float(w @ w) + float(np.maximum(margins, 0.0).mean())

    def fit(self, features, labels):
        x, _ = _as_matrix(features)
        y01 = _check_binary(labels)
        if x.shape[0] != y01.size:
            raise DataError("feature and label counts differ")
        y = 2.0 * y01 - 1.0
        n = x.shape[0]
        xb = np.hstack([x, np.ones((n, 1))])
        lam = 1.0 / (self.c * n)
        w = np.zeros(xb.shape[1])
        w_sum = np.zeros_like(w)
        trace = np.empty(self.epochs)
        for t in range(1, self.epochs + 1):
            margins = y * (xb @ w)
            viol = margins < 1.0
            grad = lam * w
            if viol.any():
                grad = grad - (y[viol] @ xb[viol]) / n
            w = w - grad / (lam * t)
            w_sum += w
            trace[t - 1] = self._objective(xb, y, w_sum / t, lam)
        w_avg = w_sum / self.epochs
        self.weights_ = w_avg[:-1]
        self.bias_ = float(w_avg[-1])
        self.objective_trace_ = trace
        return self

    def score(self, features):
        if self.weights_ is None:
            raise DataError("classifier is not fitted")
        x, single = _as_matrix(features)
        s = x @ self.weights_ + self.bias_
        return float(s[0]) if single else s

    def decide(self, features):
        s = self.score(features)
        if np.ndim(s) == 0:
            return int(s >= 0.0)
        return (s >= 0.0).astype(np.int64)

    def to_dict(self) -> dict:
        return {
            "kind": "linear_svm",
            "c": self.c,
            "epochs": self.epochs,
            "weights": self.weights_.tolist(),
            "bias": self.bias_,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "LinearSvm":
        clf = cls(c=payload["c"], epochs=payload["epochs"])
        clf.weights_ = np.asarray(payload["weights"], dtype=np.float64)
        clf.bias_ = float(payload["bias"])
        return clf


class NearestCentroid:
    """Classify by the closer class centroid; exact ties resolve to class 0.

    The tie rule makes decide() use a strict inequality: score(x) is the
    distance advantage of class 1 and must be strictly positive to win.
    """

    def __init__(self):
        self.centroids_ = None

    def fit(self, features, labels):
        x, _ = _as_matrix(features)
        y = _check_binary(labels)
        self.centroids_ = np.stack([x[y == 0].mean(axis=0), x[y == 1].mean(axis=0)])
        return self

    def score(self, features):
        if self.centroids_ is None:
            raise DataError("classifier is not fitted")
        x, single = _as_matrix(features)
        d0 = np.linalg.norm(x - self.centroids_[0], axis=1)
        d1 = np.linalg.norm(x - self.centroids_[1], axis=1)
        s = d0 - d1
        return float(s[0]) if single else s

    def decide(self, features):
        s = self.score(features)
        if np.ndim(s) == 0:
            return int(s > 0.0)
        return (s > 0.0).astype(np.int64)

    def to_dict(self) -> dict:
        return {"kind": "nearest_centroid", "centroids": self.centroids_.tolist()}

    @classmethod
    def from_dict(cls, payload: dict) -> "NearestCentroid":
        clf = cls()
        clf.centroids_ = np.asarray(payload["centroids"], dtype=np.float64)
        return clf


_CLASSIFIER_KINDS = {"linear_svm": LinearSvm, "nearest_centroid": NearestCentroid}


def classifier_from_dict(payload: dict):
    kind = payload.get("kind")
    if kind not in _CLASSIFIER_KINDS:
        raise DataError(f"unknown classifier kind {kind!r}")
    return _CLASSIFIER_KINDS[kind].from_dict(payload)


class RandomFourierFeatures:
    """Explicit feature map approximating an RBF kernel exp(-gamma ||x-y||^2)."""

    def __init__(self, n_features=500, gamma=0.1, seed=0):
        self.n_features = int(n_features)
        self.gamma = float(gamma)
        self.seed = int(seed)
        self.proj_ = None
        self.offset_ = None

    def fit(self, features):
        x, _ = _as_matrix(features)
        rng = np.random.default_rng(self.seed)
        self.proj_ = rng.normal(0.0, np.sqrt(2.0 * self.gamma), (self.n_features, x.shape[1]))
        self.offset_ = rng.uniform(0.0, 2.0 * np.pi, self.n_features)
        return self

    def transform(self, features):
        if self.proj_ is None:
            raise DataError("feature map is not fitted")
        x, single = _as_matrix(features)
        z = np.sqrt(2.0 / self.n_features) * np.cos(x @ self.proj_.T + self.offset_)
        return z[0] if single else z


def kfold_indices(n, folds, seed=0):
    """Shuffled contiguous index folds for cross-validation."""
    if folds < 2 or folds > n:
        raise DataError(f"cannot split {n} samples into {folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return np.array_split(perm, folds)


def cross_val_f1(factory, features, labels, folds=5, seed=0):
    """Mean validation F1 of classifiers built by `factory` over k folds.

    Folds whose training portion collapses to one class are skipped.
    """
    x, _ = _as_matrix(features)
    y = np.asarray(labels, dtype=np.int64).ravel()
    parts = kfold_indices(y.size, folds, seed)
    scores = []
    for k, valid in enumerate(parts):
        train = np.concatenate([parts[j] for j in range(len(parts)) if j != k])
        if np.unique(y[train]).size < 2 or valid.size == 0:
            continue
        clf = factory()
        clf.fit(x[train], y[train])
        preds = np.atleast_1d(clf.decide(x[valid]))
        truth = y[valid]
        tp = int(np.sum((preds == 1) & (truth == 1)))
        fp = int(np.sum((preds == 1) & (truth == 0)))
        fn = int(np.sum((preds == 0) & (truth == 1)))
        scores.append(f1(tp, fp, fn))
    return float(np.mean(scores)) if scores else 0.0


def select_linear_svm(features, labels, c_grid=DEFAULT_C_GRID, folds=5, seed=0, epochs=300):
    """Pick the hinge penalty by k-fold F1 and refit on everything.

    Ties keep the earliest grid entry, so the sweep is deterministic.
    """
    best_c, best_score = None, -1.0
    for c in c_grid:
        score = cross_val_f1(lambda c=c: LinearSvm(c=c, epochs=epochs),
                             features, labels, folds=folds, seed=seed)
        if score > best_score:
            best_c, best_score = c, score
    clf = LinearSvm(c=best_c, epochs=epochs)
    clf.fit(features, labels)
    return clf, best_c
