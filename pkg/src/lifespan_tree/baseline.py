"""Linear soft-margin SVMs trained by SMO, combined one-vs-one with loss-weighted ECOC decoding."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np

from .errors import DomainError, ValidationError

log = logging.getLogger(__name__)

KKT_TOL = 1e-3
MAX_PASSES = 10_000
_TAU = 1e-12


@dataclass(frozen=True)
class SvmModel:
    w: np.ndarray
    b: float
    C: float
    alpha: np.ndarray
    y: np.ndarray
    converged: bool
    kkt_gap: float
    n_iter: int

    @property
    def support(self):
        return np.flatnonzero(self.alpha > 0)

    @property
    def dual_coef(self):
        s = self.support
        return self.alpha[s] * self.y[s]

    def decision_function(self, X):
        return np.asarray(X, dtype=float) @ self.w + self.b

    def predict(self, X):
        return np.where(self.decision_function(X) >= 0, 1, -1)


def dual_objective(alpha, X, y):
    v = (alpha * y) @ X
    return float(alpha.sum() - 0.5 * v @ v)


def train_svm(X, y, C=1.0, tol=KKT_TOL, max_passes=MAX_PASSES):
    """Solve the linear-kernel SVM dual by SMO with maximal-violating-pair selection.

    Iteration stops when the KKT gap m(alpha) - M(alpha) drops below ``tol``
    or after ``max_passes * n`` pair updates; in the latter case the model is
    returned with ``converged=False`` and the gap it reached.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    if n < 2 or y.shape != (n,):
        raise DomainError("need at least two labelled rows")
    if not set(np.unique(y)) <= {-1.0, 1.0}:
        raise DomainError("labels must be +1/-1")
    if np.unique(y).size < 2:
        raise DomainError("single-class input: both +1 and -1 labels are required")
    if not C > 0:
        raise DomainError("C must be positive")

    K = X @ X.T
    diag = np.diag(K).copy()
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of 0.5 a'Qa - e'a, Q = yy' * K
    pos = y > 0
    max_iter = max_passes * n
    gap = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        up = (pos & (alpha < C)) | (~pos & (alpha > 0))
        low = (~pos & (alpha < C)) | (pos & (alpha > 0))
        score = -y * grad
        i = int(np.argmax(np.where(up, score, -np.inf)))
        j = int(np.argmin(np.where(low, score, np.inf)))
        gap = score[i] - score[j]
        if gap < tol:
            break
        curv = diag[i] + diag[j] - 2.0 * K[i, j]
        lam = gap / max(curv, _TAU)
        lam = min(lam, C - alpha[i] if y[i] > 0 else alpha[i])
        lam = min(lam, alpha[j] if y[j] > 0 else C - alpha[j])
        di = y[i] * lam
        dj = -y[j] * lam
        alpha[i] = min(max(alpha[i] + di, 0.0), C)
        alpha[j] = min(max(alpha[j] + dj, 0.0), C)
        grad += y * (K[:, i] * (y[i] * di) + K[:, j] * (y[j] * dj))
    converged = gap < tol
    if not converged:
        log.warning("SMO stopped at the iteration cap with KKT gap %.3g", gap)

    score = -y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        b = float(score[free].mean())
    else:
        up = (pos & (alpha < C)) | (~pos & (alpha > 0))
        low = (~pos & (alpha < C)) | (pos & (alpha > 0))
        b = float(0.5 * (score[up].max() + score[low].min()))
    w = (alpha * y) @ X
    return SvmModel(w=w, b=b, C=float(C), alpha=alpha, y=y, converged=bool(converged),
                    kkt_gap=float(gap), n_iter=it)


def kkt_residual(model: SvmModel, X):
    """Largest violation of the dual KKT conditions (complementary slackness, feasibility)."""
    X = np.asarray(X, dtype=float)
    f = model.decision_function(X)
    m = model.y * f
    a, C = model.alpha, model.C
    viol = np.zeros_like(m)
    lower = a <= 0
    upper = a >= C
    free = ~lower & ~upper
    viol[lower] = np.maximum(0.0, 1.0 - m[lower])
    viol[upper] = np.maximum(0.0, m[upper] - 1.0)
    viol[free] = np.abs(m[free] - 1.0)
    feas = max(float(np.abs(a @ model.y)), float(max(0.0, -a.min())), float(max(0.0, a.max() - C)))
    return max(float(viol.max()), feas)


@dataclass(frozen=True)
class EcocModel:
    labels: tuple
    coding: np.ndarray
    learners: tuple
    mean: np.ndarray
    scale: np.ndarray

    def _margins(self, X):
        Xs = (np.atleast_2d(np.asarray(X, dtype=float)) - self.mean) / self.scale
        return np.column_stack([m.decision_function(Xs) for m in self.learners])

    def scores(self, X):
        """Negated loss-weighted hinge decoding loss, one column per label."""
        s = self._margins(X)
        M = self.coding
        loss = np.maximum(0.0, 1.0 - M[None, :, :] * s[:, None, :]) / 2.0
        absM = np.abs(M)
        return -(loss * absM[None]).sum(axis=2) / absM.sum(axis=1)[None, :]

    def predict_ranked(self, x):
        sc = self.scores(x)[0]
        order = sorted(range(len(self.labels)), key=lambda i: (-sc[i], i))
        return tuple(self.labels[i] for i in order), dict(zip(self.labels, sc.tolist()))

    def to_dict(self):
        return {
            "labels": list(self.labels),
            "coding": self.coding.astype(int).tolist(),
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "learners": [
                {"w": m.w.tolist(), "b": m.b, "C": m.C, "converged": m.converged,
                 "kkt_gap": m.kkt_gap, "n_iter": m.n_iter}
                for m in self.learners
            ],
        }

    @classmethod
    def from_dict(cls, doc):
        learners = tuple(
            SvmModel(w=np.array(d["w"]), b=float(d["b"]), C=float(d["C"]), alpha=np.zeros(0),
                     y=np.zeros(0), converged=bool(d["converged"]), kkt_gap=float(d["kkt_gap"]),
                     n_iter=int(d["n_iter"]))
            for d in doc["learners"]
        )
        return cls(labels=tuple(doc["labels"]), coding=np.array(doc["coding"], dtype=float),
                   learners=learners, mean=np.array(doc["mean"]), scale=np.array(doc["scale"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def one_vs_one_coding(n_labels):
    pairs = list(combinations(range(n_labels), 2))
    M = np.zeros((n_labels, len(pairs)))
    for c, (i, j) in enumerate(pairs):
        M[i, c] = 1.0
        M[j, c] = -1.0
    return M


def train_ecoc(X, labels, C=1.0, label_order=None):
    """One binary SVM per unordered label pair on standardized features."""
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels, dtype=object)
    order = tuple(label_order) if label_order is not None else tuple(dict.fromkeys(labels.tolist()))
    if len(order) < 2:
        raise DomainError("ECOC needs at least two classes")
    for lab in order:
        cnt = int((labels == lab).sum())
        if cnt < 2:
            raise ValidationError(f"class {lab!r} has {cnt} sample(s); at least 2 required")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Xs = (X - mean) / scale
    M = one_vs_one_coding(len(order))
    learners = []
    for c in range(M.shape[1]):
        i = int(np.flatnonzero(M[:, c] == 1)[0])
        j = int(np.flatnonzero(M[:, c] == -1)[0])
        rows = (labels == order[i]) | (labels == order[j])
        y = np.where(labels[rows] == order[i], 1.0, -1.0)
        learners.append(train_svm(Xs[rows], y, C))
    return EcocModel(labels=order, coding=M, learners=tuple(learners), mean=mean, scale=scale)


def predict_ecoc(model: EcocModel, x):
    """Ranked labels (best first) and per-label scores for one feature vector."""
    return model.predict_ranked(x)


def with_age(Z, ages):
    return np.column_stack([np.asarray(Z, dtype=float), np.asarray(ages, dtype=float)])
