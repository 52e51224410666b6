"""Independent reference computations used as test oracles.

Each oracle takes a different route from the library code it checks:
brute-force scans, closed forms, or grid searches.
"""

import math

import numpy as np


def brute_knn(points, k):
    """All-pairs scan, self excluded, ties by lower index."""
    P = np.asarray(points, dtype=float)
    n = P.shape[0]
    idx = np.empty((n, k), dtype=np.int64)
    dist = np.empty((n, k))
    for i in range(n):
        d = [(math.dist(P[i], P[j]), j) for j in range(n) if j != i]
        d.sort()
        idx[i] = [j for _, j in d[:k]]
        dist[i] = [v for v, _ in d[:k]]
    return idx, dist


def silhouette(X, labels):
    """Mean silhouette coefficient from the textbook definition."""
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    D = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))
    out = []
    for i in range(len(X)):
        same = labels == labels[i]
        same[i] = False
        a = D[i, same].mean()
        b = min(D[i, labels == c].mean() for c in np.unique(labels) if c != labels[i])
        out.append((b - a) / max(a, b))
    return float(np.mean(out))


def sigma_three_point():
    """Bandwidth for distances (1, 2, 3) with target log2(3), via the quadratic u + u^2 = log2 3 - 1."""
    c = math.log2(3) - 1.0
    u = (-1.0 + math.sqrt(1.0 + 4.0 * c)) / 2.0
    return -1.0 / math.log(u), (1.0, u, u * u)


def grid_dual(X, y, C, levels=8, pts=11):
    """Coarse-to-fine grid over the feasible dual set; the last alpha is fixed by sum(alpha*y)=0."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    lo, hi = np.zeros(n - 1), np.full(n - 1, float(C))
    best_val, best = -np.inf, None
    for _ in range(levels):
        axes = [np.linspace(a, b, pts) for a, b in zip(lo, hi)]
        A = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, n - 1)
        last = -(A @ y[:-1]) / y[-1]
        ok = (last >= -1e-12) & (last <= C + 1e-12)
        full = np.hstack([A[ok], last[ok, None]])
        W = (full * y) @ X
        obj = full.sum(1) - 0.5 * np.einsum("ij,ij->i", W, W)
        k = int(np.argmax(obj))
        if obj[k] > best_val:
            best_val, best = float(obj[k]), full[k]
        step = (hi - lo) / (pts - 1)
        lo = np.maximum(0.0, best[:-1] - 2 * step)
        hi = np.minimum(float(C), best[:-1] + 2 * step)
    return best_val


def percentile_by_hand(values, q):
    """h = (n-1) q + 1 rule written with explicit 1-based ranks."""
    v = sorted(values)
    h = (len(v) - 1) * q + 1
    lo = math.floor(h)
    if lo >= len(v):
        return v[-1]
    return v[lo - 1] + (h - lo) * (v[lo] - v[lo - 1])
