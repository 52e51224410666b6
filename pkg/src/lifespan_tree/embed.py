"""UMAP written out in full: exact kNN graph, fuzzy union, spectral init, negative-sampling SGD.

Only what the lifespan tree needs is implemented (Euclidean metric, 2-D
output, out-of-sample transform).  Everything is deterministic for a fixed
seed: the SGD runs single-threaded in canonical edge order and draws its
negative samples from an explicit Tausworthe state.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import math
import warnings
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np
import scipy.sparse as sp
from scipy.optimize import curve_fit
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigsh

from .errors import DomainError
from .stats import rng_stream

log = logging.getLogger(__name__)

FORMAT_VERSION = "lifespan-tree-umap/1"
GRAD_CLIP = 4.0
SIGMA_ITERS = 64
SIGMA_CLAMP = (1e-3, 1e3)
INIT_SCALE = 10.0
DENSE_EIGEN_MAX = 2500
_KNN_CHUNK = 256


@dataclass(frozen=True)
class UmapParams:
    n_neighbors: int = 15
    n_components: int = 2
    min_dist: float = 0.1
    spread: float = 1.0
    n_epochs: int | None = None
    negative_sample_rate: int = 5
    learning_rate: float = 1.0
    metric: str = "euclidean"
    seed: int = 0

    def __post_init__(self):
        if self.n_neighbors < 2:
            raise DomainError("n_neighbors must be >= 2")
        if not 0 < self.min_dist < self.spread:
            raise DomainError("need 0 < min_dist < spread")
        if self.metric != "euclidean":
            raise DomainError("only the Euclidean metric is supported")
        if self.n_components != 2:
            raise DomainError("only 2-D embeddings are supported")

    @classmethod
    def for_populations(cls, n_populations, seed=0, **kw):
        return cls(n_neighbors=10 * n_populations, seed=seed, **kw)


def default_epochs(n_rows):
    return 200 if n_rows > 10_000 else 500


# ---------------------------------------------------------------- neighbours

def _exact_rows(points, queries, cand):
    diff = queries[:, None, :] - points[cand]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def _knn_search(points, queries, k, exclude_self):
    # fast squared-distance screen, then exact distances and a (distance, index) sort
    n = points.shape[0]
    m = queries.shape[0]
    limit = n - 1 if exclude_self else n
    n_cand = min(limit, k + max(k, 8))
    sq_p = np.einsum("ij,ij->i", points, points)
    indices = np.empty((m, k), dtype=np.int64)
    distances = np.empty((m, k))
    for start in range(0, m, _KNN_CHUNK):
        q = queries[start:start + _KNN_CHUNK]
        rows = np.arange(q.shape[0])
        sq_q = np.einsum("ij,ij->i", q, q)
        d2 = sq_q[:, None] + sq_p[None, :] - 2.0 * (q @ points.T)
        if exclude_self:
            d2[rows, start + rows] = np.inf
        if n_cand < n:
            cand = np.argpartition(d2, n_cand - 1, axis=1)[:, :n_cand]
        else:
            cand = np.broadcast_to(np.arange(n), (q.shape[0], n)).copy()
        exact = _exact_rows(points, q, cand)
        for r in rows:
            o = np.lexsort((cand[r], exact[r]))[:k]
            indices[start + r] = cand[r, o]
            distances[start + r] = exact[r, o]
    return indices, distances


def knn(points, k):
    """Exact k nearest neighbours of every row (self excluded, ties to lower index)."""
    points = np.ascontiguousarray(points, dtype=float)
    n = points.shape[0]
    if not 1 <= k < n:
        raise DomainError(f"k={k} must satisfy 1 <= k < n={n}")
    if not np.all(np.isfinite(points)):
        raise DomainError("points contain non-finite entries")
    return _knn_search(points, points, k, exclude_self=True)


def knn_query(points, queries, k):
    """Exact k nearest training rows for each query row."""
    points = np.ascontiguousarray(points, dtype=float)
    queries = np.ascontiguousarray(np.atleast_2d(queries), dtype=float)
    if not 1 <= k <= points.shape[0]:
        raise DomainError(f"k={k} out of range for {points.shape[0]} training rows")
    return _knn_search(points, queries, k, exclude_self=False)


# ---------------------------------------------------------------- fuzzy graph

def smooth_knn_sigma(distances, target=None):
    """Per-row local connectivity ``rho`` and bandwidth ``sigma``.

    ``sigma`` is found by bisection (64 steps) inside
    [1e-3, 1e3] * mean distance of the row so that
    ``sum_j exp(-max(0, d_j - rho) / sigma)`` equals ``target``
    (log2 k by default).  Returns ``(rho, sigma, weights, degenerate)``;
    rows where the target cannot be reached are flagged degenerate and get
    sigma at the lower clamp.  A 1-D input is treated as a single row.
    """
    d = np.asarray(distances, dtype=float)
    single = d.ndim == 1
    d = np.atleast_2d(d)
    k = d.shape[1]
    if k < 2:
        raise DomainError("smooth_knn_sigma needs k >= 2")
    if target is None:
        target = math.log2(k)
    positive = np.where(d > 0, d, np.inf)
    rho = positive.min(axis=1)
    rho[~np.isfinite(rho)] = 0.0
    excess = np.maximum(d - rho[:, None], 0.0)

    mean_d = d.mean(axis=1)
    global_mean = d.mean() if d.size else 0.0
    base = np.where(mean_d > 0, mean_d, global_mean if global_mean > 0 else 1.0)
    lo = SIGMA_CLAMP[0] * base
    hi = SIGMA_CLAMP[1] * base

    def total(sig):
        return np.exp(-excess / sig[:, None]).sum(axis=1)

    at_lo = total(lo)
    degenerate = at_lo >= target
    a, b = lo.copy(), hi.copy()
    for _ in range(SIGMA_ITERS):
        mid = 0.5 * (a + b)
        too_big = total(mid) > target
        b = np.where(too_big, mid, b)
        a = np.where(too_big, a, mid)
    sigma = np.where(degenerate, lo, 0.5 * (a + b))
    weights = np.exp(-excess / sigma[:, None])
    if single:
        return float(rho[0]), float(sigma[0]), weights[0], bool(degenerate[0])
    return rho, sigma, weights, degenerate


@dataclass(frozen=True)
class FuzzyGraph:
    matrix: sp.csr_matrix

    @property
    def n_vertices(self):
        return self.matrix.shape[0]


def fuzzy_union(indices, weights, n_vertices=None):
    """Symmetrize directed membership strengths by probabilistic t-conorm."""
    indices = np.asarray(indices)
    weights = np.asarray(weights, dtype=float)
    n = n_vertices if n_vertices is not None else indices.shape[0]
    rows = np.repeat(np.arange(indices.shape[0]), indices.shape[1])
    cols = indices.ravel()
    vals = weights.ravel()
    keep = (rows != cols) & (vals > 0)
    W = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()
    W.sum_duplicates()
    Wt = W.T.tocsr()
    G = (W + Wt - W.multiply(Wt)).tocsr()
    G.setdiag(0.0)
    G.eliminate_zeros()
    G.sort_indices()
    return FuzzyGraph(G)


def fit_curve_ab(min_dist=0.1, spread=1.0):
    """Fit ``1 / (1 + a d^(2b))`` to the offset-exponential target on [0, 3 * spread]."""
    if not 0 < min_dist < spread:
        raise DomainError("need 0 < min_dist < spread")

    def curve(x, a, b):
        return 1.0 / (1.0 + a * x ** (2 * b))

    xv = np.linspace(0, spread * 3, 300)
    yv = np.where(xv < min_dist, 1.0, np.exp(-(xv - min_dist) / spread))
    try:
        (a, b), _ = curve_fit(curve, xv, yv, p0=(1.0, 1.0), xtol=1e-6, ftol=1e-6, maxfev=5000)
        if a > 0 and b > 0 and np.isfinite(a) and np.isfinite(b):
            return float(a), float(b)
    except RuntimeError:
        pass
    warnings.warn("curve fit did not converge; using grid search", RuntimeWarning, stacklevel=2)
    A, B = np.meshgrid(np.linspace(0.05, 5, 400), np.linspace(0.3, 2, 400), indexing="ij")
    err = ((1.0 / (1.0 + A[..., None] * xv ** (2 * B[..., None])) - yv) ** 2).sum(axis=-1)
    i = np.unravel_index(np.argmin(err), err.shape)
    return float(A[i]), float(B[i])


# ---------------------------------------------------------------- initialization

def spectral_layout(graph: FuzzyGraph, seed):
    """Two leading non-trivial eigenvectors of the normalized adjacency, or None on failure."""
    W = graph.matrix
    n = W.shape[0]
    deg = np.asarray(W.sum(axis=1)).ravel()
    if np.any(deg <= 0) or n < 4:
        return None
    dinv = sp.diags(1.0 / np.sqrt(deg))
    A = (dinv @ W @ dinv).tocsr()
    try:
        if n <= DENSE_EIGEN_MAX:
            vals, vecs = np.linalg.eigh(A.toarray())
        else:
            v0 = rng_stream(seed, 0x5EC7).uniform(size=n)
            vals, vecs = eigsh(A, k=3, which="LA", v0=v0, tol=1e-6, maxiter=n * 5)
    except (ArpackError, ArpackNoConvergence, np.linalg.LinAlgError):
        return None
    order = np.argsort(-vals, kind="stable")
    coords = vecs[:, order[1:3]]
    if not np.all(np.isfinite(coords)):
        return None
    for c in range(coords.shape[1]):
        col = coords[:, c]
        if col[np.argmax(np.abs(col))] < 0:
            coords[:, c] = -col
    return coords


def initial_embedding(graph: FuzzyGraph, seed):
    rng = rng_stream(seed, 0x1417)
    coords = spectral_layout(graph, seed)
    if coords is None:
        log.warning("spectral initialization failed; falling back to uniform random init")
        return rng.uniform(-INIT_SCALE, INIT_SCALE, size=(graph.n_vertices, 2))
    coords = coords * (INIT_SCALE / np.abs(coords).max())
    return coords + rng.normal(scale=1e-4, size=coords.shape)


# ---------------------------------------------------------------- SGD kernels

@numba.njit(cache=True)
def _tau_rand_int(state):
    state[0] = (((state[0] & 4294967294) << 12) & 0xFFFFFFFF) ^ (
        (((state[0] << 13) & 0xFFFFFFFF) ^ state[0]) >> 19)
    state[1] = (((state[1] & 4294967288) << 4) & 0xFFFFFFFF) ^ (
        (((state[1] << 2) & 0xFFFFFFFF) ^ state[1]) >> 25)
    state[2] = (((state[2] & 4294967280) << 17) & 0xFFFFFFFF) ^ (
        (((state[2] << 3) & 0xFFFFFFFF) ^ state[2]) >> 11)
    return state[0] ^ state[1] ^ state[2]


@numba.njit(cache=True)
def _clip(v):
    if v > 4.0:
        return 4.0
    if v < -4.0:
        return -4.0
    return v


@numba.njit(cache=True)
def _optimize_layout(head_emb, tail_emb, head, tail, epochs_per_sample, n_epochs, a, b,
                     state, initial_alpha, negative_sample_rate, move_other):
    n_edges = head.shape[0]
    n_tail = tail_emb.shape[0]
    dim = head_emb.shape[1]
    eps_neg = epochs_per_sample / negative_sample_rate
    next_sample = epochs_per_sample.copy()
    next_neg = eps_neg.copy()
    max_step = 0.0
    for epoch in range(n_epochs):
        alpha = initial_alpha * (1.0 - epoch / n_epochs)
        for i in range(n_edges):
            if next_sample[i] > epoch:
                continue
            j = head[i]
            k = tail[i]
            dist2 = 0.0
            for d in range(dim):
                diff = head_emb[j, d] - tail_emb[k, d]
                dist2 += diff * diff
            coeff = 0.0
            if dist2 > 0.0:
                coeff = -2.0 * a * b * dist2 ** (b - 1.0) / (a * dist2 ** b + 1.0)
            for d in range(dim):
                g = _clip(coeff * (head_emb[j, d] - tail_emb[k, d]))
                if abs(g) > max_step:
                    max_step = abs(g)
                head_emb[j, d] += g * alpha
                if move_other:
                    tail_emb[k, d] -= g * alpha
            next_sample[i] += epochs_per_sample[i]

            n_neg = int((epoch - next_neg[i]) / eps_neg[i])
            for _p in range(n_neg):
                # uniform over tail rows, excluding both edge endpoints
                while True:
                    r = _tau_rand_int(state) % n_tail
                    if r < 0:
                        r += n_tail
                    if r != k and (not move_other or r != j):
                        break
                dist2 = 0.0
                for d in range(dim):
                    diff = head_emb[j, d] - tail_emb[r, d]
                    dist2 += diff * diff
                if dist2 > 0.0:
                    coeff = 2.0 * b / ((0.001 + dist2) * (a * dist2 ** b + 1.0))
                else:
                    coeff = 0.0
                for d in range(dim):
                    if coeff > 0.0:
                        g = _clip(coeff * (head_emb[j, d] - tail_emb[r, d]))
                    else:
                        g = 4.0
                    if abs(g) > max_step:
                        max_step = abs(g)
                    head_emb[j, d] += g * alpha
            next_neg[i] += n_neg * eps_neg[i]
        for p in range(head_emb.shape[0]):
            for d in range(dim):
                if not np.isfinite(head_emb[p, d]):
                    return False, max_step
    return True, max_step


def _epochs_per_sample(weights, n_epochs):
    out = np.full(weights.shape[0], -1.0)
    n_samples = n_epochs * (weights / weights.max())
    pos = n_samples > 0
    out[pos] = float(n_epochs) / n_samples[pos]
    return out


def _tau_state(seed, stream):
    rng = rng_stream(seed, stream)
    return rng.integers(16, 2**31 - 1, size=3, dtype=np.int64)


# ---------------------------------------------------------------- model

@dataclass(frozen=True)
class EmbeddingModel:
    training: np.ndarray
    embedding: np.ndarray
    params: UmapParams
    a: float
    b: float
    rho: np.ndarray
    sigma: np.ndarray
    n_epochs: int
    seed: int
    max_step: float = field(default=0.0, compare=False)

    @property
    def transform_epochs(self):
        return int(math.ceil(self.n_epochs / 3))

    def digest(self):
        h = hashlib.sha256()
        for arr in (self.training, self.embedding, self.rho, self.sigma):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(json.dumps([asdict(self.params), self.a, self.b, self.n_epochs, self.seed],
                            sort_keys=True).encode())
        return h.hexdigest()

    def save(self, path):
        arrays = {
            "version": np.array(FORMAT_VERSION),
            "training": self.training,
            "embedding": self.embedding,
            "rho": self.rho,
            "sigma": self.sigma,
            "ab": np.array([self.a, self.b]),
            "meta": np.array(json.dumps({"params": asdict(self.params), "n_epochs": self.n_epochs,
                                         "seed": self.seed, "max_step": self.max_step})),
        }
        # np.savez stamps entries with the wall clock; fixed timestamps keep files byte-stable
        with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
            for name, arr in arrays.items():
                info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
                buf = io.BytesIO()
                np.lib.format.write_array(buf, np.asanyarray(arr), allow_pickle=False)
                zf.writestr(info, buf.getvalue())

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as z:
            version = str(z["version"])
            if version != FORMAT_VERSION:
                raise DomainError(f"unsupported embedding model version {version!r}")
            meta = json.loads(str(z["meta"]))
            return cls(
                training=z["training"],
                embedding=z["embedding"],
                params=UmapParams(**meta["params"]),
                a=float(z["ab"][0]),
                b=float(z["ab"][1]),
                rho=z["rho"],
                sigma=z["sigma"],
                n_epochs=int(meta["n_epochs"]),
                seed=int(meta["seed"]),
                max_step=float(meta.get("max_step", 0.0)),
            )

    def transform(self, points):
        return transform(self, points)


def fit_umap(samples, params: UmapParams):
    """Embed the rows of ``samples`` (a matrix or a SampleSet) in 2-D."""
    X = np.ascontiguousarray(getattr(samples, "values", samples), dtype=float)
    n = X.shape[0]
    if n <= params.n_neighbors:
        raise DomainError(f"{n} rows is not more than n_neighbors={params.n_neighbors}")
    if not np.all(np.isfinite(X)):
        raise DomainError("training data contain non-finite values")
    if np.all(np.ptp(X, axis=0) == 0):
        raise DomainError("zero-variance data: all training rows are identical")

    n_epochs = params.n_epochs or default_epochs(n)
    a, b = fit_curve_ab(params.min_dist, params.spread)
    indices, distances = knn(X, params.n_neighbors)
    rho, sigma, weights, _ = smooth_knn_sigma(distances)
    graph = fuzzy_union(indices, weights, n)

    G = graph.matrix.tocoo()
    w = G.data.copy()
    w[w < w.max() / float(n_epochs)] = 0.0
    keep = w > 0
    head = G.row[keep].astype(np.int64)
    tail = G.col[keep].astype(np.int64)
    eps = _epochs_per_sample(w[keep], n_epochs)

    emb = np.ascontiguousarray(initial_embedding(graph, params.seed))
    state = _tau_state(params.seed, 0x56D)
    ok, max_step = _optimize_layout(emb, emb, head, tail, eps, n_epochs, a, b, state,
                                    float(params.learning_rate), int(params.negative_sample_rate),
                                    True)
    if not ok:
        raise ArithmeticError("embedding diverged to non-finite coordinates")
    return EmbeddingModel(
        training=X, embedding=emb, params=params, a=a, b=b, rho=rho, sigma=sigma,
        n_epochs=n_epochs, seed=params.seed, max_step=max_step,
    )


def _point_stream(point):
    digest = hashlib.blake2b(np.ascontiguousarray(point, dtype=float).tobytes(), digest_size=8)
    return int.from_bytes(digest.digest(), "little")


def transform(model: EmbeddingModel, points):
    """Embed new rows against the frozen training embedding.

    Each row is placed independently: its own kNN weights, its own initial
    position (weighted mean of its neighbours' coordinates) and its own
    random stream derived from the model seed and the row's bytes.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if P.shape[1] != model.training.shape[1]:
        raise DomainError(f"expected {model.training.shape[1]} features, got {P.shape[1]}")
    k = model.params.n_neighbors
    indices, distances = knn_query(model.training, P, k)
    _, _, weights, _ = smooth_knn_sigma(distances)
    n_epochs = model.transform_epochs
    out = np.empty((P.shape[0], model.embedding.shape[1]))
    tail_emb = model.embedding.copy()
    for i in range(P.shape[0]):
        w = weights[i]
        init = (w[:, None] * model.embedding[indices[i]]).sum(axis=0) / w.sum()
        w = np.where(w < w.max() / float(n_epochs), 0.0, w)
        keep = w > 0
        tail = indices[i][keep].astype(np.int64)
        head = np.zeros(tail.size, dtype=np.int64)
        eps = _epochs_per_sample(w[keep], n_epochs)
        emb = np.ascontiguousarray(init[None, :])
        state = _tau_state(model.seed, _point_stream(P[i]))
        ok, _ = _optimize_layout(emb, tail_emb, head, tail, eps, n_epochs, model.a, model.b,
                                 state, float(model.params.learning_rate),
                                 int(model.params.negative_sample_rate), False)
        if not ok:
            raise ArithmeticError("transform diverged to non-finite coordinates")
        out[i] = emb[0]
    return out
