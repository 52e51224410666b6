"""Ranked-prediction metrics: confusion matrices, top-k BACC, class merging, bootstrap."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, ValidationError
from .stats import rng_stream

N_BOOTSTRAP = 10_000
MERGE_RULES = ("argmax", "score-sum")


@dataclass(frozen=True)
class RankedPrediction:
    subject_id: str
    true_label: str
    ranking: tuple
    scores: tuple | None = None  # aligned with ``ranking``

    @property
    def predicted(self):
        return self.ranking[0]


@dataclass(frozen=True)
class PredictionTable:
    """Array view of a prediction list, indexed by the canonical label order."""

    labels: tuple
    subject_ids: tuple
    truth: np.ndarray  # (n,) label index
    ranks: np.ndarray  # (n, K) label indices, best first
    scores: np.ndarray | None  # (n, K) per label index
    hit_rank: np.ndarray  # (n,) position of the true label in the ranking

    def __len__(self):
        return self.truth.size

    def take(self, idx):
        return PredictionTable(
            self.labels,
            self.subject_ids,  # ids are not needed by metrics
            self.truth[idx],
            self.ranks[idx],
            None if self.scores is None else self.scores[idx],
            self.hit_rank[idx],
        )


def as_table(preds, labels=None):
    preds = list(preds)
    if not preds:
        raise DomainError("no predictions")
    if labels is None:
        labels = tuple(sorted(preds[0].ranking))
    labels = tuple(labels)
    pos = {lab: i for i, lab in enumerate(labels)}
    n, K = len(preds), len(labels)
    truth = np.empty(n, dtype=np.int64)
    ranks = np.empty((n, K), dtype=np.int64)
    have_scores = all(p.scores is not None for p in preds)
    scores = np.empty((n, K)) if have_scores else None
    for r, p in enumerate(preds):
        if p.true_label not in pos:
            raise ValidationError(f"subject {p.subject_id}: true label {p.true_label!r} not in label set")
        if len(p.ranking) != K or set(p.ranking) != set(labels):
            raise ValidationError(f"subject {p.subject_id}: ranking is not a permutation of the labels")
        truth[r] = pos[p.true_label]
        ranks[r] = [pos[lab] for lab in p.ranking]
        if have_scores:
            for lab, s in zip(p.ranking, p.scores):
                scores[r, pos[lab]] = s
    hit_rank = np.argmax(ranks == truth[:, None], axis=1)
    return PredictionTable(labels, tuple(p.subject_id for p in preds), truth, ranks, scores, hit_rank)


def _table(preds, labels=None):
    return preds if isinstance(preds, PredictionTable) else as_table(preds, labels)


def confusion_matrix(preds, labels=None):
    """Counts with rows = true label and columns = top-1 prediction."""
    t = _table(preds, labels)
    K = len(t.labels)
    cm = np.zeros((K, K), dtype=np.int64)
    np.add.at(cm, (t.truth, t.ranks[:, 0]), 1)
    return cm


def topk_sensitivity(table: PredictionTable, k):
    K = len(table.labels)
    counts = np.bincount(table.truth, minlength=K).astype(float)
    hits = np.bincount(table.truth, weights=(table.hit_rank < k).astype(float), minlength=K)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, hits / counts, np.nan)


def topk_bacc(preds, k, labels=None):
    """Per-class top-k sensitivity and their unweighted mean (balanced accuracy)."""
    t = _table(preds, labels)
    if not 1 <= k <= len(t.labels):
        raise DomainError(f"k={k} outside 1..{len(t.labels)}")
    sens = topk_sensitivity(t, k)
    absent = [t.labels[i] for i in np.flatnonzero(np.isnan(sens))]
    if absent:
        warnings.warn(f"classes absent from truth excluded from BACC: {absent}", stacklevel=2)
    per_class = {lab: float(s) for lab, s in zip(t.labels, sens) if not np.isnan(s)}
    return per_class, float(np.nanmean(sens))


def bacc_metric(k=1):
    """Metric callable (PredictionTable -> float) for top-k balanced accuracy."""

    def metric(table):
        return float(np.nanmean(topk_sensitivity(table, k)))

    metric.__name__ = f"top{k}_bacc"
    return metric


def sensitivity_metric(label, k=1):
    def metric(table):
        return float(topk_sensitivity(table, k)[table.labels.index(label)])

    metric.__name__ = f"top{k}_sen_{label}"
    return metric


@dataclass(frozen=True)
class MergedReport:
    superlabels: tuple
    confusion: np.ndarray
    sensitivity: dict
    bacc: float
    positive: str | None = None

    @property
    def sen(self):
        return self.sensitivity[self.positive]

    @property
    def spe(self):
        negatives = [s for s in self.superlabels if s != self.positive]
        if len(negatives) != 1:
            raise DomainError("specificity needs a two-class merge")
        return self.sensitivity[negatives[0]]


def merge_classes(preds, merge_map, positive=None, rule="argmax", labels=None):
    """Relabel truths and predictions through ``merge_map`` and recompute metrics.

    ``argmax`` merges the top-1 prediction; ``score-sum`` adds member scores
    per super-label before taking the argmax.  With two super-labels,
    ``positive`` names the one whose recall is the sensitivity.
    """
    t = _table(preds, labels)
    missing = [lab for lab in t.labels if lab not in merge_map]
    if missing:
        raise ValidationError(f"merge map is missing label(s): {missing}")
    if rule not in MERGE_RULES:
        raise DomainError(f"unknown merge rule {rule!r}")
    supers = tuple(dict.fromkeys(merge_map[lab] for lab in t.labels))
    spos = {s: i for i, s in enumerate(supers)}
    to_super = np.array([spos[merge_map[lab]] for lab in t.labels])
    truth = to_super[t.truth]
    if rule == "argmax":
        pred = to_super[t.ranks[:, 0]]
    else:
        if t.scores is None:
            raise DomainError("score-sum merging needs per-class scores")
        summed = np.zeros((len(t), len(supers)))
        for li, si in enumerate(to_super):
            summed[:, si] += t.scores[:, li]
        pred = np.argmax(summed, axis=1)
    S = len(supers)
    cm = np.zeros((S, S), dtype=np.int64)
    np.add.at(cm, (truth, pred), 1)
    rows = cm.sum(axis=1)
    sens = {s: float(cm[i, i] / rows[i]) for i, s in enumerate(supers) if rows[i] > 0}
    if positive is not None and positive not in spos:
        raise DomainError(f"positive super-label {positive!r} not produced by the merge map")
    return MergedReport(supers, cm, sens, float(np.mean(list(sens.values()))), positive)


def _strata(truth):
    return [np.flatnonzero(truth == c) for c in np.unique(truth)]


def _resample(strata, rng):
    return np.concatenate([s[rng.integers(0, s.size, size=s.size)] for s in strata])


def bootstrap_ci(preds, metric, n_rep=N_BOOTSTRAP, level=0.95, seed=0, labels=None):
    """Point estimate and percentile interval from a class-stratified bootstrap."""
    t = _table(preds, labels)
    if len(t) == 0:
        raise DomainError("no predictions")
    rng = rng_stream(seed, 0xB007)
    strata = _strata(t.truth)
    reps = np.array([metric(t.take(_resample(strata, rng))) for _ in range(n_rep)])
    lo, hi = np.quantile(reps, [(1 - level) / 2, (1 + level) / 2])
    return float(metric(t)), float(lo), float(hi)


def bootstrap_replicates(preds, metric, n_rep=N_BOOTSTRAP, seed=0, labels=None):
    t = _table(preds, labels)
    rng = rng_stream(seed, 0xB007)
    strata = _strata(t.truth)
    return np.array([metric(t.take(_resample(strata, rng))) for _ in range(n_rep)])


def paired_bootstrap_pvalue(preds_a, preds_b, metric, n_rep=N_BOOTSTRAP, seed=0, labels=None):
    """Two-sided p-value for metric(a) - metric(b) from joint stratified resampling."""
    ta = _table(preds_a, labels)
    tb = _table(preds_b, ta.labels)
    if ta.subject_ids != tb.subject_ids or not np.array_equal(ta.truth, tb.truth):
        raise ValidationError("paired predictions must cover the same subjects in the same order")
    rng = rng_stream(seed, 0x9A1)
    strata = _strata(ta.truth)
    delta = np.empty(n_rep)
    for r in range(n_rep):
        idx = _resample(strata, rng)
        delta[r] = metric(ta.take(idx)) - metric(tb.take(idx))
    p = 2.0 * min(np.mean(delta <= 0), np.mean(delta >= 0))
    return float(min(1.0, max(p, 1.0 / n_rep)))


def predictions_from_confusion(matrix, labels, prefix="s"):
    """Expand a confusion matrix into ranked predictions (top-1 from the matrix, rest in label order)."""
    matrix = np.asarray(matrix, dtype=np.int64)
    labels = tuple(labels)
    out = []
    n = 0
    for i, true in enumerate(labels):
        for j, pred in enumerate(labels):
            for _ in range(int(matrix[i, j])):
                ranking = (pred,) + tuple(lab for lab in labels if lab != pred)
                out.append(RankedPrediction(f"{prefix}{n:05d}", true, ranking))
                n += 1
    return out


def metrics_report(preds, labels=None, ks=(1, 2, 3), n_rep=N_BOOTSTRAP, seed=0, level=0.95):
    """Top-k sensitivities and BACC with bootstrap intervals, plus the top-1 confusion matrix."""
    t = _table(preds, labels)
    ks = [k for k in ks if k <= len(t.labels)]
    report = {"labels": list(t.labels), "n": len(t),
              "counts": dict(zip(t.labels, np.bincount(t.truth, minlength=len(t.labels)).tolist())),
              "confusion": confusion_matrix(t).tolist(), "topk": {}}
    for k in ks:
        per_class, bacc = topk_bacc(t, k)
        entry = {"bacc": bacc, "sensitivity": per_class}
        if n_rep:
            _, lo, hi = bootstrap_ci(t, bacc_metric(k), n_rep, level, seed)
            entry["bacc_ci"] = [lo, hi]
            entry["sensitivity_ci"] = {}
            for lab in per_class:
                _, lo, hi = bootstrap_ci(t, sensitivity_metric(lab, k), n_rep, level, seed)
                entry["sensitivity_ci"][lab] = [lo, hi]
        report["topk"][str(k)] = entry
    return report


def write_predictions_csv(path, preds):
    preds = list(preds)
    K = len(preds[0].ranking) if preds else 0
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "true"] + [f"rank{i + 1}" for i in range(K)]
                   + [f"score{i + 1}" for i in range(K)])
        for p in preds:
            sc = [repr(float(s)) for s in p.scores] if p.scores is not None else [""] * K
            w.writerow([p.subject_id, p.true_label, *p.ranking, *sc])


def read_predictions_csv(path):
    out = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        K = sum(1 for h in header if h.startswith("rank"))
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            ranking = tuple(row[2:2 + K])
            raw = row[2 + K:2 + 2 * K]
            try:
                scores = tuple(float(s) for s in raw) if raw and all(raw) else None
            except ValueError:
                raise ValidationError("non-numeric score", row_no) from None
            out.append(RankedPrediction(row[0], row[1], ranking, scores))
    return out


def write_confusion_csv(path, matrix, labels):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\predicted", *labels])
        for lab, row in zip(labels, np.asarray(matrix)):
            w.writerow([lab, *[int(v) for v in row]])
