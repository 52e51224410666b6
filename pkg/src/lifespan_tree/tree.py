"""The 3-D lifespan tree: branch geometry, nearest-branch classification, cut slices."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embed import EmbeddingModel
from .errors import DomainError, LookupFailure
from .normalize import NormalizationModel, normalize_records
from .sampling import SampleSet, branch_years
from .trajectory import LifespanModelSet, evaluate_trajectory

DISTANCE_RULES = ("polyline", "at-age")


@dataclass(frozen=True)
class LifespanTree:
    """Branch polylines as ``(year, x, y)`` rows, in canonical population order."""

    order: tuple
    branches: dict
    trunk: np.ndarray
    threshold: int
    cloud_labels: np.ndarray = field(default_factory=lambda: np.array([], dtype=object))
    cloud_ages: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cloud_xy: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self):
        for label in self.order:
            pts = self.branches[label]
            if pts.shape[0] == 0:
                raise DomainError(f"branch {label!r} is empty")
            if np.any(np.diff(pts[:, 0]) <= 0):
                raise DomainError(f"branch {label!r} years not strictly increasing")

    def to_dict(self, include_cloud=True):
        doc = {
            "threshold": int(self.threshold),
            "populations": [
                {"label": lab, "points": self.branches[lab].tolist()} for lab in self.order
            ],
            "trunk": self.trunk.tolist(),
        }
        if include_cloud:
            doc["cloud"] = {
                "labels": [str(v) for v in self.cloud_labels],
                "ages": [int(a) for a in self.cloud_ages],
                "xy": self.cloud_xy.tolist(),
            }
        return doc

    @classmethod
    def from_dict(cls, doc):
        cloud = doc.get("cloud") or {"labels": [], "ages": [], "xy": []}
        return cls(
            order=tuple(p["label"] for p in doc["populations"]),
            branches={p["label"]: np.array(p["points"], dtype=float).reshape(-1, 3)
                      for p in doc["populations"]},
            trunk=np.array(doc.get("trunk", []), dtype=float).reshape(-1, 3),
            threshold=int(doc["threshold"]),
            cloud_labels=np.array(cloud["labels"], dtype=object),
            cloud_ages=np.array(cloud["ages"], dtype=float),
            cloud_xy=np.array(cloud["xy"], dtype=float).reshape(-1, 2),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class ClassificationResult:
    subject_id: str
    xy: tuple
    age: float
    distances: dict
    scores: dict
    ranking: tuple
    below_threshold: bool = False
    unknown_sex: bool = False

    @property
    def predicted(self):
        return self.ranking[0]


def build_tree(model_set: LifespanModelSet, model: EmbeddingModel, samples: SampleSet | None = None):
    """Project every branch trajectory (and the control trunk) through the embedding."""
    branches = {}
    for pop in model_set.branches:
        years = np.array(list(branch_years(model_set, pop)), dtype=float)
        if years.size == 0:
            raise DomainError(f"population {pop!r} has no years at or above the threshold")
        means = np.vstack([evaluate_trajectory(model_set, pop, y)[0] for y in years])
        xy = model.transform(means)
        branches[pop] = np.column_stack([years, xy])
    ctl = model_set.control
    lo = max(1, int(math.ceil(model_set.age_range(ctl)[0])))
    trunk_years = np.arange(lo, model_set.age_threshold, dtype=float)
    if trunk_years.size:
        means = np.vstack([evaluate_trajectory(model_set, ctl, y)[0] for y in trunk_years])
        trunk = np.column_stack([trunk_years, model.transform(means)])
    else:
        trunk = np.zeros((0, 3))
    kw = {}
    if samples is not None and len(samples) == model.embedding.shape[0]:
        kw = dict(cloud_labels=np.asarray(samples.labels, dtype=object),
                  cloud_ages=np.asarray(samples.ages, dtype=float),
                  cloud_xy=model.embedding.copy())
    return LifespanTree(order=tuple(model_set.branches), branches=branches, trunk=trunk,
                        threshold=int(model_set.age_threshold), **kw)


def scores_from_distances(distances):
    """Gaussian kernel exp(-d^2/2) normalized over classes (min-shifted for stability)."""
    d = np.asarray(distances, dtype=float)
    if d.size == 0:
        raise DomainError("no distances to score")
    if np.any(~np.isfinite(d)) or np.any(d < 0):
        raise DomainError("distances must be finite and non-negative")
    sq = d * d
    k = np.exp(-(sq - sq.min()) / 2.0)
    return k / k.sum()


def branch_distances(tree: LifespanTree, xy, age, rule="polyline"):
    if rule not in DISTANCE_RULES:
        raise DomainError(f"unknown distance rule {rule!r}")
    p = np.array([age, xy[0], xy[1]], dtype=float)
    out = np.empty(len(tree.order))
    for i, lab in enumerate(tree.order):
        pts = tree.branches[lab]
        if rule == "at-age":
            j = int(np.argmin(np.abs(pts[:, 0] - age)))
            out[i] = float(np.linalg.norm(pts[j] - p))
        else:
            out[i] = float(np.sqrt(((pts - p) ** 2).sum(axis=1)).min())
    return out


def rank(tree: LifespanTree, scores):
    return tuple(tree.order[i] for i in sorted(range(len(tree.order)), key=lambda i: (-scores[i], i)))


def classify_embedded(tree, subject_id, xy, age, rule="polyline", unknown_sex=False):
    d = branch_distances(tree, xy, age, rule)
    s = scores_from_distances(d)
    return ClassificationResult(
        subject_id=subject_id,
        xy=(float(xy[0]), float(xy[1])),
        age=float(age),
        distances=dict(zip(tree.order, d.tolist())),
        scores=dict(zip(tree.order, s.tolist())),
        ranking=rank(tree, s),
        below_threshold=age < tree.threshold,
        unknown_sex=bool(unknown_sex),
    )


def classify_records(tree, norm: NormalizationModel, model: EmbeddingModel, records, rule="polyline"):
    Z, unknown = normalize_records(list(records), norm)
    if Z.shape[0] == 0:
        return []
    xy = model.transform(Z)
    return [
        classify_embedded(tree, r.subject_id, xy[i], r.age, rule, unknown[i])
        for i, r in enumerate(records)
    ]


def classify(tree, norm: NormalizationModel, model: EmbeddingModel, record, rule="polyline"):
    return classify_records(tree, norm, model, [record], rule)[0]


def cut_tree(tree: LifespanTree, age, window=2, test_points=()):
    """Rows ``(kind, label, age, x, y)`` of the 2-D slice |age' - age| <= window.

    ``test_points`` holds ClassificationResult objects or ``(label, age, x, y)`` tuples.
    """
    if window < 0:
        raise DomainError("window must be >= 0")
    rows = []
    for lab in tree.order:
        for year, x, y in tree.branches[lab]:
            if abs(year - age) <= window:
                rows.append(("branch", lab, float(year), float(x), float(y)))
    for lab, a, (x, y) in zip(tree.cloud_labels, tree.cloud_ages, tree.cloud_xy):
        if abs(a - age) <= window:
            rows.append(("cloud", str(lab), float(a), float(x), float(y)))
    for tp in test_points:
        if isinstance(tp, ClassificationResult):
            tp = (tp.predicted, tp.age, tp.xy[0], tp.xy[1])
        lab, a, x, y = tp
        if abs(a - age) <= window:
            rows.append(("test", str(lab), float(a), float(x), float(y)))
    return rows


def write_cut_csv(path, rows):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "label", "age", "x", "y"])
        for r in rows:
            w.writerow([r[0], r[1], repr(r[2]), repr(r[3]), repr(r[4])])


def population_index(tree, label):
    try:
        return tree.order.index(label)
    except ValueError:
        raise LookupFailure(f"label {label!r} is not a branch of this tree") from None
