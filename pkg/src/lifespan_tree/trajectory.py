"""Per-population lifespan trajectories with F/t screening and BIC selection."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, InsufficientDataError, LookupFailure
from .normalize import normalize_records
from .stats import f_test_vs_constant, ols_polyfit, percentile, polyval

log = logging.getLogger(__name__)

ALPHA = 0.05
MIN_FIT_SAMPLES = 10
THRESHOLD_QUANTILE = 0.01


@dataclass(frozen=True)
class TrajectoryModel:
    population: str
    structure: int
    degree: int
    coefficients: tuple
    n: int
    rss: float
    age_min: float
    age_max: float
    bic: dict = field(default_factory=dict, compare=False, repr=False)

    def __call__(self, age):
        return polyval(np.asarray(self.coefficients), age)

    def in_range(self, age):
        return self.age_min <= age <= self.age_max

    def to_dict(self):
        return {
            "structure": self.structure,
            "degree": self.degree,
            "coefficients": [float(c) for c in self.coefficients],
            "n": self.n,
            "rss": float(self.rss),
            "age_min": float(self.age_min),
            "age_max": float(self.age_max),
        }


@dataclass(frozen=True)
class LifespanModelSet:
    populations: dict
    age_threshold: int
    control: str
    branches: tuple = ()

    def __post_init__(self):
        for label, models in self.populations.items():
            if not models:
                raise DomainError(f"population {label!r} has no structure models")
        if not self.branches:
            object.__setattr__(self, "branches", tuple(self.populations))

    @property
    def n_structures(self):
        return len(next(iter(self.populations.values())))

    def models(self, population):
        try:
            return self.populations[population]
        except KeyError:
            raise LookupFailure(f"unknown population {population!r}") from None

    def age_range(self, population):
        m = self.models(population)[0]
        return m.age_min, m.age_max

    def branch_cap(self, population):
        return int(math.floor(self.age_range(population)[1]))

    def to_dict(self):
        return {
            "control": self.control,
            "age_threshold": int(self.age_threshold),
            "branches": list(self.branches),
            "populations": {k: [m.to_dict() for m in v] for k, v in self.populations.items()},
        }

    @classmethod
    def from_dict(cls, doc):
        pops = {}
        for label, rows in doc["populations"].items():
            pops[label] = [
                TrajectoryModel(
                    population=label,
                    structure=int(r["structure"]),
                    degree=int(r["degree"]),
                    coefficients=tuple(float(c) for c in r["coefficients"]),
                    n=int(r["n"]),
                    rss=float(r["rss"]),
                    age_min=float(r["age_min"]),
                    age_max=float(r["age_max"]),
                )
                for r in rows
            ]
        return cls(
            populations=pops,
            age_threshold=int(doc["age_threshold"]),
            control=doc["control"],
            branches=tuple(doc.get("branches") or pops),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def compute_age_threshold(patient_ages):
    ages = np.asarray(list(patient_ages), dtype=float)
    if ages.size == 0:
        raise DomainError("age threshold needs at least one patient age")
    return int(math.floor(percentile(ages, THRESHOLD_QUANTILE)))


def assemble_fit_sample(partition, population, model, threshold):
    """Ages and z-scored features used to fit ``population``.

    Controls use every CN subject; a pathology mixes all of its patients with
    the CN subjects younger than ``threshold``.
    """
    control = partition.control
    if population not in partition:
        raise LookupFailure(f"population {population!r} absent from partition")
    if population == control:
        records = list(partition[control])
    else:
        patients = list(partition[population])
        if not patients:
            raise InsufficientDataError(f"population {population!r} has no patients")
        if control is None or control not in partition:
            raise LookupFailure("control population required for pathological trajectories")
        young = [r for r in partition[control] if r.age < threshold]
        records = patients + young
    if not records:
        raise InsufficientDataError(f"empty fit sample for {population!r}")
    Z, _ = normalize_records(records, model)
    ages = np.array([r.age for r in records], dtype=float)
    return ages, Z


def bic(rss, n, k):
    # Gaussian likelihood with the error variance profiled out
    return n * math.log(max(rss, 1e-300) / n) + k * math.log(n)


def fit_trajectory(ages, values, candidate_degrees=(1, 2, 3), population="", structure=0,
                   age_range=None):
    """Select a polynomial trajectory for one structure.

    A degree is a candidate when its F test against the constant model and the
    t tests of all its non-intercept coefficients are significant at 0.05; the
    candidate with the lowest BIC wins.  Without candidates the constant
    (mean) model is returned.
    """
    ages = np.asarray(ages, dtype=float)
    values = np.asarray(values, dtype=float)
    n = ages.size
    if n < MIN_FIT_SAMPLES:
        raise InsufficientDataError(f"trajectory fit needs >= {MIN_FIT_SAMPLES} samples, got {n}")
    scores = {}
    fits = {}
    for d in sorted(candidate_degrees):
        if d < 1 or n < d + 2:
            continue
        fit = ols_polyfit(ages, values, d)
        if f_test_vs_constant(fit, values) >= ALPHA:
            continue
        if np.any(fit.coefficient_pvalues()[1:] >= ALPHA):
            continue
        fits[d] = fit
        scores[d] = bic(fit.rss, n, d + 1)
    if fits:
        best = min(scores, key=lambda d: (scores[d], d))
        chosen = fits[best]
    else:
        chosen = ols_polyfit(ages, values, 0)
        best = 0
    lo, hi = age_range if age_range is not None else (float(ages.min()), float(ages.max()))
    return TrajectoryModel(
        population=population,
        structure=structure,
        degree=best,
        coefficients=tuple(float(c) for c in chosen.coefficients),
        n=n,
        rss=chosen.rss,
        age_min=lo,
        age_max=hi,
        bic=scores,
    )


def fit_population(ages, Z, population="", age_range=None, candidate_degrees=(1, 2, 3)):
    return [
        fit_trajectory(ages, Z[:, j], candidate_degrees, population, j, age_range)
        for j in range(Z.shape[1])
    ]


def fit_lifespan_models(partition, model, branches=None, threshold=None):
    """Fit the control and every branch population of a tree.

    The age threshold is pooled over the patients of all pathological
    populations in ``branches`` unless given explicitly.
    """
    control = partition.control
    if control is None:
        raise LookupFailure("partition has no control label")
    branches = tuple(branches) if branches is not None else tuple(partition.groups)
    pathologies = [p for p in branches if p != control]
    if threshold is None:
        pooled = [r.age for p in pathologies for r in partition[p]]
        threshold = compute_age_threshold(pooled)
    pops = {}
    for label in dict.fromkeys((control,) + branches):
        ages, Z = assemble_fit_sample(partition, label, model, threshold)
        if label == control:
            rng = (float(ages.min()), float(ages.max()))
        else:
            patient_max = max(r.age for r in partition[label])
            rng = (float(ages.min()), float(patient_max))
        log.info("fitting %s on %d subjects", label, ages.size)
        pops[label] = fit_population(ages, Z, label, rng)
    return LifespanModelSet(populations=pops, age_threshold=threshold, control=control,
                            branches=branches)


def evaluate_trajectory(model_set: LifespanModelSet, population, age):
    """Trajectory z-values at ``age``; returns ``(values, extrapolated)``."""
    models = model_set.models(population)
    values = np.array([float(m(age)) for m in models])
    extrapolated = not models[0].in_range(age)
    return values, extrapolated


def divergence_from_control(model_set: LifespanModelSet, population, age):
    pop, _ = evaluate_trajectory(model_set, population, age)
    ctl, _ = evaluate_trajectory(model_set, model_set.control, age)
    return np.abs(pop - ctl)
