"""Monte Carlo synthetic samples drawn around lifespan trajectories."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError
from .stats import rng_stream, stream_id
from .trajectory import LifespanModelSet, evaluate_trajectory

SAMPLES_PER_YEAR = 100


@dataclass(frozen=True)
class SampleSet:
    labels: np.ndarray
    ages: np.ndarray
    values: np.ndarray
    seed: int
    samples_per_year: int = SAMPLES_PER_YEAR

    def __len__(self):
        return self.ages.size

    def select(self, mask):
        return SampleSet(self.labels[mask], self.ages[mask], self.values[mask], self.seed,
                         self.samples_per_year)

    @staticmethod
    def concat(parts, seed, samples_per_year):
        parts = [p for p in parts if len(p)]
        if not parts:
            return SampleSet(np.array([], dtype=object), np.array([], dtype=int),
                             np.zeros((0, 0)), seed, samples_per_year)
        return SampleSet(
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.ages for p in parts]),
            np.vstack([p.values for p in parts]),
            seed,
            samples_per_year,
        )

    def to_csv(self, path):
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["population", "age"] + [f"z_{j + 1}" for j in range(self.values.shape[1])])
            for lab, age, row in zip(self.labels, self.ages, self.values):
                w.writerow([lab, int(age)] + [repr(float(v)) for v in row])


def generate_samples(model_set: LifespanModelSet, population, years, n_per_year=SAMPLES_PER_YEAR,
                     seed=0):
    """``n_per_year`` draws from N(trajectory(year), I) for every integer year.

    Each (population, year) cell has its own random stream, so the result does
    not depend on generation order.
    """
    years = list(years)
    if not years:
        raise DomainError("empty year range")
    if n_per_year < 1:
        raise DomainError("n_per_year must be positive")
    model_set.models(population)
    rows, ages = [], []
    for y in years:
        mean, _ = evaluate_trajectory(model_set, population, float(y))
        rng = rng_stream(seed, stream_id(population, int(y)))
        rows.append(mean + rng.standard_normal((n_per_year, mean.size)))
        ages.append(np.full(n_per_year, int(y)))
    n = len(years) * n_per_year
    return SampleSet(
        labels=np.array([population] * n, dtype=object),
        ages=np.concatenate(ages),
        values=np.vstack(rows),
        seed=seed,
        samples_per_year=n_per_year,
    )


def branch_years(model_set: LifespanModelSet, population):
    return range(int(model_set.age_threshold), model_set.branch_cap(population) + 1)


def training_pool(model_set: LifespanModelSet, n_per_year=SAMPLES_PER_YEAR, seed=0, populations=None):
    """Synthetic samples of every branch population from the age threshold to its cap."""
    populations = model_set.branches if populations is None else populations
    parts = []
    for pop in populations:
        years = branch_years(model_set, pop)
        if len(years):
            parts.append(generate_samples(model_set, pop, years, n_per_year, seed))
    return SampleSet.concat(parts, seed, n_per_year)
