"""Ground-truth cohort generator with analytic per-population trajectories.

Subjects are built backwards through the normalization: a z-vector drawn
around the population trajectory is mapped to ICV percentages with a
declared CN mean/std and sex offset, then to raw volumes with a drawn ICV.
``CohortSpec.normalization_model`` therefore inverts the construction
exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cohort import SubjectRecord
from .errors import DomainError, LookupFailure, ValidationError
from .normalize import NormalizationModel
from .stats import polyval, rng_stream, stream_id
from .structures import default_structures

ICV_MEDIAN = 1.4e6  # mm3
ICV_LOG_SD = 0.1


@dataclass(frozen=True)
class PopulationSpec:
    """One generating population: per-structure polynomials in age (intercept first)."""

    name: str
    coefficients: np.ndarray  # (n_structures, degree + 1)
    age_range: tuple
    n_subjects: int

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        if c.ndim != 2 or c.shape[1] < 1:
            raise ValidationError(f"population {self.name}: coefficients must be (structures, degree+1)")
        lo, hi = self.age_range
        if not (0 < lo <= hi < 130):
            raise ValidationError(f"population {self.name}: bad age range {self.age_range}")
        if self.n_subjects <= 0:
            raise ValidationError(f"population {self.name}: n_subjects must be > 0")
        grid = np.linspace(lo, hi, 16)
        if not np.all(np.isfinite(self.trajectory(grid))):
            raise ValidationError(f"population {self.name}: trajectory not finite over its age range")

    def trajectory(self, age):
        """z-values, shape ``(len(age), n_structures)`` for array input."""
        c = np.asarray(self.coefficients, dtype=float)
        a = np.atleast_1d(np.asarray(age, dtype=float))
        return np.stack([polyval(row, a) for row in c], axis=-1)


@dataclass(frozen=True)
class CohortSpec:
    populations: tuple
    control: str
    cn_mean: np.ndarray  # ICV percent
    cn_std: np.ndarray
    sex_beta: np.ndarray  # ICV percent added for males
    noise_std: float = 1.0
    icv_median: float = ICV_MEDIAN
    icv_log_sd: float = ICV_LOG_SD
    seed: int = 0
    structure_names: tuple = field(default_factory=lambda: tuple(default_structures()))

    def __post_init__(self):
        names = [p.name for p in self.populations]
        if not names or len(set(names)) != len(names):
            raise ValidationError("population names must be non-empty and unique")
        if self.control not in names:
            raise ValidationError(f"control {self.control!r} is not a declared population")
        m = len(self.structure_names)
        for arr, what in ((self.cn_mean, "cn_mean"), (self.cn_std, "cn_std"), (self.sex_beta, "sex_beta")):
            if np.shape(arr) != (m,):
                raise ValidationError(f"{what} must have {m} entries")
        if np.any(np.asarray(self.cn_std) <= 0):
            raise ValidationError("cn_std must be > 0")
        if not self.noise_std > 0:
            raise ValidationError("noise_std must be > 0")
        if not (self.icv_median > 0 and self.icv_log_sd >= 0):
            raise ValidationError("ICV distribution parameters out of range")
        for p in self.populations:
            if p.coefficients.shape[0] != m:
                raise ValidationError(f"population {p.name}: {p.coefficients.shape[0]} structures, expected {m}")

    @property
    def labels(self):
        return tuple(p.name for p in self.populations)

    def population(self, name):
        for p in self.populations:
            if p.name == name:
                return p
        raise LookupFailure(f"population {name!r} not in spec")

    def normalization_model(self):
        """The normalization that exactly inverts the generator."""
        beta = np.asarray(self.sex_beta, dtype=float)
        return NormalizationModel(
            structure_names=tuple(self.structure_names),
            sex_beta=beta.copy(),
            sex_significant=beta != 0,
            cn_mean=np.asarray(self.cn_mean, dtype=float).copy(),
            cn_std=np.asarray(self.cn_std, dtype=float).copy(),
        )

    def with_counts(self, n_subjects=None, age_ranges=None, seed=None):
        """Copy with new subject counts, age ranges (name -> range) and/or seed."""
        ranges = age_ranges or {}
        pops = tuple(
            PopulationSpec(p.name, p.coefficients, tuple(ranges.get(p.name, p.age_range)),
                           p.n_subjects if n_subjects is None else int(n_subjects))
            for p in self.populations
        )
        return CohortSpec(pops, self.control, self.cn_mean, self.cn_std, self.sex_beta, self.noise_std,
                          self.icv_median, self.icv_log_sd, self.seed if seed is None else seed,
                          self.structure_names)

    def to_dict(self):
        return {
            "control": self.control,
            "noise_std": self.noise_std,
            "icv_median": self.icv_median,
            "icv_log_sd": self.icv_log_sd,
            "seed": self.seed,
            "structure_names": list(self.structure_names),
            "cn_mean": [float(v) for v in self.cn_mean],
            "cn_std": [float(v) for v in self.cn_std],
            "sex_beta": [float(v) for v in self.sex_beta],
            "populations": [
                {"name": p.name, "age_range": list(p.age_range), "n_subjects": p.n_subjects,
                 "coefficients": np.asarray(p.coefficients, dtype=float).tolist()}
                for p in self.populations
            ],
        }

    @classmethod
    def from_dict(cls, doc):
        try:
            pops = tuple(
                PopulationSpec(p["name"], np.array(p["coefficients"], dtype=float),
                               tuple(float(a) for a in p["age_range"]), int(p["n_subjects"]))
                for p in doc["populations"]
            )
            return cls(
                populations=pops,
                control=doc["control"],
                cn_mean=np.array(doc["cn_mean"], dtype=float),
                cn_std=np.array(doc["cn_std"], dtype=float),
                sex_beta=np.array(doc["sex_beta"], dtype=float),
                noise_std=float(doc.get("noise_std", 1.0)),
                icv_median=float(doc.get("icv_median", ICV_MEDIAN)),
                icv_log_sd=float(doc.get("icv_log_sd", ICV_LOG_SD)),
                seed=int(doc.get("seed", 0)),
                structure_names=tuple(doc["structure_names"]),
            )
        except KeyError as exc:
            raise ValidationError(f"cohort spec missing field {exc.args[0]!r}") from None

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def generate_cohort(spec: CohortSpec, id_prefix="sim"):
    """Draw every subject of ``spec``; one independent stream per population."""
    records = []
    cn_mean = np.asarray(spec.cn_mean, dtype=float)
    cn_std = np.asarray(spec.cn_std, dtype=float)
    beta = np.asarray(spec.sex_beta, dtype=float)
    for pop in spec.populations:
        rng = rng_stream(spec.seed, stream_id("cohort", pop.name))
        n = pop.n_subjects
        lo, hi = pop.age_range
        ages = rng.uniform(lo, hi, size=n)
        male = rng.random(n) < 0.5
        noise = rng.normal(0.0, spec.noise_std, size=(n, cn_mean.size))
        icv = spec.icv_median * np.exp(rng.normal(0.0, spec.icv_log_sd, size=n))
        z = pop.trajectory(ages) + noise
        pct = cn_mean + cn_std * z + beta * male[:, None]
        vols = pct * icv[:, None] / 100.0
        if np.any(vols < 0):
            raise DomainError(f"population {pop.name}: negative volumes; raise cn_mean relative to cn_std")
        for i in range(n):
            records.append(SubjectRecord(
                subject_id=f"{id_prefix}-{pop.name}-{i:05d}",
                age=float(ages[i]),
                sex="male" if male[i] else "female",
                diagnosis=pop.name,
                icv=float(icv[i]),
                volumes=tuple(float(v) for v in vols[i]),
            ))
    return records


def oracle_labels(spec: CohortSpec, records):
    """Map subject id to generating population; rejects records the spec cannot have made."""
    names = set(spec.labels)
    out = {}
    for r in records:
        if r.diagnosis not in names or len(r.volumes) != len(spec.structure_names):
            raise LookupFailure(f"record {r.subject_id} was not generated from this spec")
        out[r.subject_id] = r.diagnosis
    return out


def _structure_scale(m):
    # fixed stream: cohorts drawn with different seeds share one volume scale
    rng = rng_stream(0, stream_id("structure-scale"))
    mean = rng.uniform(0.05, 1.0, size=m)  # ICV percent
    return mean, 0.03 * mean  # keeps volumes positive down to about -30 z


def desk_spec(pathologies=("A", "B", "C"), separation=2.0, n_subjects=150,
              control="CN", control_age_range=(20.0, 90.0), patient_age_range=(55.0, 85.0),
              block=12, onset=40.0, seed=0, sex_effect=True):
    """Default synthetic cohort: mild linear control decline, focal quadratic atrophy per pathology.

    Control structures follow ``z = -0.03 (age - 50)``.  Pathology ``i``
    additionally loses ``separation * ((age - onset) / 20)**2`` on its own
    block of ``block`` consecutive structures, so at 60y and beyond its
    focal structures sit at least ``separation`` z-units below the control.
    """
    names = tuple(default_structures())
    m = len(names)
    if block * len(pathologies) > m:
        raise DomainError("structure blocks do not fit in the structure set")
    base = np.zeros((m, 3))
    base[:, 0] = 1.5
    base[:, 1] = -0.03
    pops = [PopulationSpec(control, base, tuple(control_age_range), n_subjects)]
    # s * ((a - onset)/20)^2 expanded in raw age
    quad = separation / 400.0 * np.array([onset * onset, -2.0 * onset, 1.0])
    for i, label in enumerate(pathologies):
        c = base.copy()
        c[i * block:(i + 1) * block] -= quad
        pops.append(PopulationSpec(label, c, tuple(patient_age_range), n_subjects))
    mean, std = _structure_scale(m)
    beta = np.zeros(m)
    if sex_effect:
        beta[::2] = 0.5 * std[::2]
    return CohortSpec(tuple(pops), control, mean, std, beta, seed=seed, structure_names=names)


def cognitive_like_spec(separation=2.0, n_subjects=150, seed=0, block=12):
    """Seven-population preset in which DLB shares half of AD's focal structures.

    Gives an ordering CN -> DLB -> AD along the shared atrophy axis, useful to
    exercise ranked predictions on intermediate branches.
    """
    labels = ("AD", "DLB", "PNFA", "PSP", "SD", "bvFTD")
    spec = desk_spec(labels, separation, n_subjects, seed=seed, block=block)
    pops = list(spec.populations)
    ad = next(p for p in pops if p.name == "AD")
    dlb_i = next(i for i, p in enumerate(pops) if p.name == "DLB")
    base = pops[0].coefficients
    c = base.copy()
    c[:block] = base[:block] + 0.5 * (ad.coefficients[:block] - base[:block])
    pops[dlb_i] = PopulationSpec("DLB", c, pops[dlb_i].age_range, n_subjects)
    return CohortSpec(tuple(pops), spec.control, spec.cn_mean, spec.cn_std, spec.sex_beta,
                      seed=seed, structure_names=spec.structure_names)
