"""ICV normalization, sex correction and CN z-scoring of structure volumes."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateStructureError, DomainError, InsufficientDataError, SexModelError
from .stats import t_pvalue
from .structures import default_structures

SEX_ALPHA = 0.05
MIN_CN = 10


class UnknownSexWarning(UserWarning):
    """Raised (as a warning) when a subject with unknown sex skips sex correction."""


@dataclass(frozen=True)
class NormalizationModel:
    structure_names: tuple
    sex_beta: np.ndarray
    sex_significant: np.ndarray
    cn_mean: np.ndarray
    cn_std: np.ndarray

    def __post_init__(self):
        if np.any(~(self.cn_std > 0)):
            bad = [self.structure_names[i] for i in np.flatnonzero(~(self.cn_std > 0))]
            raise DegenerateStructureError(f"non-positive CN std for {', '.join(bad)}")
        if np.any(self.sex_beta[~self.sex_significant] != 0):
            raise ValueError("sex_beta must be 0 where the sex effect is not significant")

    def to_dict(self):
        return {
            "structures": [
                {
                    "name": name,
                    "sex_beta": float(self.sex_beta[i]),
                    "sex_significant": bool(self.sex_significant[i]),
                    "cn_mean": float(self.cn_mean[i]),
                    "cn_std": float(self.cn_std[i]),
                }
                for i, name in enumerate(self.structure_names)
            ]
        }

    @classmethod
    def from_dict(cls, doc):
        rows = doc["structures"]
        return cls(
            structure_names=tuple(r["name"] for r in rows),
            sex_beta=np.array([float(r["sex_beta"]) for r in rows]),
            sex_significant=np.array([bool(r["sex_significant"]) for r in rows]),
            cn_mean=np.array([float(r["cn_mean"]) for r in rows]),
            cn_std=np.array([float(r["cn_std"]) for r in rows]),
        )

    def save(self, path):
        # json writes floats with repr(), i.e. shortest round-trip text
        Path(path).write_text(json.dumps(self.to_dict(), indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def icv_percent(records):
    vols = np.array([r.volumes for r in records], dtype=float)
    icv = np.array([r.icv for r in records], dtype=float)
    if np.any(icv <= 0):
        raise DomainError("ICV must be positive")
    return 100.0 * vols / icv[:, None]


def fit_normalization(cn_records, structure_names=None):
    """Fit ICV-percent sex correction and CN z-score parameters on control subjects.

    For each structure the model ``v% = alpha + beta * male`` is fitted; beta
    is kept only when its two-sided t-test gives p < 0.05.  Means and
    standard deviations (n - 1 denominator) are then taken over the
    sex-corrected ICV-percent volumes of all controls.
    """
    n = len(cn_records)
    if n < MIN_CN:
        raise InsufficientDataError(f"need at least {MIN_CN} CN records, got {n}")
    if structure_names is None:
        structure_names = default_structures()
    structure_names = tuple(structure_names)
    if any(r.sex == "unknown" for r in cn_records):
        raise SexModelError("training records must have a known sex")
    male = np.array([r.is_male for r in cn_records], dtype=float)
    n_m = int(male.sum())
    n_f = n - n_m
    if n_m == 0 or n_f == 0:
        raise SexModelError("sex model needs both sexes among CN records")

    v = icv_percent(cn_records)
    if v.shape[1] != len(structure_names):
        raise DomainError(f"{v.shape[1]} volumes per record, manifest has {len(structure_names)}")
    flat = np.ptp(v, axis=0) == 0
    if flat.any():
        bad = [structure_names[i] for i in np.flatnonzero(flat)]
        raise DegenerateStructureError(f"zero variance across CN for {', '.join(bad)}")

    is_m = male.astype(bool)
    mean_m = v[is_m].mean(axis=0)
    mean_f = v[~is_m].mean(axis=0)
    beta = mean_m - mean_f
    resid = v - np.where(is_m[:, None], mean_m, mean_f)
    rss = np.sum(resid**2, axis=0)
    se = np.sqrt(rss / (n - 2) * (1.0 / n_m + 1.0 / n_f))

    significant = np.zeros(v.shape[1], dtype=bool)
    for j in range(v.shape[1]):
        if se[j] > 0:
            p = t_pvalue(beta[j] / se[j], n - 2)
        else:
            p = 0.0 if beta[j] != 0 else 1.0
        significant[j] = p < SEX_ALPHA
    sex_beta = np.where(significant, beta, 0.0)

    corrected = v - sex_beta * male[:, None]
    cn_mean = corrected.mean(axis=0)
    cn_std = corrected.std(axis=0, ddof=1)
    flat = ~(cn_std > 0)
    if flat.any():
        bad = [structure_names[i] for i in np.flatnonzero(flat)]
        raise DegenerateStructureError(f"zero variance after sex correction for {', '.join(bad)}")
    return NormalizationModel(
        structure_names=structure_names,
        sex_beta=sex_beta,
        sex_significant=significant,
        cn_mean=cn_mean,
        cn_std=cn_std,
    )


def apply_normalization(record, model: NormalizationModel):
    """Feature vector of z-scores for one subject.

    Unknown sex skips the sex correction and emits ``UnknownSexWarning``.
    """
    if not record.icv > 0:
        raise DomainError(f"subject {record.subject_id}: non-positive ICV")
    vols = np.asarray(record.volumes, dtype=float)
    if vols.size != model.cn_mean.size:
        raise DomainError(f"subject {record.subject_id}: {vols.size} volumes, model has {model.cn_mean.size}")
    v = 100.0 * vols / record.icv
    if record.sex == "male":
        v = v - model.sex_beta
    elif record.sex == "unknown":
        warnings.warn(
            f"subject {record.subject_id}: unknown sex, no sex correction applied",
            UnknownSexWarning,
            stacklevel=2,
        )
    return (v - model.cn_mean) / model.cn_std


def normalize_records(records, model: NormalizationModel):
    """Stack feature vectors; returns ``(Z, unknown_sex_mask)`` without emitting warnings."""
    if not records:
        return np.zeros((0, model.cn_mean.size)), np.zeros(0, dtype=bool)
    v = icv_percent(records)
    male = np.array([r.sex == "male" for r in records], dtype=float)
    unknown = np.array([r.sex == "unknown" for r in records], dtype=bool)
    v = v - model.sex_beta * male[:, None]
    return (v - model.cn_mean) / model.cn_std, unknown
