"""End-to-end fit and prediction: normalization, trajectories, synthetic cloud, embedding, tree."""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .cohort import partition
from .embed import EmbeddingModel, UmapParams, fit_umap
from .evaluation import RankedPrediction
from .normalize import NormalizationModel, fit_normalization
from .sampling import SAMPLES_PER_YEAR, SampleSet, training_pool
from .tree import LifespanTree, build_tree, classify_records
from .trajectory import LifespanModelSet, fit_lifespan_models

log = logging.getLogger(__name__)

CONTROL = "CN"
TREE_PRESETS = {
    "cognitive": ("AD", "CN", "DLB", "PNFA", "PSP", "SD", "bvFTD"),
    "motor": ("DLB", "MSA", "PD", "PSP"),
}


@dataclass(frozen=True)
class FittedPipeline:
    norm: NormalizationModel
    models: LifespanModelSet
    samples: SampleSet
    embedding: EmbeddingModel
    tree: LifespanTree


def fit_pipeline(records, branches, control=CONTROL, seed=0, samples_per_year=SAMPLES_PER_YEAR,
                 structure_names=None, n_epochs=None):
    """Fit every stage on training ``records`` for a tree with the given branch labels."""
    branches = tuple(branches)
    labels = tuple(dict.fromkeys(branches + (control,)))
    records = [r for r in records if r.diagnosis in labels]
    part = partition(records, labels, control)
    norm = fit_normalization(part[control], structure_names)
    models = fit_lifespan_models(part, norm, branches=branches)
    samples = training_pool(models, samples_per_year, seed)
    params = UmapParams.for_populations(len(branches), seed=seed, n_epochs=n_epochs)
    log.info("embedding %d synthetic samples", len(samples))
    embedding = fit_umap(samples, params)
    tree = build_tree(models, embedding, samples)
    return FittedPipeline(norm, models, samples, embedding, tree)


def to_ranked(result, true_label):
    return RankedPrediction(result.subject_id, true_label, result.ranking,
                            tuple(result.scores[lab] for lab in result.ranking))


def predict(fitted: FittedPipeline, records, rule="polyline"):
    """Ranked predictions for labelled ``records`` (true label = record diagnosis)."""
    records = list(records)
    results = classify_records(fitted.tree, fitted.norm, fitted.embedding, records, rule)
    return [to_ranked(res, rec.diagnosis) for res, rec in zip(results, records)]
