"""Lifespan tree: volumetric trajectories embedded as a 3-D tree for differential diagnosis."""

from .cohort import SubjectRecord, load_subjects, partition, save_subjects
from .embed import EmbeddingModel, UmapParams, fit_umap, transform
from .evaluation import (
    RankedPrediction,
    bootstrap_ci,
    confusion_matrix,
    merge_classes,
    paired_bootstrap_pvalue,
    topk_bacc,
)
from .normalize import NormalizationModel, apply_normalization, fit_normalization
from .pipeline import FittedPipeline, fit_pipeline, predict
from .sampling import SampleSet, generate_samples
from .simulate import CohortSpec, generate_cohort, oracle_labels
from .trajectory import LifespanModelSet, TrajectoryModel, fit_lifespan_models, fit_trajectory
from .tree import LifespanTree, build_tree, classify, cut_tree

__version__ = "0.1.0"

__all__ = [
    "CohortSpec",
    "EmbeddingModel",
    "FittedPipeline",
    "LifespanModelSet",
    "LifespanTree",
    "NormalizationModel",
    "RankedPrediction",
    "SampleSet",
    "SubjectRecord",
    "TrajectoryModel",
    "UmapParams",
    "apply_normalization",
    "bootstrap_ci",
    "build_tree",
    "classify",
    "confusion_matrix",
    "cut_tree",
    "fit_lifespan_models",
    "fit_normalization",
    "fit_pipeline",
    "fit_trajectory",
    "fit_umap",
    "generate_cohort",
    "generate_samples",
    "load_subjects",
    "merge_classes",
    "oracle_labels",
    "paired_bootstrap_pvalue",
    "partition",
    "predict",
    "save_subjects",
    "topk_bacc",
    "transform",
]
