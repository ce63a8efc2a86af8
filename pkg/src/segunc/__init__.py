"""Uncertainty measures for segmentation ensembles and their evaluation with error retention curves."""

__version__ = "0.1.0"

from .errors import (DuplicatePatientError, EnsembleSizeError, FormatError,  # noqa: E402
                     RangeError, ShapeError, UndefinedTestError, ValidationError)
from .lesions import (LesionClassification, LesionComponent, LesionSet,  # noqa: E402
                      aggregate_logsum, aggregate_mean, classify_lesions,
                      connected_components, ddu, ideal_lesion_uncertainty, iou,
                      lesion_scores, random_lesion_uncertainty)
from .pipeline import (MeasureReport, PipelineConfig, binarize, ensemble_mean,  # noqa: E402
                       run_pipeline, tune_threshold)
from .report import emit_pipeline, emit_report  # noqa: E402
from .retention import (CurveBundle, RetentionCurve, average_curves, dsc,  # noqa: E402
                        dsc_retention_curve, f1_retention_curve,
                        interpolate_curve, lesion_f1)
from .stats import BootstrapResult, WilcoxonResult, bootstrap_se, wilcoxon_one_sided  # noqa: E402
from .synth import SynthSpec, synth_generate  # noqa: E402
from .voxel import (UncertaintyMaps, compute_voxel_uncertainties,  # noqa: E402
                    ideal_voxel_uncertainty, random_voxel_uncertainty)
from .volume import (DatasetManifest, EnsembleSample, Volume3D, load_array,  # noqa: E402
                     load_manifest, save_array)

__all__ = [
    "DuplicatePatientError",
    "EnsembleSizeError",
    "FormatError",
    "RangeError",
    "ShapeError",
    "UndefinedTestError",
    "ValidationError",
    "LesionClassification",
    "LesionComponent",
    "LesionSet",
    "aggregate_logsum",
    "aggregate_mean",
    "classify_lesions",
    "connected_components",
    "ddu",
    "ideal_lesion_uncertainty",
    "iou",
    "lesion_scores",
    "random_lesion_uncertainty",
    "MeasureReport",
    "PipelineConfig",
    "binarize",
    "ensemble_mean",
    "run_pipeline",
    "tune_threshold",
    "emit_pipeline",
    "emit_report",
    "CurveBundle",
    "RetentionCurve",
    "average_curves",
    "dsc",
    "dsc_retention_curve",
    "f1_retention_curve",
    "interpolate_curve",
    "lesion_f1",
    "BootstrapResult",
    "WilcoxonResult",
    "bootstrap_se",
    "wilcoxon_one_sided",
    "SynthSpec",
    "synth_generate",
    "UncertaintyMaps",
    "compute_voxel_uncertainties",
    "ideal_voxel_uncertainty",
    "random_voxel_uncertainty",
    "DatasetManifest",
    "EnsembleSample",
    "Volume3D",
    "load_array",
    "load_manifest",
    "save_array",
]
