"""End-to-end evaluation: thresholds, per-patient curves and AUC tables."""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from . import __version__
from .errors import RangeError, ValidationError
from .lesions import (FN_MODES, classify_lesions, connected_components,
                      ideal_lesion_uncertainty, lesion_scores,
                      parse_lesion_measures, random_lesion_uncertainty)
from .retention import (DEFAULT_GRID, DEFAULT_TAU, average_curves,
                        dsc, dsc_retention_curve, f1_retention_curve,
                        tau_fractions, uniform_grid)
from .seeding import derive_seed
from .stats import bootstrap_se
from .voxel import (compute_voxel_uncertainties, ideal_voxel_uncertainty,
                    parse_voxel_measures, random_voxel_uncertainty)
from .volume import EnsembleSample, Volume3D, as_array, check_same_shape, load_manifest

IDEAL, RANDOM = "ideal", "random"
DEFAULT_THRESHOLD_GRID = tuple(round(0.05 * i, 2) for i in range(1, 20))


def binarize(prob, threshold):
    """1 where the probability is strictly above ``threshold``.

    The comparison is done in float64, so a float32 map holding 0.1 lies
    above a 0.1 threshold.
    """
    if not 0.0 < threshold < 1.0:
        raise RangeError(f"threshold must lie in (0, 1), got {threshold}")
    p = as_array(prob).astype(np.float64, copy=False)
    return Volume3D((p > float(threshold)).astype(np.uint8), "binary")


def ensemble_mean(members):
    if len(members) < 2:
        raise ValidationError(f"ensemble mean needs K >= 2 members, got {len(members)}")
    check_same_shape(*members, context="ensemble members")
    acc = np.zeros(as_array(members[0]).shape, dtype=np.float64)
    for m in members:
        acc += as_array(m)
    acc /= len(members)
    return Volume3D(np.clip(acc, 0.0, 1.0), "probability")


def tune_threshold(samples, target="ensemble", grid=DEFAULT_THRESHOLD_GRID):
    """Grid threshold maximizing the mean per-patient DSC.

    ``target`` is ``'ensemble'`` for the mean map or an integer member index.
    Ties go to the lowest threshold.
    """
    samples = list(samples)
    if not samples:
        raise ValidationError("threshold tuning needs at least one sample")
    grid = sorted(float(t) for t in grid)
    scores = np.zeros(len(grid))
    for s in samples:
        if target == "ensemble":
            prob = ensemble_mean(s.member_probs)
        else:
            k = int(target)
            if not 0 <= k < s.k:
                raise ValidationError(f"member index {k} out of range for K={s.k}")
            prob = s.member_probs[k]
        for i, t in enumerate(grid):
            scores[i] += dsc(binarize(prob, t), s.ground_truth)
    scores /= len(samples)
    best = int(np.flatnonzero(scores == scores.max())[0])
    return grid[best]


@dataclass
class PipelineConfig:
    manifest: Optional[str] = None
    ensemble_threshold: float = 0.3
    member_thresholds: Optional[list] = None
    tau: float = DEFAULT_TAU
    gamma: float = 0.25
    connectivity: int = 26
    grid: int = DEFAULT_GRID
    seed: int = 0
    fn_mode: str = "zero-overlap"
    voxel_measures: Optional[list] = None
    lesion_measures: Optional[list] = None
    bootstrap_sample_size: int = 50
    bootstrap_reps: int = 10_000
    skip_empty: bool = False
    threads: int = 1

    def __post_init__(self):
        if not 0.0 < self.ensemble_threshold < 1.0:
            raise RangeError("ensemble_threshold must lie in (0, 1)")
        if self.member_thresholds is not None:
            self.member_thresholds = [float(t) for t in self.member_thresholds]
            if any(not 0.0 < t < 1.0 for t in self.member_thresholds):
                raise RangeError("member thresholds must lie in (0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise RangeError("tau must lie in (0, 1]")
        if not 0.0 < self.gamma < 1.0:
            raise RangeError("gamma must lie in (0, 1)")
        if self.fn_mode not in FN_MODES:
            raise ValidationError(f"fn_mode must be one of {FN_MODES}")
        if self.grid < 2:
            raise ValidationError("grid needs at least 2 nodes")
        self.voxel_measures = list(parse_voxel_measures(self.voxel_measures))
        self.lesion_measures = list(parse_lesion_measures(self.lesion_measures))

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_dict(self):
        return asdict(self)

    def digest(self):
        d = self.to_dict()
        d.pop("threads")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class ReportRow:
    measure: str
    mean_auc: float
    se: float
    aucs: list = field(default_factory=list)


@dataclass
class MeasureReport:
    """AUC table for one scale (``'dsc'`` or ``'f1'``), best measure first."""

    scale: str
    rows: list
    patients: list
    meta: dict = field(default_factory=dict)

    def row(self, measure):
        for r in self.rows:
            if r.measure == measure:
                return r
        raise KeyError(measure)

    def aucs(self):
        return {r.measure: list(r.aucs) for r in self.rows}

    def to_json(self):
        return {"scale": self.scale, "patients": list(self.patients),
                "rows": [asdict(r) for r in self.rows],
                "aucs": self.aucs(), "meta": self.meta}

    @classmethod
    def from_json(cls, doc):
        rows = [ReportRow(**r) for r in doc["rows"]]
        return cls(doc["scale"], rows, list(doc["patients"]), doc.get("meta", {}))


def sort_rows(rows):
    def key(r):
        tier = 0 if r.measure == IDEAL else (2 if r.measure == RANDOM else 1)
        return (-r.mean_auc, tier, r.measure)
    return sorted(rows, key=key)


@dataclass
class PatientResult:
    patient_id: str
    dsc_curves: dict
    f1_curves: dict
    n_lesions: int
    classification: object = None
    scores: dict = field(default_factory=dict)
    lesion_sizes: list = field(default_factory=list)


def _member_sets(sample, thresholds, connectivity):
    return [connected_components(binarize(m, t), connectivity)
            for m, t in zip(sample.member_probs, thresholds)]


def evaluate_patient(sample, config, member_thresholds=None):
    """Per-patient DSC and lesion F1 retention curves for every configured measure."""
    if not isinstance(sample, EnsembleSample):
        raise ValidationError("evaluate_patient expects an EnsembleSample")
    pid = sample.patient_id
    try:
        pred = binarize(ensemble_mean(sample.member_probs), config.ensemble_threshold)
        vox = config.voxel_measures
        lesion_ms = config.lesion_measures
        need_maps = set(vox) | {m.split("-", 1)[1] for m in lesion_ms if m not in ("ddu", "ddu-true")}
        maps = compute_voxel_uncertainties(sample, sorted(need_maps)) if need_maps else None

        dsc_curves = {}
        for m in vox:
            dsc_curves[m] = dsc_retention_curve(sample, pred, maps[m], config.tau)
        dsc_curves[IDEAL] = dsc_retention_curve(
            sample, pred, ideal_voxel_uncertainty(pred, sample.ground_truth), config.tau)
        rnd = random_voxel_uncertainty(sample.shape, derive_seed(config.seed, pid, "voxel-random"))
        dsc_curves[RANDOM] = dsc_retention_curve(sample, pred, rnd, config.tau)

        pred_set = connected_components(pred, config.connectivity)
        truth_set = connected_components(sample.ground_truth, config.connectivity)
        cls = classify_lesions(pred_set, truth_set, config.gamma, config.fn_mode)
        member_sets = member_sets_true = None
        if "ddu" in lesion_ms:
            member_sets = _member_sets(sample, [config.ensemble_threshold] * sample.k,
                                       config.connectivity)
        if "ddu-true" in lesion_ms:
            if member_thresholds is None:
                raise ValidationError("ddu-true needs per-member thresholds")
            if len(member_thresholds) != sample.k:
                raise ValidationError(
                    f"{len(member_thresholds)} member thresholds for K={sample.k}")
            member_sets_true = _member_sets(sample, member_thresholds, config.connectivity)
        scores = lesion_scores(pred_set, lesion_ms, maps, member_sets, member_sets_true)
        scores[IDEAL] = ideal_lesion_uncertainty(cls)
        scores[RANDOM] = random_lesion_uncertainty(len(pred_set), config.seed, pid)
        f1_curves = {m: f1_retention_curve(cls, s) for m, s in scores.items()}
    except ValidationError as e:
        raise type(e)(f"patient {pid}: {e}") from None
    return PatientResult(pid, dsc_curves, f1_curves, len(pred_set), cls, scores,
                         [c.size for c in pred_set])


def _build_report(scale, results, curve_attr, grid, config):
    measures = list(getattr(results[0], curve_attr))
    bundles = {}
    rows = []
    patients = [r.patient_id for r in results]
    size = min(config.bootstrap_sample_size, len(results))
    boot_seed = derive_seed(config.seed, "bootstrap", scale)
    for m in measures:
        curves = {r.patient_id: getattr(r, curve_attr)[m] for r in results}
        b = average_curves(curves, grid)
        bundles[m] = b
        aucs = [b.curves[p].auc for p in patients]
        bs = bootstrap_se(aucs, size, config.bootstrap_reps, boot_seed)
        rows.append(ReportRow(m, b.mean_auc, bs.standard_error, aucs))
    meta = {"config": config.to_dict(), "config_hash": config.digest(),
            "seed": config.seed, "versions": _versions(),
            "bootstrap": {"sample_size": size, "repetitions": config.bootstrap_reps,
                          "seed": boot_seed}}
    if scale == "f1":
        meta["logsum_nc_shift"] = 1.0
    return MeasureReport(scale, sort_rows(rows), patients, meta), bundles


def _versions():
    import matplotlib
    import scipy
    return {"segunc": __version__, "numpy": np.__version__,
            "scipy": scipy.__version__, "matplotlib": matplotlib.__version__}


@dataclass
class PipelineResult:
    dsc_report: MeasureReport
    f1_report: MeasureReport
    dsc_bundles: dict
    f1_bundles: dict
    patients: list
    member_thresholds: Optional[list] = None


def run_pipeline(config, samples=None):
    """Evaluate every sample and return DSC and F1 AUC tables with curve bundles.

    When ``config.member_thresholds`` is unset and ``ddu-true`` is requested,
    per-member thresholds are tuned on the same samples.
    """
    if samples is None:
        if not config.manifest:
            raise ValidationError("no manifest given")
        samples = load_manifest(config.manifest, config.threads)
    samples = list(samples)
    if not samples:
        raise ValidationError("no samples to evaluate")
    member_thresholds = config.member_thresholds
    if member_thresholds is None and "ddu-true" in config.lesion_measures:
        member_thresholds = [tune_threshold(samples, k) for k in range(samples[0].k)]

    def work(s):
        return evaluate_patient(s, config, member_thresholds)

    if config.threads and config.threads > 1:
        with ThreadPoolExecutor(config.threads) as ex:
            results = list(ex.map(work, samples))
    else:
        results = [work(s) for s in samples]

    dsc_report, dsc_bundles = _build_report("dsc", results, "dsc_curves",
                                            tau_fractions(config.tau), config)
    f1_results = [r for r in results if r.n_lesions > 0] if config.skip_empty else results
    if not f1_results:
        raise ValidationError("every patient has zero predicted lesions; nothing left with --skip-empty")
    f1_report, f1_bundles = _build_report("f1", f1_results, "f1_curves",
                                          uniform_grid(config.grid), config)
    for rep in (dsc_report, f1_report):
        rep.meta["member_thresholds"] = member_thresholds
    return PipelineResult(dsc_report, f1_report, dsc_bundles, f1_bundles, results,
                          member_thresholds)
