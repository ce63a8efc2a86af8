"""Per-voxel uncertainty measures for a binary-segmentation deep ensemble.

Each voxel is treated as its own two-class problem. With member foreground
probabilities ``p_k`` and ``P_k(y)`` ranging over ``{p_k, 1 - p_k}``:

=====  ===============================================================
eoe    entropy of the ensemble-mean distribution (total)
nc     negated confidence of the ensemble mean, in [-1, -0.5] (total)
exe    mean of the member entropies (data)
mi     eoe - exe (knowledge)
epkl   expected pairwise KL divergence between members (knowledge)
rmi    epkl - mi (knowledge)
=====  ===============================================================

Probabilities are clamped to ``[EPS, 1 - EPS]`` before any logarithm and the
natural log is used throughout.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EnsembleSizeError, ValidationError
from .volume import EnsembleSample, Volume3D, as_array, check_same_shape

EPS = 1e-8
VOXEL_MEASURES = ("eoe", "nc", "exe", "mi", "epkl", "rmi")


def parse_voxel_measures(measures):
    if measures is None:
        return VOXEL_MEASURES
    if isinstance(measures, str):
        measures = [m for m in measures.split(",") if m.strip()]
    out = []
    for m in measures:
        m = m.strip().lower()
        if m not in VOXEL_MEASURES:
            raise ValidationError(f"unknown voxel measure {m!r}; choose from {', '.join(VOXEL_MEASURES)}")
        if m not in out:
            out.append(m)
    # canonical order keeps output files and reports stable
    return tuple(m for m in VOXEL_MEASURES if m in out)


@dataclass
class UncertaintyMaps:
    """Uncertainty volumes for one sample.

    ``mask`` marks voxels that take part in ranking (the brain mask); values
    outside it are zero and must not be ranked.
    """

    maps: dict
    mask: np.ndarray
    k: int
    epsilon: float = EPS
    log_base: str = "e"
    meta: dict = field(default_factory=dict)

    def __getitem__(self, measure):
        return self.maps[measure]

    def __contains__(self, measure):
        return measure in self.maps

    def __iter__(self):
        return iter(self.maps)


def _binary_entropy(p):
    return -(p * np.log(p) + (1.0 - p) * np.log1p(-p))


def voxel_measures_from_probs(probs, measures=VOXEL_MEASURES, eps=EPS):
    """Compute measures from a stacked ``(K, ...)`` array of foreground probabilities.

    Returns a dict of float64 arrays with the trailing shape of ``probs``.
    Members are reduced in index order so results are reproducible.
    """
    probs = np.asarray(probs, dtype=np.float64)
    k = probs.shape[0]
    if k < 2:
        raise EnsembleSizeError(f"ensemble measures need K >= 2, got K={k}")
    p = np.clip(probs, eps, 1.0 - eps)
    p_mean = np.clip(p.sum(axis=0) / k, eps, 1.0 - eps)

    need = set(measures)
    out = {}
    eoe = exe = mi = epkl = None
    if need & {"eoe", "mi", "rmi"}:
        eoe = _binary_entropy(p_mean)
    if need & {"exe", "mi", "epkl", "rmi"}:
        exe = _binary_entropy(p).sum(axis=0) / k
    if need & {"mi", "rmi"}:
        mi = eoe - exe
    if need & {"epkl", "rmi"}:
        # sum over y in {1, 0} of (sum_k P_k(y)) * (sum_k log P_k(y))
        cross = (p.sum(axis=0) * np.log(p).sum(axis=0)
                 + (1.0 - p).sum(axis=0) * np.log1p(-p).sum(axis=0))
        epkl = -cross / (k * k) - exe
    for m in measures:
        if m == "eoe":
            out[m] = eoe
        elif m == "nc":
            out[m] = -np.maximum(p_mean, 1.0 - p_mean)
        elif m == "exe":
            out[m] = exe
        elif m == "mi":
            out[m] = mi
        elif m == "epkl":
            out[m] = epkl
        elif m == "rmi":
            out[m] = epkl - mi
    return out


def compute_voxel_uncertainties(sample, measures=VOXEL_MEASURES, eps=EPS):
    """Uncertainty maps for one ensemble sample.

    Parameters
    ----------
    sample : EnsembleSample
    measures : iterable of str or comma-separated str
        Subset of ``VOXEL_MEASURES``.

    Returns
    -------
    UncertaintyMaps
        float64 maps; voxels outside the brain mask are set to 0.
    """
    if not isinstance(sample, EnsembleSample):
        raise ValidationError("compute_voxel_uncertainties expects an EnsembleSample")
    measures = parse_voxel_measures(measures)
    stack = np.stack([m.data for m in sample.member_probs])
    raw = voxel_measures_from_probs(stack, measures, eps)
    mask = sample.brain_mask.data.astype(bool)
    maps = {}
    for name, arr in raw.items():
        arr = np.where(mask, arr, 0.0)
        maps[name] = Volume3D(arr, "uncertainty")
    return UncertaintyMaps(maps=maps, mask=mask, k=sample.k, epsilon=eps)


def ideal_voxel_uncertainty(prediction, ground_truth):
    """1 where the prediction is wrong, 0 where it is right."""
    check_same_shape(prediction, ground_truth, context="ideal uncertainty")
    pred = as_array(prediction).astype(bool)
    gt = as_array(ground_truth).astype(bool)
    return Volume3D((pred != gt).astype(np.float64), "uncertainty")


def random_voxel_uncertainty(shape, seed):
    """Seeded i.i.d. uniform [0, 1) map, identical for identical ``(shape, seed)``."""
    shape = tuple(int(s) for s in shape)
    rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
    return Volume3D(rng.random(shape), "uncertainty")
