"""Lesion extraction, detection matching and lesion-scale uncertainty.

Lesions are connected components of a binary mask. Lesion-scale scores come
in three families:

* ``mean-<voxel measure>`` and ``logsum-<voxel measure>`` aggregate a voxel
  uncertainty map inside the lesion;
* ``ddu`` / ``ddu-true`` measure how much the ensemble members disagree about
  the lesion itself: one minus the mean, over members, of the best IoU
  between the lesion and any component of the member's binary mask. ``ddu``
  binarizes members at the ensemble threshold, ``ddu-true`` at per-member
  thresholds;
* ``ideal`` and ``random`` baselines.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import ndimage

from .errors import EnsembleSizeError, RangeError, ValidationError
from .seeding import rng_for
from .voxel import EPS, VOXEL_MEASURES
from .volume import Volume3D, as_array

CONNECTIVITIES = {6: 1, 18: 2, 26: 3}
FN_MODES = ("zero-overlap", "unmatched")
TP, FP = "TP", "FP"


def normalize_measure_id(name):
    """Canonical lesion measure id: lower case, hyphen separated."""
    return name.strip().lower().replace("_", "-")


def lesion_measure_ids(voxel_measures=VOXEL_MEASURES, aggregations=("mean", "logsum"),
                       ddu=True):
    ids = [f"{agg}-{m}" for agg in aggregations for m in voxel_measures]
    if ddu:
        ids += ["ddu", "ddu-true"]
    return ids


ALL_LESION_MEASURES = tuple(lesion_measure_ids())


def parse_lesion_measures(measures):
    if measures is None:
        return ALL_LESION_MEASURES
    if isinstance(measures, str):
        measures = [m for m in measures.split(",") if m.strip()]
    out = []
    for m in measures:
        m = normalize_measure_id(m)
        if m not in ALL_LESION_MEASURES:
            raise ValidationError(f"unknown lesion measure {m!r}")
        if m not in out:
            out.append(m)
    return tuple(out)


@dataclass(frozen=True, eq=False)
class LesionComponent:
    label: int
    voxels: np.ndarray  # sorted flat indices

    @property
    def size(self):
        return int(self.voxels.size)


@dataclass(eq=False)
class LesionSet:
    """Connected components of a mask, labeled ``1..L``.

    ``label_map`` holds the flat label of every voxel (0 for background) and
    is kept so matching against other masks does not relabel.
    """

    source_shape: tuple
    components: list
    label_map: np.ndarray = field(repr=False)
    connectivity: int = 26

    def __len__(self):
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    @cached_property
    def sizes(self):
        """Component sizes indexed by label (index 0 is background)."""
        out = np.zeros(len(self.components) + 1, dtype=np.int64)
        for c in self.components:
            out[c.label] = c.size
        return out


def connected_components(mask, connectivity=26):
    """Label the foreground of a binary volume.

    Components follow scan order: label 1 contains the smallest foreground
    flat index, label 2 the smallest index not in component 1, and so on.
    """
    if connectivity not in CONNECTIVITIES:
        raise ValidationError(f"connectivity must be one of {sorted(CONNECTIVITIES)}, got {connectivity}")
    if isinstance(mask, Volume3D):
        if mask.kind != "binary":
            raise ValidationError("connected_components expects a binary volume")
        arr = mask.data
    else:
        arr = Volume3D(np.asarray(mask), "binary").data
    structure = ndimage.generate_binary_structure(3, CONNECTIVITIES[connectivity])
    labels, n = ndimage.label(arr, structure=structure)
    flat = labels.reshape(-1).astype(np.int64)
    fg = np.flatnonzero(flat)
    order = np.argsort(flat[fg], kind="stable")
    sorted_idx = fg[order]
    counts = np.bincount(flat[fg], minlength=n + 1)[1:]
    splits = np.cumsum(counts)[:-1]
    comps = [LesionComponent(i + 1, v) for i, v in enumerate(np.split(sorted_idx, splits))] if n else []
    return LesionSet(tuple(arr.shape), comps, flat, connectivity)


def _voxels(x):
    return x.voxels if isinstance(x, LesionComponent) else np.asarray(x, dtype=np.int64)


def iou(a, b):
    """Intersection over union of two voxel sets (components or flat index arrays)."""
    va, vb = np.unique(_voxels(a)), np.unique(_voxels(b))
    inter = np.intersect1d(va, vb, assume_unique=True).size
    union = va.size + vb.size - inter
    return inter / union if union else 0.0


def best_match(lesion, other):
    """Best IoU between ``lesion`` and any component of ``other``.

    Returns ``(iou, label)``; ``(0.0, 0)`` when nothing intersects. Ties go
    to the smallest label.
    """
    vox = _voxels(lesion)
    hit = other.label_map[vox]
    hit = hit[hit > 0]
    if hit.size == 0:
        return 0.0, 0
    inter = np.bincount(hit)
    cand = np.flatnonzero(inter)
    sizes = other.sizes[cand]
    ious = inter[cand] / (vox.size + sizes - inter[cand])
    j = int(np.argmax(ious))
    return float(ious[j]), int(cand[j])


@dataclass
class LesionClassification:
    labels: list
    status: list
    best_iou: list
    fn_count: int
    gamma: float
    fn_mode: str = "zero-overlap"
    n_truth: int = 0

    @property
    def tp(self):
        return sum(s == TP for s in self.status)

    @property
    def fp(self):
        return sum(s == FP for s in self.status)

    @property
    def fn(self):
        return self.fn_count

    def __len__(self):
        return len(self.status)


def classify_lesions(predicted, truth, gamma=0.25, fn_mode="zero-overlap"):
    """Mark each predicted lesion TP or FP and count FN truth lesions.

    A predicted lesion is TP when its best IoU over truth lesions exceeds
    ``gamma``. Several predicted lesions may be TP against the same truth
    lesion.

    ``fn_mode='zero-overlap'`` counts truth lesions touched by no predicted
    lesion; ``fn_mode='unmatched'`` counts truth lesions with no predicted
    lesion above ``gamma``.
    """
    if not 0.0 < gamma < 1.0:
        raise RangeError(f"gamma must lie in (0, 1), got {gamma}")
    if fn_mode not in FN_MODES:
        raise ValidationError(f"fn_mode must be one of {FN_MODES}, got {fn_mode!r}")
    if tuple(predicted.source_shape) != tuple(truth.source_shape):
        raise ValidationError("predicted and truth lesion sets come from different shapes")
    labels, status, best = [], [], []
    for c in predicted:
        v, _ = best_match(c, truth)
        labels.append(c.label)
        best.append(v)
        status.append(TP if v > gamma else FP)
    if fn_mode == "zero-overlap":
        fn = sum(1 for t in truth if not predicted.label_map[t.voxels].any())
    else:
        fn = sum(1 for t in truth if best_match(t, predicted)[0] <= gamma)
    return LesionClassification(labels, status, best, fn, gamma, fn_mode, len(truth))


def aggregate_mean(lesion, u_map):
    u = as_array(u_map).reshape(-1)
    return float(np.mean(u[_voxels(lesion)], dtype=np.float64))


def aggregate_logsum(lesion, u_map, shift=0.0, eps=EPS):
    """Sum of ``log(max(u + shift, eps))`` over the lesion voxels."""
    u = as_array(u_map).reshape(-1)[_voxels(lesion)].astype(np.float64) + shift
    return float(np.sum(np.log(np.maximum(u, eps))))


def _as_lesion_sets(members, connectivity):
    out = []
    for m in members:
        out.append(m if isinstance(m, LesionSet) else connected_components(m, connectivity))
    return out


def ddu(lesion, member_masks, connectivity=26):
    """Detection disagreement uncertainty of one lesion, in [0, 1].

    ``member_masks`` holds K binary member masks or their precomputed
    :class:`LesionSet` objects. A member with no component touching the
    lesion contributes IoU 0.
    """
    if len(member_masks) < 2:
        raise EnsembleSizeError(f"DDU needs K >= 2 member masks, got {len(member_masks)}")
    sets = _as_lesion_sets(member_masks, connectivity)
    shapes = {tuple(s.source_shape) for s in sets}
    if len(shapes) != 1:
        raise ValidationError(f"member masks have different shapes: {sorted(shapes)}")
    vox = _voxels(lesion)
    n = int(np.prod(next(iter(shapes))))
    if vox.size and vox.max() >= n:
        raise ValidationError("lesion lies outside the member mask bounds")
    total = 0.0
    for s in sets:
        total += best_match(vox, s)[0]
    return float(min(1.0, max(0.0, 1.0 - total / len(sets))))


def ideal_lesion_uncertainty(classification):
    return np.array([0.0 if s == TP else 1.0 for s in classification.status])


def random_lesion_uncertainty(lesion_count, seed, patient_id):
    """Uniform [0, 1) scores keyed on ``(seed, patient_id)``."""
    return rng_for(seed, patient_id, "lesion-random").random(int(lesion_count))


def lesion_scores(lesions, measures, u_maps=None, member_sets=None, member_sets_true=None):
    """Score every lesion in ``lesions`` for each requested measure.

    Parameters
    ----------
    lesions : LesionSet
        Lesions predicted by the ensemble.
    measures : iterable of str
        Lesion measure ids (see :data:`ALL_LESION_MEASURES`).
    u_maps : UncertaintyMaps or dict, optional
        Voxel maps needed by ``mean-*`` / ``logsum-*`` measures.
    member_sets, member_sets_true : list of LesionSet, optional
        Member components binarized at the ensemble threshold (``ddu``) and at
        per-member thresholds (``ddu-true``).

    Returns
    -------
    dict mapping measure id to a float array ordered like ``lesions.components``.
    """
    out = {}
    for m in parse_lesion_measures(measures):
        if m in ("ddu", "ddu-true"):
            sets = member_sets if m == "ddu" else member_sets_true
            if sets is None:
                raise ValidationError(f"{m} needs member lesion sets")
            out[m] = np.array([ddu(c, sets) for c in lesions], dtype=np.float64)
            continue
        agg, vm = m.split("-", 1)
        if u_maps is None or vm not in u_maps:
            raise ValidationError(f"{m} needs the {vm} voxel map")
        u = u_maps[vm]
        if agg == "mean":
            vals = [aggregate_mean(c, u) for c in lesions]
        else:
            # NC lives in [-1, -0.5]; shift into [0, 0.5] so the log is defined
            shift = 1.0 if vm == "nc" else 0.0
            vals = [aggregate_logsum(c, u, shift) for c in lesions]
        out[m] = np.array(vals, dtype=np.float64)
    return out
