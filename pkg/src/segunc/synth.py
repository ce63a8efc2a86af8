"""Seeded synthetic ensemble datasets.

Each patient gets a brain mask (a large ellipsoid), a ground truth made of
non-overlapping ellipsoidal lesions, and K member probability maps. A member
map is the smoothed truth with member-specific calibration and correlated
noise, plus two planted error sources:

* spurious blobs, shown to each member independently with probability
  ``1 - blob_miss_prob`` (sources of FP lesions members disagree on);
* lesion dropouts, where a member misses a true lesion with probability
  ``miss_prob`` (scalar, or one value per member).

Probabilities are clipped to ``[floor, 1 - floor]`` inside the brain, as a
trained network never outputs exact zeros. Members are identical when ``noise``, ``calibration_spread``, ``miss_prob``
and the blob count are all zero.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ValidationError
from .seeding import rng_for
from .volume import (DatasetManifest, ManifestEntry, Volume3D, save_array,
                     write_manifest)


@dataclass
class SynthSpec:
    patients: int = 10
    shape: tuple = (48, 48, 48)
    members: int = 5
    lesion_count: tuple = (3, 8)
    lesion_radius: tuple = (1.0, 4.0)
    blob_count: tuple = (2, 6)
    blob_radius: tuple = (1.0, 2.5)
    blob_intensity: float = 0.9
    blob_miss_prob: float = 0.5
    miss_prob: object = 0.1
    noise: float = 0.08
    smooth: float = 1.0
    calibration_spread: float = 0.15
    floor: float = 1e-3
    max_retries: int = 200

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        self.lesion_count = tuple(int(x) for x in self.lesion_count)
        self.blob_count = tuple(int(x) for x in self.blob_count)
        self.lesion_radius = tuple(float(x) for x in self.lesion_radius)
        self.blob_radius = tuple(float(x) for x in self.blob_radius)
        if len(self.shape) != 3 or min(self.shape) < 4:
            raise ValidationError(f"shape must be three dimensions >= 4, got {self.shape}")
        if self.members < 2:
            raise ValidationError("need at least 2 members")
        if self.patients < 1:
            raise ValidationError("need at least 1 patient")
        miss = np.broadcast_to(np.asarray(self.miss_prob, dtype=np.float64), (self.members,))
        if np.any(miss < 0) or np.any(miss > 1):
            raise ValidationError("miss_prob must lie in [0, 1]")
        if not 0.0 <= self.floor < 0.5:
            raise ValidationError("floor must lie in [0, 0.5)")
        if not 0.0 <= self.blob_miss_prob <= 1.0:
            raise ValidationError("blob_miss_prob must lie in [0, 1]")
        for lo, hi in (self.lesion_count, self.blob_count, self.lesion_radius, self.blob_radius):
            if lo > hi or lo < 0:
                raise ValidationError("ranges must satisfy 0 <= low <= high")

    @property
    def member_miss(self):
        return np.broadcast_to(np.asarray(self.miss_prob, dtype=np.float64), (self.members,)).copy()

    def to_json(self):
        d = asdict(self)
        d["miss_prob"] = np.asarray(self.miss_prob).tolist()
        return d


def _ellipsoid(shape, center, radii):
    grids = np.ogrid[tuple(slice(0, s) for s in shape)]
    r = sum(((g - c) / a) ** 2 for g, c, a in zip(grids, center, radii))
    return r <= 1.0


def _place(rng, spec, occupied, brain, radius_range, n):
    """Place ``n`` ellipsoids inside ``brain`` without touching ``occupied``."""
    shape = spec.shape
    placed = []
    # dilation keeps separate lesions from merging under 26-connectivity
    guard = ndimage.binary_dilation(occupied, iterations=2) if occupied.any() else occupied.copy()
    for _ in range(n):
        for _attempt in range(spec.max_retries):
            radii = rng.uniform(*radius_range, size=3)
            lo = np.ceil(radii).astype(int) + 1
            hi = np.array(shape) - lo
            if np.any(hi <= lo):
                continue
            center = rng.integers(lo, hi)
            blob = _ellipsoid(shape, center, radii)
            if not blob.any() or (blob & ~brain).any() or (blob & guard).any():
                continue
            placed.append(blob)
            guard |= ndimage.binary_dilation(blob, iterations=2)
            break
        else:
            raise ValidationError(
                f"could not place {n} non-overlapping ellipsoids in shape {shape} "
                f"after {spec.max_retries} retries each")
    return placed


def _smooth(x, sigma):
    return ndimage.gaussian_filter(x, sigma) if sigma > 0 else x


def make_patient(spec, seed, patient_id):
    """Return ``(members, ground_truth, brain)`` arrays for one synthetic patient."""
    rng = rng_for(seed, patient_id, "synth")
    shape = spec.shape
    center = (np.array(shape) - 1) / 2.0
    brain = _ellipsoid(shape, center, np.array(shape) * 0.47)

    n_les = int(rng.integers(spec.lesion_count[0], spec.lesion_count[1] + 1))
    lesions = _place(rng, spec, np.zeros(shape, bool), brain, spec.lesion_radius, n_les)
    truth = np.zeros(shape, bool)
    for les in lesions:
        truth |= les
    n_blob = int(rng.integers(spec.blob_count[0], spec.blob_count[1] + 1))
    blobs = _place(rng, spec, truth, brain, spec.blob_radius, n_blob)

    miss = spec.member_miss
    members = []
    for k in range(spec.members):
        mrng = rng_for(seed, patient_id, "member", k)
        signal = np.zeros(shape)
        for les in lesions:
            if mrng.random() >= miss[k]:
                signal[les] = 1.0
        for blob in blobs:
            if mrng.random() >= spec.blob_miss_prob:
                signal[blob] = spec.blob_intensity
        p = _smooth(signal, spec.smooth)
        if spec.calibration_spread > 0:
            # member-specific monotone recalibration p -> p ** gamma
            gamma = float(np.exp(mrng.uniform(-spec.calibration_spread, spec.calibration_spread) * 2))
            p = p ** gamma
        if spec.noise > 0:
            field_ = _smooth(mrng.standard_normal(shape), 1.5)
            field_ /= field_.std() or 1.0
            p = p + spec.noise * field_ * (0.25 + p * (1 - p))
        p = np.clip(p, spec.floor, 1.0 - spec.floor).astype(np.float32)
        p[~brain] = 0.0
        members.append(p)
    return members, truth.astype(np.uint8), brain.astype(np.uint8)


def synth_generate(spec, seed, out_dir, prefix="P"):
    """Write a synthetic dataset to ``out_dir`` and return its manifest.

    Files are ``{patient_id}_m{k}.npy``, ``{patient_id}_gt.npy`` and
    ``{patient_id}_brain.npy`` next to ``manifest.json``. The same
    ``(spec, seed)`` always produces byte-identical files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    width = max(3, len(str(spec.patients)))
    for i in range(spec.patients):
        pid = f"{prefix}{i + 1:0{width}d}"
        members, truth, brain = make_patient(spec, seed, pid)
        paths = []
        for k, m in enumerate(members):
            name = f"{pid}_m{k}.npy"
            save_array(Volume3D(m, "probability"), out / name)
            paths.append(name)
        save_array(Volume3D(truth, "binary"), out / f"{pid}_gt.npy")
        save_array(Volume3D(brain, "binary"), out / f"{pid}_brain.npy")
        entries.append(ManifestEntry(pid, paths, f"{pid}_gt.npy", f"{pid}_brain.npy"))
    manifest = DatasetManifest(entries)
    write_manifest(manifest, out / "manifest.json")
    return manifest
