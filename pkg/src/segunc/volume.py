"""Volumes, ensemble samples and dataset manifests.

Volumes are dense 3D grids with axes ``(depth, height, width)`` in C order.
On disk they are npy v1.0 files: probability and uncertainty maps as
little-endian float32 (``<f4``), binary masks as ``|u1``.

The manifest is a JSON document::

    {"version": 1,
     "samples": [{"patient_id": "P001",
                  "member_prob_paths": ["P001_m0.npy", ...],
                  "ground_truth_path": "P001_gt.npy",
                  "brain_mask_path": "P001_brain.npy"}]}

with paths resolved relative to the manifest file.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from numpy.lib import format as npy_format

from .errors import (DuplicatePatientError, EnsembleSizeError, FormatError,
                     RangeError, ShapeError, ValidationError)

KINDS = ("probability", "uncertainty", "binary")
MANIFEST_VERSION = 1

_DISK_DTYPE = {
    "probability": np.dtype("<f4"),
    "uncertainty": np.dtype("<f4"),
    "binary": np.dtype("|u1"),
}


def _first_bad(flags):
    return int(np.flatnonzero(np.ravel(flags))[0])


@dataclass(frozen=True, eq=False)
class Volume3D:
    """A 3D scalar grid tagged with what its values mean.

    The array is stored read-only. ``kind='binary'`` volumes are held as
    ``uint8``; float volumes keep the dtype they were built with.
    """

    data: np.ndarray
    kind: str = "probability"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown volume kind {self.kind!r}")
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ShapeError(f"expected a 3D array, got shape {arr.shape}")
        if any(s <= 0 for s in arr.shape):
            raise ShapeError(f"volume dimensions must be positive, got {arr.shape}")
        if arr.dtype.kind not in "biuf":
            raise FormatError(f"non-numeric dtype {arr.dtype}")
        if self.kind == "binary":
            bad = (arr != 0) & (arr != 1)
            if bad.any():
                i = _first_bad(bad)
                raise RangeError(f"binary volume has value {arr.flat[i]!r} at flat index {i}", i)
            arr = arr.astype(np.uint8)
        else:
            if arr.dtype.kind != "f":
                arr = arr.astype(np.float64)
            if not np.isfinite(arr).all():
                i = _first_bad(~np.isfinite(arr))
                raise RangeError(f"non-finite value at flat index {i}", i)
            if self.kind == "probability":
                bad = (arr < 0) | (arr > 1)
                if bad.any():
                    i = _first_bad(bad)
                    raise RangeError(
                        f"probability {float(arr.flat[i])!r} outside [0, 1] at flat index {i}", i)
        arr = np.ascontiguousarray(arr)
        if arr.flags.writeable:
            if arr is self.data or np.shares_memory(arr, np.asarray(self.data)):
                arr = arr.copy()
            arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def flat(self):
        """Row-major flattened view."""
        return self.data.reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, Volume3D):
            return NotImplemented
        return (self.kind == other.kind and self.shape == other.shape
                and np.array_equal(self.data, other.data))

    __hash__ = None


def as_array(v):
    """Return the ndarray behind a Volume3D, or the argument as an array."""
    return v.data if isinstance(v, Volume3D) else np.asarray(v)


def check_same_shape(*vols, context=""):
    shapes = {as_array(v).shape for v in vols}
    if len(shapes) > 1:
        where = f" ({context})" if context else ""
        raise ShapeError(f"shape mismatch{where}: {sorted(shapes)}")


@dataclass(frozen=True, eq=False)
class EnsembleSample:
    patient_id: str
    member_probs: tuple
    ground_truth: Volume3D
    brain_mask: Optional[Volume3D] = None

    def __post_init__(self):
        members = tuple(self.member_probs)
        if len(members) < 2:
            raise EnsembleSizeError(
                f"patient {self.patient_id}: ensemble needs at least 2 members, got {len(members)}")
        for m in members:
            if m.kind != "probability":
                raise ValidationError(f"patient {self.patient_id}: member maps must be probabilities")
        if self.ground_truth.kind != "binary":
            raise ValidationError(f"patient {self.patient_id}: ground truth must be binary")
        brain = self.brain_mask
        if brain is None:
            brain = Volume3D(np.ones(self.ground_truth.shape, np.uint8), "binary")
        elif brain.kind != "binary":
            raise ValidationError(f"patient {self.patient_id}: brain mask must be binary")
        shapes = {v.shape for v in (*members, self.ground_truth, brain)}
        if len(shapes) != 1:
            raise ShapeError(f"patient {self.patient_id}: volume shapes differ: {sorted(shapes)}")
        object.__setattr__(self, "member_probs", members)
        object.__setattr__(self, "brain_mask", brain)

    @property
    def k(self):
        return len(self.member_probs)

    @property
    def shape(self):
        return self.ground_truth.shape


@dataclass
class ManifestEntry:
    patient_id: str
    member_prob_paths: list
    ground_truth_path: str
    brain_mask_path: Optional[str] = None

    def to_json(self):
        d = {"patient_id": self.patient_id,
             "member_prob_paths": list(self.member_prob_paths),
             "ground_truth_path": self.ground_truth_path}
        if self.brain_mask_path is not None:
            d["brain_mask_path"] = self.brain_mask_path
        return d


@dataclass
class DatasetManifest:
    samples: list = field(default_factory=list)
    version: int = MANIFEST_VERSION

    def validate(self):
        seen = set()
        ks = set()
        for s in self.samples:
            if s.patient_id in seen:
                raise DuplicatePatientError(f"duplicate patient_id {s.patient_id!r}")
            seen.add(s.patient_id)
            ks.add(len(s.member_prob_paths))
        if len(ks) > 1:
            raise EnsembleSizeError(f"samples list different ensemble sizes: {sorted(ks)}")

    def to_json(self):
        return {"version": self.version, "samples": [s.to_json() for s in self.samples]}

    @classmethod
    def from_json(cls, doc):
        if not isinstance(doc, dict) or "samples" not in doc:
            raise FormatError("manifest must be an object with a 'samples' list")
        version = doc.get("version", MANIFEST_VERSION)
        if version != MANIFEST_VERSION:
            raise FormatError(f"unsupported manifest version {version!r}")
        samples = []
        for i, s in enumerate(doc["samples"]):
            try:
                samples.append(ManifestEntry(
                    patient_id=str(s["patient_id"]),
                    member_prob_paths=[str(p) for p in s["member_prob_paths"]],
                    ground_truth_path=str(s["ground_truth_path"]),
                    brain_mask_path=s.get("brain_mask_path")))
            except (KeyError, TypeError) as e:
                raise FormatError(f"manifest sample {i} is malformed: {e}") from None
        m = cls(samples=samples, version=version)
        m.validate()
        return m


def save_array(volume, path):
    """Write ``volume`` as an npy v1.0 file (float32 or uint8, C order)."""
    if not isinstance(volume, Volume3D):
        raise ValidationError("save_array expects a Volume3D")
    arr = np.ascontiguousarray(volume.data, dtype=_DISK_DTYPE[volume.kind])
    path = Path(path)
    with open(path, "wb") as f:
        npy_format.write_array(f, arr, version=(1, 0), allow_pickle=False)


def load_array(path, kind="probability"):
    """Read an npy file holding a 3D numeric array.

    Parameters
    ----------
    path : str or Path
    kind : {'probability', 'uncertainty', 'binary'}
        How to interpret and validate the values.

    Raises
    ------
    FormatError
        Bad magic string, unreadable header or non-numeric dtype.
    ShapeError
        The array is not 3D.
    RangeError
        A probability outside [0, 1] or a non-{0,1} binary value; the
        exception carries the flat index of the first offender.
    """
    path = Path(path)
    with open(path, "rb") as f:
        try:
            major, minor = npy_format.read_magic(f)
        except ValueError as e:
            raise FormatError(f"{path}: {e}") from None
        try:
            if (major, minor) == (1, 0):
                shape, fortran, dtype = npy_format.read_array_header_1_0(f)
            elif major in (2, 3):
                shape, fortran, dtype = npy_format.read_array_header_2_0(f)
            else:
                raise ValueError(f"unsupported npy version {major}.{minor}")
        except ValueError as e:
            raise FormatError(f"{path}: {e}") from None
        if dtype.hasobject or dtype.kind not in "biuf":
            raise FormatError(f"{path}: unsupported dtype {dtype}")
        if len(shape) != 3:
            raise ShapeError(f"{path}: expected a 3D array, got shape {shape}")
        count = int(np.prod(shape))
        data = np.frombuffer(f.read(count * dtype.itemsize), dtype=dtype)
        if data.size != count:
            raise FormatError(f"{path}: payload truncated ({data.size} of {count} values)")
    order = "F" if fortran else "C"
    arr = data.reshape(shape, order=order)
    if kind != "binary" and arr.dtype.kind == "f":
        arr = arr.astype(arr.dtype.newbyteorder("="))
    try:
        return Volume3D(arr, kind)
    except RangeError as e:
        raise RangeError(f"{path}: {e}", e.index) from None


def _resolve(base, p):
    p = Path(p)
    return p if p.is_absolute() else base / p


def read_manifest(path):
    path = Path(path)
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: invalid JSON: {e}") from None
    return DatasetManifest.from_json(doc)


def write_manifest(manifest, path):
    manifest.validate()
    Path(path).write_text(json.dumps(manifest.to_json(), indent=2) + "\n")


def load_sample(entry, base):
    base = Path(base)
    members = [load_array(_resolve(base, p), "probability") for p in entry.member_prob_paths]
    gt = load_array(_resolve(base, entry.ground_truth_path), "binary")
    brain = None
    if entry.brain_mask_path:
        brain = load_array(_resolve(base, entry.brain_mask_path), "binary")
    return EnsembleSample(entry.patient_id, tuple(members), gt, brain)


def load_manifest(path, threads=1):
    """Load and validate every sample listed in a manifest, in manifest order."""
    path = Path(path)
    manifest = read_manifest(path)
    base = path.parent
    if threads and threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(lambda e: load_sample(e, base), manifest.samples))
    return [load_sample(e, base) for e in manifest.samples]
