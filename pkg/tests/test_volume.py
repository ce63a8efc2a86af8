import json
import struct

import numpy as np
import pytest

from conftest import make_sample
from segunc.errors import (DuplicatePatientError, EnsembleSizeError, FormatError,
                           RangeError, ShapeError)
from segunc.volume import (EnsembleSample, Volume3D, load_array, load_manifest,
                           save_array)


def _header(raw):
    assert raw[:6] == b"\x93NUMPY"
    assert raw[6:8] == b"\x01\x00"
    (hlen,) = struct.unpack("<H", raw[8:10])
    return raw[10:10 + hlen].decode("latin1"), raw[10 + hlen:]


def test_roundtrip_probability_bit_exact(tmp_path, rng):
    v = Volume3D(rng.random((3, 4, 5)).astype(np.float32), "probability")
    save_array(v, tmp_path / "p.npy")
    back = load_array(tmp_path / "p.npy", "probability")
    assert back == v
    assert back.data.tobytes() == v.data.tobytes()


def test_roundtrip_binary_and_uncertainty(tmp_path, rng):
    b = Volume3D((rng.random((2, 3, 4)) > 0.5).astype(np.uint8), "binary")
    save_array(b, tmp_path / "b.npy")
    assert load_array(tmp_path / "b.npy", "binary") == b
    u = Volume3D(-rng.random((2, 2, 2)).astype(np.float32), "uncertainty")
    save_array(u, tmp_path / "u.npy")
    assert load_array(tmp_path / "u.npy", "uncertainty") == u


def test_binary_zeros_encoding(tmp_path):
    save_array(Volume3D(np.zeros((2, 2, 2), np.uint8), "binary"), tmp_path / "z.npy")
    header, payload = _header((tmp_path / "z.npy").read_bytes())
    assert "'descr': '|u1'" in header
    assert "'fortran_order': False" in header
    assert "'shape': (2, 2, 2)" in header
    assert payload == b"\x00" * 8


def test_probability_written_as_le_float32(tmp_path):
    save_array(Volume3D(np.full((1, 1, 2), 0.5), "probability"), tmp_path / "h.npy")
    header, payload = _header((tmp_path / "h.npy").read_bytes())
    assert "'descr': '<f4'" in header
    assert payload == struct.pack("<2f", 0.5, 0.5)


def test_2d_file_is_shape_error(tmp_path):
    np.save(tmp_path / "flat.npy", np.zeros((4, 4), np.float32))
    with pytest.raises(ShapeError):
        load_array(tmp_path / "flat.npy")


def test_probability_out_of_range_names_index(tmp_path):
    a = np.zeros((2, 2, 2), np.float32)
    a.flat[5] = 1.5
    np.save(tmp_path / "bad.npy", a)
    with pytest.raises(RangeError) as e:
        load_array(tmp_path / "bad.npy", "probability")
    assert e.value.index == 5
    assert "5" in str(e.value)


def test_malformed_header_is_format_error(tmp_path):
    (tmp_path / "junk.npy").write_bytes(b"not an npy file at all")
    with pytest.raises(FormatError):
        load_array(tmp_path / "junk.npy")


def test_non_binary_values_rejected(tmp_path):
    np.save(tmp_path / "m.npy", np.full((1, 1, 3), 2, np.uint8))
    with pytest.raises(RangeError):
        load_array(tmp_path / "m.npy", "binary")


def test_save_to_missing_directory_raises_oserror(tmp_path):
    with pytest.raises(OSError) as e:
        save_array(Volume3D(np.zeros((1, 1, 1)), "uncertainty"), tmp_path / "nope" / "x.npy")
    assert "nope" in str(e.value)


def test_volume_is_read_only():
    v = Volume3D(np.zeros((1, 1, 2)), "uncertainty")
    with pytest.raises(ValueError):
        v.data[0, 0, 0] = 1.0


def test_sample_defaults_brain_mask_to_ones():
    s = make_sample([[0.1, 0.2], [0.3, 0.4]], [0, 1])
    assert s.brain_mask.data.all()
    assert s.k == 2


def test_sample_rejects_single_member():
    with pytest.raises(EnsembleSizeError):
        make_sample([[0.1, 0.2]], [0, 1])


def test_sample_rejects_shape_mismatch():
    with pytest.raises(ShapeError, match="P001"):
        make_sample([[0.1, 0.2], [0.3, 0.4]], [0, 1, 1])


def _write_dataset(tmp_path, ks=(5, 5), gt_shape=None):
    samples = []
    for i, k in enumerate(ks):
        pid = f"P{i:03d}"
        paths = []
        for j in range(k):
            name = f"{pid}_m{j}.npy"
            save_array(Volume3D(np.full((2, 2, 2), 0.1 * (j + 1)), "probability"), tmp_path / name)
            paths.append(name)
        shape = gt_shape if (gt_shape and i == 1) else (2, 2, 2)
        save_array(Volume3D(np.zeros(shape, np.uint8), "binary"), tmp_path / f"{pid}_gt.npy")
        samples.append({"patient_id": pid, "member_prob_paths": paths,
                        "ground_truth_path": f"{pid}_gt.npy"})
    (tmp_path / "manifest.json").write_text(json.dumps({"version": 1, "samples": samples}))
    return tmp_path / "manifest.json"


def test_manifest_loads_in_order(tmp_path):
    samples = load_manifest(_write_dataset(tmp_path))
    assert [s.patient_id for s in samples] == ["P000", "P001"]
    assert all(isinstance(s, EnsembleSample) and s.k == 5 for s in samples)


def test_manifest_inconsistent_k(tmp_path):
    with pytest.raises(EnsembleSizeError):
        load_manifest(_write_dataset(tmp_path, ks=(5, 4)))


def test_manifest_shape_mismatch_names_patient(tmp_path):
    with pytest.raises(ShapeError, match="P001"):
        load_manifest(_write_dataset(tmp_path, gt_shape=(2, 2, 3)))


def test_manifest_duplicate_patient(tmp_path):
    path = _write_dataset(tmp_path)
    doc = json.loads(path.read_text())
    doc["samples"][1]["patient_id"] = "P000"
    path.write_text(json.dumps(doc))
    with pytest.raises(DuplicatePatientError):
        load_manifest(path)


def test_manifest_threaded_load_matches(tmp_path):
    path = _write_dataset(tmp_path, ks=(3, 3, 3))
    a = load_manifest(path)
    b = load_manifest(path, threads=3)
    assert [s.patient_id for s in a] == [s.patient_id for s in b]
    assert all(x.member_probs[1] == y.member_probs[1] for x, y in zip(a, b))
