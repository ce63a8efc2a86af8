import itertools
import math
from collections import deque

import numpy as np
import pytest

from segunc.errors import EnsembleSizeError, RangeError, ValidationError
from segunc.lesions import (FP, TP, aggregate_logsum, aggregate_mean,
                            classify_lesions, connected_components, ddu,
                            ideal_lesion_uncertainty, iou, lesion_scores,
                            random_lesion_uncertainty)
from segunc.voxel import ideal_voxel_uncertainty


def _offsets(connectivity):
    out = []
    for d in itertools.product((-1, 0, 1), repeat=3):
        n = sum(abs(x) for x in d)
        if n == 0:
            continue
        if connectivity == 6 and n > 1:
            continue
        if connectivity == 18 and n > 2:
            continue
        out.append(d)
    return out


def flood_fill_oracle(mask, connectivity):
    """Breadth-first labeling visiting voxels in flat order; returns sorted voxel lists."""
    shape = mask.shape
    seen = np.zeros(shape, bool)
    comps = []
    for idx in range(mask.size):
        start = np.unravel_index(idx, shape)
        if not mask[start] or seen[start]:
            continue
        seen[start] = True
        q, comp = deque([start]), []
        while q:
            z, y, x = q.popleft()
            comp.append(int(np.ravel_multi_index((z, y, x), shape)))
            for dz, dy, dx in _offsets(connectivity):
                n = (z + dz, y + dy, x + dx)
                if all(0 <= c < s for c, s in zip(n, shape)) and mask[n] and not seen[n]:
                    seen[n] = True
                    q.append(n)
        comps.append(sorted(comp))
    return comps


def _mask(shape, voxels):
    m = np.zeros(shape, np.uint8)
    for v in voxels:
        m[v] = 1
    return m


def test_empty_mask():
    assert len(connected_components(np.zeros((3, 3, 3), np.uint8))) == 0


def test_face_neighbours_join():
    ls = connected_components(_mask((3, 3, 3), [(1, 1, 1), (1, 1, 2)]))
    assert len(ls) == 1 and ls.components[0].size == 2


def test_opposite_corners_split():
    ls = connected_components(_mask((5, 5, 5), [(0, 0, 0), (4, 4, 4)]))
    assert [c.size for c in ls] == [1, 1]


@pytest.mark.parametrize("conn,expected", [(6, 2), (18, 1), (26, 1)])
def test_edge_neighbours_depend_on_connectivity(conn, expected):
    ls = connected_components(_mask((3, 3, 3), [(0, 0, 0), (0, 1, 1)]), conn)
    assert len(ls) == expected


def test_corner_neighbours_only_under_26():
    m = _mask((3, 3, 3), [(0, 0, 0), (1, 1, 1)])
    assert len(connected_components(m, 18)) == 2
    assert len(connected_components(m, 26)) == 1


def test_rejects_non_binary_and_bad_connectivity():
    with pytest.raises(RangeError):
        connected_components(np.full((2, 2, 2), 2))
    with pytest.raises(ValidationError):
        connected_components(np.zeros((2, 2, 2), np.uint8), 8)


@pytest.mark.parametrize("conn", [6, 18, 26])
def test_matches_flood_fill(conn, rng):
    for _ in range(60):
        shape = tuple(rng.integers(1, 7, size=3))
        mask = (rng.random(shape) < rng.uniform(0.1, 0.6)).astype(np.uint8)
        ls = connected_components(mask, conn)
        want = flood_fill_oracle(mask, conn)
        assert [c.voxels.tolist() for c in ls] == want
        assert [c.label for c in ls] == list(range(1, len(want) + 1))


def test_partition_and_stability(rng):
    mask = (rng.random((6, 6, 6)) < 0.4).astype(np.uint8)
    a = connected_components(mask)
    b = connected_components(mask)
    allv = np.concatenate([c.voxels for c in a])
    assert np.array_equal(np.sort(allv), np.flatnonzero(mask))
    assert allv.size == np.unique(allv).size
    assert [c.voxels.tolist() for c in a] == [c.voxels.tolist() for c in b]


def test_iou_basic():
    a = np.arange(8)
    assert iou(a, a) == 1.0
    assert iou(a, np.arange(10, 12)) == 0.0
    assert iou(a, np.arange(4)) == 0.5


def _two_lesion_case():
    shape = (1, 10, 10)
    truth = np.zeros(shape, np.uint8)
    truth[0, 0:2, 0:4] = 1          # 8 voxels
    truth[0, 8:10, 8:10] = 1        # unmatched truth lesion
    pred = np.zeros(shape, np.uint8)
    pred[0, 0:1, 0:4] = 1           # 4 of the 8: IoU 0.5
    pred[0, 5, 0:2] = 1             # disjoint FP
    return pred, truth


@pytest.mark.parametrize("fn_mode", ["zero-overlap", "unmatched"])
def test_classification_tp_fp_fn(fn_mode):
    pred, truth = _two_lesion_case()
    cls = classify_lesions(connected_components(pred), connected_components(truth), 0.25, fn_mode)
    assert cls.status == [TP, FP]
    assert cls.best_iou == [0.5, 0.0]
    assert (cls.tp, cls.fp, cls.fn) == (1, 1, 1)


def test_perfect_detection():
    _, truth = _two_lesion_case()
    ts = connected_components(truth)
    cls = classify_lesions(ts, ts)
    assert (cls.tp, cls.fp, cls.fn) == (2, 0, 0)


def test_low_overlap_fn_modes_differ():
    shape = (1, 1, 20)
    truth = np.zeros(shape, np.uint8)
    truth[0, 0, 0:10] = 1
    pred = np.zeros(shape, np.uint8)
    pred[0, 0, 9:10] = 1                  # IoU 1/10
    ps, ts = connected_components(pred), connected_components(truth)
    a = classify_lesions(ps, ts, 0.25, "zero-overlap")
    b = classify_lesions(ps, ts, 0.25, "unmatched")
    assert a.status == b.status == [FP]
    assert a.fn == 0 and b.fn == 1


def test_gamma_range():
    _, truth = _two_lesion_case()
    ts = connected_components(truth)
    for g in (0.0, 1.0, -0.1):
        with pytest.raises(RangeError):
            classify_lesions(ts, ts, g)


def test_aggregate_mean():
    u = np.array([0.2, 0.4, 0.9]).reshape(1, 1, 3)
    assert aggregate_mean(np.array([0, 1]), u) == pytest.approx(0.3)
    assert aggregate_mean(np.array([2]), u) == 0.9
    assert aggregate_mean(np.array([0, 1, 2]), np.full((1, 1, 3), 0.25)) == 0.25


def test_aggregate_logsum():
    u = np.array([math.exp(-1), math.exp(-1), 0.0, 1.0]).reshape(1, 1, 4)
    assert aggregate_logsum(np.array([0, 1]), u) == pytest.approx(-2.0)
    assert aggregate_logsum(np.array([2]), u) == pytest.approx(math.log(1e-8))
    assert aggregate_logsum(np.array([3]), u) == 0.0
    assert aggregate_logsum(np.array([0]), np.full((1, 1, 1), -0.5), shift=1.0) == pytest.approx(math.log(0.5))


def _lesion_and_mask():
    shape = (1, 4, 4)
    m = np.zeros(shape, np.uint8)
    m[0, 0:2, 0:4] = 1
    return connected_components(m).components[0], m


def test_ddu_full_agreement():
    les, m = _lesion_and_mask()
    assert ddu(les, [m, m, m]) == 0.0


def test_ddu_half_member():
    les, m = _lesion_and_mask()
    half = np.zeros_like(m)
    half[0, 0, 0:4] = 1
    assert ddu(les, [m, half]) == pytest.approx(0.25)


def test_ddu_member_misses():
    les, m = _lesion_and_mask()
    assert ddu(les, [m, m, m, m, np.zeros_like(m)]) == pytest.approx(0.2)


def test_ddu_order_invariant_and_uses_best_component():
    les, m = _lesion_and_mask()
    split = np.zeros_like(m)
    split[0, 0:2, 0:1] = 1       # IoU 2/8
    split[0, 0:2, 2:4] = 1       # IoU 4/8, the best match
    members = [m, split, np.zeros_like(m)]
    d = ddu(les, members)
    assert d == pytest.approx(1 - (1 + 0.5 + 0) / 3)
    for perm in itertools.permutations(members):
        assert ddu(les, list(perm)) == pytest.approx(d)


def test_ddu_errors():
    les, m = _lesion_and_mask()
    with pytest.raises(EnsembleSizeError):
        ddu(les, [m])
    with pytest.raises(ValidationError):
        ddu(les, [m, np.zeros((2, 4, 4), np.uint8)])


def test_ddu_zero_for_identical_members(rng):
    mask = (rng.random((6, 6, 6)) < 0.3).astype(np.uint8)
    ls = connected_components(mask)
    assert all(ddu(c, [mask] * 5) == 0.0 for c in ls)


def test_ideal_mean_zero_for_correct_prediction(rng):
    mask = (rng.random((5, 5, 5)) < 0.3).astype(np.uint8)
    u = ideal_voxel_uncertainty(mask, mask)
    assert all(aggregate_mean(c, u) == 0.0 for c in connected_components(mask))


def test_ideal_lesion_scores():
    from segunc.lesions import LesionClassification
    mk = lambda st: LesionClassification(list(range(1, len(st) + 1)), st, [0.0] * len(st), 0, 0.25)  # noqa: E731
    assert ideal_lesion_uncertainty(mk([TP, TP])).tolist() == [0, 0]
    assert ideal_lesion_uncertainty(mk([FP, FP])).tolist() == [1, 1]
    assert ideal_lesion_uncertainty(mk([TP, FP, TP])).tolist() == [0, 1, 0]


def test_random_lesion_scores():
    a = random_lesion_uncertainty(5, 3, "P001")
    assert np.array_equal(a, random_lesion_uncertainty(5, 3, "P001"))
    assert not np.array_equal(a, random_lesion_uncertainty(5, 3, "P002"))
    assert random_lesion_uncertainty(0, 3, "P001").size == 0
    assert a.min() >= 0 and a.max() < 1


def test_lesion_scores_nc_logsum_shift():
    les, m = _lesion_and_mask()
    ls = connected_components(m)
    u = {"nc": np.where(m, -0.75, 0.0)}
    out = lesion_scores(ls, ["logsum-nc", "mean_nc"], u)
    assert out["logsum-nc"][0] == pytest.approx(8 * math.log(0.25))
    assert out["mean-nc"][0] == pytest.approx(-0.75)
