import itertools

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from segunc.errors import UndefinedTestError, ValidationError
from segunc.stats import bootstrap_se, wilcoxon_one_sided


def enumerate_p(a, b):
    """Upper-tail p-value by listing all 2**n sign patterns."""
    d = np.asarray(a, float) - np.asarray(b, float)
    d = d[d != 0]
    ranks = scipy.stats.rankdata(np.abs(d))
    w = ranks[d > 0].sum()
    hits = sum(1 for signs in itertools.product((0, 1), repeat=d.size)
               if np.dot(signs, ranks) >= w - 1e-9)
    return hits / 2 ** d.size


def test_bootstrap_constant_is_zero():
    r = bootstrap_se([0.42] * 17, repetitions=500)
    assert r.standard_error == 0.0 and r.mean == pytest.approx(0.42)


def test_bootstrap_bernoulli():
    r = bootstrap_se([0, 1] * 25, sample_size=50, repetitions=10_000, seed=1)
    assert abs(r.standard_error - 0.0707) <= 0.005


def test_bootstrap_deterministic_and_order_free(rng):
    v = rng.random(30)
    a = bootstrap_se(v, repetitions=2000, seed=9)
    assert a == bootstrap_se(v, repetitions=2000, seed=9)
    assert a.standard_error == bootstrap_se(v[::-1], repetitions=2000, seed=9).standard_error
    assert a.standard_error != bootstrap_se(v, repetitions=2000, seed=10).standard_error


def test_bootstrap_shrinks_with_sample_size(rng):
    v = rng.random(100)
    small = bootstrap_se(v, sample_size=10, repetitions=4000).standard_error
    big = bootstrap_se(v, sample_size=100, repetitions=4000).standard_error
    assert big < small


def test_bootstrap_errors():
    with pytest.raises(ValidationError):
        bootstrap_se([])
    with pytest.raises(ValidationError):
        bootstrap_se([1.0], sample_size=0)


def test_wilcoxon_all_positive_n10():
    r = wilcoxon_one_sided(np.arange(10) + 1.0, np.zeros(10))
    assert r.p_value == pytest.approx(2 ** -10, abs=1e-12)
    assert r.statistic == 55 and r.n_effective == 10 and r.method == "exact"


def test_wilcoxon_symmetric_pair():
    assert wilcoxon_one_sided([1.0, 0.0], [0.0, 1.0]).p_value == pytest.approx(0.75)


def test_wilcoxon_all_zero_is_undefined():
    with pytest.raises(UndefinedTestError):
        wilcoxon_one_sided([0.3, 0.4], [0.3, 0.4])


def test_wilcoxon_drops_zeros():
    r = wilcoxon_one_sided([1.0, 2.0, 3.0], [1.0, 1.0, 1.0])
    assert r.n_effective == 2 and r.p_value == pytest.approx(0.25)


def test_wilcoxon_length_mismatch():
    with pytest.raises(ValidationError):
        wilcoxon_one_sided([1.0], [1.0, 2.0])


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 10), st.integers(0, 2 ** 32 - 1))
def test_wilcoxon_matches_enumeration(n, seed):
    r = np.random.default_rng(seed)
    a = r.integers(0, 6, n) / 5.0        # coarse values create ties and zeros
    b = r.integers(0, 6, n) / 5.0
    if np.all(a == b):
        return
    assert wilcoxon_one_sided(a, b).p_value == pytest.approx(enumerate_p(a, b), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 20), st.integers(0, 2 ** 32 - 1))
def test_wilcoxon_complementary_without_ties(n, seed):
    r = np.random.default_rng(seed)
    a, b = r.random(n), r.random(n)
    p1 = wilcoxon_one_sided(a, b).p_value
    p2 = wilcoxon_one_sided(b, a).p_value
    # P(W >= w) + P(W <= w) = 1 + P(W = w) for continuous data
    assert p1 + p2 >= 1.0 - 1e-12


def test_wilcoxon_shift_monotone(rng):
    a, b = rng.random(15), rng.random(15)
    ps = [wilcoxon_one_sided(a + s, b).p_value for s in np.linspace(-0.5, 0.5, 11)]
    assert all(x >= y - 1e-12 for x, y in zip(ps, ps[1:]))


@pytest.mark.parametrize("n", [8, 20, 40])
def test_wilcoxon_agrees_with_scipy(n, rng):
    a, b = rng.random(n), rng.random(n)
    ours = wilcoxon_one_sided(a, b)
    method = "exact" if n <= 20 else "approx"
    ref = scipy.stats.wilcoxon(a, b, alternative="greater", method=method, correction=True)
    assert ours.p_value == pytest.approx(ref.pvalue, abs=1e-9)
    assert ours.method == ("exact" if n <= 20 else "normal")
