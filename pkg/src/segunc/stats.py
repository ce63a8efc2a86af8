"""Bootstrap standard errors and one-sided paired Wilcoxon signed-rank tests."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr
from scipy.stats import rankdata

from .errors import UndefinedTestError, ValidationError

EXACT_MAX_N = 20


@dataclass
class BootstrapResult:
    mean: float
    standard_error: float
    sample_size: int
    repetitions: int
    seed: int


def bootstrap_se(values, sample_size=50, repetitions=10_000, seed=0):
    """Bootstrap standard error of the mean.

    Each repetition draws ``sample_size`` values with replacement and records
    their mean; the standard error is the (population) standard deviation of
    those means. Values are sorted before resampling so the result does not
    depend on input order.
    """
    v = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    if v.size == 0:
        raise ValidationError("bootstrap needs at least one value")
    if sample_size < 1 or repetitions < 1:
        raise ValidationError("sample_size and repetitions must be >= 1")
    rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
    idx = rng.integers(0, v.size, size=(int(repetitions), int(sample_size)))
    means = v[idx].mean(axis=1)
    se = float(np.std(means))
    if np.all(v == v[0]):
        se = 0.0
    return BootstrapResult(float(v.mean()), se, int(sample_size), int(repetitions), int(seed))


@dataclass
class WilcoxonResult:
    statistic: float
    p_value: float
    n_effective: int
    alternative: str = "greater"
    method: str = "exact"


def _exact_upper_tail(ranks, w_plus):
    """P(W+ >= w_plus) under the null, by counting sign assignments.

    Ranks may be tie-averaged (multiples of 0.5); they are doubled to
    integers and the 2**n subset-sum distribution is built by dynamic
    programming.
    """
    r2 = np.rint(np.asarray(ranks) * 2).astype(np.int64)
    total = int(r2.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in r2:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:total + 1 - r]
        counts = counts + shifted
    target = int(np.rint(w_plus * 2))
    hits = int(sum(counts[target:]))
    return hits / 2 ** len(r2)


def wilcoxon_one_sided(a, b, exact_max_n=EXACT_MAX_N):
    """Paired signed-rank test of ``median(a - b) > 0``.

    Zero differences are dropped. Ties in ``|d|`` get average ranks. For
    ``n_effective <= exact_max_n`` the p-value comes from the full
    sign-flip distribution; above that, a normal approximation with tie
    correction and continuity correction is used.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size != b.size:
        raise ValidationError(f"paired samples differ in length: {a.size} vs {b.size}")
    if a.size == 0:
        raise ValidationError("paired samples are empty")
    d = a - b
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise UndefinedTestError("all paired differences are zero")
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if n <= exact_max_n:
        p = _exact_upper_tail(ranks, w_plus)
        method = "exact"
    else:
        mean = n * (n + 1) / 4.0
        _, t = np.unique(np.abs(d), return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(t ** 3 - t)) / 48.0
        z = (w_plus - mean - 0.5) / np.sqrt(var)
        p = float(ndtr(-z))
        method = "normal"
    return WilcoxonResult(w_plus, float(min(1.0, max(0.0, p))), int(n), "greater", method)
