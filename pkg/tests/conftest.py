import numpy as np
import pytest

from segunc.volume import EnsembleSample, Volume3D


def make_sample(members, truth, brain=None, patient_id="P001"):
    """Build an EnsembleSample from plain arrays; 1D inputs become (1, 1, n) volumes."""
    def vol(a, kind):
        a = np.asarray(a)
        if a.ndim == 1:
            a = a.reshape(1, 1, -1)
        return Volume3D(a, kind)

    return EnsembleSample(
        patient_id,
        tuple(vol(m, "probability") for m in members),
        vol(truth, "binary"),
        None if brain is None else vol(brain, "binary"),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
