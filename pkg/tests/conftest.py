import numpy as np
import pytest

from featxfer import FeatureMap, ObjectMask


def random_instance(seed, max_dim=16, max_channels=8, same_dims=False):
    """Seeded random (target, reference, m_target, m_ref) matching instance.

    The reference mask is always non-empty; the target mask may be anything.
    """
    rng = np.random.default_rng(seed)
    c = int(rng.integers(1, max_channels + 1))
    ht, wt = (int(rng.integers(1, max_dim + 1)) for _ in range(2))
    if same_dims:
        hr, wr = ht, wt
    else:
        hr, wr = (int(rng.integers(1, max_dim + 1)) for _ in range(2))
    target = FeatureMap(rng.standard_normal((ht, wt, c)).astype(np.float32))
    reference = FeatureMap(rng.standard_normal((hr, wr, c)).astype(np.float32))
    m_target = ObjectMask(rng.random((ht, wt)) < rng.uniform(0.2, 1.0))
    ref_bits = rng.random((hr, wr)) < rng.uniform(0.2, 1.0)
    if not ref_bits.any():
        ref_bits[0, 0] = True
    m_ref = ObjectMask(ref_bits)
    return target, reference, m_target, m_ref


def full_mask(h, w):
    return ObjectMask(np.ones((h, w), dtype=bool))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
