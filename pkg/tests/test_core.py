import numpy as np
import pytest

from featxfer import (
    CorrespondenceMap,
    EmbeddingVector,
    FeatureMap,
    FlowMap,
    Histogram,
    KeypointSet,
    ObjectMask,
    SessionConfig,
    validate_pair,
)
from featxfer.errors import (
    ChannelMismatch,
    InvalidConfig,
    InvariantViolation,
    NonFiniteData,
)


def fm(arr, **kw):
    return FeatureMap(np.asarray(arr, dtype=np.float32), **kw)


class TestFeatureMap:
    def test_dims_and_layout(self):
        m = fm(np.arange(24).reshape(2, 3, 4))
        assert (m.height, m.width, m.channels) == (2, 3, 4)
        assert m.data.dtype == np.float32
        # row-major: pixel (x=1, y=0) is linear index 1
        assert np.array_equal(m.flat()[1], m.data[0, 1])

    def test_rejects_nan(self):
        bad = np.ones((2, 2, 1), dtype=np.float32)
        bad[0, 0, 0] = np.nan
        with pytest.raises(NonFiniteData):
            fm(bad)

    def test_rejects_wrong_rank(self):
        with pytest.raises(InvariantViolation):
            fm(np.zeros((2, 2)))

    def test_immutable(self):
        m = fm(np.zeros((2, 2, 1)))
        with pytest.raises(ValueError):
            m.data[0, 0, 0] = 1.0


class TestValidatePair:
    def test_same_channels_ok(self, rng):
        a = fm(rng.standard_normal((8, 8, 4)))
        b = fm(rng.standard_normal((8, 8, 4)))
        validate_pair(a, b)

    def test_channel_mismatch(self, rng):
        a = fm(rng.standard_normal((4, 4, 4)))
        b = fm(rng.standard_normal((4, 4, 8)))
        with pytest.raises(ChannelMismatch):
            validate_pair(a, b)

    def test_nan_detected(self):
        bad = np.ones((2, 2, 2), dtype=np.float32)
        bad[1, 1, 1] = np.nan
        a = fm(np.ones((2, 2, 2)))
        b = FeatureMap(bad, validate=False)
        with pytest.raises(NonFiniteData):
            validate_pair(a, b)

    def test_different_spatial_dims_allowed(self, rng):
        a = fm(rng.standard_normal((4, 6, 3)))
        b = fm(rng.standard_normal((8, 2, 3)))
        validate_pair(a, b)


class TestCorrespondenceMap:
    def test_mask_consistency(self):
        entries = np.array([[0, -1], [-1, 3]])
        corr = CorrespondenceMap(entries)
        assert corr.consistent_with_mask(ObjectMask(np.array([[1, 0], [0, 1]], dtype=bool)))
        assert not corr.consistent_with_mask(ObjectMask(np.ones((2, 2), dtype=bool)))

    def test_rejects_below_sentinel(self):
        with pytest.raises(InvariantViolation):
            CorrespondenceMap(np.array([[-2]]))


class TestFlowMap:
    def test_nonfinite_on_valid_pixel_rejected(self):
        disp = np.zeros((1, 2, 2), dtype=np.float32)
        disp[0, 0, 0] = np.inf
        with pytest.raises(NonFiniteData):
            FlowMap(disp, np.array([[True, False]]))
        # fine when the bad pixel is invalid
        FlowMap(disp, np.array([[False, True]]))


class TestSessionConfig:
    def test_defaults_valid(self):
        cfg = SessionConfig().validate()
        assert cfg.inject_active(42, 2)
        assert cfg.inject_active(100, 3)
        assert not cfg.inject_active(41, 2)
        assert not cfg.inject_active(50, 1)
        assert cfg.adain_active(82) and not cfg.adain_active(81)

    @pytest.mark.parametrize("kw", [
        dict(inject_t_range=(200, 10)),
        dict(inject_t_range=(50, 40)),
        dict(adain_t_range=(0, 10)),
        dict(readout_t=101),
        dict(epsilon=0.0),
        dict(total_steps=0),
    ])
    def test_invalid_configs(self, kw):
        with pytest.raises(InvalidConfig):
            SessionConfig(**kw).validate()


class TestSmallTypes:
    def test_histogram_normalize(self):
        h = Histogram(np.array([2.0, 2.0]), bins_per_channel=2)
        n = h.normalize()
        assert n.is_normalized()
        assert np.allclose(n.bins, [0.5, 0.5])

    def test_keypoints_validation(self):
        with pytest.raises(InvariantViolation):
            KeypointSet([(0, 0)], [2], -1.0, [0.5])
        with pytest.raises(InvariantViolation):
            KeypointSet([(0, 0)], [2], 1.0, [0.0])
        ks = KeypointSet([(0, 0), (1, 1)], [2, 0], 1.0, [0.5, 0.5])
        assert len(ks) == 2

    def test_embedding_rejects_zero(self):
        with pytest.raises(InvariantViolation):
            EmbeddingVector(np.zeros(4))
