import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from featxfer import (
    UNMATCHED,
    FeatureMap,
    ObjectMask,
    brute_force_match,
    correspondence_to_flow,
    cosine_similarity,
    masked_cosine_match,
)
from featxfer.core import CorrespondenceMap
from featxfer.errors import (
    ChannelMismatch,
    EmptyReferenceMask,
    IndexOutOfRange,
    LengthMismatch,
)

from conftest import full_mask, random_instance


class TestCosineSimilarity:
    def test_identical_vectors(self):
        assert cosine_similarity([3.0, 4.0], [3.0, 4.0]) == 1.0

    def test_orthogonal(self):
        assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_half_angle(self):
        # closed form: cos = 1/sqrt(2)
        assert cosine_similarity([1.0, 1.0], [1.0, 0.0]) == pytest.approx(
            0.70710678, abs=1e-6)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            cosine_similarity([1.0], [1.0, 2.0])

    def test_zero_vector_guard(self):
        assert cosine_similarity([0.0, 0.0], [1.0, 0.0]) == 0.0

    def test_antiparallel(self):
        assert cosine_similarity([1.0, 0.0], [-1.0, 0.0]) == -1.0


class TestMaskedCosineMatch:
    def test_identity_full_masks(self, rng):
        data = rng.standard_normal((4, 4, 3)).astype(np.float32)
        fmap = FeatureMap(data)
        corr = masked_cosine_match(fmap, fmap, full_mask(4, 4), full_mask(4, 4))
        assert np.array_equal(corr.entries.reshape(-1), np.arange(16))

    def test_crossed_pair(self):
        # hand evaluation: cosines are 0 across, 1 straight
        f_t = FeatureMap(np.array([[[1, 0], [0, 1]]], dtype=np.float32))
        f_r = FeatureMap(np.array([[[0, 1], [1, 0]]], dtype=np.float32))
        corr = masked_cosine_match(f_t, f_r, full_mask(1, 2), full_mask(1, 2))
        assert corr.entries.tolist() == [[1, 0]]

    def test_matches_brute_force_seeded(self):
        for seed in range(10):
            t, r, mt, mr = random_instance(seed, max_dim=8, max_channels=4)
            fast = masked_cosine_match(t, r, mt, mr)
            slow = brute_force_match(t, r, mt, mr)
            assert np.array_equal(fast.entries, slow.entries), f"seed {seed}"

    def test_empty_reference_mask(self, rng):
        f = FeatureMap(rng.standard_normal((2, 2, 2)).astype(np.float32))
        with pytest.raises(EmptyReferenceMask):
            masked_cosine_match(f, f, full_mask(2, 2), ObjectMask(np.zeros((2, 2), bool)))

    def test_channel_mismatch(self, rng):
        a = FeatureMap(rng.standard_normal((2, 2, 2)).astype(np.float32))
        b = FeatureMap(rng.standard_normal((2, 2, 3)).astype(np.float32))
        with pytest.raises(ChannelMismatch):
            masked_cosine_match(a, b, full_mask(2, 2), full_mask(2, 2))

    def test_mask_law(self):
        t, r, mt, mr = random_instance(99, max_dim=8)
        corr = masked_cosine_match(t, r, mt, mr)
        assert corr.consistent_with_mask(mt)
        matched = corr.entries[corr.entries != UNMATCHED]
        assert mr.bits.reshape(-1)[matched].all()

    def test_tie_breaks_to_lowest_index(self):
        # two identical reference pixels: the lower linear index must win
        t = FeatureMap(np.ones((1, 1, 2), dtype=np.float32))
        r = FeatureMap(np.ones((1, 3, 2), dtype=np.float32))
        corr = masked_cosine_match(t, r, full_mask(1, 1), full_mask(1, 3))
        assert corr.entries[0, 0] == 0
        slow = brute_force_match(t, r, full_mask(1, 1), full_mask(1, 3))
        assert slow.entries[0, 0] == 0

    def test_different_spatial_sizes(self, rng):
        t = FeatureMap(rng.standard_normal((2, 5, 3)).astype(np.float32))
        r = FeatureMap(rng.standard_normal((7, 3, 3)).astype(np.float32))
        corr = masked_cosine_match(t, r, full_mask(2, 5), full_mask(7, 3))
        assert corr.entries.shape == (2, 5)
        assert corr.entries.max() < 21

    def test_empty_target_mask_all_unmatched(self, rng):
        f = FeatureMap(rng.standard_normal((3, 3, 2)).astype(np.float32))
        corr = masked_cosine_match(f, f, ObjectMask(np.zeros((3, 3), bool)), full_mask(3, 3))
        assert (corr.entries == UNMATCHED).all()


class TestBruteForce:
    def test_single_candidate(self, rng):
        t = FeatureMap(rng.standard_normal((3, 3, 2)).astype(np.float32))
        r = FeatureMap(rng.standard_normal((3, 3, 2)).astype(np.float32))
        bits = np.zeros((3, 3), bool)
        bits[1, 2] = True  # linear index 5
        corr = brute_force_match(t, r, full_mask(3, 3), ObjectMask(bits))
        assert (corr.entries == 5).all()

    def test_identity(self, rng):
        data = rng.standard_normal((3, 3, 4)).astype(np.float32)
        f = FeatureMap(data)
        corr = brute_force_match(f, f, full_mask(3, 3), full_mask(3, 3))
        assert np.array_equal(corr.entries.reshape(-1), np.arange(9))


class TestScaleAndPermutationInvariance:
    def _unique_margin_instance(self, seed, h=5, w=5, c=4):
        # resample until every query's top-2 similarity gap is comfortable
        for attempt in range(20):
            rng = np.random.default_rng(seed * 1000 + attempt)
            t = FeatureMap(rng.standard_normal((h, w, c)).astype(np.float32))
            r = FeatureMap(rng.standard_normal((h, w, c)).astype(np.float32))
            tn = t.flat() / np.linalg.norm(t.flat(), axis=1, keepdims=True)
            rn = r.flat() / np.linalg.norm(r.flat(), axis=1, keepdims=True)
            sims = np.sort(tn @ rn.T, axis=1)
            if (sims[:, -1] - sims[:, -2]).min() > 1e-6:
                return t, r
        raise AssertionError("could not build unique-maximum instance")

    def test_positive_scaling_leaves_match(self):
        t, r = self._unique_margin_instance(3)
        rng = np.random.default_rng(42)
        scales = rng.uniform(0.1, 10.0, size=(r.height * r.width, 1)).astype(np.float32)
        scaled = FeatureMap((r.flat() * scales).reshape(r.data.shape))
        base = masked_cosine_match(t, r, full_mask(5, 5), full_mask(5, 5))
        after = masked_cosine_match(t, scaled, full_mask(5, 5), full_mask(5, 5))
        assert np.array_equal(base.entries, after.entries)

    def test_permutation_equivariance(self):
        t, r = self._unique_margin_instance(4)
        rng = np.random.default_rng(43)
        perm = rng.permutation(25)
        permuted = np.empty_like(r.flat())
        permuted[perm] = r.flat()
        r_perm = FeatureMap(permuted.reshape(r.data.shape))
        base = masked_cosine_match(t, r, full_mask(5, 5), full_mask(5, 5))
        after = masked_cosine_match(t, r_perm, full_mask(5, 5), full_mask(5, 5))
        assert np.array_equal(after.entries, perm[base.entries])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_property_oracle_equivalence(seed):
    t, r, mt, mr = random_instance(seed, max_dim=6, max_channels=4)
    fast = masked_cosine_match(t, r, mt, mr)
    slow = brute_force_match(t, r, mt, mr)
    assert np.array_equal(fast.entries, slow.entries)


class TestCorrespondenceToFlow:
    def test_identity_gives_zero_flow(self):
        corr = CorrespondenceMap(np.arange(6).reshape(2, 3))
        flow = correspondence_to_flow(corr, ref_width=3)
        assert flow.validity.all()
        assert (flow.displacement == 0).all()

    def test_all_to_origin(self):
        # every q maps to pixel (0,0) on a 2x2 grid: displacement (-x_q, -y_q)
        corr = CorrespondenceMap(np.zeros((2, 2), dtype=np.int64))
        flow = correspondence_to_flow(corr, ref_width=2)
        expected = np.array([[[0, 0], [-1, 0]],
                             [[0, -1], [-1, -1]]], dtype=np.float32)
        assert np.array_equal(flow.displacement, expected)

    def test_unmatched_pixel(self):
        corr = CorrespondenceMap(np.array([[3, UNMATCHED]]))
        flow = correspondence_to_flow(corr, ref_width=2)
        assert flow.validity.tolist() == [[True, False]]
        assert flow.displacement[0, 1].tolist() == [0.0, 0.0]

    def test_out_of_range_detected(self):
        corr = CorrespondenceMap(np.array([[4]]))
        with pytest.raises(IndexOutOfRange):
            correspondence_to_flow(corr, ref_width=2, ref_height=2)
        # without ref_height the bound is unknown and unchecked
        correspondence_to_flow(corr, ref_width=2)
