import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from queryguard.core import (
    PERCEPTUAL_BITS,
    WINDOW_HASH,
    DenseEmbedding,
    Fingerprint,
    HashSignature,
    ImageTensor,
    QueryRecord,
    cosine_similarity,
    hash_similarity,
)
from queryguard.errors import ContractViolation


def unit_vectors(dim=8):
    return (
        st.lists(st.floats(-10, 10), min_size=dim, max_size=dim)
        .map(np.array)
        .filter(lambda v: np.linalg.norm(v) > 1e-3)
    )


class TestImageTensor:
    def test_valid_roundtrip(self):
        data = np.linspace(0, 1, 2 * 3 * 3).reshape(2, 3, 3)
        img = ImageTensor.from_array(data)
        assert img.height == 2 and img.width == 3 and img.channels == 3
        assert np.array_equal(img.data, data)

    def test_rejects_out_of_range(self):
        with pytest.raises(ContractViolation):
            ImageTensor.from_array(np.full((2, 2, 1), 1.5))
        with pytest.raises(ContractViolation):
            ImageTensor.from_array(np.full((2, 2, 1), -0.1))

    def test_rejects_non_finite(self):
        bad = np.zeros((2, 2, 1))
        bad[0, 0, 0] = np.nan
        with pytest.raises(ContractViolation):
            ImageTensor.from_array(bad)

    def test_rejects_bad_channel_count(self):
        with pytest.raises(ContractViolation):
            ImageTensor.from_array(np.zeros((2, 2, 4)))

    def test_rejects_length_mismatch(self):
        with pytest.raises(ContractViolation):
            ImageTensor(height=2, width=2, channels=1, data=np.zeros(5))

    def test_data_is_immutable(self):
        img = ImageTensor.from_array(np.zeros((2, 2, 1)))
        with pytest.raises(ValueError):
            img.data[0, 0, 0] = 1.0


class TestDenseEmbedding:
    def test_normalizes_at_construction(self):
        emb = DenseEmbedding(values=np.array([3.0, 4.0]))
        assert np.allclose(np.linalg.norm(emb.as_float64()), 1.0, atol=1e-6)

    def test_half_precision_promotes_for_arithmetic(self):
        emb = DenseEmbedding(
            values=np.random.default_rng(1).standard_normal(512), precision="half"
        )
        assert emb.values.dtype == np.float16
        assert emb.as_float64().dtype == np.float64
        assert abs(np.linalg.norm(emb.as_float64()) - 1.0) <= 1e-4

    def test_half_precision_worst_case_stays_near_unit(self):
        # all-equal coordinates round systematically; the bound is f16 ulp scale
        emb = DenseEmbedding(values=np.ones(512), precision="half")
        assert abs(np.linalg.norm(emb.as_float64()) - 1.0) <= 7.5e-4

    def test_rejects_zero_vector(self):
        with pytest.raises(ContractViolation):
            DenseEmbedding(values=np.zeros(4))


class TestCosineSimilarity:
    def test_identity_is_one(self):
        e = DenseEmbedding(values=np.array([0.3, -2.0, 5.0]))
        assert cosine_similarity(e, e) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_is_zero(self):
        a = DenseEmbedding(values=np.array([1.0, 0.0]))
        b = DenseEmbedding(values=np.array([0.0, 1.0]))
        assert cosine_similarity(a, b) == 0.0

    def test_45_degrees(self):
        a = DenseEmbedding(values=np.array([1.0, 1.0]) / np.sqrt(2))
        b = DenseEmbedding(values=np.array([1.0, 0.0]))
        assert cosine_similarity(a, b) == pytest.approx(0.7071, abs=1e-4)

    def test_dimension_mismatch(self):
        a = DenseEmbedding(values=np.ones(3))
        b = DenseEmbedding(values=np.ones(4))
        with pytest.raises(ContractViolation):
            cosine_similarity(a, b)

    @given(unit_vectors(), st.floats(0.1, 100.0))
    @settings(max_examples=50, deadline=None)
    def test_invariant_to_positive_scaling(self, v, scale):
        a = DenseEmbedding(values=v)
        b = DenseEmbedding(values=v * scale)
        assert cosine_similarity(a, b) == pytest.approx(1.0, abs=1e-9)

    @given(unit_vectors(), unit_vectors())
    @settings(max_examples=50, deadline=None)
    def test_symmetric_and_bounded(self, u, v):
        a = DenseEmbedding(values=u)
        b = DenseEmbedding(values=v)
        sab = cosine_similarity(a, b)
        assert sab == cosine_similarity(b, a)
        assert -1.0 - 1e-6 <= sab <= 1.0 + 1e-6


class TestHashSimilarity:
    def test_window_hash_identity(self):
        s = HashSignature(kind=WINDOW_HASH, entries=np.arange(50, dtype=np.uint64))
        assert hash_similarity(s, s) == 1.0

    def test_window_hash_disjoint(self):
        a = HashSignature(kind=WINDOW_HASH, entries=np.arange(50, dtype=np.uint64))
        b = HashSignature(kind=WINDOW_HASH, entries=np.arange(50, 100, dtype=np.uint64))
        assert hash_similarity(a, b) == 0.0

    def test_window_hash_partial_overlap(self):
        a = HashSignature(kind=WINDOW_HASH, entries=np.arange(50, dtype=np.uint64))
        b = HashSignature(kind=WINDOW_HASH, entries=np.arange(25, 75, dtype=np.uint64))
        assert hash_similarity(a, b) == pytest.approx(0.5)

    def test_small_signature_identity_still_one(self):
        s = HashSignature(kind=WINDOW_HASH, entries=np.arange(7, dtype=np.uint64))
        assert hash_similarity(s, s) == 1.0

    def test_bits_hand_count(self):
        a = HashSignature(kind=PERCEPTUAL_BITS, bits=np.array([1, 0, 1, 1, 0], np.uint8))
        b = HashSignature(kind=PERCEPTUAL_BITS, bits=np.array([1, 0, 0, 1, 0], np.uint8))
        assert hash_similarity(a, b) == pytest.approx(0.8)

    def test_bits_identity(self):
        a = HashSignature(kind=PERCEPTUAL_BITS, bits=np.array([1, 0, 1], np.uint8))
        assert hash_similarity(a, a) == 1.0

    def test_kind_mismatch(self):
        a = HashSignature(kind=WINDOW_HASH, entries=np.arange(5, dtype=np.uint64))
        b = HashSignature(kind=PERCEPTUAL_BITS, bits=np.array([1, 0], np.uint8))
        with pytest.raises(ContractViolation):
            hash_similarity(a, b)

    def test_bit_length_mismatch(self):
        a = HashSignature(kind=PERCEPTUAL_BITS, bits=np.array([1, 0], np.uint8))
        b = HashSignature(kind=PERCEPTUAL_BITS, bits=np.array([1, 0, 1], np.uint8))
        with pytest.raises(ContractViolation):
            hash_similarity(a, b)

    @given(st.lists(st.integers(0, 2**63), min_size=1, max_size=50),
           st.lists(st.integers(0, 2**63), min_size=1, max_size=50))
    @settings(max_examples=50, deadline=None)
    def test_window_hash_symmetric_in_unit_interval(self, xs, ys):
        a = HashSignature(kind=WINDOW_HASH, entries=np.array(xs, dtype=np.uint64))
        b = HashSignature(kind=WINDOW_HASH, entries=np.array(ys, dtype=np.uint64))
        sab = hash_similarity(a, b)
        assert sab == hash_similarity(b, a)
        assert 0.0 <= sab <= 1.0


class TestFingerprintAndRecord:
    def test_exactly_one_variant(self):
        emb = DenseEmbedding(values=np.ones(4))
        sig = HashSignature(kind=PERCEPTUAL_BITS, bits=np.array([1], np.uint8))
        with pytest.raises(ContractViolation):
            Fingerprint(dense=emb, signature=sig)
        with pytest.raises(ContractViolation):
            Fingerprint()
        assert Fingerprint(dense=emb).kind == "dense"
        assert Fingerprint(signature=sig).kind == PERCEPTUAL_BITS

    def test_query_record_validation(self):
        img = ImageTensor.from_array(np.zeros((2, 2, 1)))
        with pytest.raises(ContractViolation):
            QueryRecord(user_id="", seq=0, image=img)
        with pytest.raises(ContractViolation):
            QueryRecord(user_id="u", seq=-1, image=img)
