import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdcap.hdcore import (
    POPCOUNT_LUT,
    TieRule,
    bind,
    binarize,
    bundle_accumulate,
    hamming,
    hamming_batch,
    hamming_packed,
    normalized_hamming,
    pack,
    random_bipolar,
    unpack,
    zero_accumulator,
)

BETA = 50_000


def bipolar(rng, dims, n=None):
    return random_bipolar(rng, dims, n)


class TestBind:
    def test_self_bind_is_identity_vector(self, rng):
        a = bipolar(rng, 256)
        assert np.array_equal(bind(a, a), np.ones(256, dtype=np.int8))

    def test_all_plus_one_is_identity_element(self, rng):
        b = bipolar(rng, 256)
        assert np.array_equal(bind(np.ones(256, dtype=np.int8), b), b)

    def test_self_inverse(self, rng):
        a, b = bipolar(rng, 1024), bipolar(rng, 1024)
        assert np.array_equal(bind(bind(a, b), b), a)

    def test_bound_vector_near_orthogonal_to_inputs(self, rng):
        a, b = bipolar(rng, BETA), bipolar(rng, BETA)
        assert 0.49 <= normalized_hamming(bind(a, b), a) <= 0.51

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError, match="mismatch"):
            bind(bipolar(rng, 8), bipolar(rng, 9))

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_distance_preserved_under_binding(self, seed):
        r = np.random.default_rng(seed)
        a, b, c = (random_bipolar(r, 4096) for _ in range(3))
        assert hamming(bind(a, c), bind(b, c)) == hamming(a, b)


class TestBundle:
    def test_accumulate_into_zero_equals_vector(self, rng):
        v = bipolar(rng, 128)
        acc = bundle_accumulate(zero_accumulator(128), v)
        assert np.array_equal(acc, v.astype(np.int32))

    def test_accumulate_then_negation_cancels(self, rng):
        v = bipolar(rng, 128)
        acc = zero_accumulator(128)
        bundle_accumulate(acc, v)
        bundle_accumulate(acc, bind(v, np.full(128, -1, dtype=np.int8)))
        assert not acc.any()

    def test_bundle_stays_similar_to_members(self, rng):
        members = bipolar(rng, BETA, n=3)
        acc = zero_accumulator(BETA)
        for m in members:
            bundle_accumulate(acc, m)
        bundled = binarize(acc)
        assert normalized_hamming(bundled, members[0]) < 0.5

    def test_overflow_guard(self):
        acc = np.full(4, 2**31 - 1, dtype=np.int32)
        with pytest.raises(OverflowError):
            bundle_accumulate(acc, np.ones(4, dtype=np.int8))

    def test_dtype_guard(self, rng):
        with pytest.raises(ValueError, match="int32"):
            bundle_accumulate(np.zeros(8, dtype=np.int64), bipolar(rng, 8))


class TestBinarize:
    def test_tie_to_plus_one(self):
        acc = np.array([3, -2, 0], dtype=np.int32)
        assert np.array_equal(binarize(acc), np.array([1, -1, 1], dtype=np.int8))

    def test_tie_to_minus_one(self):
        acc = np.array([3, -2, 0], dtype=np.int32)
        assert np.array_equal(binarize(acc, TieRule.MINUS_ONE),
                              np.array([1, -1, -1], dtype=np.int8))

    def test_roundtrip_through_single_accumulate(self, rng):
        v = bipolar(rng, 512)
        assert np.array_equal(binarize(bundle_accumulate(zero_accumulator(512), v)), v)

    def test_odd_count_never_ties(self, rng):
        acc = bipolar(rng, 2048, n=1025).sum(axis=0, dtype=np.int32)
        assert not (acc == 0).any()
        out = binarize(acc)
        assert set(np.unique(out)) <= {-1, 1}


class TestPack:
    def test_all_plus_one_packs_to_ff(self):
        assert pack(np.ones(8, dtype=np.int8)).tolist() == [0xFF]

    def test_all_minus_one_packs_to_00(self):
        assert pack(np.full(8, -1, dtype=np.int8)).tolist() == [0x00]

    def test_bit_order_component_k_in_bit_k(self):
        v = np.full(8, -1, dtype=np.int8)
        v[1] = 1  # component 1 -> bit 1 -> byte value 2
        assert pack(v).tolist() == [2]

    def test_trailing_bits_zero(self, rng):
        v = bipolar(rng, 13)
        packed = pack(v)
        assert packed.shape == (2,)
        assert packed[1] >> 5 == 0

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), dims=st.integers(1, 4096))
    def test_pack_unpack_roundtrip(self, seed, dims):
        v = random_bipolar(np.random.default_rng(seed), dims)
        assert np.array_equal(unpack(pack(v), dims), v)

    def test_roundtrip_at_full_beta(self, rng):
        v = bipolar(rng, BETA)
        assert np.array_equal(unpack(pack(v), BETA), v)


class TestPopcountLut:
    def test_exhaustive_against_bin(self):
        for v in range(256):
            assert POPCOUNT_LUT[v] == bin(v).count("1")

    def test_recurrence(self):
        assert POPCOUNT_LUT[0] == 0
        assert POPCOUNT_LUT[255] == 8
        for v in range(1, 256):
            assert POPCOUNT_LUT[v] == POPCOUNT_LUT[v >> 1] + (v & 1)


class TestHamming:
    def test_self_distance_zero(self, rng):
        v = bipolar(rng, 512)
        assert hamming(v, v) == 0

    def test_full_flip_distance_beta(self, rng):
        v = bipolar(rng, 512)
        assert hamming(v, bind(v, np.full(512, -1, dtype=np.int8))) == 512

    def test_random_pair_near_half(self, rng):
        a, b = bipolar(rng, BETA), bipolar(rng, BETA)
        assert 0.49 <= hamming(a, b) / BETA <= 0.51

    def test_packed_identical_is_zero(self, rng):
        v = pack(bipolar(rng, 300))
        assert hamming_packed(v, v) == 0

    def test_lut_value_for_0xaa(self):
        assert POPCOUNT_LUT[0b10101010] == 4
        a = pack(np.array([1, -1, 1, -1, 1, -1, 1, -1], dtype=np.int8))
        b = pack(np.array([-1, 1, -1, 1, -1, 1, -1, 1], dtype=np.int8))
        assert hamming_packed(a, b) == 8  # XOR = 0xFF; 0xAA vs 0x55 patterns

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), dims=st.integers(1, 2048))
    def test_packed_equals_unpacked(self, seed, dims):
        r = np.random.default_rng(seed)
        a, b = random_bipolar(r, dims), random_bipolar(r, dims)
        assert hamming_packed(pack(a), pack(b)) == hamming(a, b)

    def test_packed_equals_unpacked_1000_pairs(self):
        r = np.random.default_rng(5)
        a = random_bipolar(r, 1024, n=1000)
        b = random_bipolar(r, 1024, n=1000)
        pa, pb = pack(a), pack(b)
        for i in range(1000):
            assert hamming_packed(pa[i], pb[i]) == hamming(a[i], b[i])


class TestHammingBatch:
    def test_row_and_its_flip(self, rng):
        v = bipolar(rng, 333)
        rows = pack(np.stack([v, -v]))
        out = hamming_batch(rows, pack(v))
        assert out.tolist() == [0, 333]

    def test_matches_scalar_loop(self, rng):
        rows = bipolar(rng, 1000, n=100)
        q = bipolar(rng, 1000)
        packed_rows, packed_q = pack(rows), pack(q)
        batch = hamming_batch(packed_rows, packed_q)
        loop = [hamming_packed(packed_rows[i], packed_q) for i in range(100)]
        assert batch.tolist() == loop

    def test_chunk_size_invariance(self, rng):
        rows = pack(bipolar(rng, 777, n=64))
        q = pack(bipolar(rng, 777))
        full = hamming_batch(rows, q)
        tiny = hamming_batch(rows, q, chunk_bytes=64)
        assert np.array_equal(full, tiny)

    def test_permuting_rows_permutes_outputs(self, rng):
        rows = bipolar(rng, 200, n=20)
        q = pack(bipolar(rng, 200))
        perm = rng.permutation(20)
        base = hamming_batch(pack(rows), q)
        shuffled = hamming_batch(pack(rows[perm]), q)
        assert np.array_equal(shuffled, base[perm])

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError, match="mismatch"):
            hamming_batch(pack(bipolar(rng, 64, n=4)), pack(bipolar(rng, 72)))


class TestNearOrthogonality:
    def test_hundred_random_pairs_within_five_sigma(self):
        r = np.random.default_rng(7)
        tol = 5 * 0.5 / np.sqrt(BETA)
        for _ in range(100):
            a, b = random_bipolar(r, BETA), random_bipolar(r, BETA)
            assert abs(normalized_hamming(a, b) - 0.5) <= tol

    def test_bundle_membership_bound(self):
        r = np.random.default_rng(13)
        threshold = 0.5 - 3 / np.sqrt(BETA)
        for trial in range(100):
            m = 3 + 2 * (trial % 16)  # odd sizes up to 33
            members = random_bipolar(r, BETA, n=m)
            bundled = binarize(members.sum(axis=0, dtype=np.int32))
            dists = (bundled != members).mean(axis=1)
            assert dists.max() < threshold
