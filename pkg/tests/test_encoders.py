import numpy as np
import pytest

from hdcap.encoders import (
    CaptionHiddenStates,
    PatchFeatures,
    all_plus_one,
    combine,
    encode_caption_positions,
    encode_image,
)
from hdcap.hdcore import bind, normalized_hamming, random_bipolar
from hdcap.lsh import ROLE_CAPTION, ROLE_IMAGE, LshProjector, positional_codes, project

BETA = 8192
D_I = 24
D_C = 32
N_P = 9

PROJ_IMG = LshProjector(21, D_I, BETA, ROLE_IMAGE)
PROJ_CAP = LshProjector(22, D_C, BETA, ROLE_CAPTION)
CODES = positional_codes(23, N_P, BETA)


def make_patches(rng, n_p=N_P):
    return PatchFeatures(rng.standard_normal((n_p, D_I)))


def make_hidden(rng, n_c=5):
    data = rng.standard_normal((n_c, D_C)).astype(np.float32)
    return CaptionHiddenStates(data, tuple(range(n_c)))


class TestEncodeImage:
    def test_single_patch_is_plain_binding(self, rng):
        feats = make_patches(rng, n_p=1)
        out = encode_image(feats, PROJ_IMG, CODES[:1])
        expected = bind(CODES[0], project(PROJ_IMG, feats.data[0]))
        assert np.array_equal(out, expected)

    def test_deterministic(self, rng):
        feats = make_patches(rng)
        assert np.array_equal(encode_image(feats, PROJ_IMG, CODES),
                              encode_image(feats, PROJ_IMG, CODES))

    def test_patch_count_must_match_codes(self, rng):
        with pytest.raises(ValueError, match="patch count"):
            encode_image(make_patches(rng, n_p=4), PROJ_IMG, CODES)

    def test_rejects_caption_projector(self, rng):
        with pytest.raises(ValueError, match="role"):
            encode_image(make_patches(rng), PROJ_CAP, CODES)

    def test_permutation_sensitive(self, rng):
        # Swapping two distinct patches across positions changes the code.
        for _ in range(20):
            feats = make_patches(rng)
            swapped = feats.data.copy()
            swapped[[0, 1]] = swapped[[1, 0]]
            a = encode_image(feats, PROJ_IMG, CODES)
            b = encode_image(PatchFeatures(swapped), PROJ_IMG, CODES)
            assert (a != b).sum() > 0

    def test_odd_patch_count_tie_free(self, rng):
        from hdcap.hdcore import TieRule

        feats = make_patches(rng)  # n_p = 9, odd
        plus = encode_image(feats, PROJ_IMG, CODES, TieRule.PLUS_ONE)
        minus = encode_image(feats, PROJ_IMG, CODES, TieRule.MINUS_ONE)
        assert np.array_equal(plus, minus)

    def test_shared_patch_brings_encodings_closer(self):
        # Two images sharing one patch at the same position stay closer
        # than fully independent images, on average.
        rng = np.random.default_rng(17)
        shared_dists, random_dists = [], []
        for _ in range(50):
            a = rng.standard_normal((N_P, D_I))
            b = rng.standard_normal((N_P, D_I))
            b_shared = b.copy()
            b_shared[4] = a[4]
            ha = encode_image(PatchFeatures(a), PROJ_IMG, CODES)
            shared_dists.append(normalized_hamming(
                ha, encode_image(PatchFeatures(b_shared), PROJ_IMG, CODES)))
            random_dists.append(normalized_hamming(
                ha, encode_image(PatchFeatures(b), PROJ_IMG, CODES)))
        assert np.mean(shared_dists) < np.mean(random_dists)


class TestEncodeCaptionPositions:
    def test_identical_rows_identical_hypervectors(self):
        row = np.random.default_rng(3).standard_normal(D_C).astype(np.float32)
        hidden = CaptionHiddenStates(np.stack([row, row]), (1, 2))
        out = encode_caption_positions(hidden, PROJ_CAP)
        assert np.array_equal(out[0], out[1])

    def test_shape(self, rng):
        out = encode_caption_positions(make_hidden(rng, n_c=2), PROJ_CAP)
        assert out.shape == (2, BETA)

    def test_rejects_image_projector(self, rng):
        with pytest.raises(ValueError, match="role"):
            encode_caption_positions(make_hidden(rng), PROJ_IMG)

    def test_small_perturbation_flips_few_bits(self):
        rng = np.random.default_rng(29)
        base = rng.standard_normal(D_C)
        flips = []
        for _ in range(20):
            delta = rng.standard_normal(D_C)
            delta *= 0.01 * np.linalg.norm(base) / np.linalg.norm(delta)
            hidden = CaptionHiddenStates(np.stack([base, base + delta]), (0, 1))
            hv = encode_caption_positions(hidden, PROJ_CAP)
            flips.append(normalized_hamming(hv[0], hv[1]))
        assert max(flips) < 0.05

    def test_causality_pass_through(self, toy_world):
        # With a causal provider, hypervector i ignores later tokens.
        proj = LshProjector(22, toy_world.config.d_c, BETA, ROLE_CAPTION)
        ids_a = list(toy_world.caption_ids(0))
        ids_b = list(ids_a)
        ids_b[-2] = toy_world.word_to_id["snow"]
        ha, _ = toy_world.encode_tokens(ids_a)
        hb, _ = toy_world.encode_tokens(ids_b)
        hv_a = encode_caption_positions(
            CaptionHiddenStates(ha, tuple(ids_a)), proj)
        hv_b = encode_caption_positions(
            CaptionHiddenStates(hb, tuple(ids_b)), proj)
        assert np.array_equal(hv_a[: len(ids_a) - 2], hv_b[: len(ids_a) - 2])


class TestCombine:
    def test_identity(self, rng):
        v = random_bipolar(rng, 64)
        assert np.array_equal(combine(v, all_plus_one(64)), v)

    def test_unbinding_recovers_image(self, rng):
        img, cap = random_bipolar(rng, 512), random_bipolar(rng, 512)
        assert np.array_equal(bind(combine(img, cap), cap), img)

    def test_near_orthogonal_to_both_inputs(self, rng):
        img, cap = random_bipolar(rng, 50_000), random_bipolar(rng, 50_000)
        out = combine(img, cap)
        assert 0.49 <= normalized_hamming(out, img) <= 0.51
        assert 0.49 <= normalized_hamming(out, cap) <= 0.51


class TestTypes:
    def test_hidden_needs_two_positions(self):
        with pytest.raises(ValueError, match="2 positions"):
            CaptionHiddenStates(np.zeros((1, 4), dtype=np.float32), (0,))

    def test_hidden_row_id_alignment(self):
        with pytest.raises(ValueError, match="token ids"):
            CaptionHiddenStates(np.zeros((3, 4), dtype=np.float32), (0, 1))

    def test_patches_must_be_2d(self):
        with pytest.raises(ValueError, match="2-D"):
            PatchFeatures(np.zeros(5))
