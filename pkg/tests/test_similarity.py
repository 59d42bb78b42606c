from __future__ import annotations

import pytest

from sbo.identifiers import ImageHash
from sbo.similarity import average_hash, image_distance, levenshtein, text_similarity

from .oracles import levenshtein_matrix, random_text


def test_similarity_identity():
    assert text_similarity("abc", "abc") == 1.0


def test_similarity_kitten_sitting():
    # levenshtein("kitten", "sitting") = 3, so 1 - 3/7
    assert levenshtein_matrix("kitten", "sitting") == 3
    assert text_similarity("kitten", "sitting") == pytest.approx(1 - 3 / 7, abs=1e-12)


def test_similarity_one_char_off_nine():
    assert levenshtein_matrix("johnsmith", "jonsmith") == 1
    assert text_similarity("johnsmith", "jonsmith") == pytest.approx(1 - 1 / 9, abs=1e-12)


def test_similarity_empty_rules():
    assert text_similarity("", "") == 1.0
    assert text_similarity("", "abc") == 0.0
    assert text_similarity("abc", "") == 0.0


def test_similarity_matches_matrix_oracle(rng):
    for _ in range(2000):
        a = random_text(rng, 12)
        b = random_text(rng, 12)
        assert levenshtein(a, b) == levenshtein_matrix(a, b)


def test_similarity_symmetric(rng):
    for _ in range(500):
        a = random_text(rng, 10)
        b = random_text(rng, 10)
        assert text_similarity(a, b) == text_similarity(b, a)


def test_similarity_one_iff_equal(rng):
    for _ in range(500):
        a = random_text(rng, 8)
        b = random_text(rng, 8)
        if text_similarity(a, b) == 1.0:
            assert a == b
        if a == b:
            assert text_similarity(a, b) == 1.0


def test_distance_triangle_inequality(rng):
    for _ in range(400):
        a, b, c = (random_text(rng, 8) for _ in range(3))
        assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)


def test_image_distance_examples():
    h = ImageHash(0x0123456789ABCDEF)
    assert image_distance(h, h) == 0
    assert image_distance(h, ImageHash(h.bits ^ 0xFFFFFFFFFFFFFFFF)) == 64
    assert image_distance(ImageHash(0x0F0F0F0F0F0F0F0F),
                          ImageHash(0x0F0F0F0F0F0F0F00)) == 4


def test_image_distance_symmetric_zero_iff_equal(rng):
    for _ in range(200):
        a = ImageHash(rng.getrandbits(64))
        b = ImageHash(rng.getrandbits(64))
        assert image_distance(a, b) == image_distance(b, a)
        assert (image_distance(a, b) == 0) == (a == b)


def test_average_hash_mean_threshold():
    rows = [[0] * 8, [255] * 8] * 4
    hashed = average_hash(rows)
    # row-major, first pixel most significant: dark rows 0x00, bright rows 0xff
    assert hashed.to_hex() == "00ff00ff00ff00ff"


def test_average_hash_flat_grid_is_zero():
    assert average_hash([[7] * 8] * 8).bits == 0  # nothing exceeds the mean


def test_average_hash_rejects_bad_grid():
    with pytest.raises(ValueError):
        average_hash([[0] * 8] * 7)
    with pytest.raises(ValueError):
        average_hash([[0] * 7] * 8)


def test_average_hash_two_flipped_pixels():
    base = [[0] * 8, [255] * 8] * 4
    tweaked = [row[:] for row in base]
    tweaked[1][2] = 0
    tweaked[1][6] = 0
    assert image_distance(average_hash(base), average_hash(tweaked)) == 2
