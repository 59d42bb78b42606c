"""Text and image similarity metrics used by the matching engine."""

from __future__ import annotations

from typing import Sequence

from .identifiers import ImageHash


def levenshtein(a: str, b: str) -> int:
    """Edit distance with unit-cost insert/delete/substitute."""
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            cost = 0 if ca == cb else 1
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost))
        previous = current
    return previous[-1]


def text_similarity(a: str, b: str) -> float:
    """1 - levenshtein(a, b) / max(|a|, |b|); both empty -> 1.0, one empty -> 0.0."""
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / longest


def image_distance(a: ImageHash, b: ImageHash) -> int:
    """Hamming distance between two 64-bit hashes, in [0, 64]."""
    return (a.bits ^ b.bits).bit_count()


def average_hash(pixels: Sequence[Sequence[int]]) -> ImageHash:
    """Average-hash an 8x8 grayscale grid: bit set iff pixel > grid mean.

    Bits are assigned row-major, first pixel in the most significant position.
    """
    if len(pixels) != 8 or any(len(row) != 8 for row in pixels):
        raise ValueError("expected an 8x8 pixel grid")
    flat = [int(v) for row in pixels for v in row]
    mean = sum(flat) / 64.0
    bits = 0
    for value in flat:
        bits = (bits << 1) | (1 if value > mean else 0)
    return ImageHash(bits)
