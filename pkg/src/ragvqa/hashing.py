"""Deterministic 64-bit mixing used everywhere reproducibility matters.

The mixer is splitmix64; together with blake2b text digests it gives the
same stream on every platform, which keeps mock backends, subsampling and
synthetic fixtures bit-stable across runs and machines.
"""

import hashlib

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One splitmix64 step: advance by the golden gamma and finalize."""
    z = (x + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


def mix(*parts: int) -> int:
    """Fold any number of integer parts into one 64-bit value."""
    state = 0
    for p in parts:
        state = splitmix64((state ^ p) & _MASK)
    return state


def text_key(text: str) -> int:
    """Stable 64-bit key for a string (blake2b, platform-independent)."""
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def bytes_key(data: bytes) -> int:
    digest = hashlib.blake2b(data, digest_size=8).digest()
    return int.from_bytes(digest, "big")


def unit_float(x: int) -> float:
    """Map a 64-bit value to [0, 1) using the top 53 bits."""
    return (x >> 11) / float(1 << 53)
