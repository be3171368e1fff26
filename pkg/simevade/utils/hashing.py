"""Stable 64-bit hashing used for seeds, total-memory reads and feature hashing."""

import hashlib

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One round of the splitmix64 finaliser."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def hash64(*parts: int | str) -> int:
    """Mix integers and strings into one 64-bit value, stable across processes."""
    acc = 0x2545F4914F6CDD1D
    for part in parts:
        if isinstance(part, str):
            part = stable_str_hash(part)
        acc = splitmix64(acc ^ (part & MASK64))
    return acc


def stable_str_hash(text: str) -> int:
    """64-bit digest of a string (Python's hash() is salted per process)."""
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_seed(seed: int, function_id: str) -> int:
    """Per-function seed: base seed XOR a stable hash of the id."""
    return (seed ^ stable_str_hash(function_id)) & MASK64
