"""Deterministic sub-seed derivation for multi-stage experiments."""

from __future__ import annotations

import hashlib


def derive_seed(master_seed: int, *labels: str) -> int:
    """Derive a child seed from a master seed and a label path.

    Stable across platforms and runs: sha256 of the master seed joined with
    the labels, truncated to 63 bits.
    """
    key = "|".join([str(int(master_seed)), *labels])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1
