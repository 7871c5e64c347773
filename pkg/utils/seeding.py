"""Seed derivation: every stochastic stage gets its own seed hashed from the master seed."""

import hashlib
from typing import Union


def derive_seed(master_seed: int, *parts: Union[int, str]) -> int:
    """
    Derive a 64-bit seed from the master seed and a path of labels.

    derive_seed(7, "rep", 3) is stable across runs and platforms, so a reported
    per-repetition seed can be replayed on its own.
    """
    text = ":".join([str(int(master_seed))] + [str(p) for p in parts])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")
