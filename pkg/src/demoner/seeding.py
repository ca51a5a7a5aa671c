"""Deterministic derived seeds for independent random streams."""

from __future__ import annotations

import hashlib


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from any printable parts.

    Used to give every stochastic stage (selection, permutation sampling,
    ensemble members) its own stream while staying reproducible across runs
    and platforms.
    """
    text = "\x1f".join(repr(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1
