"""Deterministic, platform-stable seed derivation."""

from __future__ import annotations

import hashlib


def derive_seed(*parts) -> int:
    """Stable 63-bit subseed from a tuple of ints/strings."""
    text = ":".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1
