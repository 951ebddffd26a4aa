"""Keyed deterministic random streams.

Every stochastic component (augmentation, dropout, shuffling, synthetic data)
draws from a stream constructed from integer key material instead of sharing
one global generator. Equal material always yields the identical draw
sequence; distinct material yields statistically independent streams. This
keeps runs reproducible regardless of evaluation order and lets components be
skipped (e.g. augmentation disabled) without shifting anyone else's draws.
"""

from __future__ import annotations

import numpy as np

# Domain tags keep key material from different consumers disjoint. They are
# always the second element of the material tuple, right after the global seed.
DOMAIN_AUGMENT = 1
DOMAIN_DROPOUT = 2
DOMAIN_SHUFFLE = 3
DOMAIN_INIT = 4
DOMAIN_SYNTH = 5
DOMAIN_AUDIT = 6


class RngStream:
    """A random stream fully determined by its integer key material."""

    __slots__ = ("material",)

    def __init__(self, *material: int):
        mat = tuple(int(m) for m in material)
        if not mat:
            raise ValueError("key material must not be empty")
        if any(m < 0 for m in mat):
            raise ValueError("key material must be non-negative")
        self.material = mat

    def child(self, *extra: int) -> "RngStream":
        """Derive a sub-stream by appending key material."""
        return RngStream(*self.material, *extra)

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of this stream."""
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.material)))

    def __repr__(self) -> str:
        return f"RngStream{self.material}"

    def __eq__(self, other) -> bool:
        return isinstance(other, RngStream) and self.material == other.material

    def __hash__(self) -> int:
        return hash(self.material)


def view_stream(seed: int, user_index: int, epoch: int, view: int) -> RngStream:
    """Stream keyed by (seed, user, epoch, view) for augmented view generation."""
    return RngStream(seed, DOMAIN_AUGMENT, user_index, epoch, view)
