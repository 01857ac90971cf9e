"""Reproducible random-number streams.

Every stochastic routine in this package draws from an explicit stream, so a
run is a pure function of its seed.  Streams are backed by the counter-based
Philox generator: child streams derived from distinct key paths are
statistically independent and never overlap, and the same (seed, path) pair
produces bit-identical draws on every platform numpy supports.
"""

from __future__ import annotations

import numpy as np

__all__ = ["RngStream"]


class RngStream:
    """A seeded random stream that can spawn independent child streams.

    ``child(*keys)`` derives a new stream keyed by the integers given; the
    derivation is stateless, so ``stream.child(3)`` is the same stream no
    matter when or how often it is created.  Use distinct keys for distinct
    purposes (proposals, resampling, truth generation, ...) instead of
    sharing one generator, so that consuming extra draws in one place cannot
    shift every draw that follows.
    """

    __slots__ = ("seed", "path", "generator")

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(int(k) for k in path)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self.generator = np.random.Generator(np.random.Philox(ss))

    def child(self, *keys: int) -> "RngStream":
        """Return the independent stream at ``path + keys``."""
        return RngStream(self.seed, self.path + keys)

    def __repr__(self) -> str:  # pragma: no cover
        return f"RngStream(seed={self.seed}, path={self.path})"
