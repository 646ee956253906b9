"""
Counter-based random streams

Noise for iteration k comes from a Philox generator whose key is
(seed, run id, stream tag) and whose counter starts at k. The n x d block is
filled row by row, so row i depends only on (seed, k, i) and the dimension:
adding particles, reordering updates or computing drifts in parallel never
changes any draw.
"""
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1

# stream tags, one per consumer of randomness
NOISE = 1
INIT = 2
TARGET_SAMPLES = 3
RESERVOIR = 4
PROBES = 5
PROJECTIONS = 6
FLOW_NOISE = 7


@dataclass(frozen=True)
class RngStream:
    """Deterministic source of randomness for one run"""

    seed: int
    run_id: int = 0

    def _key(self, stream):
        return np.array(
            [self.seed & _MASK64, ((self.run_id & 0xFFFFFFFF) << 8 | stream) & _MASK64],
            dtype=np.uint64,
        )

    def generator(self, stream, index=0):
        """
        Generator for (stream, index)

        Args:
            stream: One of the stream tags of this module
            index: Counter position, e.g. the iteration index

        Returns:
            numpy Generator backed by Philox
        """
        counter = np.array([0, 0, 0, index], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=self._key(stream), counter=counter))

    def normals(self, iteration, n, d, stream=NOISE):
        """n x d standard Gaussians for one iteration; row i is particle i"""
        return self.generator(stream, iteration).standard_normal((n, d))

    def particle_normal(self, iteration, particle, d, stream=NOISE):
        """The noise vector of a single particle, identical to row `particle` of normals()"""
        return self.normals(iteration, particle + 1, d, stream)[particle]
