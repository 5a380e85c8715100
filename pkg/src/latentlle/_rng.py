"""Pinned random streams.

All randomness in the package goes through :class:`PinnedRNG` so that a
seed reproduces the same numbers on every platform and can be re-implemented
elsewhere:

* bit generator: PCG64 (XSL-RR 128/64) seeded through ``numpy``'s
  ``SeedSequence(seed)``;
* uniforms: ``(next_uint64 >> 11) * 2**-53`` in ``[0, 1)``;
* normals: Box-Muller on consecutive uniform pairs ``(u1, u2)``, producing
  ``sqrt(-2 log(1 - u1)) * cos(2 pi u2)`` then ``... * sin(2 pi u2)``.
"""

import numpy as np


class PinnedRNG:
    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, size, low=0.0, high=1.0) -> np.ndarray:
        return low + (high - low) * self._gen.random(size)

    def normal(self, size) -> np.ndarray:
        shape = (size,) if np.isscalar(size) else tuple(size)
        count = int(np.prod(shape))
        pairs = (count + 1) // 2
        u = self._gen.random(2 * pairs).reshape(pairs, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        z = np.column_stack([r * np.cos(theta), r * np.sin(theta)]).reshape(-1)
        return z[:count].reshape(shape)
