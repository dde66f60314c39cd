"""Portable random streams.

Bits come from numpy's PCG64 (PCG XSL RR 128/64), whose output for a given
seed is fixed across platforms. Normal variates use the Box-Muller transform
on PCG64 doubles so the mapping from bits to normals is ours, not numpy's.
Named substreams are derived with ``SeedSequence(seed, spawn_key=keys)``.
"""
import math

import numpy as np


class Rng:
    def __init__(self, seed, *keys):
        self.seed = int(seed)
        self.keys = tuple(int(k) for k in keys)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.keys)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, *keys):
        return Rng(self.seed, *self.keys, *keys)

    def random(self, size=None):
        return self._gen.random(size)

    def uniform(self, low, high, size, dtype=np.float64):
        return (low + (high - low) * self._gen.random(size)).astype(dtype, copy=False)

    def normal(self, size, dtype=np.float64):
        shape = (size,) if isinstance(size, (int, np.integer)) else tuple(size)
        n = math.prod(shape)
        m = (n + 1) // 2
        u1 = 1.0 - self._gen.random(m)  # (0, 1]
        u2 = self._gen.random(m)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:n].reshape(shape).astype(dtype, copy=False)

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def get_state(self):
        return {"seed": self.seed, "keys": list(self.keys), "bit_generator": self._gen.bit_generator.state}

    def set_state(self, state):
        self.seed = int(state["seed"])
        self.keys = tuple(state["keys"])
        self._gen.bit_generator.state = state["bit_generator"]

    @classmethod
    def from_state(cls, state):
        rng = cls(state["seed"], *state["keys"])
        rng.set_state(state)
        return rng
