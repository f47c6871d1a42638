"""SplitMix64 generator used for synthetic data.

SplitMix64 (Steele, Lea & Flood 2014) is tiny, fully specified and easy to
port, so synthetic volumes are reproducible outside this package. Reference
vector: seed 0 yields 0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, ...
"""
from __future__ import annotations

import math

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform_range(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def integer(self, n: int) -> int:
        """Integer in ``[0, n)`` by rejection (unbiased)."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def unit_vector_in_cone(self, axis, max_angle_deg: float):
        """Direction uniformly distributed on the spherical cap around ``axis``."""
        ax = [float(a) for a in axis]
        norm = math.sqrt(sum(a * a for a in ax))
        ax = [a / norm for a in ax]
        cos_max = math.cos(math.radians(max_angle_deg))
        cos_t = 1.0 - self.uniform() * (1.0 - cos_max)
        sin_t = math.sqrt(max(0.0, 1.0 - cos_t * cos_t))
        phi = 2.0 * math.pi * self.uniform()
        # orthonormal frame around the axis
        helper = [1.0, 0.0, 0.0] if abs(ax[0]) < 0.9 else [0.0, 1.0, 0.0]
        u = _cross(ax, helper)
        un = math.sqrt(sum(c * c for c in u))
        u = [c / un for c in u]
        w = _cross(ax, u)
        return tuple(
            cos_t * ax[k] + sin_t * (math.cos(phi) * u[k] + math.sin(phi) * w[k]) for k in range(3)
        )


def _cross(a, b):
    return [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
