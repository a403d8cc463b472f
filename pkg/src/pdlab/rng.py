"""Seedable, portable pseudo-random number generation.

Everything stochastic in this package (weight init, batch shuffles, the
synthetic dataset) draws from one generator so that a 64-bit seed pins
every bit of a run. The generator is xoshiro256** with its state seeded
through splitmix64, both specified entirely by their constants:

* splitmix64: increment 0x9E3779B97F4A7C15, finalizer multipliers
  0xBF58476D1CE4E5B9 and 0x94D049BB133111EB with shifts 30/27/31.
* xoshiro256**: output ``rotl(s1 * 5, 7) * 9``, state shift 17,
  state rotation 45.

Floats in [0, 1) take the top 53 bits of each 64-bit output. Normal
deviates come from Box-Muller over consecutive uniform pairs; truncated
draws reject |z| > clip and move on to the next pair, so the accepted
sequence does not depend on internal chunk sizes.
"""

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_SPLITMIX_INC = 0x9E3779B97F4A7C15
_TWO53_INV = 2.0 ** -53


def _mix64(z):
    """splitmix64 finalizer: bijective 64-bit scrambling."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed, *salts):
    """Derive an independent 64-bit seed from a base seed and integer salts.

    Used to give each consumer (init stream, per-epoch shuffles, synthetic
    data) its own stream without manual seed bookkeeping.
    """
    h = _mix64(seed)
    for s in salts:
        h = _mix64(h ^ _mix64(s))
    return h


class Xoshiro256:
    """xoshiro256** stream seeded via splitmix64 from a single 64-bit seed."""

    def __init__(self, seed):
        state = seed & _MASK64
        s = []
        for _ in range(4):
            state = (state + _SPLITMIX_INC) & _MASK64
            s.append(_mix64(state))
        self._s = s

    def next_u64(self):
        s0, s1, s2, s3 = self._s
        result = ((s1 * 5) & _MASK64)
        result = (((result << 7) | (result >> 57)) & _MASK64) * 9 & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & _MASK64
        self._s = [s0, s1, s2, s3]
        return result

    def random(self):
        """Uniform float64 in [0, 1)."""
        return (self.next_u64() >> 11) * _TWO53_INV

    def uniforms(self, n):
        """Array of n uniform float64 in [0, 1), consumed in stream order."""
        s0, s1, s2, s3 = self._s
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            r = (s1 * 5) & _MASK64
            r = (((r << 7) | (r >> 57)) & _MASK64) * 9 & _MASK64
            t = (s1 << 17) & _MASK64
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = ((s3 << 45) | (s3 >> 19)) & _MASK64
            out[i] = (r >> 11) * _TWO53_INV
        self._s = [s0, s1, s2, s3]
        return out

    def truncated_normals(self, n, stddev, clip=2.0):
        """n draws from N(0, stddev^2) rejected outside +/- clip*stddev.

        Consecutive uniform pairs (u1, u2) map to
        z = sqrt(-2 ln(1 - u1)) * cos(2 pi u2); pairs whose |z| exceeds
        ``clip`` are discarded in order.
        """
        parts = []
        have = 0
        while have < n:
            need = n - have
            m = need + max(4, need // 8)  # ~4.5% rejection at clip=2
            u = self.uniforms(2 * m)
            z = np.sqrt(-2.0 * np.log1p(-u[0::2])) * np.cos(2.0 * math.pi * u[1::2])
            z = z[np.abs(z) <= clip]
            parts.append(z[:need])
            have += min(len(z), need)
        return np.concatenate(parts) * stddev

    def below(self, n):
        """Integer in [0, n). Plain modulo; bias is negligible for n << 2^64."""
        return self.next_u64() % n

    def permutation(self, n):
        """Fisher-Yates permutation of 0..n-1 as an int64 array."""
        idx = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = self.next_u64() % (i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return idx
