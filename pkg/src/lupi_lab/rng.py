"""Deterministic random streams.

All randomness in the package flows through named Philox (counter-based,
4x64) streams keyed by 64-bit seeds.  Sub-seeds are derived with a
SplitMix64 mix so independent streams never alias, and Gaussians are drawn
with Box-Muller on Philox uniforms.  The full scheme (mix constants, draw
order) is documented in the README so streams can be replayed elsewhere.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(x: int) -> int:
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def derive_seed(seed: int, *parts: int) -> int:
    """Mix integer labels into `seed`, yielding an independent 64-bit sub-seed.

    Chained SplitMix64: s <- splitmix64(splitmix64(s) XOR part) for each
    part.  Premixing the accumulator before each XOR keeps structurally
    related (seed, part) pairs -- e.g. (0, 1) vs (1, 0) -- from aliasing.
    With no parts the seed passes through unchanged.
    """
    s = seed & _MASK64
    for p in parts:
        s = _splitmix64(_splitmix64(s) ^ (int(p) & _MASK64))
    return s


def stream(seed: int, *parts: int) -> np.random.Generator:
    """A Philox-backed generator keyed directly by the derived sub-seed."""
    key = derive_seed(seed, *parts) if parts else (seed & _MASK64)
    return np.random.Generator(np.random.Philox(key=key))


def uniform(gen: np.random.Generator, size=None) -> np.ndarray:
    """Uniform doubles in [0, 1) straight off the Philox stream."""
    return gen.random(size)


def normal(gen: np.random.Generator, size=None) -> np.ndarray:
    """Standard normals via Box-Muller.

    Draw order: m = ceil(n/2) uniforms u1, then m uniforms u2;
    output is [r*cos(2*pi*u2), r*sin(2*pi*u2)] with r = sqrt(-2*ln(1-u1)),
    truncated to n.  1-u1 lies in (0, 1], so the log never sees zero.
    """
    if size is None:
        return normal(gen, 1)[0]
    shape = (size,) if np.isscalar(size) else tuple(size)
    n = int(np.prod(shape)) if shape else 1
    m = (n + 1) // 2
    u1 = gen.random(m)
    u2 = gen.random(m)
    r = np.sqrt(-2.0 * np.log1p(-u1))
    theta = 2.0 * np.pi * u2
    z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
    return z.reshape(shape)


def bernoulli(gen: np.random.Generator, p: float, size=None) -> np.ndarray:
    """0/1 floats: one uniform per entry, success iff u < p."""
    return (gen.random(size) < p).astype(np.float64)
