"""Deterministic, cross-platform random draws for the simulated fabric.

Two published primitives, implemented here so traces are bit-identical on
every platform:

* FNV-1a (64-bit) hashes a label such as ``(seed, resource, job)`` into a
  generator state.
* SplitMix64 (Steele, Lea & Flood 2014) turns that state into uniform
  64-bit outputs.

A draw is a pure function of its label parts, so re-executing a job on the
same resource reproduces the same background load.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & MASK64
    return h


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a SplitMix64 state once; returns (output, next_state)."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return (z ^ (z >> 31)), state


def draw_unit(seed: int, *parts: object) -> float:
    """Uniform float in [0, 1) keyed by (seed, *parts)."""
    label = ("/".join(str(p) for p in parts)).encode("utf-8")
    state = (fnv1a64(label) ^ (seed & MASK64)) & MASK64
    out, _ = splitmix64(state)
    return (out >> 11) / float(1 << 53)


def draw_range(seed: int, lo: float, hi: float, *parts: object) -> float:
    return lo + (hi - lo) * draw_unit(seed, *parts)


def chance(seed: int, p: float, *parts: object) -> bool:
    if p <= 0.0:
        return False
    return draw_unit(seed, *parts) < p
