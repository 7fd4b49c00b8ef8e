"""Deterministic, hierarchically derivable random streams.

Every random decision in the package (scene layout, weather sampling,
augmentation parameters, weight init, shuffling) draws from a
:class:`RngStream` obtained with :func:`derive_stream`.  The derivation is
fully specified so other implementations can reproduce it bit for bit:

1. ``acc = global_seed`` (taken mod 2**64).
2. For each ``(label, index)`` in ``path``::

       h = fnv1a64(label.encode("utf-8") + b"\\x00" + index.to_bytes(8, "little"))
       acc = splitmix64_output(acc ^ h)

   where ``splitmix64_output(s)`` is the first output of a splitmix64
   generator whose state is ``s``.
3. ``initstate = splitmix64_output(acc)`` and
   ``initseq = splitmix64_output(acc ^ 0xDA3E39CB94B95BDB)``.
4. The stream is a PCG32 (XSH-RR, 64-bit state) seeded with
   ``(initstate, initseq)`` using the reference ``pcg32_srandom_r`` procedure.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

MASK64 = (1 << 64) - 1
MASK32 = (1 << 32) - 1

PCG_MULT = 6364136223846793005
SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_SEQ_TWEAK = 0xDA3E39CB94B95BDB


def splitmix64_next(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; return ``(new_state, output)``."""
    state = (state + SPLITMIX_GAMMA) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return h


def _label_hash(label: str, index: int) -> int:
    return fnv1a64(label.encode("utf-8") + b"\x00" + (index & MASK64).to_bytes(8, "little"))


@dataclass
class RngStream:
    """PCG32 generator state.  Copy with :meth:`copy` to fork a stream."""

    state: int
    inc: int

    @classmethod
    def from_seed(cls, initstate: int, initseq: int) -> "RngStream":
        s = cls(0, ((initseq << 1) | 1) & MASK64)
        s._step()
        s.state = (s.state + initstate) & MASK64
        s._step()
        return s

    def copy(self) -> "RngStream":
        return RngStream(self.state, self.inc)

    def _step(self) -> None:
        self.state = (self.state * PCG_MULT + self.inc) & MASK64

    def next_u32(self) -> int:
        old = self.state
        self._step()
        xorshifted = (((old >> 18) ^ old) >> 27) & MASK32
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((-rot) & 31))) & MASK32

    def next_u64(self) -> int:
        hi = self.next_u32()
        return (hi << 32) | self.next_u32()

    def u32_array(self, n: int) -> np.ndarray:
        """Next ``n`` outputs as a uint32 array, identical to ``n`` calls of
        :meth:`next_u32` (states are produced by LCG jump-ahead doubling)."""
        if n <= 0:
            return np.zeros(0, dtype=np.uint32)
        states = np.array([self.state], dtype=np.uint64)
        with np.errstate(over="ignore"):
            while states.size < n:
                m = states.size
                # apply the m-step map to every known state
                a_m, c_m = _lcg_power(m, self.inc)
                nxt = states * np.uint64(a_m) + np.uint64(c_m)
                states = np.concatenate([states, nxt])
            states = states[:n]
            a_n, c_n = _lcg_power(n, self.inc)
            self.state = (a_n * self.state + c_n) & MASK64
            xorshifted = (((states >> np.uint64(18)) ^ states) >> np.uint64(27)) & np.uint64(MASK32)
            rot = states >> np.uint64(59)
            left = (np.uint64(32) - rot) & np.uint64(31)
            out = ((xorshifted >> rot) | (xorshifted << left)) & np.uint64(MASK32)
        return out.astype(np.uint32)

    def uniform_array(self, n: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        if lo > hi:
            raise ValueError(f"uniform: lo={lo} > hi={hi}")
        return lo + (hi - lo) * (self.u32_array(n).astype(np.float64) / 4294967296.0)


def _lcg_power(k: int, inc: int) -> tuple[int, int]:
    """Coefficients (A, C) with state_{t+k} = A*state_t + C (mod 2**64)."""
    acc_mult, acc_plus = 1, 0
    cur_mult, cur_plus = PCG_MULT, inc
    while k > 0:
        if k & 1:
            acc_mult = (acc_mult * cur_mult) & MASK64
            acc_plus = (acc_plus * cur_mult + cur_plus) & MASK64
        cur_plus = ((cur_mult + 1) * cur_plus) & MASK64
        cur_mult = (cur_mult * cur_mult) & MASK64
        k >>= 1
    return acc_mult, acc_plus


def derive_stream(global_seed: int, path: Sequence[tuple[str, int]] | Iterable[tuple[str, int]]) -> RngStream:
    path = list(path)
    if not path:
        raise ValueError("derive_stream: path must be non-empty")
    acc = global_seed & MASK64
    for label, index in path:
        _, acc = splitmix64_next(acc ^ _label_hash(label, int(index)))
    _, initstate = splitmix64_next(acc)
    _, initseq = splitmix64_next(acc ^ _SEQ_TWEAK)
    return RngStream.from_seed(initstate, initseq)


def next_u32(stream: RngStream) -> int:
    return stream.next_u32()


def uniform(stream: RngStream, lo: float, hi: float) -> float:
    """Value in ``[lo, hi)`` from one 32-bit draw."""
    if lo > hi:
        raise ValueError(f"uniform: lo={lo} > hi={hi}")
    return lo + (hi - lo) * (stream.next_u32() / 4294967296.0)


def bernoulli(stream: RngStream, p: float) -> bool:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"bernoulli: p={p} outside [0, 1]")
    return uniform(stream, 0.0, 1.0) < p


def randint(stream: RngStream, lo: int, hi: int) -> int:
    """Integer in ``[lo, hi)`` via floor of a uniform draw."""
    if hi <= lo:
        raise ValueError(f"randint: empty range [{lo}, {hi})")
    return min(hi - 1, lo + int(uniform(stream, 0.0, float(hi - lo))))


def permutation(stream: RngStream, n: int) -> list[int]:
    """Fisher-Yates shuffle of ``range(n)``, drawing from the top down."""
    idx = list(range(n))
    for i in range(n - 1, 0, -1):
        j = randint(stream, 0, i + 1)
        idx[i], idx[j] = idx[j], idx[i]
    return idx
