"""Lazily evaluated random codebooks built on a counter-based PRF.

Every codeword symbol is a pure function of (seed, block, message tuple,
position): the counter (position, block, tuple-index low word, tuple-index high
word) is encrypted under a key derived from the seed with Philox4x32-10, and
the resulting 53-bit uniform is pushed through the inverse CDF of the input
distribution.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import InputDist
from .schedule import StreamParams, encode_span, message_alphabet

PRF_VERSION = "philox4x32-10/ctr(pos,block,idx_lo,idx_hi)/u53-open0/v1"

DOMAIN_CODEBOOK = 0
DOMAIN_NOISE = 1
DOMAIN_MESSAGES = 2
DOMAIN_ENSEMBLE = 3

TABLE_LIMIT = 2 ** 26

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)


class CodebookError(ValueError):
    """Message tuple does not fit the block's encode span or alphabets."""


def _philox_numpy(c: np.ndarray, key: Sequence[int]) -> np.ndarray:
    c0, c1, c2, c3 = (c[:, i].astype(np.uint64) for i in range(4))
    k0 = np.uint32(key[0])
    k1 = np.uint32(key[1])
    with np.errstate(over="ignore"):
        for rnd in range(10):
            p0 = c0 * _M0
            p1 = c2 * _M1
            hi0, lo0 = p0 >> _SHIFT32, p0 & _MASK32
            hi1, lo1 = p1 >> _SHIFT32, p1 & _MASK32
            c0 = hi1 ^ c1 ^ np.uint64(k0)
            c1 = lo1
            c2 = hi0 ^ c3 ^ np.uint64(k1)
            c3 = lo0
            if rnd < 9:
                k0 = np.uint32(k0 + _W0)
                k1 = np.uint32(k1 + _W1)
    return np.stack([c0, c1, c2, c3], axis=1).astype(np.uint32)


try:
    import numba
except ImportError:  # pragma: no cover - numba is optional
    numba = None

if numba is not None:
    import os

    # omp is safe under concurrent callers; the default probe may warn about tbb
    if "NUMBA_THREADING_LAYER" not in os.environ:
        numba.config.THREADING_LAYER = "omp"

    @numba.njit(cache=True, parallel=True)
    def _philox_jit(c, k0, k1):
        n = c.shape[0]
        out = np.empty((n, 4), dtype=np.uint32)
        for i in numba.prange(n):
            x0 = np.uint64(c[i, 0])
            x1 = np.uint64(c[i, 1])
            x2 = np.uint64(c[i, 2])
            x3 = np.uint64(c[i, 3])
            a = np.uint64(k0)
            b = np.uint64(k1)
            for rnd in range(10):
                p0 = x0 * np.uint64(0xD2511F53)
                p1 = x2 * np.uint64(0xCD9E8D57)
                x0 = (p1 >> np.uint64(32)) ^ x1 ^ a
                x1 = p1 & np.uint64(0xFFFFFFFF)
                x2 = (p0 >> np.uint64(32)) ^ x3 ^ b
                x3 = p0 & np.uint64(0xFFFFFFFF)
                a = (a + np.uint64(0x9E3779B9)) & np.uint64(0xFFFFFFFF)
                b = (b + np.uint64(0xBB67AE85)) & np.uint64(0xFFFFFFFF)
            out[i, 0] = np.uint32(x0)
            out[i, 1] = np.uint32(x1)
            out[i, 2] = np.uint32(x2)
            out[i, 3] = np.uint32(x3)
        return out
else:  # pragma: no cover
    _philox_jit = None


def philox4x32(counters: np.ndarray, key: Sequence[int], *, backend: str = "auto") -> np.ndarray:
    """Philox4x32-10 block function over an (N, 4) uint32 counter array.

    ``backend`` picks the compiled kernel ("jit"), the pure numpy rounds
    ("numpy") or whichever is available ("auto"); all give identical words.
    """
    c = np.ascontiguousarray(counters, dtype=np.uint32)
    if c.ndim != 2 or c.shape[1] != 4:
        raise ValueError("counters must have shape (N, 4)")
    if backend == "numpy" or (backend == "auto" and (_philox_jit is None or c.shape[0] < 64)):
        return _philox_numpy(c, key)
    if _philox_jit is None:
        raise ValueError("jit backend needs numba")
    return _philox_jit(c, np.uint32(key[0]), np.uint32(key[1]))


def domain_key(seed: int, domain: int, *extra: int) -> np.ndarray:
    """Two-word Philox key for one randomness domain of an experiment seed."""
    if not 0 <= seed < 2 ** 64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    return np.random.SeedSequence([seed, domain, *extra]).generate_state(2, np.uint32)


def ensemble_seed(seed: int, member: int) -> int:
    """Codebook seed of ensemble member ``member``; member 0 reuses ``seed`` itself."""
    if member == 0:
        return seed
    return int(np.random.SeedSequence([seed, DOMAIN_ENSEMBLE, member]).generate_state(1, np.uint64)[0])


def uniforms(counters: np.ndarray, key: Sequence[int]) -> np.ndarray:
    """Uniforms on (0, 1] with 53 random bits, one per counter row."""
    out = philox4x32(counters, key).astype(np.uint64)
    bits = ((out[:, 0] << _SHIFT32) | out[:, 1]) >> np.uint64(11)
    return (bits + np.uint64(1)).astype(np.float64) * 2.0 ** -53


def cdf_table(probs: np.ndarray) -> np.ndarray:
    """Cumulative boundaries for inverse-CDF sampling along the last axis.

    Boundaries from the last positive-probability symbol onward are pinned to
    1.0 so rounding in the cumulative sum can never select a zero-probability
    symbol, even for a uniform equal to 1.
    """
    p = np.asarray(probs, dtype=np.float64)
    cdf = np.minimum(np.cumsum(p, axis=-1), 1.0)
    last = p.shape[-1] - 1 - np.argmax((p > 0)[..., ::-1], axis=-1)
    cols = np.arange(p.shape[-1])
    cdf[cols >= np.expand_dims(last, -1)] = 1.0
    return cdf


def inverse_cdf(u: np.ndarray, cdf: np.ndarray) -> np.ndarray:
    """Smallest symbol whose cumulative boundary is >= u; ties go to the lower symbol."""
    return np.searchsorted(cdf, u, side="left").astype(np.intp)


def _split_index(index: int) -> tuple[int, int]:
    if index < 2 ** 64:
        return index & 0xFFFFFFFF, index >> 32
    digest = hashlib.blake2b(index.to_bytes((index.bit_length() + 7) // 8, "big"), digest_size=8).digest()
    folded = int.from_bytes(digest, "big")
    return folded & 0xFFFFFFFF, folded >> 32


@dataclass(frozen=True)
class CodebookKey:
    seed: int
    block: int
    messages: int
    position: int

    def counter(self) -> np.ndarray:
        lo, hi = _split_index(self.messages)
        return np.array([[self.position, self.block, lo, hi]], dtype=np.uint32)


def span_alphabets(params: StreamParams, k: int) -> list[int]:
    lo, hi = encode_span(params, k)
    return [message_alphabet(params, j) for j in range(lo, hi + 1)]


def table_rows(params: StreamParams, k: int) -> int:
    return int(np.prod(span_alphabets(params, k), dtype=object))


def encode_tuple(alphabets: Sequence[int], g: Sequence[int]) -> int:
    """Big-endian mixed-radix index of ``g``; the earliest message is the top digit."""
    if len(g) != len(alphabets):
        raise CodebookError(f"message tuple has {len(g)} entries, span needs {len(alphabets)}")
    index = 0
    for size, digit in zip(alphabets, g):
        digit = int(digit)
        if not 0 <= digit < size:
            raise CodebookError(f"message value {digit} outside alphabet of size {size}")
        index = index * size + digit
    return index


def decode_tuple(alphabets: Sequence[int], index: int) -> list[int]:
    digits = []
    for size in reversed(alphabets):
        index, d = divmod(index, size)
        digits.append(d)
    return digits[::-1]


def symbol(key: CodebookKey, p: InputDist) -> int:
    u = uniforms(key.counter(), domain_key(key.seed, DOMAIN_CODEBOOK))
    return int(inverse_cdf(u, cdf_table(p.p))[0])


def _rows(seed: int, block: int, indices: np.ndarray, n: int, p: InputDist) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.uint64)
    counters = np.empty((idx.size, n, 4), dtype=np.uint32)
    counters[:, :, 0] = np.arange(n, dtype=np.uint32)[None, :]
    counters[:, :, 1] = block
    counters[:, :, 2] = (idx & _MASK32).astype(np.uint32)[:, None]
    counters[:, :, 3] = (idx >> _SHIFT32).astype(np.uint32)[:, None]
    u = uniforms(counters.reshape(-1, 4), domain_key(seed, DOMAIN_CODEBOOK))
    dtype = np.uint8 if len(p) <= 256 else np.uint32
    return inverse_cdf(u, cdf_table(p.p)).reshape(idx.size, n).astype(dtype)


def codeword(params: StreamParams, seed: int, k: int, g: Sequence[int], p: InputDist) -> np.ndarray:
    """The ``n`` input symbols sent in block ``k`` for message tuple ``g`` over encode_span(k)."""
    index = encode_tuple(span_alphabets(params, k), g)
    if params.n == 0:
        return np.zeros(0, dtype=np.uint8 if len(p) <= 256 else np.uint32)
    if index >= 2 ** 64:
        lo, hi = _split_index(index)
        index = lo | (hi << 32)
    return _rows(seed, k, np.array([index], dtype=np.uint64), params.n, p)[0]


def codewords(params: StreamParams, seed: int, k: int, indices: np.ndarray, p: InputDist) -> np.ndarray:
    """Codewords of block ``k`` for the given mixed-radix tuple indices, evaluated on demand."""
    return _rows(seed, k, np.asarray(indices, dtype=np.uint64), params.n, p)


def block_table(params: StreamParams, seed: int, k: int, p: InputDist, max_entries: int = TABLE_LIMIT) -> np.ndarray:
    """All codewords of block ``k`` as a (tuples, n) uint8 array, rows in mixed-radix order.

    Exhaustive decoding touches every tuple of a window anyway, so
    materializing a block is no more costly than evaluating it row by row.
    """
    rows = table_rows(params, k)
    if rows * max(params.n, 1) > max_entries:
        raise CodebookError(f"block {k} has {rows} codewords; table exceeds {max_entries} symbols")
    return _rows(seed, k, np.arange(rows, dtype=np.uint64), params.n, p)
